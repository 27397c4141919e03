//! Browser demo: step a match, inspect a cell's observation and legal
//! orders, and look at the policy's per-component probabilities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use mrts::engine::{
    attack_offset_delta, legality_mask, observe, ActionType, Direction, GridState, JointAction, Owner, Player, Pos, TerminalStatus, UnitKind,
    COMPONENT_OFFSETS, COMPONENT_WIDTHS, GROUP_OFFSETS, GROUP_WIDTHS,
};
use mrts::harness::policy_from_checkpoint;
use mrts::numerics::{Checkpoint, ParamStore, Tape};
use mrts::policy::{ModelConfig, Policy, PolicyInput};
use mrts::scripted_ai::BotKind;

const COMPONENTS: [&str; 7] = ["action type", "move", "harvest", "return", "produce dir", "produce kind", "attack"];
/// Action type each argument component belongs to.
const ACTION_OF_COMPONENT: [usize; 7] = [0, 1, 2, 3, 4, 4, 5];
const GROUPS: [&str; 5] = ["hit points", "resources", "owner", "unit type", "current action"];

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

enum Side {
    Bot(BotKind),
    Model,
}

#[wasm_bindgen]
pub struct Match {
    state: GridState,
    p1: Side,
    p2: BotKind,
    rng: ChaCha8Rng,
    policy: Policy,
    store: ParamStore,
    trained: bool,
    returns: [f64; 2],
}

#[wasm_bindgen]
impl Match {
    /// `p1` is a bot name or `model`; `p2` is a bot name.
    #[wasm_bindgen(constructor)]
    pub fn new(map: &str, p1: &str, p2: &str, seed: u32) -> Result<Match, JsError> {
        let state = GridState::bundled(map, seed as u64).map_err(err)?;
        let p1 = match p1 {
            "model" => Side::Model,
            name => Side::Bot(name.parse().map_err(err)?),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let (policy, store) = Policy::new(ModelConfig::for_map(state.rows(), state.cols()), &mut rng).map_err(err)?;
        Ok(Match {
            state,
            p1,
            p2: p2.parse().map_err(err)?,
            rng,
            policy,
            store,
            trained: false,
            returns: [0.0; 2],
        })
    }

    /// Swaps in the weights from a trainer checkpoint file.
    #[wasm_bindgen(js_name = loadCheckpoint)]
    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> Result<(), JsError> {
        let ckpt = Checkpoint::from_bytes(bytes).map_err(err)?;
        let (policy, store, _) = policy_from_checkpoint(ckpt).map_err(err)?;
        let cfg = policy.config;
        if (cfg.map_rows, cfg.map_cols) != (self.state.rows(), self.state.cols()) {
            return Err(JsError::new(&format!(
                "checkpoint is for a {}x{} map, this match is {}x{}",
                cfg.map_rows,
                cfg.map_cols,
                self.state.rows(),
                self.state.cols()
            )));
        }
        self.policy = policy;
        self.store = store;
        self.trained = true;
        Ok(())
    }

    /// Advances up to `ticks` ticks, stopping early at the end of the game.
    pub fn step(&mut self, ticks: u32) -> Result<(), JsError> {
        for _ in 0..ticks {
            if self.state.status().is_terminal() {
                break;
            }
            let a1 = match self.p1 {
                Side::Bot(bot) => bot.act(&self.state, Player::P1, &mut self.rng),
                Side::Model => {
                    let input = PolicyInput::from_state(&self.state, Player::P1);
                    if input.units() == 0 {
                        JointAction::new()
                    } else {
                        self.policy.act(&self.store, &input, &mut self.rng).map_err(err)?.joint
                    }
                }
            };
            let a2 = self.p2.act(&self.state, Player::P2, &mut self.rng);
            let outcome = self.state.advance(&a1, &a2).map_err(err)?;
            self.returns[0] += outcome.reward(Player::P1);
            self.returns[1] += outcome.reward(Player::P2);
        }
        Ok(())
    }

    /// Board snapshot as JSON.
    pub fn board(&self) -> String {
        let s = &self.state;
        let units: Vec<Value> = s
            .units()
            .iter()
            .map(|u| {
                json!({
                    "id": u.id.0,
                    "kind": u.kind.name(),
                    "owner": owner_name(u.owner),
                    "row": u.pos.row,
                    "col": u.pos.col,
                    "hp": u.hp,
                    "resources": u.resources,
                    "action": action_name(u.current_action()),
                })
            })
            .collect();
        let status = match s.status() {
            TerminalStatus::Ongoing => "ongoing".to_string(),
            TerminalStatus::Draw => "draw".to_string(),
            TerminalStatus::Win(p) => format!("{} wins", player_name(p)),
        };
        json!({
            "rows": s.rows(),
            "cols": s.cols(),
            "tick": s.tick(),
            "stepLimit": s.step_limit(),
            "status": status,
            "stockpile": [s.stockpile(Player::P1), s.stockpile(Player::P2)],
            "returns": self.returns,
            "entities": s.entity_count(),
            "trained": self.trained,
            "units": units,
        })
        .to_string()
    }

    /// Observation groups for a cell as seen by P1, plus the legal orders if
    /// the cell holds one of P1's units.
    pub fn inspect(&self, row: i32, col: i32) -> Result<String, JsError> {
        let s = &self.state;
        let pos = Pos::new(row, col);
        if !s.in_bounds(pos) {
            return Err(JsError::new("cell outside the map"));
        }
        let cell = s.cell_index(pos);
        let obs = observe(s, Player::P1);
        let groups: Vec<Value> = GROUPS
            .iter()
            .zip(GROUP_OFFSETS.iter().zip(GROUP_WIDTHS))
            .map(|(name, (&o, w))| json!({ "name": name, "bits": &obs.cell(cell)[o..o + w] }))
            .collect();
        let mask = legality_mask(s, Player::P1);
        let row_mask = mask.row(cell);
        let legal: Vec<Value> = COMPONENTS
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let o = COMPONENT_OFFSETS[c];
                let options: Vec<String> = (0..COMPONENT_WIDTHS[c])
                    .filter(|&j| row_mask[o + j])
                    .map(|j| option_label(c, j))
                    .collect();
                json!({ "component": name, "legal": options })
            })
            .collect();
        Ok(json!({
            "cell": cell,
            "unit": s.unit_at(pos).map(|u| format!("{} {} ({} hp)", owner_name(u.owner), u.kind.name(), u.hp)),
            "source": mask.source[cell],
            "observation": groups,
            "legal": legal,
        })
        .to_string())
    }

    /// Per-component probabilities the policy assigns to P1's unit at the
    /// cell, after masking, plus the state value.
    #[wasm_bindgen(js_name = policyView)]
    pub fn policy_view(&mut self, row: i32, col: i32) -> Result<String, JsError> {
        let input = PolicyInput::from_state(&self.state, Player::P1);
        let cell = self.state.cell_index(Pos::new(row, col));
        let Some(u) = (0..input.units()).find(|&u| input.unit_cell(u) == cell) else {
            return Err(JsError::new("no P1 unit on that cell"));
        };
        let mut tape = Tape::new(&self.store);
        let out = self.policy.forward(&mut tape, &[&input], &mut self.rng, false).map_err(err)?;
        let logp = tape.value(out.logp).row(u).to_vec();
        let value = tape.value(out.values).item();
        let mask = input.unit_mask(u);
        // components whose action type is masked only carry a placeholder option
        let components: Vec<Value> = COMPONENTS
            .iter()
            .enumerate()
            .filter(|&(c, _)| c == 0 || mask[ACTION_OF_COMPONENT[c]])
            .map(|(c, name)| {
                let o = COMPONENT_OFFSETS[c];
                let probs: Vec<Value> = (0..COMPONENT_WIDTHS[c])
                    .filter(|&j| mask[o + j])
                    .map(|j| json!({ "option": option_label(c, j), "p": logp[o + j].exp() }))
                    .collect();
                json!({ "component": name, "probs": probs })
            })
            .collect();
        Ok(json!({ "value": value, "idle": input.sources[u], "trained": self.trained, "components": components }).to_string())
    }
}

fn player_name(p: Player) -> &'static str {
    match p {
        Player::P1 => "P1",
        Player::P2 => "P2",
    }
}

fn owner_name(o: Owner) -> &'static str {
    match o {
        Owner::Player(p) => player_name(p),
        Owner::Neutral => "neutral",
    }
}

fn action_name(a: ActionType) -> &'static str {
    match a {
        ActionType::Noop => "noop",
        ActionType::Move => "move",
        ActionType::Harvest => "harvest",
        ActionType::Return => "return",
        ActionType::Produce => "produce",
        ActionType::Attack => "attack",
    }
}

fn option_label(component: usize, j: usize) -> String {
    let dir = |j| match Direction::from_index(j) {
        Some(Direction::Up) => "up",
        Some(Direction::Right) => "right",
        Some(Direction::Down) => "down",
        Some(Direction::Left) => "left",
        None => "?",
    };
    match component {
        0 => ActionType::from_index(j).map_or("?", action_name).to_string(),
        1..=4 => dir(j).to_string(),
        5 => UnitKind::from_index(j).map_or("?", UnitKind::name).to_string(),
        _ => {
            let (dr, dc) = attack_offset_delta(j);
            format!("({dr:+}, {dc:+})")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_cover_every_option() {
        for (c, &w) in COMPONENT_WIDTHS.iter().enumerate() {
            for j in 0..w {
                assert!(!option_label(c, j).contains('?'), "component {c} option {j}");
            }
        }
        assert_eq!(option_label(6, 24), "(+0, +0)");
    }

    #[test]
    fn argument_components_map_to_their_action_type() {
        let names: Vec<&str> = ACTION_OF_COMPONENT.iter().map(|&a| action_name(ActionType::ALL[a])).collect();
        assert_eq!(names, ["noop", "move", "harvest", "return", "produce", "produce", "attack"]);
    }
}
