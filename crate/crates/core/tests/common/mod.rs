#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mrts::engine::{GridState, MapSpec, Player, Rules};
use mrts::numerics::{EncoderConfig, Init};
use mrts::policy::ModelConfig;
use mrts::scripted_ai::BotKind;

pub mod checks;

/// Two workers on an otherwise empty 4x4 board.
pub const TOY_MAP: &str = "\
name toy4x4
size 4 4
stockpile 0
unit worker p1 1 1
unit worker p2 2 2
";

pub fn toy_state() -> GridState {
    let spec = MapSpec::parse(TOY_MAP).unwrap();
    GridState::new_game(&spec, Arc::new(Rules::default()), 0).unwrap()
}

/// Small model for the toy board: 8-wide embedding + 27 features = 35 = 5 heads x 7.
pub fn toy_model() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            layers: 2,
            heads: 5,
            model_dim: 35,
            ff_dim: 16,
            dropout: 0.1,
        },
        map_rows: 4,
        map_cols: 4,
        embedding: true,
        embedding_dim: 8,
        init: Init::HeNormal,
        bias_init: 0.0,
    }
}

/// States visited by scripted games with random bot pairings, snapshotted at
/// random ticks. The observing player alternates.
pub fn reachable_states(map: &str, n: usize, seed: u64) -> Vec<(GridState, Player)> {
    let spec = MapSpec::bundled(map).unwrap();
    let rules = Arc::new(Rules::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut game = 0u64;
    while out.len() < n {
        let p1 = BotKind::ALL[rng.random_range(0..3)];
        let p2 = BotKind::ALL[rng.random_range(0..3)];
        let mut s = GridState::new_game(&spec, rules.clone(), seed ^ game).unwrap().with_step_limit(600);
        game += 1;
        // bots that play the same way every game still diverge through the sampling rate
        let keep = rng.random_range(0.02..0.2);
        while !s.status().is_terminal() && out.len() < n {
            if rng.random_bool(keep) {
                let player = if out.len() % 2 == 0 { Player::P1 } else { Player::P2 };
                out.push((s.clone(), player));
            }
            let a1 = p1.act(&s, Player::P1, &mut rng);
            let a2 = p2.act(&s, Player::P2, &mut rng);
            s.advance(&a1, &a2).unwrap();
        }
    }
    out
}

/// Softmax attention written out with plain loops.
pub fn naive_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = q[0].len() as f64;
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt()).collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..v[0].len()).map(|c| e.iter().zip(v).map(|(w, vj)| w / z * vj[c]).sum()).collect()
        })
        .collect()
}

/// Advantages as explicit discounted sums of TD residuals, stopping at the
/// first episode end at or after each slot.
pub fn gae_direct(rewards: &[f64], values: &[f64], terminated: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let next_v = |t: usize| if t + 1 < n { values[t + 1] } else { bootstrap };
    let delta = |t: usize| rewards[t] + if terminated[t] { 0.0 } else { gamma * next_v(t) } - values[t];
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            for l in t..n {
                sum += (gamma * lambda).powi((l - t) as i32) * delta(l);
                if terminated[l] {
                    break;
                }
            }
            sum
        })
        .collect()
}

/// Every non-NOOP sub-action a unit could be given, in canonical form.
pub fn all_sub_actions() -> Vec<mrts::engine::SubAction> {
    use mrts::engine::{Direction, SubAction, UnitKind};
    let mut out = Vec::new();
    for d in Direction::ALL {
        out.push(SubAction::move_to(d));
        out.push(SubAction::harvest(d));
        out.push(SubAction::return_to(d));
        for k in UnitKind::ALL {
            out.push(SubAction::produce(d, k));
        }
    }
    for i in 0..49u8 {
        let mut c = [0u8; 7];
        c[0] = 5;
        c[6] = i;
        out.push(SubAction::from_components(c));
    }
    out
}

/// Issues every candidate order to every unit of `player` on its own and
/// checks that exactly the admitted ones execute without coercion. Returns
/// the number of orders tried.
pub fn check_mask_soundness(state: &GridState, player: Player) -> Result<usize, String> {
    use mrts::engine::{legality_mask, JointAction};
    let mask = legality_mask(state, player);
    let candidates = all_sub_actions();
    let mut tried = 0;
    for unit in state.units_of(player) {
        let cell = state.cell_index(unit.pos);
        for a in &candidates {
            let mut order = JointAction::new();
            order.push(cell, *a);
            let empty = JointAction::new();
            let (a1, a2) = if player == Player::P1 { (&order, &empty) } else { (&empty, &order) };
            let (_, outcome) = state.step(a1, a2).map_err(|e| e.to_string())?;
            let admitted = mask.source[cell] && mask.admits(cell, a);
            let coerced = outcome.coerced[player.index()] > 0;
            if admitted == coerced {
                return Err(format!(
                    "tick {} {:?} {:?} at {:?}: {:?} admitted={admitted} coerced={coerced}",
                    state.tick(),
                    player,
                    unit.kind,
                    unit.pos,
                    a.components
                ));
            }
            tried += 1;
        }
    }
    Ok(tried)
}
