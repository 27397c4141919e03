//! Scripted opponents.
//!
//! Every bot maps `(state, player, rng)` to a joint action whose orders are
//! all admitted by the legality mask. Bots also avoid claiming the same cell
//! twice or overspending the stockpile within one tick, so none of their
//! orders is dropped by the engine's conflict policy either.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::*;

/// Weight of harvest and attack options relative to any other option.
pub const BIASED_WEIGHT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BotKind {
    RandomBiased,
    WorkerRush,
    LightRush,
}

#[derive(Debug, thiserror::Error)]
#[error("unknown bot `{0}` (expected random-biased, worker-rush or light-rush)")]
pub struct UnknownBot(pub String);

impl BotKind {
    pub const ALL: [BotKind; 3] = [BotKind::RandomBiased, BotKind::WorkerRush, BotKind::LightRush];

    pub fn name(self) -> &'static str {
        match self {
            BotKind::RandomBiased => "random-biased",
            BotKind::WorkerRush => "worker-rush",
            BotKind::LightRush => "light-rush",
        }
    }

    pub fn act<R: Rng + ?Sized>(self, state: &GridState, player: Player, rng: &mut R) -> JointAction {
        match self {
            BotKind::RandomBiased => act_random_biased(state, player, rng),
            BotKind::WorkerRush => act_worker_rush(state, player, rng),
            BotKind::LightRush => act_light_rush(state, player, rng),
        }
    }
}

impl std::str::FromStr for BotKind {
    type Err = UnknownBot;

    fn from_str(s: &str) -> Result<BotKind, UnknownBot> {
        BotKind::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| UnknownBot(s.to_string()))
    }
}

impl std::fmt::Display for BotKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-tick bookkeeping shared by the bots.
struct Planner<'a> {
    state: &'a GridState,
    player: Player,
    budget: u32,
    claimed: Vec<Pos>,
    action: JointAction,
}

impl<'a> Planner<'a> {
    fn new(state: &'a GridState, player: Player) -> Self {
        Planner {
            state,
            player,
            budget: state.stockpile(player),
            claimed: Vec::new(),
            action: JointAction::new(),
        }
    }

    fn idle_units(&self) -> impl Iterator<Item = &'a Unit> {
        let player = self.player;
        self.state
            .units()
            .iter()
            .filter(move |u| u.owner.is(player) && u.busy.is_none())
    }

    fn open(&self, pos: Pos) -> bool {
        self.state.is_free(pos) && !self.claimed.contains(&pos)
    }

    fn issue(&mut self, unit: &Unit, action: SubAction) {
        match action.action_type() {
            ActionType::Move => self.claimed.push(unit.pos.step(action.move_dir())),
            ActionType::Produce => {
                self.claimed.push(unit.pos.step(action.produce_dir()));
                self.budget -= self.state.rules().stats(action.produce_kind()).cost;
            }
            _ => {}
        }
        self.action.push(self.state.cell_index(unit.pos), action);
    }

    fn cost(&self, kind: UnitKind) -> u32 {
        self.state.rules().stats(kind).cost
    }

    fn try_produce(&mut self, unit: &Unit, kind: UnitKind) -> bool {
        if self.budget < self.cost(kind) {
            return false;
        }
        match Direction::ALL.into_iter().find(|&d| self.open(unit.pos.step(d))) {
            Some(d) => {
                self.issue(unit, SubAction::produce(d, kind));
                true
            }
            None => false,
        }
    }

    /// Greedy Manhattan step: close the row gap first, then the column gap.
    fn try_step_toward(&mut self, unit: &Unit, goal: Pos) -> bool {
        let dr = (goal.row - unit.pos.row).signum();
        let dc = (goal.col - unit.pos.col).signum();
        let mut options = Vec::with_capacity(2);
        if dr != 0 {
            options.push(if dr < 0 { Direction::Up } else { Direction::Down });
        }
        if dc != 0 {
            options.push(if dc < 0 { Direction::Left } else { Direction::Right });
        }
        for d in options {
            if self.open(unit.pos.step(d)) {
                self.issue(unit, SubAction::move_to(d));
                return true;
            }
        }
        false
    }

    fn enemies(&self) -> impl Iterator<Item = &'a Unit> {
        let opp = self.player.opponent();
        self.state.units().iter().filter(move |u| u.owner.is(opp))
    }

    /// Attack the nearest enemy in range, otherwise walk toward the nearest
    /// enemy. Ties go to the lower unit id.
    fn fight(&mut self, unit: &Unit) -> bool {
        let range = self.state.rules().stats(unit.kind).attack_range as i32;
        let in_range = self
            .enemies()
            .filter(|e| {
                let (dr, dc) = (e.pos.row - unit.pos.row, e.pos.col - unit.pos.col);
                dr * dr + dc * dc <= range * range
            })
            .min_by_key(|e| (unit.pos.manhattan(e.pos), e.id));
        if let Some(e) = in_range {
            self.issue(unit, SubAction::attack(e.pos.row - unit.pos.row, e.pos.col - unit.pos.col));
            return true;
        }
        match closest(unit.pos, self.enemies()) {
            Some(target) => self.try_step_toward(unit, target.pos),
            None => false,
        }
    }

    /// Mine, carry home, repeat. Falls back to fighting when there is no mine
    /// or no base to return to.
    fn harvest(&mut self, unit: &Unit) -> bool {
        let player = self.player;
        let units = self.state.units();
        if unit.resources > 0 {
            let bases = units.iter().filter(|u| u.kind == UnitKind::Base && u.owner.is(player));
            let Some(base) = closest(unit.pos, bases) else {
                return self.fight(unit);
            };
            if let Some(d) = adjacent_dir(unit.pos, base.pos) {
                self.issue(unit, SubAction::return_to(d));
                return true;
            }
            self.try_step_toward(unit, base.pos)
        } else {
            let mines = units.iter().filter(|u| u.kind == UnitKind::Resource && u.resources > 0);
            let Some(mine) = closest(unit.pos, mines) else {
                return self.fight(unit);
            };
            if let Some(d) = adjacent_dir(unit.pos, mine.pos) {
                self.issue(unit, SubAction::harvest(d));
                return true;
            }
            self.try_step_toward(unit, mine.pos)
        }
    }
}

fn closest<'u>(from: Pos, units: impl Iterator<Item = &'u Unit>) -> Option<&'u Unit> {
    units.min_by_key(|u| (from.manhattan(u.pos), u.id))
}

fn adjacent_dir(from: Pos, to: Pos) -> Option<Direction> {
    Direction::ALL.into_iter().find(|&d| from.step(d) == to)
}

fn harvester_id(state: &GridState, player: Player) -> Option<UnitId> {
    state
        .units_of(player)
        .filter(|u| u.kind == UnitKind::Worker)
        .map(|u| u.id)
        .min()
}

/// Samples one legal sub-action per idle unit. Each concrete option weighs 1
/// except harvest and attack options, which weigh [`BIASED_WEIGHT`]. NOOP is
/// chosen only when nothing else is legal.
pub fn act_random_biased<R: Rng + ?Sized>(state: &GridState, player: Player, rng: &mut R) -> JointAction {
    let mut plan = Planner::new(state, player);
    let mut row = [false; ACTION_LOGITS];
    let units: Vec<&Unit> = plan.idle_units().collect();
    for unit in units {
        unit_mask_row(state, player, unit, &mut row);
        let options = biased_options(&plan, unit, &row);
        if options.is_empty() {
            continue;
        }
        let choice = sample_option(&options, rng);
        plan.issue(unit, choice);
    }
    plan.action
}

fn option_weight(a: &SubAction) -> f64 {
    match a.action_type() {
        ActionType::Harvest | ActionType::Attack => BIASED_WEIGHT,
        _ => 1.0,
    }
}

fn sample_option<R: Rng + ?Sized>(options: &[SubAction], rng: &mut R) -> SubAction {
    let weights = options.iter().map(option_weight);
    let pick = WeightedIndex::new(weights).expect("non-empty options").sample(rng);
    options[pick]
}

fn biased_options(plan: &Planner, unit: &Unit, row: &[bool]) -> Vec<SubAction> {
    let on = |comp: usize, i: usize| row[COMPONENT_OFFSETS[comp] + i];
    let mut options = Vec::new();
    for d in Direction::ALL {
        if row[ActionType::Move.index()] && on(1, d.index()) && plan.open(unit.pos.step(d)) {
            options.push(SubAction::move_to(d));
        }
        if row[ActionType::Harvest.index()] && on(2, d.index()) {
            options.push(SubAction::harvest(d));
        }
        if row[ActionType::Return.index()] && on(3, d.index()) {
            options.push(SubAction::return_to(d));
        }
    }
    if row[ActionType::Produce.index()] {
        for d in Direction::ALL {
            if !on(4, d.index()) || !plan.open(unit.pos.step(d)) {
                continue;
            }
            for k in UnitKind::ALL {
                if on(5, k.index()) && plan.cost(k) <= plan.budget {
                    options.push(SubAction::produce(d, k));
                }
            }
        }
    }
    if row[ActionType::Attack.index()] {
        for i in 0..ATTACK_WINDOW * ATTACK_WINDOW {
            if on(6, i) {
                let (dr, dc) = attack_offset_delta(i);
                options.push(SubAction::attack(dr, dc));
            }
        }
    }
    options
}

/// Base trains workers whenever affordable; the lowest-id worker harvests and
/// every other unit rushes the closest enemy.
pub fn act_worker_rush<R: Rng + ?Sized>(state: &GridState, player: Player, _rng: &mut R) -> JointAction {
    let mut plan = Planner::new(state, player);
    let harvester = harvester_id(state, player);
    let units: Vec<&Unit> = plan.idle_units().collect();
    for unit in units {
        match unit.kind {
            UnitKind::Base => {
                plan.try_produce(unit, UnitKind::Worker);
            }
            UnitKind::Worker if Some(unit.id) == harvester => {
                plan.harvest(unit);
            }
            k if k.is_mobile() => {
                plan.fight(unit);
            }
            _ => {}
        }
    }
    plan.action
}

/// One barracks, then a stream of light units toward the closest enemy. One
/// worker keeps harvesting.
pub fn act_light_rush<R: Rng + ?Sized>(state: &GridState, player: Player, _rng: &mut R) -> JointAction {
    let mut plan = Planner::new(state, player);
    let harvester = harvester_id(state, player);
    let producing = |kind: UnitKind| {
        state.units_of(player).any(|u| {
            u.busy.is_some_and(|p| {
                p.action.action_type() == ActionType::Produce && p.action.produce_kind() == kind
            })
        })
    };
    let mut has_barracks =
        state.units_of(player).any(|u| u.kind == UnitKind::Barracks) || producing(UnitKind::Barracks);
    let has_worker = harvester.is_some() || producing(UnitKind::Worker);

    let units: Vec<&Unit> = plan.idle_units().collect();
    for unit in units {
        match unit.kind {
            UnitKind::Base if !has_worker => {
                plan.try_produce(unit, UnitKind::Worker);
            }
            UnitKind::Barracks => {
                plan.try_produce(unit, UnitKind::Light);
            }
            UnitKind::Worker if Some(unit.id) == harvester => {
                if !has_barracks && plan.try_produce(unit, UnitKind::Barracks) {
                    has_barracks = true;
                } else {
                    plan.harvest(unit);
                }
            }
            k if k.is_mobile() => {
                plan.fight(unit);
            }
            _ => {}
        }
    }
    plan.action
}
