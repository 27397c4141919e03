use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::map::MapSpec;
use super::rules::Rules;
use super::types::*;
use super::EngineError;

/// Default episode length in ticks.
pub const DEFAULT_STEP_LIMIT: u32 = 2000;

/// Authoritative game state. Cloning yields an independent value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridState {
    rows: usize,
    cols: usize,
    /// Sorted by id.
    units: Vec<Unit>,
    occupant: Vec<Option<UnitId>>,
    /// Cells promised to an in-flight move or produce.
    reserved: Vec<Option<UnitId>>,
    stockpile: [u32; 2],
    spent: [u32; 2],
    /// Resources destroyed together with a carrying worker.
    lost: u32,
    next_id: u32,
    tick: u32,
    step_limit: u32,
    map_id: String,
    seed: u64,
    status: TerminalStatus,
    #[serde(skip)]
    rules: Arc<Rules>,
}

/// Everything `step` reports besides the successor state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub events: [Vec<RewardEvent>; 2],
    pub terminal: Option<TerminalStatus>,
    /// Orders rejected as illegal and replaced by NOOP, per player.
    pub coerced: [u32; 2],
    /// Legal orders dropped by the same-tick conflict policy, per player.
    pub cancelled: [u32; 2],
}

impl StepOutcome {
    pub fn status(&self) -> TerminalStatus {
        self.terminal.unwrap_or(TerminalStatus::Ongoing)
    }

    pub fn reward(&self, player: Player) -> f64 {
        self.events[player.index()].iter().map(|e| e.value).sum()
    }
}

impl GridState {
    pub fn new_game(spec: &MapSpec, rules: Arc<Rules>, seed: u64) -> Result<GridState, EngineError> {
        spec.validate()?;
        let n = spec.rows * spec.cols;
        let mut state = GridState {
            rows: spec.rows,
            cols: spec.cols,
            units: Vec::with_capacity(spec.units.len()),
            occupant: vec![None; n],
            reserved: vec![None; n],
            stockpile: [spec.stockpile; 2],
            spent: [0; 2],
            lost: 0,
            next_id: 0,
            tick: 0,
            step_limit: DEFAULT_STEP_LIMIT,
            map_id: spec.name.clone(),
            seed,
            status: TerminalStatus::Ongoing,
            rules,
        };
        for p in &spec.units {
            let hp = state.rules.stats(p.kind).hp;
            state.spawn(p.kind, p.owner, p.pos, hp, p.resources);
        }
        Ok(state)
    }

    /// Bundled map with default rules.
    pub fn bundled(name: &str, seed: u64) -> Result<GridState, EngineError> {
        GridState::new_game(&MapSpec::bundled(name)?, Arc::new(Rules::default()), seed)
    }

    pub fn with_step_limit(mut self, limit: u32) -> GridState {
        self.step_limit = limit.max(1);
        self
    }

    /// Reattaches rules after deserialization, which does not carry them.
    pub fn with_rules(mut self, rules: Arc<Rules>) -> GridState {
        self.rules = rules;
        self
    }

    fn spawn(&mut self, kind: UnitKind, owner: Owner, pos: Pos, hp: u32, resources: u32) -> UnitId {
        let id = UnitId(self.next_id);
        self.next_id += 1;
        let cell = self.cell_index(pos);
        self.occupant[cell] = Some(id);
        self.units.push(Unit {
            id,
            owner,
            kind,
            hp,
            resources,
            pos,
            busy: None,
        });
        id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn tick(&self) -> u32 {
        self.tick
    }

    pub fn step_limit(&self) -> u32 {
        self.step_limit
    }

    pub fn map_id(&self) -> &str {
        &self.map_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn status(&self) -> TerminalStatus {
        self.status
    }

    pub fn rules(&self) -> &Rules {
        &self.rules
    }

    pub fn rules_arc(&self) -> Arc<Rules> {
        self.rules.clone()
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn stockpile(&self, player: Player) -> u32 {
        self.stockpile[player.index()]
    }

    pub fn entity_count(&self) -> usize {
        self.units.len()
    }

    pub fn in_bounds(&self, pos: Pos) -> bool {
        pos.row >= 0 && pos.col >= 0 && (pos.row as usize) < self.rows && (pos.col as usize) < self.cols
    }

    pub fn cell_index(&self, pos: Pos) -> usize {
        pos.row as usize * self.cols + pos.col as usize
    }

    pub fn cell_pos(&self, cell: usize) -> Pos {
        Pos::new((cell / self.cols) as i32, (cell % self.cols) as i32)
    }

    pub fn unit(&self, id: UnitId) -> Option<&Unit> {
        self.units
            .binary_search_by_key(&id, |u| u.id)
            .ok()
            .map(|i| &self.units[i])
    }

    fn unit_mut(&mut self, id: UnitId) -> Option<&mut Unit> {
        self.units
            .binary_search_by_key(&id, |u| u.id)
            .ok()
            .map(move |i| &mut self.units[i])
    }

    pub fn unit_at(&self, pos: Pos) -> Option<&Unit> {
        if !self.in_bounds(pos) {
            return None;
        }
        self.occupant[self.cell_index(pos)].and_then(|id| self.unit(id))
    }

    pub fn unit_at_cell(&self, cell: usize) -> Option<&Unit> {
        self.occupant.get(cell).copied().flatten().and_then(|id| self.unit(id))
    }

    /// In bounds, unoccupied and not promised to an in-flight move/produce.
    pub fn is_free(&self, pos: Pos) -> bool {
        if !self.in_bounds(pos) {
            return false;
        }
        let cell = self.cell_index(pos);
        self.occupant[cell].is_none() && self.reserved[cell].is_none()
    }

    pub fn units_of(&self, player: Player) -> impl Iterator<Item = &Unit> {
        self.units.iter().filter(move |u| u.owner.is(player))
    }

    pub fn mine_resources(&self) -> u32 {
        self.units
            .iter()
            .filter(|u| u.kind == UnitKind::Resource)
            .map(|u| u.resources)
            .sum()
    }

    /// Mines + carried + stockpiles + spent + lost. Constant over an episode.
    pub fn resource_ledger(&self) -> u32 {
        let carried: u32 = self
            .units
            .iter()
            .filter(|u| u.kind == UnitKind::Worker)
            .map(|u| u.resources)
            .sum();
        self.mine_resources()
            + carried
            + self.stockpile.iter().sum::<u32>()
            + self.spent.iter().sum::<u32>()
            + self.lost
    }

    /// Whether `player` may issue `action` to `unit` right now.
    pub fn order_is_valid(&self, player: Player, unit: &Unit, action: &SubAction) -> bool {
        if !unit.owner.is(player) || unit.busy.is_some() || unit.kind == UnitKind::Resource {
            return false;
        }
        let stats = self.rules.stats(unit.kind);
        match action.action_type() {
            ActionType::Noop => true,
            ActionType::Move => unit.kind.is_mobile() && self.is_free(unit.pos.step(action.move_dir())),
            ActionType::Harvest => {
                unit.kind == UnitKind::Worker
                    && unit.resources == 0
                    && self
                        .unit_at(unit.pos.step(action.harvest_dir()))
                        .is_some_and(|m| m.kind == UnitKind::Resource && m.resources > 0)
            }
            ActionType::Return => {
                unit.kind == UnitKind::Worker
                    && unit.resources > 0
                    && self
                        .unit_at(unit.pos.step(action.return_dir()))
                        .is_some_and(|b| b.kind == UnitKind::Base && b.owner.is(player))
            }
            ActionType::Produce => {
                let product = action.produce_kind();
                unit.kind.products().contains(&product)
                    && self.stockpile(player) >= self.rules.stats(product).cost
                    && self.is_free(unit.pos.step(action.produce_dir()))
            }
            ActionType::Attack => {
                let (dr, dc) = action.attack_offset();
                let range = stats.attack_range as i32;
                unit.kind.is_mobile()
                    && (dr, dc) != (0, 0)
                    && dr * dr + dc * dc <= range * range
                    && self
                        .unit_at(unit.pos.offset(dr, dc))
                        .is_some_and(|t| t.owner.is(player.opponent()))
            }
        }
    }

    fn check_shape(&self, action: &JointAction) -> Result<(), EngineError> {
        let mut seen = vec![false; self.cells()];
        for order in &action.orders {
            if order.cell >= self.cells() {
                return Err(EngineError::MalformedAction(format!(
                    "cell {} outside a {}x{} map",
                    order.cell, self.rows, self.cols
                )));
            }
            if !order.action.is_well_formed() {
                return Err(EngineError::MalformedAction(format!(
                    "component out of range: {:?}",
                    order.action.components
                )));
            }
            if std::mem::replace(&mut seen[order.cell], true) {
                return Err(EngineError::MalformedAction(format!(
                    "two orders for cell {}",
                    order.cell
                )));
            }
        }
        Ok(())
    }

    /// Pure transition: returns the successor and leaves `self` untouched.
    pub fn step(&self, a1: &JointAction, a2: &JointAction) -> Result<(GridState, StepOutcome), EngineError> {
        let mut next = self.clone();
        let outcome = next.advance(a1, a2)?;
        Ok((next, outcome))
    }

    /// In-place transition.
    pub fn advance(&mut self, a1: &JointAction, a2: &JointAction) -> Result<StepOutcome, EngineError> {
        if self.status.is_terminal() {
            return Err(EngineError::GameOver);
        }
        self.check_shape(a1)?;
        self.check_shape(a2)?;
        let mut outcome = StepOutcome::default();

        let mut issued: Vec<(UnitId, Player, SubAction)> = Vec::new();
        for (player, joint) in [(Player::P1, a1), (Player::P2, a2)] {
            for order in &joint.orders {
                let is_noop = order.action.action_type() == ActionType::Noop;
                match self.unit_at_cell(order.cell) {
                    Some(u) if self.order_is_valid(player, u, &order.action) => {
                        if !is_noop {
                            issued.push((u.id, player, order.action));
                        }
                    }
                    _ if is_noop => {}
                    _ => outcome.coerced[player.index()] += 1,
                }
            }
        }

        // Same-tick conflicts: lower unit id claims the cell or the budget first.
        issued.sort_by_key(|(id, _, _)| *id);
        let mut claimed: Vec<usize> = Vec::new();
        for (id, player, action) in issued {
            let unit = self.unit(id).expect("issuing unit exists");
            let pos = unit.pos;
            let kind = unit.kind;
            let duration = match action.action_type() {
                ActionType::Noop => unreachable!(),
                ActionType::Move => {
                    let target = self.cell_index(pos.step(action.move_dir()));
                    if claimed.contains(&target) {
                        outcome.cancelled[player.index()] += 1;
                        continue;
                    }
                    claimed.push(target);
                    self.reserved[target] = Some(id);
                    self.rules.stats(kind).move_time
                }
                ActionType::Produce => {
                    let target = self.cell_index(pos.step(action.produce_dir()));
                    let product = self.rules.stats(action.produce_kind());
                    let (cost, time) = (product.cost, product.produce_time);
                    if claimed.contains(&target) || self.stockpile[player.index()] < cost {
                        outcome.cancelled[player.index()] += 1;
                        continue;
                    }
                    claimed.push(target);
                    self.reserved[target] = Some(id);
                    self.stockpile[player.index()] -= cost;
                    self.spent[player.index()] += cost;
                    time
                }
                ActionType::Harvest => self.rules.stats(kind).harvest_time,
                ActionType::Return => self.rules.stats(kind).return_time,
                ActionType::Attack => self.rules.stats(kind).attack_time,
            };
            self.unit_mut(id).expect("issuing unit exists").busy = Some(PendingAction {
                action,
                remaining_ticks: duration,
            });
        }

        let busy_ids: Vec<UnitId> = self.units.iter().filter(|u| u.busy.is_some()).map(|u| u.id).collect();
        for id in busy_ids {
            let Some(unit) = self.unit_mut(id) else {
                continue; // destroyed earlier this tick
            };
            let Some(pending) = unit.busy.as_mut() else {
                continue;
            };
            pending.remaining_ticks -= 1;
            if pending.remaining_ticks == 0 {
                let action = pending.action;
                unit.busy = None;
                self.complete(id, action, &mut outcome);
            }
        }

        self.tick += 1;
        let status = self.terminal_status();
        if status.is_terminal() {
            self.status = status;
            outcome.terminal = Some(status);
            let w = self.rules.rewards.clone();
            match status {
                TerminalStatus::Win(p) => {
                    outcome.events[p.index()].push(RewardEvent { kind: RewardKind::Win, value: w.win });
                    outcome.events[p.opponent().index()]
                        .push(RewardEvent { kind: RewardKind::Loss, value: w.loss });
                }
                TerminalStatus::Draw => {
                    for ev in outcome.events.iter_mut() {
                        ev.push(RewardEvent { kind: RewardKind::Draw, value: w.draw });
                    }
                }
                TerminalStatus::Ongoing => unreachable!(),
            }
        }
        Ok(outcome)
    }

    fn terminal_status(&self) -> TerminalStatus {
        let alive = |p| self.units.iter().any(|u| u.owner.is(p));
        match (alive(Player::P1), alive(Player::P2)) {
            (true, false) => TerminalStatus::Win(Player::P1),
            (false, true) => TerminalStatus::Win(Player::P2),
            (false, false) => TerminalStatus::Draw,
            (true, true) if self.tick >= self.step_limit => TerminalStatus::Draw,
            (true, true) => TerminalStatus::Ongoing,
        }
    }

    fn event(&self, kind: RewardKind) -> RewardEvent {
        RewardEvent {
            kind,
            value: self.rules.rewards.value(kind),
        }
    }

    fn complete(&mut self, id: UnitId, action: SubAction, outcome: &mut StepOutcome) {
        let unit = self.unit(id).expect("completing unit exists");
        let (pos, kind) = (unit.pos, unit.kind);
        let Some(player) = unit.owner.player() else {
            return;
        };
        match action.action_type() {
            ActionType::Noop => {}
            ActionType::Move => {
                let to = pos.step(action.move_dir());
                let (from_cell, to_cell) = (self.cell_index(pos), self.cell_index(to));
                self.reserved[to_cell] = None;
                self.occupant[from_cell] = None;
                self.occupant[to_cell] = Some(id);
                self.unit_mut(id).unwrap().pos = to;
            }
            ActionType::Harvest => {
                let target = pos.step(action.harvest_dir());
                let mine = match self.unit_at(target) {
                    Some(m) if m.kind == UnitKind::Resource && m.resources > 0 => m.id,
                    _ => return,
                };
                if self.unit(id).unwrap().resources > 0 {
                    return;
                }
                let amount = self.rules.stats(kind).harvest_amount;
                let m = self.unit_mut(mine).unwrap();
                let taken = amount.min(m.resources);
                m.resources -= taken;
                let depleted = m.resources == 0;
                self.unit_mut(id).unwrap().resources += taken;
                if depleted {
                    self.remove(mine);
                }
                outcome.events[player.index()].push(self.event(RewardKind::Harvest));
            }
            ActionType::Return => {
                let target = pos.step(action.return_dir());
                let base_ok = self
                    .unit_at(target)
                    .is_some_and(|b| b.kind == UnitKind::Base && b.owner.is(player));
                if base_ok {
                    let w = self.unit_mut(id).unwrap();
                    let carried = std::mem::take(&mut w.resources);
                    self.stockpile[player.index()] += carried;
                }
            }
            ActionType::Produce => {
                let target = pos.step(action.produce_dir());
                let cell = self.cell_index(target);
                self.reserved[cell] = None;
                let product = action.produce_kind();
                let hp = self.rules.stats(product).hp;
                self.spawn(product, Owner::Player(player), target, hp, 0);
                let kind = if product.is_building() {
                    RewardKind::BuildBuilding
                } else if product == UnitKind::Worker {
                    RewardKind::BuildWorker
                } else {
                    RewardKind::BuildCombat
                };
                outcome.events[player.index()].push(self.event(kind));
            }
            ActionType::Attack => {
                let (dr, dc) = action.attack_offset();
                let victim = match self.unit_at(pos.offset(dr, dc)) {
                    Some(t) if t.owner.is(player.opponent()) => t.id,
                    _ => return,
                };
                let damage = self.rules.stats(kind).damage;
                let v = self.unit_mut(victim).unwrap();
                v.hp = v.hp.saturating_sub(damage);
                if v.hp == 0 {
                    self.remove(victim);
                }
                outcome.events[player.index()].push(self.event(RewardKind::Attack));
            }
        }
    }

    fn remove(&mut self, id: UnitId) {
        let idx = self.units.binary_search_by_key(&id, |u| u.id).expect("unit exists");
        let unit = self.units.remove(idx);
        let cell = self.cell_index(unit.pos);
        self.occupant[cell] = None;
        for r in self.reserved.iter_mut().filter(|r| **r == Some(id)) {
            *r = None;
        }
        if unit.kind == UnitKind::Worker {
            self.lost += unit.resources;
        }
    }

    /// Canonical text form hashed by [`GridState::digest`].
    pub fn canonical_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "tick {}", self.tick);
        let _ = writeln!(s, "stockpile {} {}", self.stockpile[0], self.stockpile[1]);
        let _ = writeln!(s, "spent {} {}", self.spent[0], self.spent[1]);
        let _ = writeln!(s, "lost {}", self.lost);
        let _ = writeln!(s, "next_id {}", self.next_id);
        for u in &self.units {
            let owner = match u.owner {
                Owner::Player(Player::P1) => "p1",
                Owner::Player(Player::P2) => "p2",
                Owner::Neutral => "neutral",
            };
            let busy = match u.busy {
                None => "-".to_string(),
                Some(p) => format!("{}:{}", format_components(&p.action), p.remaining_ticks),
            };
            let _ = writeln!(
                s,
                "unit {} {} {} {} {} {} {} {}",
                u.id.0,
                owner,
                u.kind.name(),
                u.hp,
                u.resources,
                u.pos.row,
                u.pos.col,
                busy
            );
        }
        s
    }

    /// First 16 hex digits of SHA-256 over [`GridState::canonical_text`].
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical_text().as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub(crate) fn format_components(a: &SubAction) -> String {
    let c = a.components;
    format!("{},{},{},{},{},{},{}", c[0], c[1], c[2], c[3], c[4], c[5], c[6])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1_worker(s: &GridState) -> Unit {
        s.units_of(Player::P1).find(|u| u.kind == UnitKind::Worker).unwrap().clone()
    }

    #[test]
    fn initial_8x8_layout() {
        let s = GridState::bundled("basesWorkers8x8", 0).unwrap();
        for p in [Player::P1, Player::P2] {
            let kinds: Vec<_> = s.units_of(p).map(|u| u.kind).collect();
            assert_eq!(kinds.iter().filter(|k| **k == UnitKind::Base).count(), 1);
            assert_eq!(kinds.iter().filter(|k| **k == UnitKind::Worker).count(), 1);
        }
        assert_eq!(s.mine_resources(), 50);
        assert_eq!(GridState::bundled("basesWorkers16x16", 0).unwrap().mine_resources(), 100);
    }

    #[test]
    fn same_inputs_give_identical_states() {
        let a = serde_json::to_string(&GridState::bundled("8x8", 0).unwrap()).unwrap();
        let b = serde_json::to_string(&GridState::bundled("8x8", 0).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noop_step_only_advances_tick() {
        let s = GridState::bundled("8x8", 0).unwrap();
        let (next, out) = s.step(&JointAction::new(), &JointAction::new()).unwrap();
        assert_eq!(next.tick(), 1);
        assert!(out.events.iter().all(|e| e.is_empty()));
        assert_eq!(next.units(), s.units());
        assert_eq!(out.status(), TerminalStatus::Ongoing);
    }

    #[test]
    fn harvest_completes_after_duration() {
        let mut s = GridState::bundled("8x8", 0).unwrap();
        let w = p1_worker(&s);
        // worker at (1,1); mine at (0,0) is diagonal, so walk up first
        let mut a = JointAction::new();
        a.push(s.cell_index(w.pos), SubAction::move_to(Direction::Up));
        let move_time = s.rules().worker.move_time;
        s.advance(&a, &JointAction::new()).unwrap();
        for _ in 1..move_time {
            s.advance(&JointAction::new(), &JointAction::new()).unwrap();
        }
        let w = s.unit(w.id).unwrap().clone();
        assert_eq!(w.pos, Pos::new(0, 1));
        assert!(w.busy.is_none());

        let mut a = JointAction::new();
        a.push(s.cell_index(w.pos), SubAction::harvest(Direction::Left));
        let harvest_time = s.rules().worker.harvest_time;
        let mut events = Vec::new();
        for t in 0..harvest_time {
            let order = if t == 0 { a.clone() } else { JointAction::new() };
            let out = s.advance(&order, &JointAction::new()).unwrap();
            if t + 1 < harvest_time {
                assert!(out.events[0].is_empty());
            }
            events.extend(out.events[0].clone());
        }
        assert_eq!(events, vec![RewardEvent { kind: RewardKind::Harvest, value: 1.0 }]);
        assert_eq!(s.unit(w.id).unwrap().resources, 1);
        assert_eq!(s.mine_resources(), 49);
    }

    #[test]
    fn busy_tick_down_is_one_per_step() {
        let mut s = GridState::bundled("8x8", 0).unwrap();
        let w = p1_worker(&s);
        let mut a = JointAction::new();
        a.push(s.cell_index(w.pos), SubAction::move_to(Direction::Down));
        s.advance(&a, &JointAction::new()).unwrap();
        let mut last = s.unit(w.id).unwrap().busy.unwrap().remaining_ticks;
        assert_eq!(last, s.rules().worker.move_time - 1);
        while let Some(p) = s.unit(w.id).unwrap().busy {
            s.advance(&JointAction::new(), &JointAction::new()).unwrap();
            if let Some(q) = s.unit(w.id).unwrap().busy {
                assert_eq!(q.remaining_ticks, last - 1);
                last = q.remaining_ticks;
            } else {
                assert_eq!(p.remaining_ticks, 1);
            }
        }
    }

    #[test]
    fn killing_last_unit_wins() {
        let text = "size 1 4\nunit light p1 0 1\nunit light p2 0 2\n";
        let spec = MapSpec::parse(text).unwrap();
        let mut s = GridState::new_game(&spec, Arc::new(Rules::default()), 0).unwrap();
        let mut a1 = JointAction::new();
        a1.push(1, SubAction::attack(0, 1));
        let mut out = s.advance(&a1, &JointAction::new()).unwrap();
        let attack_time = s.rules().light.attack_time;
        let mut ticks = 1;
        let mut p1_events = out.events[0].clone();
        while out.terminal.is_none() {
            let order = if s.unit_at_cell(1).unwrap().busy.is_none() { a1.clone() } else { JointAction::new() };
            out = s.advance(&order, &JointAction::new()).unwrap();
            p1_events.extend(out.events[0].clone());
            ticks += 1;
            assert!(ticks < 100);
        }
        // light hp 4, damage 2 => two hits
        assert_eq!(ticks, 2 * attack_time);
        assert_eq!(out.status(), TerminalStatus::Win(Player::P1));
        assert!(p1_events.contains(&RewardEvent { kind: RewardKind::Win, value: 10.0 }));
        assert_eq!(out.events[1].last().unwrap().kind, RewardKind::Loss);
        assert!(matches!(s.advance(&JointAction::new(), &JointAction::new()), Err(EngineError::GameOver)));
    }

    #[test]
    fn step_limit_draw() {
        let mut s = GridState::bundled("8x8", 0).unwrap().with_step_limit(3);
        let mut last = None;
        for _ in 0..3 {
            last = Some(s.advance(&JointAction::new(), &JointAction::new()).unwrap());
        }
        let out = last.unwrap();
        assert_eq!(out.status(), TerminalStatus::Draw);
        assert_eq!(out.events[0], vec![RewardEvent { kind: RewardKind::Draw, value: 0.0 }]);
        assert_eq!(out.reward(Player::P2), 0.0);
    }

    #[test]
    fn illegal_orders_coerced_and_counted() {
        let mut s = GridState::bundled("8x8", 0).unwrap();
        let w = p1_worker(&s);
        let mut a = JointAction::new();
        a.push(s.cell_index(w.pos), SubAction::harvest(Direction::Down)); // no mine there
        a.push(0, SubAction::move_to(Direction::Right)); // a mine cannot move
        let out = s.advance(&a, &JointAction::new()).unwrap();
        assert_eq!(out.coerced, [2, 0]);
        assert!(s.unit(w.id).unwrap().busy.is_none());
    }

    #[test]
    fn malformed_orders_rejected() {
        let s = GridState::bundled("8x8", 0).unwrap();
        let mut a = JointAction::new();
        a.push(64, SubAction::NOOP);
        assert!(matches!(s.step(&a, &JointAction::new()), Err(EngineError::MalformedAction(_))));
        let mut a = JointAction::new();
        a.push(3, SubAction { components: [9, 0, 0, 0, 0, 0, 0] });
        assert!(matches!(s.step(&a, &JointAction::new()), Err(EngineError::MalformedAction(_))));
        let mut a = JointAction::new();
        a.push(3, SubAction::NOOP);
        a.push(3, SubAction::NOOP);
        assert!(matches!(s.step(&a, &JointAction::new()), Err(EngineError::MalformedAction(_))));
    }

    #[test]
    fn lower_id_wins_contested_cell() {
        let spec = MapSpec::parse("size 1 3\nunit worker p1 0 0\nunit worker p2 0 2\n").unwrap();
        let mut s = GridState::new_game(&spec, Arc::new(Rules::default()), 0).unwrap();
        let mut a1 = JointAction::new();
        a1.push(0, SubAction::move_to(Direction::Right));
        let mut a2 = JointAction::new();
        a2.push(2, SubAction::move_to(Direction::Left));
        let out = s.advance(&a1, &a2).unwrap();
        assert_eq!(out.cancelled, [0, 1]);
        assert_eq!(out.coerced, [0, 0]);
        assert!(s.unit(UnitId(0)).unwrap().busy.is_some());
        assert!(s.unit(UnitId(1)).unwrap().busy.is_none());
    }

    #[test]
    fn production_spends_and_spawns() {
        let mut s = GridState::bundled("8x8", 0).unwrap();
        let base = s.units_of(Player::P1).find(|u| u.kind == UnitKind::Base).unwrap().clone();
        let ledger = s.resource_ledger();
        let mut a = JointAction::new();
        a.push(s.cell_index(base.pos), SubAction::produce(Direction::Right, UnitKind::Worker));
        let mut events = s.advance(&a, &JointAction::new()).unwrap().events[0].clone();
        assert_eq!(s.stockpile(Player::P1), 4);
        for _ in 1..s.rules().worker.produce_time {
            events.extend(s.advance(&JointAction::new(), &JointAction::new()).unwrap().events[0].clone());
            assert_eq!(s.resource_ledger(), ledger);
        }
        assert_eq!(events, vec![RewardEvent { kind: RewardKind::BuildWorker, value: 1.0 }]);
        assert_eq!(s.units_of(Player::P1).filter(|u| u.kind == UnitKind::Worker).count(), 2);
    }
}
