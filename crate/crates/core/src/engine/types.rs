use serde::{Deserialize, Serialize};

/// Number of logits in one factorized sub-action.
pub const ACTION_LOGITS: usize = 78;
/// Side length of the relative attack window.
pub const ATTACK_WINDOW: usize = 7;
/// Widths of the seven action components, in logit order.
pub const COMPONENT_WIDTHS: [usize; 7] = [6, 4, 4, 4, 4, 7, 49];
/// Start offset of each component inside the 78-wide logit row.
pub const COMPONENT_OFFSETS: [usize; 7] = [0, 6, 10, 14, 18, 22, 29];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Player {
    P1,
    P2,
}

impl Player {
    pub fn index(self) -> usize {
        match self {
            Player::P1 => 0,
            Player::P2 => 1,
        }
    }

    pub fn opponent(self) -> Player {
        match self {
            Player::P1 => Player::P2,
            Player::P2 => Player::P1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Owner {
    Player(Player),
    Neutral,
}

impl Owner {
    pub fn player(self) -> Option<Player> {
        match self {
            Owner::Player(p) => Some(p),
            Owner::Neutral => None,
        }
    }

    pub fn is(self, player: Player) -> bool {
        self == Owner::Player(player)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnitKind {
    Resource,
    Base,
    Barracks,
    Worker,
    Light,
    Heavy,
    Ranged,
}

impl UnitKind {
    pub const ALL: [UnitKind; 7] = [
        UnitKind::Resource,
        UnitKind::Base,
        UnitKind::Barracks,
        UnitKind::Worker,
        UnitKind::Light,
        UnitKind::Heavy,
        UnitKind::Ranged,
    ];

    /// Index used by the produce-kind action component.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<UnitKind> {
        Self::ALL.get(i).copied()
    }

    pub fn is_building(self) -> bool {
        matches!(self, UnitKind::Base | UnitKind::Barracks)
    }

    pub fn is_mobile(self) -> bool {
        matches!(
            self,
            UnitKind::Worker | UnitKind::Light | UnitKind::Heavy | UnitKind::Ranged
        )
    }

    pub fn is_combat(self) -> bool {
        matches!(self, UnitKind::Light | UnitKind::Heavy | UnitKind::Ranged)
    }

    /// Kinds this unit can produce.
    pub fn products(self) -> &'static [UnitKind] {
        match self {
            UnitKind::Base => &[UnitKind::Worker],
            UnitKind::Barracks => &[UnitKind::Light, UnitKind::Heavy, UnitKind::Ranged],
            UnitKind::Worker => &[UnitKind::Base, UnitKind::Barracks],
            _ => &[],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UnitKind::Resource => "resource",
            UnitKind::Base => "base",
            UnitKind::Barracks => "barracks",
            UnitKind::Worker => "worker",
            UnitKind::Light => "light",
            UnitKind::Heavy => "heavy",
            UnitKind::Ranged => "ranged",
        }
    }

    pub fn from_name(s: &str) -> Option<UnitKind> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

/// Grid coordinate, `row` first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: i32,
    pub col: i32,
}

impl Pos {
    pub fn new(row: i32, col: i32) -> Pos {
        Pos { row, col }
    }

    pub fn offset(self, dr: i32, dc: i32) -> Pos {
        Pos::new(self.row + dr, self.col + dc)
    }

    pub fn step(self, dir: Direction) -> Pos {
        let (dr, dc) = dir.delta();
        self.offset(dr, dc)
    }

    pub fn manhattan(self, other: Pos) -> i32 {
        (self.row - other.row).abs() + (self.col - other.col).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Right,
    Down,
    Left,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Right,
        Direction::Down,
        Direction::Left,
    ];

    pub fn from_index(i: usize) -> Option<Direction> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Right => (0, 1),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionType {
    Noop,
    Move,
    Harvest,
    Return,
    Produce,
    Attack,
}

impl ActionType {
    pub const ALL: [ActionType; 6] = [
        ActionType::Noop,
        ActionType::Move,
        ActionType::Harvest,
        ActionType::Return,
        ActionType::Produce,
        ActionType::Attack,
    ];

    pub fn from_index(i: usize) -> Option<ActionType> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One unit's factorized order: an action type plus one index per parameter
/// component. Only the group selected by `action_type` has any effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SubAction {
    pub components: [u8; 7],
}

impl SubAction {
    pub const NOOP: SubAction = SubAction { components: [0; 7] };

    pub fn from_components(components: [u8; 7]) -> SubAction {
        SubAction { components }
    }

    /// `None` if any component index is out of range.
    pub fn validated(components: [u8; 7]) -> Option<SubAction> {
        components
            .iter()
            .zip(COMPONENT_WIDTHS)
            .all(|(&c, w)| (c as usize) < w)
            .then_some(SubAction { components })
    }

    pub fn is_well_formed(&self) -> bool {
        Self::validated(self.components).is_some()
    }

    pub fn action_type(&self) -> ActionType {
        ActionType::from_index(self.components[0] as usize).unwrap_or(ActionType::Noop)
    }

    pub fn move_dir(&self) -> Direction {
        Direction::from_index(self.components[1] as usize).unwrap_or(Direction::Up)
    }

    pub fn harvest_dir(&self) -> Direction {
        Direction::from_index(self.components[2] as usize).unwrap_or(Direction::Up)
    }

    pub fn return_dir(&self) -> Direction {
        Direction::from_index(self.components[3] as usize).unwrap_or(Direction::Up)
    }

    pub fn produce_dir(&self) -> Direction {
        Direction::from_index(self.components[4] as usize).unwrap_or(Direction::Up)
    }

    pub fn produce_kind(&self) -> UnitKind {
        UnitKind::from_index(self.components[5] as usize).unwrap_or(UnitKind::Resource)
    }

    /// Relative (row, col) offset of the attack target in the 7x7 window.
    pub fn attack_offset(&self) -> (i32, i32) {
        attack_offset_delta(self.components[6] as usize)
    }

    pub fn noop() -> SubAction {
        Self::NOOP
    }

    pub fn move_to(dir: Direction) -> SubAction {
        let mut c = [0u8; 7];
        c[0] = ActionType::Move as u8;
        c[1] = dir as u8;
        SubAction { components: c }
    }

    pub fn harvest(dir: Direction) -> SubAction {
        let mut c = [0u8; 7];
        c[0] = ActionType::Harvest as u8;
        c[2] = dir as u8;
        SubAction { components: c }
    }

    pub fn return_to(dir: Direction) -> SubAction {
        let mut c = [0u8; 7];
        c[0] = ActionType::Return as u8;
        c[3] = dir as u8;
        SubAction { components: c }
    }

    pub fn produce(dir: Direction, kind: UnitKind) -> SubAction {
        let mut c = [0u8; 7];
        c[0] = ActionType::Produce as u8;
        c[4] = dir as u8;
        c[5] = kind as u8;
        SubAction { components: c }
    }

    pub fn attack(dr: i32, dc: i32) -> SubAction {
        let mut c = [0u8; 7];
        c[0] = ActionType::Attack as u8;
        c[6] = attack_offset_index(dr, dc).expect("attack offset outside the 7x7 window") as u8;
        SubAction { components: c }
    }
}

pub fn attack_offset_delta(index: usize) -> (i32, i32) {
    let half = (ATTACK_WINDOW / 2) as i32;
    let r = (index / ATTACK_WINDOW) as i32 - half;
    let c = (index % ATTACK_WINDOW) as i32 - half;
    (r, c)
}

pub fn attack_offset_index(dr: i32, dc: i32) -> Option<usize> {
    let half = (ATTACK_WINDOW / 2) as i32;
    if dr.abs() > half || dc.abs() > half {
        return None;
    }
    Some(((dr + half) as usize) * ATTACK_WINDOW + (dc + half) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PendingAction {
    pub action: SubAction,
    pub remaining_ticks: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub id: UnitId,
    pub owner: Owner,
    pub kind: UnitKind,
    pub hp: u32,
    /// Carried load for workers, remaining stock for resource mines.
    pub resources: u32,
    pub pos: Pos,
    pub busy: Option<PendingAction>,
}

impl Unit {
    pub fn current_action(&self) -> ActionType {
        self.busy
            .map(|p| p.action.action_type())
            .unwrap_or(ActionType::Noop)
    }
}

/// One unit's order inside a joint action, addressed by the cell of the
/// issuing unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitOrder {
    pub cell: usize,
    pub action: SubAction,
}

/// All orders one player submits for a single tick.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction {
    pub orders: Vec<UnitOrder>,
}

impl JointAction {
    pub fn new() -> JointAction {
        JointAction::default()
    }

    pub fn push(&mut self, cell: usize, action: SubAction) {
        self.orders.push(UnitOrder { cell, action });
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardKind {
    Win,
    Loss,
    Draw,
    Harvest,
    Attack,
    BuildBuilding,
    BuildWorker,
    BuildCombat,
}

impl RewardKind {
    pub const ALL: [RewardKind; 8] = [
        RewardKind::Win,
        RewardKind::Loss,
        RewardKind::Draw,
        RewardKind::Harvest,
        RewardKind::Attack,
        RewardKind::BuildBuilding,
        RewardKind::BuildWorker,
        RewardKind::BuildCombat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardKind::Win => "win",
            RewardKind::Loss => "loss",
            RewardKind::Draw => "draw",
            RewardKind::Harvest => "harvest",
            RewardKind::Attack => "attack",
            RewardKind::BuildBuilding => "build_building",
            RewardKind::BuildWorker => "build_worker",
            RewardKind::BuildCombat => "build_combat",
        }
    }

    pub fn from_name(s: &str) -> Option<RewardKind> {
        Self::ALL.iter().copied().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardEvent {
    pub kind: RewardKind,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalStatus {
    Ongoing,
    Win(Player),
    Draw,
}

impl TerminalStatus {
    pub fn is_terminal(self) -> bool {
        !matches!(self, TerminalStatus::Ongoing)
    }
}
