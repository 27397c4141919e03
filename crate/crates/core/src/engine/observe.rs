use serde::{Deserialize, Serialize};

use super::state::GridState;
use super::types::{Owner, Player, UnitKind};

pub const FEATURES: usize = 27;
/// Start offsets of the hp, resources, owner, unit-type and action groups.
pub const GROUP_OFFSETS: [usize; 5] = [0, 5, 10, 13, 21];
pub const GROUP_WIDTHS: [usize; 5] = [5, 5, 3, 8, 6];

/// `rows x cols x 27` one-hot encoding of a state from one player's side.
///
/// Owner slot 0 is the observing player, 1 is neutral or empty, 2 the opponent.
/// Unit-type slot 0 is "no unit", followed by the seven kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationTensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u8>,
}

impl ObservationTensor {
    pub fn cell(&self, cell: usize) -> &[u8] {
        &self.data[cell * FEATURES..(cell + 1) * FEATURES]
    }

    /// The five one-hot groups of one cell.
    pub fn groups(&self, cell: usize) -> [&[u8]; 5] {
        let c = self.cell(cell);
        std::array::from_fn(|g| &c[GROUP_OFFSETS[g]..GROUP_OFFSETS[g] + GROUP_WIDTHS[g]])
    }

    pub fn is_empty_cell(&self, cell: usize) -> bool {
        self.cell(cell)[GROUP_OFFSETS[3]] == 1
    }
}

fn bucket(v: u32) -> usize {
    v.min(4) as usize
}

pub fn observe(state: &GridState, player: Player) -> ObservationTensor {
    let cells = state.cells();
    let mut data = vec![0u8; cells * FEATURES];
    for cell in 0..cells {
        let f = &mut data[cell * FEATURES..(cell + 1) * FEATURES];
        match state.unit_at_cell(cell) {
            None => {
                f[GROUP_OFFSETS[0]] = 1;
                f[GROUP_OFFSETS[1]] = 1;
                f[GROUP_OFFSETS[2] + 1] = 1;
                f[GROUP_OFFSETS[3]] = 1;
                f[GROUP_OFFSETS[4]] = 1;
            }
            Some(u) => {
                let resources = match (u.kind, u.owner) {
                    (UnitKind::Base, Owner::Player(p)) => state.stockpile(p),
                    _ => u.resources,
                };
                let owner = match u.owner {
                    Owner::Player(p) if p == player => 0,
                    Owner::Player(_) => 2,
                    Owner::Neutral => 1,
                };
                f[GROUP_OFFSETS[0] + bucket(u.hp)] = 1;
                f[GROUP_OFFSETS[1] + bucket(resources)] = 1;
                f[GROUP_OFFSETS[2] + owner] = 1;
                f[GROUP_OFFSETS[3] + 1 + u.kind.index()] = 1;
                f[GROUP_OFFSETS[4] + u.current_action().index()] = 1;
            }
        }
    }
    ObservationTensor {
        rows: state.rows(),
        cols: state.cols(),
        data,
    }
}
