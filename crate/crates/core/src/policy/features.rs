use serde::{Deserialize, Serialize};

use crate::engine::{legality_mask, observe, GridState, ObservationTensor, Player, ACTION_LOGITS, FEATURES, GROUP_OFFSETS};
use crate::numerics::Tensor;

/// Ownership blocks in row order.
pub const OWN: usize = 0;
pub const OPPONENT: usize = 1;
pub const NEUTRAL: usize = 2;

/// One row per occupied cell: its grid index and 27 cell features.
///
/// Rows come in three blocks (own units, opponent units, neutral mines), each
/// in row-major grid order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMatrix {
    pub cells: usize,
    pub positions: Vec<usize>,
    /// `len() x 27`.
    pub features: Vec<u8>,
    /// Row counts of the own, opponent and neutral blocks.
    pub partition: [usize; 3],
}

impl EntityMatrix {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn row_features(&self, r: usize) -> &[u8] {
        &self.features[r * FEATURES..(r + 1) * FEATURES]
    }

    /// Block index of row `r`.
    pub fn block_of(&self, r: usize) -> usize {
        if r < self.partition[0] {
            OWN
        } else if r < self.partition[0] + self.partition[1] {
            OPPONENT
        } else {
            NEUTRAL
        }
    }

    /// Rows with raw position one-hots: `len() x (cells + 27)`.
    pub fn one_hot_rows(&self) -> Tensor {
        let w = self.cells + FEATURES;
        let mut data = vec![0.0; self.len() * w];
        for (r, &p) in self.positions.iter().enumerate() {
            let row = &mut data[r * w..(r + 1) * w];
            row[p] = 1.0;
            for (d, &f) in row[self.cells..].iter_mut().zip(self.row_features(r)) {
                *d = f as f64;
            }
        }
        Tensor::matrix(self.len(), w, data)
    }

    /// Rows with embedded positions `onehot(p) * embed`: `len() x (dim + 27)`.
    pub fn embedded_rows(&self, embed: &Tensor) -> Tensor {
        let (_, dim) = embed.dims2();
        let w = dim + FEATURES;
        let mut data = vec![0.0; self.len() * w];
        for (r, &p) in self.positions.iter().enumerate() {
            let row = &mut data[r * w..(r + 1) * w];
            row[..dim].copy_from_slice(embed.row(p));
            for (d, &f) in row[dim..].iter_mut().zip(self.row_features(r)) {
                *d = f as f64;
            }
        }
        Tensor::matrix(self.len(), w, data)
    }

    /// The 27 cell features as a float matrix.
    pub fn feature_rows(&self) -> Tensor {
        Tensor::matrix(self.len(), FEATURES, self.features.iter().map(|&f| f as f64).collect())
    }
}

pub fn feature_map(obs: &ObservationTensor) -> EntityMatrix {
    let cells = obs.rows * obs.cols;
    let mut blocks: [Vec<usize>; 3] = Default::default();
    for cell in 0..cells {
        if obs.is_empty_cell(cell) {
            continue;
        }
        let owner = &obs.cell(cell)[GROUP_OFFSETS[2]..GROUP_OFFSETS[2] + 3];
        let block = if owner[0] == 1 {
            OWN
        } else if owner[2] == 1 {
            OPPONENT
        } else {
            NEUTRAL
        };
        blocks[block].push(cell);
    }
    let partition = [blocks[0].len(), blocks[1].len(), blocks[2].len()];
    let positions: Vec<usize> = blocks.concat();
    let features = positions.iter().flat_map(|&c| obs.cell(c).iter().copied()).collect();
    EntityMatrix {
        cells,
        positions,
        features,
        partition,
    }
}

/// Everything the policy needs about one decision point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyInput {
    pub entities: EntityMatrix,
    /// `k x 78` legality flags for the own-unit rows, with the index-0
    /// convention already applied to empty parameter groups.
    pub unit_masks: Vec<bool>,
    /// Whether each own unit is idle with a non-NOOP option.
    pub sources: Vec<bool>,
}

impl PolicyInput {
    pub fn from_state(state: &GridState, player: Player) -> PolicyInput {
        let entities = feature_map(&observe(state, player));
        let mask = legality_mask(state, player);
        let k = entities.partition[OWN];
        let mut unit_masks = Vec::with_capacity(k * ACTION_LOGITS);
        let mut sources = Vec::with_capacity(k);
        for &cell in &entities.positions[..k] {
            let mut row = mask.row(cell).to_vec();
            fill_empty_groups(&mut row);
            unit_masks.extend_from_slice(&row);
            sources.push(mask.source[cell]);
        }
        PolicyInput {
            entities,
            unit_masks,
            sources,
        }
    }

    pub fn units(&self) -> usize {
        self.entities.partition[OWN]
    }

    pub fn unit_mask(&self, u: usize) -> &[bool] {
        &self.unit_masks[u * ACTION_LOGITS..(u + 1) * ACTION_LOGITS]
    }

    pub fn unit_cell(&self, u: usize) -> usize {
        self.entities.positions[u]
    }
}

/// A component group with no legal entry keeps index 0 so it degenerates to
/// a point mass instead of an undefined distribution.
pub fn fill_empty_groups(row: &mut [bool]) {
    use crate::engine::{COMPONENT_OFFSETS, COMPONENT_WIDTHS};
    for (&o, &w) in COMPONENT_OFFSETS.iter().zip(&COMPONENT_WIDTHS) {
        if !row[o..o + w].iter().any(|&b| b) {
            row[o] = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_ordered_by_block_then_grid() {
        let s = GridState::bundled("8x8", 0).unwrap();
        let e = feature_map(&observe(&s, Player::P1));
        // worker (1,1) then base (1,2); P2 base (6,5), worker (6,6); mines (0,0), (7,7)
        assert_eq!(e.positions, vec![9, 10, 53, 54, 0, 63]);
        assert_eq!(e.partition, [2, 2, 2]);
        assert_eq!(e.one_hot_rows().shape(), &[6, 91]);

        let e2 = feature_map(&observe(&s, Player::P2));
        assert_eq!(e2.positions, vec![53, 54, 9, 10, 0, 63]);
    }

    #[test]
    fn widths_with_and_without_embedding() {
        let s = GridState::bundled("16x16", 0).unwrap();
        let e = feature_map(&observe(&s, Player::P1));
        assert_eq!(e.one_hot_rows().dims2().1, 283);
        let embed = Tensor::zeros(&[256, 64]);
        assert_eq!(e.embedded_rows(&embed).dims2().1, 91);
    }

    #[test]
    fn input_masks_cover_own_units() {
        let s = GridState::bundled("8x8", 0).unwrap();
        let input = PolicyInput::from_state(&s, Player::P1);
        assert_eq!(input.units(), 2);
        assert_eq!(input.sources, vec![true, true]);
        for u in 0..2 {
            let row = input.unit_mask(u);
            assert!(row[0]);
            // the attack group of the base is empty and falls back to index 0
            assert!(row[29..].iter().any(|&b| b));
        }
    }
}
