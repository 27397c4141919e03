use serde::{Deserialize, Serialize};

use super::state::GridState;
use super::types::*;

/// Per-cell legality of every action component for one player.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegalityMask {
    pub rows: usize,
    pub cols: usize,
    /// Cell holds an idle unit of the player with at least one non-NOOP option.
    pub source: Vec<bool>,
    /// `cells x 78`, component layout per [`COMPONENT_OFFSETS`].
    pub components: Vec<bool>,
}

impl LegalityMask {
    pub fn row(&self, cell: usize) -> &[bool] {
        &self.components[cell * ACTION_LOGITS..(cell + 1) * ACTION_LOGITS]
    }

    pub fn source_count(&self) -> usize {
        self.source.iter().filter(|&&s| s).count()
    }

    /// True when the sub-action's type and the parameter group it uses are
    /// both admitted.
    pub fn admits(&self, cell: usize, action: &SubAction) -> bool {
        let row = self.row(cell);
        let c = action.components;
        let at = c[0] as usize;
        if !row[at] {
            return false;
        }
        let ok = |comp: usize| row[COMPONENT_OFFSETS[comp] + c[comp] as usize];
        match action.action_type() {
            ActionType::Noop => true,
            ActionType::Move => ok(1),
            ActionType::Harvest => ok(2),
            ActionType::Return => ok(3),
            ActionType::Produce => ok(4) && ok(5),
            ActionType::Attack => ok(6),
        }
    }
}

/// Fills the 78 component flags for one unit. Returns whether any non-NOOP
/// option exists.
pub fn unit_mask_row(state: &GridState, player: Player, unit: &Unit, row: &mut [bool]) -> bool {
    row.fill(false);
    row[0] = true;
    if !unit.owner.is(player) || unit.busy.is_some() || unit.kind == UnitKind::Resource {
        return false;
    }
    let rules = state.rules();
    let type_slot = |t: ActionType| t.index();

    if unit.kind.is_mobile() {
        for d in Direction::ALL {
            if state.is_free(unit.pos.step(d)) {
                row[COMPONENT_OFFSETS[1] + d.index()] = true;
                row[type_slot(ActionType::Move)] = true;
            }
        }
    }
    if unit.kind == UnitKind::Worker {
        for d in Direction::ALL {
            let Some(target) = state.unit_at(unit.pos.step(d)) else {
                continue;
            };
            if unit.resources == 0 && target.kind == UnitKind::Resource && target.resources > 0 {
                row[COMPONENT_OFFSETS[2] + d.index()] = true;
                row[type_slot(ActionType::Harvest)] = true;
            }
            if unit.resources > 0 && target.kind == UnitKind::Base && target.owner.is(player) {
                row[COMPONENT_OFFSETS[3] + d.index()] = true;
                row[type_slot(ActionType::Return)] = true;
            }
        }
    }
    let products = unit.kind.products();
    if !products.is_empty() {
        let budget = state.stockpile(player);
        let mut any_kind = false;
        for &k in products {
            if rules.stats(k).cost <= budget {
                row[COMPONENT_OFFSETS[5] + k.index()] = true;
                any_kind = true;
            }
        }
        let mut any_dir = false;
        for d in Direction::ALL {
            if state.is_free(unit.pos.step(d)) {
                row[COMPONENT_OFFSETS[4] + d.index()] = true;
                any_dir = true;
            }
        }
        if any_kind && any_dir {
            row[type_slot(ActionType::Produce)] = true;
        } else {
            row[COMPONENT_OFFSETS[4]..COMPONENT_OFFSETS[6]].fill(false);
        }
    }
    if unit.kind.is_mobile() {
        let range = rules.stats(unit.kind).attack_range as i32;
        for idx in 0..ATTACK_WINDOW * ATTACK_WINDOW {
            let (dr, dc) = attack_offset_delta(idx);
            if (dr, dc) == (0, 0) || dr * dr + dc * dc > range * range {
                continue;
            }
            if state
                .unit_at(unit.pos.offset(dr, dc))
                .is_some_and(|t| t.owner.is(player.opponent()))
            {
                row[COMPONENT_OFFSETS[6] + idx] = true;
                row[type_slot(ActionType::Attack)] = true;
            }
        }
    }
    row[1..6].iter().any(|&b| b)
}

pub fn legality_mask(state: &GridState, player: Player) -> LegalityMask {
    let cells = state.cells();
    let mut components = vec![false; cells * ACTION_LOGITS];
    let mut source = vec![false; cells];
    for cell in 0..cells {
        let row = &mut components[cell * ACTION_LOGITS..(cell + 1) * ACTION_LOGITS];
        match state.unit_at_cell(cell) {
            Some(u) => source[cell] = unit_mask_row(state, player, u, row),
            None => row[0] = true,
        }
    }
    LegalityMask {
        rows: state.rows(),
        cols: state.cols(),
        source,
        components,
    }
}
