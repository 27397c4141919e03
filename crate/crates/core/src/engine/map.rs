//! Text map specs.
//!
//! ```text
//! # comment
//! name basesWorkers8x8
//! size <rows> <cols>
//! stockpile <initial resources per player>
//! unit <kind> <p1|p2|neutral> <row> <col> [resources]
//! ```
//!
//! Layouts must be point-mirrored: every unit at `(r, c)` needs a twin of the
//! same kind and resources at `(rows-1-r, cols-1-c)` owned by the other player
//! (neutral units mirror onto neutral units).

use std::collections::HashMap;

use super::types::{Owner, Player, Pos, UnitKind};
use super::EngineError;

pub const BASES_WORKERS_8X8: &str = include_str!("../../maps/basesWorkers8x8.map");
pub const BASES_WORKERS_16X16: &str = include_str!("../../maps/basesWorkers16x16.map");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitPlacement {
    pub kind: UnitKind,
    pub owner: Owner,
    pub pos: Pos,
    pub resources: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub stockpile: u32,
    pub units: Vec<UnitPlacement>,
}

impl MapSpec {
    /// Looks up a bundled map by name. `8x8` and `16x16` are accepted as
    /// shorthands.
    pub fn bundled(name: &str) -> Result<MapSpec, EngineError> {
        let text = match name {
            "basesWorkers8x8" | "8x8" => BASES_WORKERS_8X8,
            "basesWorkers16x16" | "16x16" => BASES_WORKERS_16X16,
            other => return Err(EngineError::UnknownMap(other.to_string())),
        };
        MapSpec::parse(text)
    }

    pub fn load(path: &std::path::Path) -> Result<MapSpec, EngineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::Map(format!("{}: {e}", path.display())))?;
        MapSpec::parse(&text)
    }

    /// Bundled name or a path to a map file.
    pub fn resolve(name_or_path: &str) -> Result<MapSpec, EngineError> {
        match MapSpec::bundled(name_or_path) {
            Err(EngineError::UnknownMap(_)) => MapSpec::load(std::path::Path::new(name_or_path)),
            other => other,
        }
    }

    pub fn parse(text: &str) -> Result<MapSpec, EngineError> {
        let mut name = None;
        let mut size = None;
        let mut stockpile = 0;
        let mut units = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| EngineError::Map(format!("line {}: {msg}: `{raw}`", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<i64>().map_err(|_| err("expected an integer"));
            match fields[0] {
                "name" if fields.len() == 2 => name = Some(fields[1].to_string()),
                "size" if fields.len() == 3 => {
                    let (r, c) = (num(fields[1])?, num(fields[2])?);
                    if r <= 0 || c <= 0 {
                        return Err(err("map dimensions must be positive"));
                    }
                    size = Some((r as usize, c as usize));
                }
                "stockpile" if fields.len() == 2 => {
                    stockpile = u32::try_from(num(fields[1])?).map_err(|_| err("bad stockpile"))?
                }
                "unit" if fields.len() == 5 || fields.len() == 6 => {
                    let kind = UnitKind::from_name(fields[1]).ok_or_else(|| err("unknown unit kind"))?;
                    let owner = match fields[2] {
                        "p1" => Owner::Player(Player::P1),
                        "p2" => Owner::Player(Player::P2),
                        "neutral" => Owner::Neutral,
                        _ => return Err(err("owner must be p1, p2 or neutral")),
                    };
                    let pos = Pos::new(num(fields[3])? as i32, num(fields[4])? as i32);
                    let resources = match fields.get(5) {
                        Some(s) => u32::try_from(num(s)?).map_err(|_| err("bad resource count"))?,
                        None => 0,
                    };
                    units.push(UnitPlacement {
                        kind,
                        owner,
                        pos,
                        resources,
                    });
                }
                _ => return Err(err("unrecognised directive")),
            }
        }
        let (rows, cols) = size.ok_or_else(|| EngineError::Map("missing `size` line".into()))?;
        let spec = MapSpec {
            name: name.unwrap_or_else(|| "custom".into()),
            rows,
            cols,
            stockpile,
            units,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let mut seen: HashMap<Pos, &UnitPlacement> = HashMap::new();
        for u in &self.units {
            if u.pos.row < 0
                || u.pos.col < 0
                || u.pos.row as usize >= self.rows
                || u.pos.col as usize >= self.cols
            {
                return Err(EngineError::Map(format!("unit at {:?} is off the map", u.pos)));
            }
            if (u.kind == UnitKind::Resource) != (u.owner == Owner::Neutral) {
                return Err(EngineError::Map(format!(
                    "unit at {:?}: resources must be neutral and neutral units must be resources",
                    u.pos
                )));
            }
            if u.kind == UnitKind::Resource && u.resources == 0 {
                return Err(EngineError::Map(format!("empty mine at {:?}", u.pos)));
            }
            if u.kind != UnitKind::Resource && u.kind != UnitKind::Worker && u.resources != 0 {
                return Err(EngineError::Map(format!("{} at {:?} cannot hold resources", u.kind.name(), u.pos)));
            }
            if u.kind == UnitKind::Worker && u.resources > 1 {
                return Err(EngineError::Map(format!("worker at {:?} carries more than 1", u.pos)));
            }
            if seen.insert(u.pos, u).is_some() {
                return Err(EngineError::Map(format!("two units overlap at {:?}", u.pos)));
            }
        }
        for u in &self.units {
            let twin_pos = Pos::new(self.rows as i32 - 1 - u.pos.row, self.cols as i32 - 1 - u.pos.col);
            let twin_owner = match u.owner {
                Owner::Player(p) => Owner::Player(p.opponent()),
                Owner::Neutral => Owner::Neutral,
            };
            let mirrored = seen.get(&twin_pos).is_some_and(|t| {
                t.kind == u.kind && t.owner == twin_owner && t.resources == u.resources
            });
            if !mirrored {
                return Err(EngineError::Map(format!(
                    "layout is not mirrored: {} at {:?} has no twin at {:?}",
                    u.kind.name(),
                    u.pos,
                    twin_pos
                )));
            }
        }
        Ok(())
    }

    pub fn total_mine_resources(&self) -> u32 {
        self.units
            .iter()
            .filter(|u| u.kind == UnitKind::Resource)
            .map(|u| u.resources)
            .sum()
    }
}
