//! Unit statistics and reward weights.
//!
//! Defaults follow the public microRTS unit table. Every value can be
//! overridden from a TOML key/value file, one table per unit kind:
//!
//! ```toml
//! [worker]
//! cost = 1
//! move_time = 10
//!
//! [rewards]
//! harvest = 1.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{RewardKind, UnitKind};
use super::EngineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitStats {
    pub cost: u32,
    pub hp: u32,
    pub damage: u32,
    pub attack_range: u32,
    pub produce_time: u32,
    pub move_time: u32,
    pub attack_time: u32,
    pub harvest_time: u32,
    pub return_time: u32,
    pub harvest_amount: u32,
}

impl Default for UnitStats {
    fn default() -> Self {
        UnitStats {
            cost: 0,
            hp: 1,
            damage: 0,
            attack_range: 0,
            produce_time: 1,
            move_time: 1,
            attack_time: 1,
            harvest_time: 1,
            return_time: 1,
            harvest_amount: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub win: f64,
    pub loss: f64,
    pub draw: f64,
    pub harvest: f64,
    pub attack: f64,
    pub build_building: f64,
    pub build_worker: f64,
    pub build_combat: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            win: 10.0,
            loss: -10.0,
            draw: 0.0,
            harvest: 1.0,
            attack: 1.0,
            build_building: 0.2,
            build_worker: 1.0,
            build_combat: 4.0,
        }
    }
}

impl RewardWeights {
    pub fn value(&self, kind: RewardKind) -> f64 {
        match kind {
            RewardKind::Win => self.win,
            RewardKind::Loss => self.loss,
            RewardKind::Draw => self.draw,
            RewardKind::Harvest => self.harvest,
            RewardKind::Attack => self.attack,
            RewardKind::BuildBuilding => self.build_building,
            RewardKind::BuildWorker => self.build_worker,
            RewardKind::BuildCombat => self.build_combat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rules {
    pub resource: UnitStats,
    pub base: UnitStats,
    pub barracks: UnitStats,
    pub worker: UnitStats,
    pub light: UnitStats,
    pub heavy: UnitStats,
    pub ranged: UnitStats,
    pub rewards: RewardWeights,
}

impl Default for Rules {
    fn default() -> Self {
        let unit = |cost, hp, produce_time| UnitStats {
            cost,
            hp,
            produce_time,
            ..UnitStats::default()
        };
        let mobile = |cost, hp, damage, attack_range, produce_time, move_time| UnitStats {
            cost,
            hp,
            damage,
            attack_range,
            produce_time,
            move_time,
            attack_time: 5,
            ..UnitStats::default()
        };
        Rules {
            resource: UnitStats {
                hp: 0,
                ..UnitStats::default()
            },
            base: unit(10, 10, 250),
            barracks: unit(5, 4, 200),
            worker: UnitStats {
                harvest_time: 20,
                return_time: 10,
                harvest_amount: 1,
                ..mobile(1, 1, 1, 1, 50, 10)
            },
            light: mobile(2, 4, 2, 1, 80, 8),
            heavy: mobile(3, 8, 4, 1, 120, 12),
            ranged: mobile(2, 1, 1, 3, 100, 10),
            rewards: RewardWeights::default(),
        }
    }
}

impl Rules {
    pub fn stats(&self, kind: UnitKind) -> &UnitStats {
        match kind {
            UnitKind::Resource => &self.resource,
            UnitKind::Base => &self.base,
            UnitKind::Barracks => &self.barracks,
            UnitKind::Worker => &self.worker,
            UnitKind::Light => &self.light,
            UnitKind::Heavy => &self.heavy,
            UnitKind::Ranged => &self.ranged,
        }
    }

    pub fn parse(text: &str) -> Result<Rules, EngineError> {
        let cfg = |e: toml::de::Error| EngineError::Config(e.to_string());
        let overrides: toml::Table = toml::from_str(text).map_err(cfg)?;
        let mut merged = toml::Table::try_from(Rules::default()).expect("rules serialize");
        for (section, value) in overrides {
            match (merged.get_mut(&section), value) {
                (Some(toml::Value::Table(base)), toml::Value::Table(over)) => base.extend(over),
                (_, value) => {
                    merged.insert(section, value);
                }
            }
        }
        let rules: Rules = merged.try_into().map_err(cfg)?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn load(path: &Path) -> Result<Rules, EngineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
        Rules::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("rules serialize")
    }

    fn validate(&self) -> Result<(), EngineError> {
        for kind in UnitKind::ALL {
            let s = self.stats(kind);
            if kind != UnitKind::Resource && s.hp == 0 {
                return Err(EngineError::Config(format!("{}: hp must be positive", kind.name())));
            }
            let durations = [s.produce_time, s.move_time, s.attack_time, s.harvest_time, s.return_time];
            if durations.contains(&0) {
                return Err(EngineError::Config(format!(
                    "{}: action durations must be positive",
                    kind.name()
                )));
            }
            if s.attack_range > 3 {
                return Err(EngineError::Config(format!(
                    "{}: attack range {} exceeds the 7x7 attack window",
                    kind.name(),
                    s.attack_range
                )));
            }
        }
        if self.worker.harvest_amount != 1 {
            return Err(EngineError::Config("worker harvest_amount must be 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let rules = Rules::default();
        assert_eq!(Rules::parse(&rules.to_toml()).unwrap(), rules);
    }

    #[test]
    fn partial_override() {
        let rules = Rules::parse("[light]\nmove_time = 4\n[rewards]\nharvest = 2.0\n").unwrap();
        assert_eq!(rules.light.move_time, 4);
        assert_eq!(rules.light.hp, 4, "missing keys keep the unit table defaults");
        assert_eq!(rules.rewards.harvest, 2.0);
        assert_eq!(rules.rewards.build_combat, 4.0);
    }

    #[test]
    fn rejects_unknown_keys_and_long_range() {
        assert!(Rules::parse("[worker]\nspeed = 3\n").is_err());
        assert!(Rules::parse("[ranged]\nattack_range = 4\nhp = 1\n").is_err());
    }

    #[test]
    fn reward_table_defaults() {
        let r = RewardWeights::default();
        let values: Vec<f64> = RewardKind::ALL.iter().map(|&k| r.value(k)).collect();
        assert_eq!(values, vec![10.0, -10.0, 0.0, 1.0, 1.0, 0.2, 1.0, 4.0]);
    }
}
