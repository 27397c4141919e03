//! Line-delimited replay records. The byte layout is documented in
//! `docs/replay-format.md`.

use std::fmt::Write as _;
use std::sync::Arc;

use super::map::MapSpec;
use super::rules::Rules;
use super::state::{format_components, GridState, StepOutcome};
use super::types::*;
use super::EngineError;

pub const REPLAY_MAGIC: &str = "mrts-replay";
pub const REPLAY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayHeader {
    pub map: String,
    pub step_limit: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub tick: u32,
    pub actions: [JointAction; 2],
    pub events: [Vec<RewardEvent>; 2],
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub header: ReplayHeader,
    pub records: Vec<ReplayRecord>,
    pub result: Option<TerminalStatus>,
}

/// Accumulates a replay in memory while a game is played.
#[derive(Debug, Clone)]
pub struct ReplayWriter {
    text: String,
}

impl ReplayWriter {
    pub fn new(state: &GridState) -> ReplayWriter {
        let mut text = String::new();
        let _ = writeln!(
            text,
            "{REPLAY_MAGIC} {REPLAY_VERSION} map={} step_limit={} seed={}",
            state.map_id(),
            state.step_limit(),
            state.seed()
        );
        ReplayWriter { text }
    }

    /// `tick` is the tick at which the orders were issued; `after` is the
    /// successor state.
    pub fn record(&mut self, tick: u32, a1: &JointAction, a2: &JointAction, outcome: &StepOutcome, after: &GridState) {
        let _ = writeln!(
            self.text,
            "{}\t{}\t{}\t{}\t{}\t{}",
            tick,
            format_orders(a1),
            format_orders(a2),
            format_events(&outcome.events[0]),
            format_events(&outcome.events[1]),
            after.digest()
        );
        if let Some(status) = outcome.terminal {
            let _ = writeln!(self.text, "end {}", format_status(status));
        }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

fn format_orders(a: &JointAction) -> String {
    if a.orders.is_empty() {
        return "-".into();
    }
    a.orders
        .iter()
        .map(|o| format!("{}:{}", o.cell, format_components(&o.action)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn format_events(events: &[RewardEvent]) -> String {
    if events.is_empty() {
        return "-".into();
    }
    events
        .iter()
        .map(|e| format!("{}:{}", e.kind.name(), e.value))
        .collect::<Vec<_>>()
        .join(" ")
}

fn format_status(s: TerminalStatus) -> &'static str {
    match s {
        TerminalStatus::Win(Player::P1) => "win p1",
        TerminalStatus::Win(Player::P2) => "win p2",
        TerminalStatus::Draw => "draw",
        TerminalStatus::Ongoing => "ongoing",
    }
}

fn bad(line: usize, msg: impl std::fmt::Display) -> EngineError {
    EngineError::Replay(format!("line {line}: {msg}"))
}

fn parse_orders(s: &str, line: usize) -> Result<JointAction, EngineError> {
    let mut a = JointAction::new();
    if s == "-" {
        return Ok(a);
    }
    for tok in s.split(' ') {
        let (cell, comps) = tok.split_once(':').ok_or_else(|| bad(line, "order without ':'"))?;
        let cell: usize = cell.parse().map_err(|_| bad(line, "bad cell"))?;
        let parts: Vec<u8> = comps
            .split(',')
            .map(|c| c.parse::<u8>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(line, "bad component"))?;
        let components: [u8; 7] = parts.try_into().map_err(|_| bad(line, "need 7 components"))?;
        a.push(cell, SubAction { components });
    }
    Ok(a)
}

fn parse_events(s: &str, line: usize) -> Result<Vec<RewardEvent>, EngineError> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(' ')
        .map(|tok| {
            let (k, v) = tok.split_once(':').ok_or_else(|| bad(line, "event without ':'"))?;
            Ok(RewardEvent {
                kind: RewardKind::from_name(k).ok_or_else(|| bad(line, "unknown event kind"))?,
                value: v.parse().map_err(|_| bad(line, "bad event value"))?,
            })
        })
        .collect()
}

impl Replay {
    pub fn parse(text: &str) -> Result<Replay, EngineError> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| bad(1, "empty replay"))?;
        let mut fields = first.split(' ');
        if fields.next() != Some(REPLAY_MAGIC) {
            return Err(bad(1, "missing magic"));
        }
        if fields.next() != Some(&REPLAY_VERSION.to_string()) {
            return Err(bad(1, "unsupported version"));
        }
        let (mut map, mut step_limit, mut seed) = (None, None, None);
        for f in fields {
            match f.split_once('=') {
                Some(("map", v)) => map = Some(v.to_string()),
                Some(("step_limit", v)) => step_limit = v.parse().ok(),
                Some(("seed", v)) => seed = v.parse().ok(),
                _ => return Err(bad(1, format!("unknown header field `{f}`"))),
            }
        }
        let header = ReplayHeader {
            map: map.ok_or_else(|| bad(1, "missing map"))?,
            step_limit: step_limit.ok_or_else(|| bad(1, "missing step_limit"))?,
            seed: seed.ok_or_else(|| bad(1, "missing seed"))?,
        };
        let mut records = Vec::new();
        let mut result = None;
        for (i, l) in lines {
            let line = i + 1;
            if let Some(rest) = l.strip_prefix("end ") {
                result = Some(match rest {
                    "win p1" => TerminalStatus::Win(Player::P1),
                    "win p2" => TerminalStatus::Win(Player::P2),
                    "draw" => TerminalStatus::Draw,
                    _ => return Err(bad(line, "bad result")),
                });
                continue;
            }
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 6 {
                return Err(bad(line, "expected 6 tab-separated fields"));
            }
            records.push(ReplayRecord {
                tick: f[0].parse().map_err(|_| bad(line, "bad tick"))?,
                actions: [parse_orders(f[1], line)?, parse_orders(f[2], line)?],
                events: [parse_events(f[3], line)?, parse_events(f[4], line)?],
                digest: f[5].to_string(),
            });
        }
        Ok(Replay { header, records, result })
    }

    /// Re-simulates every record and checks each state digest. Returns the
    /// number of ticks verified.
    pub fn verify(&self, spec: &MapSpec, rules: Arc<Rules>) -> Result<usize, EngineError> {
        let mut state = GridState::new_game(spec, rules, self.header.seed)?.with_step_limit(self.header.step_limit);
        for (i, rec) in self.records.iter().enumerate() {
            if rec.tick != state.tick() {
                return Err(EngineError::Replay(format!(
                    "record {i}: tick {} but state is at {}",
                    rec.tick,
                    state.tick()
                )));
            }
            let outcome = state.advance(&rec.actions[0], &rec.actions[1])?;
            if state.digest() != rec.digest {
                return Err(EngineError::Replay(format!("record {i}: digest mismatch at tick {}", rec.tick)));
            }
            if outcome.events != rec.events {
                return Err(EngineError::Replay(format!("record {i}: events differ at tick {}", rec.tick)));
            }
        }
        if let Some(r) = self.result {
            if state.status() != r {
                return Err(EngineError::Replay("final result differs".into()));
            }
        }
        Ok(self.records.len())
    }
}
