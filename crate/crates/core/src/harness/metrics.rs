//! Line-delimited metrics stream and its CSV export.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::EvalReport;
use super::{io_err, HarnessError};
use crate::engine::{MapSpec, Replay, RewardKind, Rules};

/// Smoothing factor of the per-episode win-rate average.
pub const WIN_RATE_ALPHA: f64 = 0.05;

/// One line of `metrics.jsonl`, written after every update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub update: u64,
    pub global_step: u64,
    pub learning_rate: f64,
    /// Agent reward over the rollout window, averaged over environments.
    pub shaped_return: f64,
    /// Same, split by reward category name.
    pub rewards: BTreeMap<String, f64>,
    pub episodes: u64,
    pub wins: u64,
    pub draws: u64,
    pub losses: u64,
    pub mean_episode_return: Option<f64>,
    pub mean_episode_length: Option<f64>,
    pub win_rate_ema: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub mean_entities: f64,
    pub max_entities: usize,
    pub agent_coerced: u64,
    pub agent_cancelled: u64,
}

pub fn reward_map(values: &[f64; 8]) -> BTreeMap<String, f64> {
    RewardKind::ALL.iter().zip(values).map(|(k, &v)| (k.name().to_string(), v)).collect()
}

/// Appends one record and flushes.
pub fn append_metrics(path: &Path, record: &MetricsRecord) -> Result<(), HarnessError> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let line = serde_json::to_string(record).expect("record serializes");
    writeln!(f, "{line}").map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

/// Reads all well-formed records; returns them with the count of skipped lines.
pub fn read_metrics(path: &Path) -> Result<(Vec<MetricsRecord>, usize), HarnessError> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    let mut skipped = 0;
    for line in BufReader::new(f).lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<MetricsRecord>(&line) {
            Ok(r) => records.push(r),
            Err(_) => skipped += 1,
        }
    }
    Ok((records, skipped))
}

/// Rewrites the stream keeping only records up to `global_step`.
pub fn truncate_metrics(path: &Path, global_step: u64) -> Result<Vec<MetricsRecord>, HarnessError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let (mut records, _) = read_metrics(path)?;
    records.retain(|r| r.global_step <= global_step);
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_err(path))?;
    Ok(records)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StatsSummary {
    pub metrics_records: usize,
    pub skipped_lines: usize,
    pub replays: usize,
    pub skipped_replays: usize,
    pub written: Vec<PathBuf>,
}

fn writer(out: &Path, name: &str, summary: &mut StatsSummary) -> Result<csv::Writer<std::fs::File>, HarnessError> {
    let path = out.join(name);
    summary.written.push(path.clone());
    Ok(csv::Writer::from_path(path)?)
}

/// Converts whatever is found in `input` (a metrics stream, an evaluation
/// report, replay files) into CSV tables under `out`.
pub fn export_stats(input: &Path, out: &Path) -> Result<StatsSummary, HarnessError> {
    if !input.is_dir() {
        return Err(HarnessError::Config(format!("{} is not a directory", input.display())));
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut summary = StatsSummary::default();

    let metrics = input.join("metrics.jsonl");
    if metrics.exists() {
        let (records, skipped) = read_metrics(&metrics)?;
        summary.metrics_records = records.len();
        summary.skipped_lines = skipped;

        let mut w = writer(out, "reward_breakdown.csv", &mut summary)?;
        let mut header = vec!["update".to_string(), "global_step".to_string(), "shaped_return".to_string()];
        header.extend(RewardKind::ALL.iter().map(|k| k.name().to_string()));
        w.write_record(&header)?;
        for r in &records {
            let mut row = vec![r.update.to_string(), r.global_step.to_string(), r.shaped_return.to_string()];
            row.extend(RewardKind::ALL.iter().map(|k| r.rewards.get(k.name()).copied().unwrap_or(0.0).to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(io_err(out))?;

        let mut w = writer(out, "win_rate.csv", &mut summary)?;
        w.write_record(["update", "global_step", "episodes", "wins", "draws", "losses", "window_win_rate", "win_rate_ema"])?;
        for r in &records {
            let window = if r.episodes > 0 { (r.wins as f64 / r.episodes as f64).to_string() } else { String::new() };
            w.write_record([
                r.update.to_string(),
                r.global_step.to_string(),
                r.episodes.to_string(),
                r.wins.to_string(),
                r.draws.to_string(),
                r.losses.to_string(),
                window,
                r.win_rate_ema.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
        w.flush().map_err(io_err(out))?;

        let mut w = writer(out, "training.csv", &mut summary)?;
        w.write_record([
            "update",
            "global_step",
            "learning_rate",
            "policy_loss",
            "value_loss",
            "entropy",
            "approx_kl",
            "clip_fraction",
            "grad_norm",
            "mean_entities",
            "max_entities",
        ])?;
        for r in &records {
            w.write_record([
                r.update.to_string(),
                r.global_step.to_string(),
                r.learning_rate.to_string(),
                r.policy_loss.to_string(),
                r.value_loss.to_string(),
                r.entropy.to_string(),
                r.approx_kl.to_string(),
                r.clip_fraction.to_string(),
                r.grad_norm.to_string(),
                r.mean_entities.to_string(),
                r.max_entities.to_string(),
            ])?;
        }
        w.flush().map_err(io_err(out))?;
    }

    let report = input.join("eval_report.json");
    if report.exists() {
        let text = std::fs::read_to_string(&report).map_err(io_err(&report))?;
        let rep: EvalReport = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", report.display())))?;
        let mut w = writer(out, "eval_results.csv", &mut summary)?;
        w.write_record(["opponent", "games", "wins", "ties", "losses", "mean_return", "mean_length"])?;
        for r in &rep.rows {
            w.write_record([
                r.opponent.name().to_string(),
                r.games.to_string(),
                r.wins.to_string(),
                r.ties.to_string(),
                r.losses.to_string(),
                r.mean_return.to_string(),
                r.mean_length.to_string(),
            ])?;
        }
        w.flush().map_err(io_err(out))?;
        let mut w = writer(out, "eval_rewards.csv", &mut summary)?;
        w.write_record(["category", "mean_per_game"])?;
        for (k, v) in &rep.rewards_per_game {
            w.write_record([k.clone(), v.to_string()])?;
        }
        w.flush().map_err(io_err(out))?;
    }

    // entity counts from replays: every state from the start of each game
    let mut hist: BTreeMap<usize, u64> = BTreeMap::new();
    let replay_dir = input.join("replays");
    let dir = if replay_dir.is_dir() { replay_dir } else { input.to_path_buf() };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "replay"))
        .collect();
    files.sort();
    for f in files {
        match replay_entity_counts(&f) {
            Ok(counts) => {
                summary.replays += 1;
                for c in counts {
                    *hist.entry(c).or_default() += 1;
                }
            }
            Err(_) => summary.skipped_replays += 1,
        }
    }
    if !hist.is_empty() {
        let total: u64 = hist.values().sum();
        let mut w = writer(out, "entity_counts.csv", &mut summary)?;
        w.write_record(["entities", "states", "fraction"])?;
        for (k, v) in &hist {
            w.write_record([k.to_string(), v.to_string(), (*v as f64 / total as f64).to_string()])?;
        }
        w.flush().map_err(io_err(out))?;
    }
    Ok(summary)
}

/// Entity count of every state a replay passes through, before each tick.
fn replay_entity_counts(path: &Path) -> Result<Vec<usize>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let replay = Replay::parse(&text)?;
    let spec = MapSpec::resolve(&replay.header.map)?;
    let mut state = crate::engine::GridState::new_game(&spec, std::sync::Arc::new(Rules::default()), replay.header.seed)?
        .with_step_limit(replay.header.step_limit);
    let mut counts = Vec::with_capacity(replay.records.len());
    for rec in &replay.records {
        counts.push(state.entity_count());
        state.advance(&rec.actions[0], &rec.actions[1])?;
    }
    Ok(counts)
}
