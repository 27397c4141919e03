use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mrts::engine::{MapSpec, TerminalStatus, DEFAULT_STEP_LIMIT};
use mrts::harness::eval::checkpoint_map;
use mrts::harness::{evaluate, export_stats, load_policy, play_match, train, verify_replay, EvalOptions, HarnessError, RunConfig, TrainOptions};
use mrts::scripted_ai::BotKind;

#[derive(Parser)]
#[command(name = "mrts", version, about = "Train and evaluate entity-transformer agents on a micro-RTS grid game")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy with PPO against the scripted opponent pool.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `max_training_steps`.
        #[arg(long)]
        total_steps: Option<u64>,
        /// `8x8`, `16x16` or a map file.
        #[arg(long)]
        map: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Continue from the latest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many updates; resume later with --resume.
        #[arg(long)]
        stop_after: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Play a checkpoint against scripted opponents.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Bot name or `all`.
        #[arg(long, default_value = "all")]
        opponent: String,
        #[arg(long, default_value_t = 100)]
        games: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pick the most likely action instead of sampling.
        #[arg(long)]
        greedy: bool,
        /// Defaults to the map the checkpoint was trained on.
        #[arg(long)]
        map: Option<String>,
        #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
        step_limit: u32,
        /// Directory for `eval_report.json` and `replays/`.
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Play scripted bots against each other and record replays.
    Play {
        #[arg(long)]
        p1: BotKind,
        #[arg(long)]
        p2: BotKind,
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value = "8x8")]
        map: String,
        #[arg(long, default_value_t = 1)]
        games: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
        step_limit: u32,
    },
    /// Re-simulate replay files and check every state digest.
    VerifyReplay { files: Vec<PathBuf> },
    /// Export CSV tables from a run or evaluation directory.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train {
            config,
            seed,
            total_steps,
            map,
            output,
            resume,
            stop_after,
            quiet,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = total_steps {
                cfg.hyperparameters.max_training_steps = n;
            }
            if let Some(m) = map {
                cfg.map = m;
            }
            if let Some(o) = output {
                cfg.output_dir = o;
            }
            let summary = train(&cfg, &TrainOptions { resume, stop_after, quiet })?;
            println!(
                "{} of {} updates, {} steps; checkpoint {}",
                summary.updates,
                summary.total_updates,
                summary.global_step,
                summary.checkpoint.display()
            );
        }
        Command::Eval {
            checkpoint,
            opponent,
            games,
            seed,
            greedy,
            map,
            step_limit,
            out,
        } => {
            let (policy, store, meta) = load_policy(&checkpoint)?;
            let map = map
                .or_else(|| checkpoint_map(&meta))
                .ok_or_else(|| HarnessError::Config("checkpoint records no map; pass --map".into()))?;
            let spec = MapSpec::resolve(&map)?;
            let opponents = if opponent == "all" {
                BotKind::ALL.to_vec()
            } else {
                vec![opponent.parse().map_err(|e: mrts::scripted_ai::UnknownBot| HarnessError::Config(e.to_string()))?]
            };
            let opts = EvalOptions {
                opponents,
                games,
                seed,
                greedy,
                step_limit,
                replay_dir: Some(out.join("replays")),
            };
            let report = evaluate(&policy, &store, &spec, &opts)?;
            let path = out.join("eval_report.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes"))
                .map_err(|source| HarnessError::Io { path: path.clone(), source })?;
            println!("{:<14} {:>5} {:>5} {:>5} {:>5} {:>10} {:>8}", "opponent", "games", "win", "tie", "loss", "return", "length");
            for r in &report.rows {
                println!(
                    "{:<14} {:>5} {:>5} {:>5} {:>5} {:>10.3} {:>8.1}",
                    r.opponent.name(),
                    r.games,
                    r.wins,
                    r.ties,
                    r.losses,
                    r.mean_return,
                    r.mean_length
                );
            }
            println!("entities per state: max {} mean {:.2}", report.entity_max, report.entity_mean);
            println!("report written to {}", path.display());
        }
        Command::Play {
            p1,
            p2,
            record,
            map,
            games,
            seed,
            step_limit,
        } => {
            let spec = MapSpec::resolve(&map)?;
            for g in 0..games {
                let m = play_match(p1, p2, &spec, step_limit, seed + g, record.as_deref())?;
                let result = match m.result {
                    TerminalStatus::Win(p) => format!("{p:?} wins"),
                    _ => "tie".into(),
                };
                println!(
                    "seed {}: {result} after {} ticks, returns {:.2} / {:.2}{}",
                    m.seed,
                    m.ticks,
                    m.returns[0],
                    m.returns[1],
                    m.replay.map_or(String::new(), |p| format!(", replay {}", p.display()))
                );
            }
        }
        Command::VerifyReplay { files } => {
            for f in files {
                let (ticks, result) = verify_replay(&f)?;
                let result = match result {
                    Some(TerminalStatus::Win(p)) => format!("{p:?} wins"),
                    Some(_) => "tie".into(),
                    None => "unfinished".into(),
                };
                println!("{}: {ticks} ticks verified, {result}", f.display());
            }
        }
        Command::Stats { input, out } => {
            let s = export_stats(&input, &out)?;
            println!(
                "{} metrics records ({} malformed lines skipped), {} replays ({} skipped)",
                s.metrics_records, s.skipped_lines, s.replays, s.skipped_replays
            );
            for p in s.written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
