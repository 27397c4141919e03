use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::{append_metrics, reward_map, truncate_metrics, MetricsRecord, WIN_RATE_ALPHA};
use super::rollout::{rollout, Agent, EnvPool, RolloutStats};
use super::{io_err, HarnessError};
use crate::engine::{Player, TerminalStatus};
use crate::numerics::{Adam, Checkpoint, LinearDecay};
use crate::policy::{ModelConfig, Policy};
use crate::ppo::{update, RolloutBuffer, UpdateStats};

pub const CHECKPOINT_KIND: &str = "mrts-policy";

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from `<output_dir>/latest.ckpt` when it exists.
    pub resume: bool,
    /// Stop after this many updates in this invocation (the run stays resumable).
    pub stop_after: Option<u64>,
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub updates: u64,
    pub total_updates: u64,
    pub global_step: u64,
    pub checkpoint: PathBuf,
    /// Every record in the metrics stream, including ones from earlier invocations.
    pub records: Vec<MetricsRecord>,
}

/// Checkpoint header fields written by the trainer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub kind: String,
    pub model: ModelConfig,
    pub map: String,
    pub update: u64,
    pub global_step: u64,
    pub seed: u64,
    pub win_rate_ema: Option<f64>,
    pub config: RunConfig,
    pub pool: EnvPool,
}

/// Independent random stream `stream` of the run seeded with `seed`.
pub fn run_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn latest_checkpoint(output_dir: &Path) -> PathBuf {
    output_dir.join("latest.ckpt")
}

pub fn metrics_path(output_dir: &Path) -> PathBuf {
    output_dir.join("metrics.jsonl")
}

struct RunState {
    policy: Policy,
    store: crate::numerics::ParamStore,
    optimizer: Adam,
    pool: EnvPool,
    update: u64,
    global_step: u64,
    win_rate_ema: Option<f64>,
    records: Vec<MetricsRecord>,
}

fn fresh(config: &RunConfig) -> Result<RunState, HarnessError> {
    let spec = config.map_spec()?;
    let rules = config.load_rules()?;
    let mut init_rng = run_rng(config.seed, 0);
    let (policy, store) = Policy::new(config.model(&spec), &mut init_rng)?;
    let optimizer = Adam::new(config.adam(), &store);
    let pool = EnvPool::new(
        spec,
        rules,
        config.hyperparameters.parallel_bot_environments,
        &config.opponents,
        config.step_limit,
        config.seed,
    )?;
    Ok(RunState {
        policy,
        store,
        optimizer,
        pool,
        update: 0,
        global_step: 0,
        win_rate_ema: None,
        records: Vec::new(),
    })
}

fn restore(config: &RunConfig, path: &Path) -> Result<RunState, HarnessError> {
    let ckpt = Checkpoint::load(path)?;
    let meta: TrainMeta = serde_json::from_value(ckpt.meta)
        .map_err(|e| HarnessError::Incompatible(format!("{}: {e}", path.display())))?;
    let spec = config.map_spec()?;
    if meta.kind != CHECKPOINT_KIND || meta.model != config.model(&spec) || meta.seed != config.seed {
        return Err(HarnessError::Incompatible(format!(
            "{} was written by a run with a different model, map or seed",
            path.display()
        )));
    }
    let mut rng = run_rng(0, 0);
    let (policy, _) = Policy::new(meta.model, &mut rng)?;
    policy.check_store(&ckpt.params)?;
    let optimizer = ckpt
        .optimizer
        .ok_or_else(|| HarnessError::Incompatible("checkpoint has no optimizer state".into()))?;
    let mut pool = meta.pool;
    pool.reattach(spec, config.load_rules()?);
    Ok(RunState {
        policy,
        store: ckpt.params,
        optimizer,
        pool,
        update: meta.update,
        global_step: meta.global_step,
        win_rate_ema: meta.win_rate_ema,
        records: Vec::new(),
    })
}

fn save(config: &RunConfig, s: &RunState) -> Result<PathBuf, HarnessError> {
    let meta = TrainMeta {
        kind: CHECKPOINT_KIND.into(),
        model: s.policy.config,
        map: config.map.clone(),
        update: s.update,
        global_step: s.global_step,
        seed: config.seed,
        win_rate_ema: s.win_rate_ema,
        config: config.clone(),
        pool: s.pool.clone(),
    };
    let ckpt = Checkpoint {
        meta: serde_json::to_value(&meta).expect("meta serializes"),
        params: s.store.clone(),
        optimizer: Some(s.optimizer.clone()),
    };
    let dir = config.output_dir.join("checkpoints");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    ckpt.save(&dir.join(format!("update_{:06}.ckpt", s.update)))?;
    let latest = latest_checkpoint(&config.output_dir);
    ckpt.save(&latest)?;
    Ok(latest)
}

fn record(
    s: &mut RunState,
    lr: f64,
    num_envs: usize,
    stats: &RolloutStats,
    u: &UpdateStats,
) -> MetricsRecord {
    let (mut wins, mut draws, mut losses) = (0, 0, 0);
    for e in &stats.episodes {
        let won = match e.result {
            TerminalStatus::Win(Player::P1) => {
                wins += 1;
                1.0
            }
            TerminalStatus::Draw | TerminalStatus::Ongoing => {
                draws += 1;
                0.0
            }
            TerminalStatus::Win(Player::P2) => {
                losses += 1;
                0.0
            }
        };
        s.win_rate_ema = Some(match s.win_rate_ema {
            None => won,
            Some(ema) => ema + WIN_RATE_ALPHA * (won - ema),
        });
    }
    let n = stats.episodes.len();
    let mean = |f: &dyn Fn(&super::rollout::EpisodeSummary) -> f64| {
        (n > 0).then(|| stats.episodes.iter().map(f).sum::<f64>() / n as f64)
    };
    let per_env = stats.rewards.map(|r| r / num_envs as f64);
    MetricsRecord {
        update: s.update,
        global_step: s.global_step,
        learning_rate: lr,
        shaped_return: per_env.iter().sum(),
        rewards: reward_map(&per_env),
        episodes: n as u64,
        wins,
        draws,
        losses,
        mean_episode_return: mean(&|e| e.shaped_return),
        mean_episode_length: mean(&|e| e.length as f64),
        win_rate_ema: s.win_rate_ema,
        policy_loss: u.policy_loss,
        value_loss: u.value_loss,
        entropy: u.entropy,
        total_loss: u.total_loss,
        approx_kl: u.approx_kl,
        clip_fraction: u.clip_fraction,
        grad_norm: u.grad_norm,
        mean_entities: stats.mean_entities(),
        max_entities: stats.max_entities,
        agent_coerced: stats.agent_coerced,
        agent_cancelled: stats.agent_cancelled,
    }
}

/// Alternates rollouts and PPO updates until the configured step budget is
/// consumed. The run is a pure function of `config`: a resumed run produces
/// the same metrics and checkpoints as an uninterrupted one.
pub fn train(config: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary, HarnessError> {
    config.validate()?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, config.to_toml()).map_err(io_err(&cfg_path))?;
    let metrics = metrics_path(out);
    let latest = latest_checkpoint(out);

    let mut s = if opts.resume && latest.exists() {
        let mut s = restore(config, &latest)?;
        s.records = truncate_metrics(&metrics, s.global_step)?;
        s
    } else {
        if metrics.exists() {
            std::fs::remove_file(&metrics).map_err(io_err(&metrics))?;
        }
        fresh(config)?
    };

    let total = config.total_updates();
    let spu = config.steps_per_update();
    let ppo = config.ppo();
    let decay = LinearDecay {
        base: config.hyperparameters.learning_rate,
        max_steps: total * spu,
    };
    let h = &config.hyperparameters;
    let mut buffer = RolloutBuffer::new(h.parallel_bot_environments, h.number_of_exploration_steps);
    let mut ran = 0;
    let mut saved: Option<(u64, PathBuf)> = None;

    while s.update < total && opts.stop_after.is_none_or(|n| ran < n) {
        let started = Instant::now();
        let mut rollout_rng = run_rng(config.seed, 2 * s.update + 1);
        let bot_seed = rollout_rng.next_u64();
        let stats = rollout(
            Agent::Model {
                policy: &s.policy,
                store: &s.store,
            },
            &mut s.pool,
            &mut buffer,
            &mut rollout_rng,
            bot_seed,
            config.strict,
        )?;
        let lr = decay.rate(s.global_step);
        let mut update_rng = run_rng(config.seed, 2 * s.update + 2);
        let ustats = update(&s.policy, &mut s.store, &mut s.optimizer, &buffer, &ppo, lr, &mut update_rng)?;
        s.update += 1;
        s.global_step += spu;
        ran += 1;

        let rec = record(&mut s, lr, h.parallel_bot_environments, &stats, &ustats);
        append_metrics(&metrics, &rec)?;
        if !opts.quiet {
            eprintln!(
                "update {}/{} step {} return {:.3} episodes {} win-ema {} kl {:.4} clip {:.3} ({:.1}s)",
                rec.update,
                total,
                rec.global_step,
                rec.shaped_return,
                rec.episodes,
                rec.win_rate_ema.map_or("-".into(), |v| format!("{v:.3}")),
                rec.approx_kl,
                rec.clip_fraction,
                started.elapsed().as_secs_f64()
            );
        }
        s.records.push(rec);
        if s.update % config.checkpoint_every as u64 == 0 {
            saved = Some((s.update, save(config, &s)?));
        }
    }
    let checkpoint = match saved {
        Some((u, path)) if u == s.update => path,
        _ => save(config, &s)?,
    };
    Ok(TrainSummary {
        updates: s.update,
        total_updates: total,
        global_step: s.global_step,
        checkpoint,
        records: s.records,
    })
}
