use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::reward_map;
use super::train::{run_rng, CHECKPOINT_KIND};
use super::{io_err, HarnessError};
use crate::engine::{GridState, MapSpec, Player, Replay, ReplayWriter, RewardKind, Rules, TerminalStatus, DEFAULT_STEP_LIMIT};
use crate::numerics::{Checkpoint, ParamStore};
use crate::policy::{ModelConfig, Policy, PolicyInput};
use crate::scripted_ai::BotKind;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub opponents: Vec<BotKind>,
    pub games: usize,
    pub seed: u64,
    /// Take the most likely index per component instead of sampling.
    pub greedy: bool,
    pub step_limit: u32,
    /// Write one replay per game here.
    pub replay_dir: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            opponents: BotKind::ALL.to_vec(),
            games: 100,
            seed: 0,
            greedy: false,
            step_limit: DEFAULT_STEP_LIMIT,
            replay_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpponentRow {
    pub opponent: BotKind,
    pub games: usize,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub mean_return: f64,
    pub mean_length: f64,
}

impl OpponentRow {
    pub fn win_rate(&self) -> f64 {
        self.wins as f64 / self.games.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: String,
    pub greedy: bool,
    pub rows: Vec<OpponentRow>,
    /// Entity count -> number of agent decision states with that count.
    pub entity_histogram: BTreeMap<usize, u64>,
    pub entity_max: usize,
    pub entity_mean: f64,
    /// Agent reward per game by category, over all games.
    pub rewards_per_game: BTreeMap<String, f64>,
    pub replays: Vec<PathBuf>,
}

/// Rebuilds the model stored in a trainer checkpoint.
pub fn load_policy(path: &Path) -> Result<(Policy, ParamStore, serde_json::Value), HarnessError> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.meta.get("kind").and_then(|k| k.as_str()) != Some(CHECKPOINT_KIND) {
        return Err(HarnessError::Incompatible(format!("{} is not a policy checkpoint", path.display())));
    }
    policy_from_checkpoint(ckpt)
}

/// Rebuilds the model described by a trainer checkpoint already in memory.
pub fn policy_from_checkpoint(ckpt: Checkpoint) -> Result<(Policy, ParamStore, serde_json::Value), HarnessError> {
    if ckpt.meta.get("kind").and_then(|k| k.as_str()) != Some(CHECKPOINT_KIND) {
        return Err(HarnessError::Incompatible("not a policy checkpoint".into()));
    }
    let model: ModelConfig = serde_json::from_value(ckpt.meta["model"].clone())
        .map_err(|e| HarnessError::Incompatible(format!("model config: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (policy, _) = Policy::new(model, &mut rng)?;
    policy.check_store(&ckpt.params)?;
    Ok((policy, ckpt.params, ckpt.meta))
}

/// Map name recorded by the trainer.
pub fn checkpoint_map(meta: &serde_json::Value) -> Option<String> {
    meta.get("map").and_then(|m| m.as_str()).map(str::to_string)
}

fn game_seed(seed: u64, opponent: usize, game: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ ((opponent as u64) << 40) ^ game as u64
}

struct Game {
    state: GridState,
    bot_rng: ChaCha8Rng,
    writer: Option<ReplayWriter>,
    ret: f64,
    rewards: [f64; 8],
    result: Option<TerminalStatus>,
}

/// Plays `games` games against every opponent with the agent as player 1.
/// Games against one opponent advance in lockstep so the model sees them as
/// one batch.
pub fn evaluate(policy: &Policy, store: &ParamStore, spec: &MapSpec, opts: &EvalOptions) -> Result<EvalReport, HarnessError> {
    if spec.rows != policy.config.map_rows || spec.cols != policy.config.map_cols {
        return Err(HarnessError::Incompatible(format!(
            "model was built for a {}x{} map, `{}` is {}x{}",
            policy.config.map_rows, policy.config.map_cols, spec.name, spec.rows, spec.cols
        )));
    }
    if let Some(d) = &opts.replay_dir {
        std::fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let rules = Arc::new(Rules::default());
    let mut report = EvalReport {
        map: spec.name.clone(),
        greedy: opts.greedy,
        rows: Vec::new(),
        entity_histogram: BTreeMap::new(),
        entity_max: 0,
        entity_mean: 0.0,
        rewards_per_game: BTreeMap::new(),
        replays: Vec::new(),
    };
    let mut reward_totals = [0.0; 8];
    let mut total_games = 0;

    for (oi, &opponent) in opts.opponents.iter().enumerate() {
        let mut rng = run_rng(opts.seed, 1 + oi as u64);
        let mut games = (0..opts.games)
            .map(|g| {
                let seed = game_seed(opts.seed, oi, g);
                let state = GridState::new_game(spec, rules.clone(), seed)?.with_step_limit(opts.step_limit);
                Ok(Game {
                    writer: opts.replay_dir.as_ref().map(|_| ReplayWriter::new(&state)),
                    state,
                    bot_rng: ChaCha8Rng::seed_from_u64(seed ^ 0xB07),
                    ret: 0.0,
                    rewards: [0.0; 8],
                    result: None,
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;

        loop {
            let live: Vec<usize> = (0..games.len()).filter(|&g| games[g].result.is_none()).collect();
            if live.is_empty() {
                break;
            }
            let inputs: Vec<PolicyInput> = live.iter().map(|&g| PolicyInput::from_state(&games[g].state, Player::P1)).collect();
            for i in &inputs {
                let n = i.entities.len();
                *report.entity_histogram.entry(n).or_default() += 1;
            }
            let refs: Vec<&PolicyInput> = inputs.iter().collect();
            let decisions = policy.decide_batch(store, &refs, &mut rng, opts.greedy)?;
            for (&g, d) in live.iter().zip(decisions) {
                let game = &mut games[g];
                let opp = opponent.act(&game.state, Player::P2, &mut game.bot_rng);
                let tick = game.state.tick();
                let outcome = game.state.advance(&d.joint, &opp)?;
                if let Some(w) = &mut game.writer {
                    w.record(tick, &d.joint, &opp, &outcome, &game.state);
                }
                for e in &outcome.events[0] {
                    let c = RewardKind::ALL.iter().position(|&k| k == e.kind).expect("listed kind");
                    game.rewards[c] += e.value;
                    game.ret += e.value;
                }
                game.result = outcome.terminal;
            }
        }

        let mut row = OpponentRow {
            opponent,
            games: games.len(),
            wins: 0,
            ties: 0,
            losses: 0,
            mean_return: 0.0,
            mean_length: 0.0,
        };
        for (g, game) in games.into_iter().enumerate() {
            match game.result {
                Some(TerminalStatus::Win(Player::P1)) => row.wins += 1,
                Some(TerminalStatus::Win(Player::P2)) => row.losses += 1,
                _ => row.ties += 1,
            }
            row.mean_return += game.ret;
            row.mean_length += game.state.tick() as f64;
            for (t, r) in reward_totals.iter_mut().zip(game.rewards) {
                *t += r;
            }
            if let (Some(w), Some(dir)) = (game.writer, &opts.replay_dir) {
                let path = dir.join(format!("{}_{:04}.replay", opponent.name(), g));
                std::fs::write(&path, w.into_string()).map_err(io_err(&path))?;
                report.replays.push(path);
            }
        }
        let n = row.games.max(1) as f64;
        row.mean_return /= n;
        row.mean_length /= n;
        total_games += row.games;
        report.rows.push(row);
    }

    let states: u64 = report.entity_histogram.values().sum();
    report.entity_max = report.entity_histogram.keys().copied().max().unwrap_or(0);
    report.entity_mean = report.entity_histogram.iter().map(|(&k, &v)| (k as u64 * v) as f64).sum::<f64>() / states.max(1) as f64;
    report.rewards_per_game = reward_map(&reward_totals.map(|t| t / total_games.max(1) as f64));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub p1: BotKind,
    pub p2: BotKind,
    pub seed: u64,
    pub result: TerminalStatus,
    pub ticks: u32,
    pub returns: [f64; 2],
    pub replay: Option<PathBuf>,
}

/// One scripted-vs-scripted game, optionally recorded.
pub fn play_match(
    p1: BotKind,
    p2: BotKind,
    spec: &MapSpec,
    step_limit: u32,
    seed: u64,
    record: Option<&Path>,
) -> Result<MatchSummary, HarnessError> {
    let mut state = GridState::new_game(spec, Arc::new(Rules::default()), seed)?.with_step_limit(step_limit);
    let mut writer = record.map(|_| ReplayWriter::new(&state));
    let mut rngs = [ChaCha8Rng::seed_from_u64(seed ^ 1), ChaCha8Rng::seed_from_u64(seed ^ 2)];
    let mut returns = [0.0; 2];
    let result = loop {
        let a1 = p1.act(&state, Player::P1, &mut rngs[0]);
        let a2 = p2.act(&state, Player::P2, &mut rngs[1]);
        let tick = state.tick();
        let outcome = state.advance(&a1, &a2)?;
        if let Some(w) = &mut writer {
            w.record(tick, &a1, &a2, &outcome, &state);
        }
        returns[0] += outcome.reward(Player::P1);
        returns[1] += outcome.reward(Player::P2);
        if let Some(r) = outcome.terminal {
            break r;
        }
    };
    let replay = match (writer, record) {
        (Some(w), Some(dir)) => {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(format!("{}_vs_{}_{seed}.replay", p1.name(), p2.name()));
            std::fs::write(&path, w.into_string()).map_err(io_err(&path))?;
            Some(path)
        }
        _ => None,
    };
    Ok(MatchSummary {
        p1,
        p2,
        seed,
        result,
        ticks: state.tick(),
        returns,
        replay,
    })
}

/// Re-simulates a replay file against the default rules. Returns the number
/// of ticks checked and the recorded result.
pub fn verify_replay(path: &Path) -> Result<(usize, Option<TerminalStatus>), HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let replay = Replay::parse(&text)?;
    let spec = MapSpec::resolve(&replay.header.map)?;
    let ticks = replay.verify(&spec, Arc::new(Rules::default()))?;
    Ok((ticks, replay.result))
}
