use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::engine::{GridState, JointAction, MapSpec, Player, RewardKind, Rules, TerminalStatus};
use crate::numerics::{ParamStore, Tape};
use crate::policy::{Policy, PolicyInput};
use crate::ppo::{RolloutBuffer, Transition};
use crate::scripted_ai::BotKind;

/// Who controls player 1 during a rollout.
#[derive(Clone, Copy)]
pub enum Agent<'a> {
    Model { policy: &'a Policy, store: &'a ParamStore },
    /// Plumbing path: a scripted bot stands in for the model.
    Scripted(BotKind),
}

/// One live game against a fixed opponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Env {
    pub state: GridState,
    pub opponent: BotKind,
    pub episode: u64,
    pub episode_return: f64,
    pub episode_rewards: [f64; 8],
}

/// Outcome of one finished episode, seen from player 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub env: usize,
    pub opponent: BotKind,
    pub result: TerminalStatus,
    pub length: u32,
    pub shaped_return: f64,
    pub rewards: [f64; 8],
}

/// Aggregates over one rollout window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub episodes: Vec<EpisodeSummary>,
    /// Agent reward summed over all environments and steps, by category.
    pub rewards: [f64; 8],
    pub agent_coerced: u64,
    pub agent_cancelled: u64,
    pub max_entities: usize,
    pub entity_sum: u64,
    pub decisions: u64,
}

impl RolloutStats {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn mean_entities(&self) -> f64 {
        self.entity_sum as f64 / self.decisions.max(1) as f64
    }
}

/// Environments bound round-robin to the opponent pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvPool {
    pub envs: Vec<Env>,
    pub seed: u64,
    pub step_limit: u32,
    #[serde(skip)]
    spec: Option<MapSpec>,
    #[serde(skip)]
    rules: Option<Arc<Rules>>,
}

fn game_seed(seed: u64, env: usize, episode: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((env as u64) << 32) ^ episode
}

impl EnvPool {
    pub fn new(
        spec: MapSpec,
        rules: Arc<Rules>,
        num_envs: usize,
        opponents: &[BotKind],
        step_limit: u32,
        seed: u64,
    ) -> Result<EnvPool, HarnessError> {
        if opponents.is_empty() {
            return Err(HarnessError::Config("opponent pool is empty".into()));
        }
        let envs = (0..num_envs)
            .map(|i| {
                let state = GridState::new_game(&spec, rules.clone(), game_seed(seed, i, 0))?.with_step_limit(step_limit);
                Ok(Env {
                    state,
                    opponent: opponents[i % opponents.len()],
                    episode: 0,
                    episode_return: 0.0,
                    episode_rewards: [0.0; 8],
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        Ok(EnvPool {
            envs,
            seed,
            step_limit,
            spec: Some(spec),
            rules: Some(rules),
        })
    }

    /// Restores map and rules after deserialization.
    pub fn reattach(&mut self, spec: MapSpec, rules: Arc<Rules>) {
        for env in &mut self.envs {
            env.state = env.state.clone().with_rules(rules.clone());
        }
        self.spec = Some(spec);
        self.rules = Some(rules);
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    fn reset(&mut self, i: usize) -> Result<(), HarnessError> {
        let spec = self.spec.as_ref().expect("pool attached to a map");
        let rules = self.rules.clone().expect("pool attached to rules");
        let env = &mut self.envs[i];
        env.episode += 1;
        env.episode_return = 0.0;
        env.episode_rewards = [0.0; 8];
        env.state = GridState::new_game(spec, rules, game_seed(self.seed, i, env.episode))?.with_step_limit(self.step_limit);
        Ok(())
    }

    pub fn inputs(&self) -> Vec<PolicyInput> {
        self.envs.iter().map(|e| PolicyInput::from_state(&e.state, Player::P1)).collect()
    }
}

fn category(kind: RewardKind) -> usize {
    RewardKind::ALL.iter().position(|&k| k == kind).expect("listed kind")
}

/// Collects `buffer.num_steps` steps from every environment. `bot_seed`
/// seeds the opponents' randomness for this window.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng + ?Sized>(
    agent: Agent<'_>,
    pool: &mut EnvPool,
    buffer: &mut RolloutBuffer,
    rng: &mut R,
    bot_seed: u64,
    strict: bool,
) -> Result<RolloutStats, HarnessError> {
    if buffer.num_envs != pool.len() {
        return Err(HarnessError::Config(format!(
            "buffer holds {} envs, pool has {}",
            buffer.num_envs,
            pool.len()
        )));
    }
    buffer.clear();
    let mut bot_rngs: Vec<ChaCha8Rng> = (0..pool.len())
        .map(|i| ChaCha8Rng::seed_from_u64(bot_seed ^ (i as u64).wrapping_mul(0xA076_1D64_78BD_642F)))
        .collect();
    let mut stats = RolloutStats::default();

    for _ in 0..buffer.num_steps {
        let inputs = pool.inputs();
        for i in &inputs {
            stats.max_entities = stats.max_entities.max(i.entities.len());
            stats.entity_sum += i.entities.len() as u64;
            stats.decisions += 1;
        }
        let decisions: Vec<(JointAction, Vec<_>, f64, f64)> = match agent {
            Agent::Model { policy, store } => {
                let refs: Vec<&PolicyInput> = inputs.iter().collect();
                policy
                    .act_batch(store, &refs, rng)?
                    .into_iter()
                    .map(|d| (d.joint, d.choices, d.log_prob, d.value))
                    .collect()
            }
            Agent::Scripted(bot) => pool
                .envs
                .iter()
                .zip(&inputs)
                .map(|(env, input)| {
                    let joint = bot.act(&env.state, Player::P1, rng);
                    let choices = (0..input.units())
                        .map(|u| {
                            joint
                                .orders
                                .iter()
                                .find(|o| o.cell == input.unit_cell(u))
                                .map_or([0; 7], |o| o.action.components)
                        })
                        .collect();
                    (joint, choices, 0.0, 0.0)
                })
                .collect(),
        };

        for (i, (input, (joint, choices, log_prob, value))) in inputs.into_iter().zip(decisions).enumerate() {
            let env = &mut pool.envs[i];
            let opp = env.opponent.act(&env.state, Player::P2, &mut bot_rngs[i]);
            let outcome = env.state.advance(&joint, &opp)?;
            if strict && outcome.coerced[0] > 0 {
                return Err(HarnessError::AgentCoerced {
                    env: i,
                    tick: env.state.tick() - 1,
                    count: outcome.coerced[0],
                });
            }
            stats.agent_coerced += outcome.coerced[0] as u64;
            stats.agent_cancelled += outcome.cancelled[0] as u64;
            let mut reward = 0.0;
            for e in &outcome.events[0] {
                let c = category(e.kind);
                stats.rewards[c] += e.value;
                env.episode_rewards[c] += e.value;
                reward += e.value;
            }
            env.episode_return += reward;
            let terminated = outcome.terminal.is_some();
            buffer.push(
                i,
                Transition {
                    input,
                    choices,
                    log_prob,
                    value,
                    reward,
                    terminated,
                },
            );
            if let Some(result) = outcome.terminal {
                stats.episodes.push(EpisodeSummary {
                    env: i,
                    opponent: env.opponent,
                    result,
                    length: env.state.tick(),
                    shaped_return: env.episode_return,
                    rewards: env.episode_rewards,
                });
                pool.reset(i)?;
            }
        }
    }

    buffer.bootstrap = match agent {
        Agent::Model { policy, store } => {
            let inputs = pool.inputs();
            let refs: Vec<&PolicyInput> = inputs.iter().collect();
            let mut tape = Tape::new(store);
            let out = policy.forward(&mut tape, &refs, rng, false)?;
            tape.value(out.values).data().to_vec()
        }
        Agent::Scripted(_) => vec![0.0; pool.len()],
    };
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(n: usize, opponents: &[BotKind]) -> EnvPool {
        EnvPool::new(
            MapSpec::bundled("8x8").unwrap(),
            Arc::new(Rules::default()),
            n,
            opponents,
            2000,
            3,
        )
        .unwrap()
    }

    #[test]
    fn scripted_smoke_path_fills_buffer() {
        let mut p = pool(1, &[BotKind::WorkerRush]);
        let mut buf = RolloutBuffer::new(1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        rollout(Agent::Scripted(BotKind::RandomBiased), &mut p, &mut buf, &mut rng, 1, true).unwrap();
        assert!(buf.is_full());
        assert_eq!(buf.len(), 4);
    }

    #[test]
    fn opponents_cycle_over_envs() {
        let p = pool(24, &BotKind::ALL);
        for bot in BotKind::ALL {
            assert_eq!(p.envs.iter().filter(|e| e.opponent == bot).count(), 8);
        }
    }
}
