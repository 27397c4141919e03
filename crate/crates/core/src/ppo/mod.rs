//! Proximal policy optimisation: advantage estimation, the clipped loss and
//! the minibatched multi-epoch update.

pub mod gae;
pub mod loss;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use gae::{compute_gae, AdvantageSet};
pub use loss::{ppo_loss, LossTerms};

use crate::numerics::{Adam, NumericsError, ParamStore, Tape};
use crate::policy::{entropy_of, log_prob_of, Policy, PolicyError, PolicyInput, UnitChoice};

#[derive(Debug, thiserror::Error)]
pub enum PpoError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid ppo config: {0}")]
    Config(String),
    #[error("rollout buffer not full: {filled} of {capacity} slots")]
    BufferNotFull { filled: usize, capacity: usize },
    #[error("non-finite loss in epoch {epoch}, minibatch {minibatch}: {detail}")]
    NonFinite { epoch: usize, minibatch: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_coef: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub update_epochs: usize,
    /// Environment trajectories per minibatch.
    pub envs_per_minibatch: usize,
    pub max_grad_norm: f64,
    pub norm_adv: bool,
    pub clip_value_loss: bool,
    /// Samples per forward/backward pass; gradients accumulate across chunks.
    pub chunk_size: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_coef: 0.1,
            ent_coef: 0.01,
            vf_coef: 0.5,
            update_epochs: 4,
            envs_per_minibatch: 4,
            max_grad_norm: 0.5,
            norm_adv: true,
            clip_value_loss: false,
            chunk_size: 128,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self, num_envs: usize) -> Result<(), PpoError> {
        let positive = [self.gamma, self.clip_coef, self.vf_coef, self.max_grad_norm];
        if positive.iter().any(|&v| !(v > 0.0)) || !(0.0..=1.0).contains(&self.gae_lambda) || self.ent_coef < 0.0 {
            return Err(PpoError::Config("coefficients must be positive".into()));
        }
        if self.update_epochs == 0 || self.envs_per_minibatch == 0 || self.chunk_size == 0 {
            return Err(PpoError::Config("epochs, minibatch and chunk sizes must be positive".into()));
        }
        if !num_envs.is_multiple_of(self.envs_per_minibatch) {
            return Err(PpoError::Config(format!(
                "{num_envs} environments cannot be split into minibatches of {}",
                self.envs_per_minibatch
            )));
        }
        Ok(())
    }
}

/// One agent decision and its consequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub input: PolicyInput,
    pub choices: Vec<UnitChoice>,
    pub log_prob: f64,
    pub value: f64,
    /// Sum of the agent's shaped reward events for the step.
    pub reward: f64,
    /// The episode ended with this step.
    pub terminated: bool,
}

/// Experience of `num_envs` environments over `num_steps` steps each.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub num_envs: usize,
    pub num_steps: usize,
    trajectories: Vec<Vec<Transition>>,
    /// Value of the state following each environment's last slot.
    pub bootstrap: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(num_envs: usize, num_steps: usize) -> RolloutBuffer {
        RolloutBuffer {
            num_envs,
            num_steps,
            trajectories: (0..num_envs).map(|_| Vec::with_capacity(num_steps)).collect(),
            bootstrap: vec![0.0; num_envs],
        }
    }

    pub fn push(&mut self, env: usize, t: Transition) {
        debug_assert!(self.trajectories[env].len() < self.num_steps);
        self.trajectories[env].push(t);
    }

    pub fn len(&self) -> usize {
        self.trajectories.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.num_envs * self.num_steps
    }

    pub fn is_full(&self) -> bool {
        self.trajectories.iter().all(|t| t.len() == self.num_steps)
    }

    pub fn trajectory(&self, env: usize) -> &[Transition] {
        &self.trajectories[env]
    }

    pub fn clear(&mut self) {
        for t in &mut self.trajectories {
            t.clear();
        }
    }

    pub fn advantages(&self, gamma: f64, lambda: f64) -> Vec<AdvantageSet> {
        self.trajectories
            .iter()
            .zip(&self.bootstrap)
            .map(|(traj, &boot)| {
                let r: Vec<f64> = traj.iter().map(|t| t.reward).collect();
                let v: Vec<f64> = traj.iter().map(|t| t.value).collect();
                let d: Vec<bool> = traj.iter().map(|t| t.terminated).collect();
                compute_gae(&r, &v, &d, boot, gamma, lambda)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean per-sample entropy of the joint distribution.
    pub entropy: f64,
    pub total_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Mean global gradient norm before clipping.
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Runs the full multi-epoch PPO update at learning rate `lr`.
#[allow(clippy::too_many_arguments)]
pub fn update<R: Rng + ?Sized>(
    policy: &Policy,
    store: &mut ParamStore,
    optimizer: &mut Adam,
    buffer: &RolloutBuffer,
    config: &PpoConfig,
    lr: f64,
    rng: &mut R,
) -> Result<UpdateStats, PpoError> {
    config.validate(buffer.num_envs)?;
    if !buffer.is_full() {
        return Err(PpoError::BufferNotFull {
            filled: buffer.len(),
            capacity: buffer.capacity(),
        });
    }
    let adv = buffer.advantages(config.gamma, config.gae_lambda);
    let mut stats = UpdateStats::default();
    let (mut clipped, mut counted) = (0usize, 0usize);
    let mut env_order: Vec<usize> = (0..buffer.num_envs).collect();

    for epoch in 0..config.update_epochs {
        env_order.shuffle(rng);
        for (mb, envs) in env_order.chunks(config.envs_per_minibatch).enumerate() {
            let slots: Vec<(usize, usize)> = envs
                .iter()
                .flat_map(|&e| (0..buffer.num_steps).map(move |t| (e, t)))
                .collect();
            let mut advantages: Vec<f64> = slots.iter().map(|&(e, t)| adv[e].advantages[t]).collect();
            if config.norm_adv {
                normalize(&mut advantages);
            }
            let denom = slots.len() as f64;
            let mut grads = store.zero_grads();
            let mut terms = [0.0f64; 4];
            let mut kl = 0.0;
            let mut entropy = 0.0;
            for (c, chunk) in slots.chunks(config.chunk_size).enumerate() {
                let base = c * config.chunk_size;
                let inputs: Vec<&PolicyInput> = chunk.iter().map(|&(e, t)| &buffer.trajectory(e)[t].input).collect();
                let choices: Vec<UnitChoice> = chunk
                    .iter()
                    .flat_map(|&(e, t)| buffer.trajectory(e)[t].choices.iter().copied())
                    .collect();
                let old_lp: Vec<f64> = chunk.iter().map(|&(e, t)| buffer.trajectory(e)[t].log_prob).collect();
                let old_v: Vec<f64> = chunk.iter().map(|&(e, t)| buffer.trajectory(e)[t].value).collect();
                let returns: Vec<f64> = chunk.iter().map(|&(e, t)| adv[e].returns[t]).collect();
                let a = &advantages[base..base + chunk.len()];

                let mut tape = Tape::new(store);
                let out = policy.forward(&mut tape, &inputs, rng, true)?;
                let lp = log_prob_of(&mut tape, &out, &choices)?;
                let h = entropy_of(&mut tape, &out)?;
                let loss = ppo_loss(&mut tape, lp, &old_lp, a, out.values, &returns, &old_v, h, config, denom)?;
                let vals = [loss.total, loss.policy, loss.value, loss.entropy].map(|v| tape.value(v).item());
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(PpoError::NonFinite {
                        epoch,
                        minibatch: mb,
                        detail: format!(
                            "total {} policy {} value {} entropy {}; ratio range {:?}",
                            vals[0],
                            vals[1],
                            vals[2],
                            vals[3],
                            range(tape.value(loss.ratio).data())
                        ),
                    });
                }
                for (acc, v) in terms.iter_mut().zip(vals) {
                    *acc += v;
                }
                for (&r, (&o, &n)) in tape
                    .value(loss.ratio)
                    .data()
                    .iter()
                    .zip(old_lp.iter().zip(tape.value(lp).data()))
                {
                    if (r - 1.0).abs() > config.clip_coef {
                        clipped += 1;
                    }
                    counted += 1;
                    kl += o - n;
                }
                entropy += tape.value(h).sum();
                tape.backward_into(loss.total, &mut grads)?;
            }
            if !grads.is_finite() {
                return Err(PpoError::NonFinite {
                    epoch,
                    minibatch: mb,
                    detail: "gradient has non-finite entries".into(),
                });
            }
            let norm = grads.clip_norm(config.max_grad_norm);
            optimizer.step(store, &grads, lr)?;

            stats.total_loss += terms[0];
            stats.policy_loss += terms[1];
            stats.value_loss += terms[2];
            stats.entropy += entropy / denom;
            stats.approx_kl += kl / denom;
            stats.grad_norm += norm;
            stats.minibatches += 1;
        }
    }
    let n = stats.minibatches.max(1) as f64;
    stats.total_loss /= n;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.approx_kl /= n;
    stats.grad_norm /= n;
    stats.clip_fraction = clipped as f64 / counted.max(1) as f64;
    Ok(stats)
}

fn normalize(v: &mut [f64]) {
    let n = v.len() as f64;
    if v.len() < 2 {
        return;
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    for x in v.iter_mut() {
        *x = (*x - mean) / (std + 1e-8);
    }
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}
