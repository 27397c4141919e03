//! Entity feature map, transformer actor-critic and the masked factorized
//! action distribution.

pub mod distribution;
pub mod features;
pub mod model;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use distribution::{entropy_of, greedy_units, log_prob_of, sample_units, to_joint_action, UnitChoice};
pub use features::{feature_map, fill_empty_groups, EntityMatrix, PolicyInput, NEUTRAL, OPPONENT, OWN};
pub use model::{ModelConfig, Policy, PolicyOutput, MASK_VALUE};

use crate::engine::JointAction;
use crate::numerics::{NumericsError, ParamStore, Tape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("incompatible model: {0}")]
    Incompatible(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no controllable units")]
    NoControllableUnits,
    #[error("unit {unit} chose a zero-probability entry in component {component}")]
    ZeroProbability { unit: usize, component: usize },
}

/// A sampled decision for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub choices: Vec<UnitChoice>,
    pub joint: JointAction,
    pub log_prob: f64,
    pub entropy: f64,
    pub value: f64,
}

impl Policy {
    /// Samples one decision per input with dropout disabled.
    pub fn act_batch<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        inputs: &[&PolicyInput],
        rng: &mut R,
    ) -> Result<Vec<Decision>, PolicyError> {
        self.decide_batch(store, inputs, rng, false)
    }

    /// Like [`Policy::act_batch`], optionally taking the most likely index of
    /// every component instead of sampling.
    pub fn decide_batch<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        inputs: &[&PolicyInput],
        rng: &mut R,
        greedy: bool,
    ) -> Result<Vec<Decision>, PolicyError> {
        let mut tape = Tape::new(store);
        let out = self.forward(&mut tape, inputs, rng, false)?;
        let choices = if greedy {
            greedy_units(tape.value(out.logp))
        } else {
            sample_units(tape.value(out.logp), rng)
        };
        let lp = log_prob_of(&mut tape, &out, &choices)?;
        let h = entropy_of(&mut tape, &out)?;
        let (lp, h, v) = (tape.value(lp), tape.value(h), tape.value(out.values));
        Ok(inputs
            .iter()
            .zip(&out.unit_rows)
            .enumerate()
            .map(|(s, (input, rows))| {
                let c = choices[rows.clone()].to_vec();
                Decision {
                    joint: to_joint_action(input, &c),
                    choices: c,
                    log_prob: lp.data()[s],
                    entropy: h.data()[s],
                    value: v.data()[s],
                }
            })
            .collect())
    }

    pub fn act<R: Rng + ?Sized>(&self, store: &ParamStore, input: &PolicyInput, rng: &mut R) -> Result<Decision, PolicyError> {
        if input.units() == 0 {
            return Err(PolicyError::NoControllableUnits);
        }
        Ok(self.act_batch(store, &[input], rng)?.remove(0))
    }

    /// `k x 78` actor logits for one state, before masking.
    pub fn actor_logits(&self, store: &ParamStore, input: &PolicyInput) -> Result<Tensor, PolicyError> {
        if input.units() == 0 {
            return Err(PolicyError::NoControllableUnits);
        }
        let mut tape = Tape::new(store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &[input], &mut rng, false)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Scalar state value for one state, dropout disabled.
    pub fn critic_value(&self, store: &ParamStore, input: &PolicyInput) -> Result<f64, PolicyError> {
        let mut tape = Tape::new(store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &[input], &mut rng, false)?;
        Ok(tape.value(out.values).item())
    }
}
