use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::PolicyInput;
use super::PolicyError;
use crate::engine::{ACTION_LOGITS, COMPONENT_WIDTHS, FEATURES};
use crate::numerics::{Encoder, EncoderConfig, Init, ParamId, ParamStore, Tape, Tensor, Var};

/// Logit assigned to illegal component entries.
pub const MASK_VALUE: f64 = -1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub map_rows: usize,
    pub map_cols: usize,
    /// Learn a `cells x embedding_dim` position embedding instead of feeding
    /// raw position one-hots.
    pub embedding: bool,
    pub embedding_dim: usize,
    pub init: Init,
    pub bias_init: f64,
}

impl ModelConfig {
    /// The reference setup: raw one-hots on maps of up to 64 cells, a 64-wide
    /// embedding beyond that.
    pub fn for_map(rows: usize, cols: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig::default(),
            map_rows: rows,
            map_cols: cols,
            embedding: rows * cols > 64,
            embedding_dim: 64,
            init: Init::HeNormal,
            bias_init: 0.0,
        }
    }

    pub fn cells(&self) -> usize {
        self.map_rows * self.map_cols
    }

    pub fn input_width(&self) -> usize {
        let pos = if self.embedding { self.embedding_dim } else { self.cells() };
        pos + FEATURES
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        self.encoder.validate()?;
        if self.input_width() != self.encoder.model_dim {
            return Err(PolicyError::Config(format!(
                "entity rows are {} wide but the encoder expects {}; toggle the position embedding or change embedding_dim",
                self.input_width(),
                self.encoder.model_dim
            )));
        }
        Ok(())
    }
}

/// Parameter handles for the full actor-critic model. The values live in a
/// separate [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub embed: Option<ParamId>,
    pub actor_w: ParamId,
    pub actor_b: ParamId,
    pub critic_w: ParamId,
    pub critic_b: ParamId,
    /// `6 x 1`: sum and mean weights for the own, opponent and neutral groups.
    pub agg_w: ParamId,
    /// `6 x 1`: the matching biases.
    pub agg_b: ParamId,
}

/// Tape handles produced by one batched forward pass.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    /// `N x d` encoder output for all entity rows.
    pub encoded: Var,
    /// `K x 78` actor logits before masking.
    pub logits: Var,
    /// `K x 78` per-component log-probabilities for every own unit in the batch.
    pub logp: Var,
    /// `S x 1` state values.
    pub values: Var,
    /// Own-unit rows of each sample within `logp`.
    pub unit_rows: Vec<Range<usize>>,
}

impl PolicyOutput {
    pub fn samples(&self) -> usize {
        self.unit_rows.len()
    }

    pub fn units(&self) -> usize {
        self.unit_rows.last().map_or(0, |r| r.end)
    }

    /// Sample index for each unit row.
    pub fn unit_sample(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.units());
        for (s, r) in self.unit_rows.iter().enumerate() {
            out.extend(std::iter::repeat_n(s, r.len()));
        }
        out
    }
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<(Policy, ParamStore), PolicyError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let d = config.encoder.model_dim;
        let init = config.init;
        let bias = Init::Constant { value: config.bias_init };
        let embed = config
            .embedding
            .then(|| store.add("embed", init.tensor(&[config.cells(), config.embedding_dim], rng)));
        let encoder = Encoder::register(&mut store, "encoder", config.encoder, init, bias, rng)?;
        let actor_w = store.add("actor.w", init.tensor(&[d, ACTION_LOGITS], rng));
        let actor_b = store.add("actor.b", bias.tensor(&[1, ACTION_LOGITS], rng));
        let critic_w = store.add("critic.w", init.tensor(&[d, 1], rng));
        let critic_b = store.add("critic.b", bias.tensor(&[1, 1], rng));
        let agg_w = store.add("critic.agg_w", Tensor::filled(&[6, 1], 1.0));
        let agg_b = store.add("critic.agg_b", bias.tensor(&[6, 1], rng));
        let policy = Policy {
            config,
            encoder,
            embed,
            actor_w,
            actor_b,
            critic_w,
            critic_b,
            agg_w,
            agg_b,
        };
        Ok((policy, store))
    }

    /// Checks that `store` has exactly the layout this model expects.
    pub fn check_store(&self, store: &ParamStore) -> Result<(), PolicyError> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let (_, fresh) = Policy::new(self.config, &mut rng)?;
        if fresh.len() != store.len() {
            return Err(PolicyError::Incompatible(format!(
                "expected {} parameter tensors, found {}",
                fresh.len(),
                store.len()
            )));
        }
        for ((_, a), (_, b)) in fresh.iter().zip(store.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(PolicyError::Incompatible(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    b.name,
                    b.value.shape(),
                    a.name,
                    a.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Entity rows of every sample stacked into one matrix.
    fn input_rows(&self, tape: &mut Tape<'_>, inputs: &[&PolicyInput]) -> Result<Var, PolicyError> {
        for i in inputs {
            if i.entities.cells != self.config.cells() {
                return Err(PolicyError::Incompatible(format!(
                    "observation has {} cells, model expects {}",
                    i.entities.cells,
                    self.config.cells()
                )));
            }
        }
        match self.embed {
            None => {
                let w = self.config.input_width();
                let mut data = Vec::new();
                let mut n = 0;
                for i in inputs {
                    data.extend_from_slice(i.entities.one_hot_rows().data());
                    n += i.entities.len();
                }
                Ok(tape.constant(Tensor::matrix(n, w, data)))
            }
            Some(embed) => {
                let positions: Vec<usize> = inputs.iter().flat_map(|i| i.entities.positions.iter().copied()).collect();
                let mut feats = Vec::with_capacity(positions.len() * FEATURES);
                for i in inputs {
                    feats.extend_from_slice(i.entities.feature_rows().data());
                }
                let e = tape.param(embed);
                let pos = tape.gather_rows(e, &positions)?;
                let f = tape.constant(Tensor::matrix(positions.len(), FEATURES, feats));
                Ok(tape.concat_cols(&[pos, f])?)
            }
        }
    }

    /// Batched forward pass over independent decision points.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        inputs: &[&PolicyInput],
        rng: &mut R,
        training: bool,
    ) -> Result<PolicyOutput, PolicyError> {
        let x = self.input_rows(tape, inputs)?;
        let mut segments = Vec::with_capacity(inputs.len());
        let mut start = 0;
        for i in inputs {
            segments.push((start, i.entities.len()));
            start += i.entities.len();
        }
        let y = self.encoder.forward(tape, x, &segments, rng, training)?;

        // actor over own-unit rows
        let mut unit_rows = Vec::with_capacity(inputs.len());
        let mut own = Vec::new();
        let mut keep = Vec::new();
        for (i, &(s, _)) in inputs.iter().zip(&segments) {
            let k = i.units();
            let begin = own.len();
            own.extend(s..s + k);
            unit_rows.push(begin..own.len());
            keep.extend_from_slice(&i.unit_masks);
        }
        let units = tape.gather_rows(y, &own)?;
        let (aw, ab) = (tape.param(self.actor_w), tape.param(self.actor_b));
        let logits = tape.linear(units, aw, ab)?;
        let masked = tape.mask_fill(logits, &keep, MASK_VALUE)?;
        let logp = tape.group_log_softmax(masked, &COMPONENT_WIDTHS)?;

        // critic: per-entity values pooled by sum and mean within each block
        let (cw, cb) = (tape.param(self.critic_w), tape.param(self.critic_b));
        let v = tape.linear(y, cw, cb)?;
        let mut to_sum = Vec::with_capacity(start);
        let mut to_mean = Vec::with_capacity(start);
        for (s, i) in inputs.iter().enumerate() {
            let p = i.entities.partition;
            for r in 0..i.entities.len() {
                let b = i.entities.block_of(r);
                to_sum.push(Some((s * 6 + 2 * b, 1.0)));
                to_mean.push(Some((s * 6 + 2 * b + 1, 1.0 / p[b] as f64)));
            }
        }
        let sums = tape.scatter_rows(v, &to_sum, inputs.len() * 6)?;
        let means = tape.scatter_rows(v, &to_mean, inputs.len() * 6)?;
        let pooled = tape.add(sums, means)?;
        let pooled = tape.reshape(pooled, &[inputs.len(), 6])?;
        let aggw = tape.param(self.agg_w);
        let weighted = tape.matmul(pooled, aggw)?;
        let ones = tape.constant(Tensor::filled(&[1, 6], 1.0));
        let aggb = tape.param(self.agg_b);
        let bias = tape.matmul(ones, aggb)?;
        let values = tape.add_row(weighted, bias)?;
        Ok(PolicyOutput {
            encoded: y,
            logits,
            logp,
            values,
            unit_rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn parameter_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, store) = Policy::new(ModelConfig::for_map(8, 8), &mut rng).unwrap();
        assert_eq!(store.count_prefix("actor."), 7176);
        assert_eq!(store.count_prefix("critic.w") + store.count_prefix("critic.b"), 92);
        assert_eq!(store.count_prefix("critic.agg"), 12);
        assert_eq!(store.count(), 645_475);

        let (_, store) = Policy::new(ModelConfig::for_map(16, 16), &mut rng).unwrap();
        assert_eq!(store.count_prefix("embed"), 16_384);
        assert_eq!(store.count(), 661_859);
    }

    #[test]
    fn raw_one_hots_rejected_on_large_maps() {
        let mut cfg = ModelConfig::for_map(16, 16);
        cfg.embedding = false;
        assert!(matches!(cfg.validate(), Err(PolicyError::Config(_))));
    }
}
