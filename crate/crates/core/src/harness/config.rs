use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::engine::{MapSpec, Rules, DEFAULT_STEP_LIMIT};
use crate::numerics::{AdamConfig, EncoderConfig, Init};
use crate::policy::ModelConfig;
use crate::ppo::PpoConfig;
use crate::scripted_ai::BotKind;

/// Training hyperparameters. Field names double as the TOML keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub transformer_layers: usize,
    pub transformer_feed_forward_neurons: usize,
    pub transformer_attention_heads: usize,
    pub transformer_activation_function: String,
    pub transformer_dropout: f64,
    pub weight_initialisation: Init,
    pub bias_initialisation: f64,
    /// `auto` enables it on maps larger than 64 cells.
    pub position_embedding: EmbeddingSetting,
    pub position_embedding_dim: usize,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub max_training_steps: u64,
    pub number_of_exploration_steps: usize,
    pub parallel_bot_environments: usize,
    /// Environment trajectories per minibatch.
    pub minibatch_size: usize,
    pub update_epochs: usize,
    pub return_discount_factor: f64,
    pub generalised_advantage_estimate: f64,
    pub entropy_coefficient: f64,
    pub value_function_coefficient: f64,
    /// PPO ratio clipping coefficient.
    pub gradient_clipping_coefficient: f64,
    pub max_grad_norm: f64,
    pub normalise_advantages: bool,
    pub clip_value_loss: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSetting {
    Auto,
    On,
    Off,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let adam = AdamConfig::default();
        let ppo = PpoConfig::default();
        Hyperparameters {
            transformer_layers: enc.layers,
            transformer_feed_forward_neurons: enc.ff_dim,
            transformer_attention_heads: enc.heads,
            transformer_activation_function: "relu".into(),
            transformer_dropout: enc.dropout,
            weight_initialisation: Init::HeNormal,
            bias_initialisation: 0.0,
            position_embedding: EmbeddingSetting::Auto,
            position_embedding_dim: 64,
            learning_rate: adam.learning_rate,
            adam_epsilon: adam.epsilon,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            max_training_steps: 100_000_000,
            number_of_exploration_steps: 256,
            parallel_bot_environments: 24,
            minibatch_size: ppo.envs_per_minibatch,
            update_epochs: ppo.update_epochs,
            return_discount_factor: ppo.gamma,
            generalised_advantage_estimate: ppo.gae_lambda,
            entropy_coefficient: ppo.ent_coef,
            value_function_coefficient: ppo.vf_coef,
            gradient_clipping_coefficient: ppo.clip_coef,
            max_grad_norm: ppo.max_grad_norm,
            normalise_advantages: ppo.norm_adv,
            clip_value_loss: ppo.clip_value_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Bundled map name or path to a map file.
    pub map: String,
    /// Optional rules override file.
    pub rules: Option<PathBuf>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub opponents: Vec<BotKind>,
    pub step_limit: u32,
    pub checkpoint_every: usize,
    /// Fail the run if an agent order is ever coerced to NOOP.
    pub strict: bool,
    /// Samples per forward/backward pass during updates.
    pub chunk_size: usize,
    pub hyperparameters: Hyperparameters,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            map: "basesWorkers8x8".into(),
            rules: None,
            seed: 1,
            output_dir: PathBuf::from("runs/default"),
            opponents: BotKind::ALL.to_vec(),
            step_limit: DEFAULT_STEP_LIMIT,
            checkpoint_every: 50,
            strict: true,
            chunk_size: PpoConfig::default().chunk_size,
            hyperparameters: Hyperparameters::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, HarnessError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let h = &self.hyperparameters;
        if !h.transformer_activation_function.eq_ignore_ascii_case("relu") {
            return Err(HarnessError::Config(format!(
                "unsupported activation `{}` (only relu)",
                h.transformer_activation_function
            )));
        }
        if self.opponents.is_empty() {
            return Err(HarnessError::Config("opponent pool is empty".into()));
        }
        if h.parallel_bot_environments == 0 || h.number_of_exploration_steps == 0 {
            return Err(HarnessError::Config("need at least one environment and one step".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(HarnessError::Config("checkpoint_every must be positive".into()));
        }
        self.ppo().validate(h.parallel_bot_environments)?;
        self.model(&self.map_spec()?).validate()?;
        self.load_rules()?;
        Ok(())
    }

    pub fn map_spec(&self) -> Result<MapSpec, HarnessError> {
        Ok(MapSpec::resolve(&self.map)?)
    }

    pub fn load_rules(&self) -> Result<Arc<Rules>, HarnessError> {
        Ok(Arc::new(match &self.rules {
            None => Rules::default(),
            Some(p) => Rules::load(p)?,
        }))
    }

    pub fn model(&self, spec: &MapSpec) -> ModelConfig {
        let h = &self.hyperparameters;
        let mut m = ModelConfig::for_map(spec.rows, spec.cols);
        m.encoder = EncoderConfig {
            layers: h.transformer_layers,
            heads: h.transformer_attention_heads,
            model_dim: m.encoder.model_dim,
            ff_dim: h.transformer_feed_forward_neurons,
            dropout: h.transformer_dropout,
        };
        m.embedding = match h.position_embedding {
            EmbeddingSetting::Auto => m.embedding,
            EmbeddingSetting::On => true,
            EmbeddingSetting::Off => false,
        };
        m.embedding_dim = h.position_embedding_dim;
        m.encoder.model_dim = m.input_width();
        m.init = h.weight_initialisation;
        m.bias_init = h.bias_initialisation;
        m
    }

    pub fn ppo(&self) -> PpoConfig {
        let h = &self.hyperparameters;
        PpoConfig {
            gamma: h.return_discount_factor,
            gae_lambda: h.generalised_advantage_estimate,
            clip_coef: h.gradient_clipping_coefficient,
            ent_coef: h.entropy_coefficient,
            vf_coef: h.value_function_coefficient,
            update_epochs: h.update_epochs,
            envs_per_minibatch: h.minibatch_size,
            max_grad_norm: h.max_grad_norm,
            norm_adv: h.normalise_advantages,
            clip_value_loss: h.clip_value_loss,
            chunk_size: self.chunk_size,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        let h = &self.hyperparameters;
        AdamConfig {
            learning_rate: h.learning_rate,
            beta1: h.adam_beta1,
            beta2: h.adam_beta2,
            epsilon: h.adam_epsilon,
        }
    }

    pub fn steps_per_update(&self) -> u64 {
        (self.hyperparameters.parallel_bot_environments * self.hyperparameters.number_of_exploration_steps) as u64
    }

    /// Updates needed to consume at least `max_training_steps`.
    pub fn total_updates(&self) -> u64 {
        self.hyperparameters.max_training_steps.div_ceil(self.steps_per_update())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = RunConfig::parse(
            r#"
            map = "16x16"
            opponents = ["random-biased"]
            [hyperparameters]
            max_training_steps = 200000
            "#,
        )
        .unwrap();
        assert_eq!(cfg.hyperparameters.parallel_bot_environments, 24);
        assert!(cfg.model(&cfg.map_spec().unwrap()).embedding);
        assert_eq!(cfg.total_updates(), 33);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("unknown_key = 1").is_err());
        assert!(RunConfig::parse("[hyperparameters]\ntransformer_activation_function = \"tanh\"").is_err());
        assert!(RunConfig::parse("map = \"16x16\"\n[hyperparameters]\nposition_embedding = \"off\"").is_err());
        assert!(RunConfig::parse("[hyperparameters]\nparallel_bot_environments = 10").is_err());
    }
}
