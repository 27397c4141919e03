//! Post-norm transformer encoder over entity rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Init, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 5,
            heads: 7,
            model_dim: 91,
            ff_dim: 512,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(NumericsError::Config(format!(
                "model_dim {} not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if self.ff_dim == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(NumericsError::Config("ff_dim must be positive and dropout in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttentionWeights {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        init: Init,
        bias: Init,
        rng: &mut R,
    ) -> Self {
        let mut w = |name: &str, shape: &[usize], init: Init| store.add(format!("{prefix}.{name}"), init.tensor(shape, rng));
        AttentionWeights {
            wq: w("wq", &[d, d], init),
            bq: w("bq", &[1, d], bias),
            wk: w("wk", &[d, d], init),
            bk: w("bk", &[1, d], bias),
            wv: w("wv", &[d, d], init),
            bv: w("bv", &[1, d], bias),
            wo: w("wo", &[d, d], init),
            bo: w("bo", &[1, d], bias),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub attn: AttentionWeights,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
}

impl LayerWeights {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        init: Init,
        bias: Init,
        rng: &mut R,
    ) -> Self {
        let d = cfg.model_dim;
        let attn = AttentionWeights::register(store, &format!("{prefix}.attn"), d, init, bias, rng);
        let mut w = |name: &str, shape: &[usize], init: Init| store.add(format!("{prefix}.{name}"), init.tensor(shape, rng));
        LayerWeights {
            attn,
            norm1_gain: w("norm1.gain", &[1, d], Init::Ones),
            norm1_bias: w("norm1.bias", &[1, d], Init::Zeros),
            ff1_w: w("ff1.w", &[d, cfg.ff_dim], init),
            ff1_b: w("ff1.b", &[1, cfg.ff_dim], bias),
            ff2_w: w("ff2.w", &[cfg.ff_dim, d], init),
            ff2_b: w("ff2.b", &[1, d], bias),
            norm2_gain: w("norm2.gain", &[1, d], Init::Ones),
            norm2_bias: w("norm2.bias", &[1, d], Init::Zeros),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub layers: Vec<LayerWeights>,
}

impl Encoder {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        config: EncoderConfig,
        init: Init,
        bias: Init,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|i| LayerWeights::register(store, &format!("{prefix}.layer{i}"), &config, init, bias, rng))
            .collect();
        Ok(Encoder { config, layers })
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        segments: &[(usize, usize)],
        rng: &mut R,
        training: bool,
    ) -> Result<Var, NumericsError> {
        encode_stack(tape, x, segments, &self.config, &self.layers, rng, training)
    }
}

/// Self-attention of the rows of `x` within each segment.
pub fn multi_head_attention(
    tape: &mut Tape<'_>,
    x: Var,
    segments: &[(usize, usize)],
    heads: usize,
    w: &AttentionWeights,
) -> Result<Var, NumericsError> {
    let p = |tape: &mut Tape<'_>, id| tape.param(id);
    let (wq, bq) = (p(tape, w.wq), p(tape, w.bq));
    let q = tape.linear(x, wq, bq)?;
    let (wk, bk) = (p(tape, w.wk), p(tape, w.bk));
    let k = tape.linear(x, wk, bk)?;
    let (wv, bv) = (p(tape, w.wv), p(tape, w.bv));
    let v = tape.linear(x, wv, bv)?;
    let a = tape.segment_attention(q, k, v, segments, heads)?;
    let (wo, bo) = (p(tape, w.wo), p(tape, w.bo));
    tape.linear(a, wo, bo)
}

pub fn encoder_layer<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    x: Var,
    segments: &[(usize, usize)],
    cfg: &EncoderConfig,
    w: &LayerWeights,
    rng: &mut R,
    training: bool,
) -> Result<Var, NumericsError> {
    let attn = multi_head_attention(tape, x, segments, cfg.heads, &w.attn)?;
    let attn = tape.dropout(attn, cfg.dropout, rng, training);
    let res = tape.add(x, attn)?;
    let (g1, b1) = (tape.param(w.norm1_gain), tape.param(w.norm1_bias));
    let h = tape.layer_norm(res, g1, b1)?;

    let (f1w, f1b) = (tape.param(w.ff1_w), tape.param(w.ff1_b));
    let f = tape.linear(h, f1w, f1b)?;
    let f = tape.relu(f);
    let (f2w, f2b) = (tape.param(w.ff2_w), tape.param(w.ff2_b));
    let f = tape.linear(f, f2w, f2b)?;
    let f = tape.dropout(f, cfg.dropout, rng, training);
    let res = tape.add(h, f)?;
    let (g2, b2) = (tape.param(w.norm2_gain), tape.param(w.norm2_bias));
    tape.layer_norm(res, g2, b2)
}

pub fn encode_stack<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    x: Var,
    segments: &[(usize, usize)],
    cfg: &EncoderConfig,
    layers: &[LayerWeights],
    rng: &mut R,
    training: bool,
) -> Result<Var, NumericsError> {
    let (_, d) = tape.value(x).dims2();
    if d != cfg.model_dim {
        return Err(NumericsError::Shape(format!("encoder input width {d}, expected {}", cfg.model_dim)));
    }
    let mut h = x;
    for w in layers {
        h = encoder_layer(tape, h, segments, cfg, w, rng, training)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::gradcheck;
    use crate::numerics::params::Gradients;
    use crate::numerics::tensor::Tensor;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            layers: 2,
            heads: 2,
            model_dim: 4,
            ff_dim: 6,
            dropout: 0.1,
        }
    }

    #[test]
    fn default_layer_count_matches_reference_layout() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Encoder::register(&mut store, "enc", EncoderConfig::default(), Init::HeNormal, Init::Zeros, &mut rng).unwrap();
        assert_eq!(store.count(), 5 * 127_639);
        assert_eq!(store.count_prefix("enc.layer0.attn"), 4 * (91 * 91 + 91));
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = EncoderConfig {
            heads: 6,
            ..EncoderConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_entity_attention_is_value_projection() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = AttentionWeights::register(&mut store, "a", 4, Init::Normal { std: 0.5 }, Init::Zeros, &mut rng);
        let x = Tensor::matrix(1, 4, vec![0.3, -1.0, 0.7, 0.2]);
        let mut tape = Tape::new(&store);
        let xv = tape.constant(x.clone());
        let out = multi_head_attention(&mut tape, xv, &[(0, 1)], 2, &w).unwrap();
        let v = x.matmul(store.value(w.wv)).unwrap();
        let expect = v.matmul(store.value(w.wo)).unwrap();
        assert!(tape.value(out).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn identical_entities_get_identical_outputs() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = Encoder::register(&mut store, "e", small_cfg(), Init::HeNormal, Init::Zeros, &mut rng).unwrap();
        let x = Tensor::matrix(2, 4, vec![0.1, 0.2, -0.3, 0.4, 0.1, 0.2, -0.3, 0.4]);
        let mut tape = Tape::new(&store);
        let xv = tape.constant(x);
        let y = enc.forward(&mut tape, xv, &[(0, 2)], &mut rng, false).unwrap();
        let t = tape.value(y);
        assert_eq!(t.row(0), t.row(1));
    }

    #[test]
    fn segments_do_not_interact() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let enc = Encoder::register(&mut store, "e", small_cfg(), Init::HeNormal, Init::Zeros, &mut rng).unwrap();
        let a = vec![0.5, -0.2, 0.1, 0.9, -0.4, 0.3, 0.8, -0.1];
        let b = vec![1.5, 0.2, -0.7, 0.0];
        let run = |rows: Vec<f64>, segs: &[(usize, usize)]| {
            let mut tape = Tape::new(&store);
            let n = rows.len() / 4;
            let xv = tape.constant(Tensor::matrix(n, 4, rows));
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let y = enc.forward(&mut tape, xv, segs, &mut rng, false).unwrap();
            tape.value(y).clone()
        };
        let alone = run(a.clone(), &[(0, 2)]);
        let both = run([a, b].concat(), &[(0, 2), (2, 1)]);
        assert!(alone.data().iter().zip(&both.data()[..8]).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = small_cfg();
        let enc = Encoder::register(&mut store, "e", cfg, Init::HeNormal, Init::Zeros, &mut rng).unwrap();
        let x = Init::Normal { std: 1.0 }.tensor(&[3, 4], &mut rng);
        let target = Init::Normal { std: 1.0 }.tensor(&[3, 4], &mut rng);
        let loss_of = |s: &ParamStore| -> Result<(f64, Gradients), NumericsError> {
            let mut tape = Tape::new(s);
            let xv = tape.constant(x.clone());
            let mut r = ChaCha8Rng::seed_from_u64(1);
            let y = enc.forward(&mut tape, xv, &[(0, 3)], &mut r, true)?;
            let t = tape.constant(target.clone());
            let p = tape.mul(y, t)?;
            let l = tape.sum(p);
            Ok((tape.value(l).item(), tape.backward(l)?))
        };
        let (_, grads) = loss_of(&store).unwrap();
        let res = gradcheck::check(&store, &grads, 1e-5, 1, |s| Ok(loss_of(s)?.0)).unwrap();
        assert!(res.max_rel_error < 1e-4, "{res:?}");
    }
}
