use super::PpoConfig;
use crate::numerics::{NumericsError, Tape, Tensor, Var};

/// Loss components as tape nodes. `total = policy + value + entropy`.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub ratio: Var,
}

fn column(tape: &mut Tape<'_>, v: &[f64]) -> Var {
    tape.constant(Tensor::matrix(v.len(), 1, v.to_vec()))
}

/// Clipped-surrogate PPO loss over a batch of `S x 1` columns.
///
/// Every term is a sum divided by `denom`, so chunks of one minibatch can be
/// accumulated by passing the minibatch size as `denom`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss(
    tape: &mut Tape<'_>,
    new_log_probs: Var,
    old_log_probs: &[f64],
    advantages: &[f64],
    new_values: Var,
    returns: &[f64],
    old_values: &[f64],
    entropies: Var,
    config: &PpoConfig,
    denom: f64,
) -> Result<LossTerms, NumericsError> {
    let old = column(tape, old_log_probs);
    let adv = column(tape, advantages);
    let ret = column(tape, returns);

    let log_ratio = tape.sub(new_log_probs, old)?;
    let ratio = tape.exp(log_ratio);
    let surr1 = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - config.clip_coef, 1.0 + config.clip_coef);
    let surr2 = tape.mul(clipped, adv)?;
    let surr = tape.minimum(surr1, surr2)?;
    let surr = tape.sum(surr);
    let policy = tape.scale(surr, -1.0 / denom);

    let err = tape.sub(new_values, ret)?;
    let sq = tape.square(err);
    let sq = if config.clip_value_loss {
        let oldv = column(tape, old_values);
        let delta = tape.sub(new_values, oldv)?;
        let delta = tape.clamp(delta, -config.clip_coef, config.clip_coef);
        let vclip = tape.add(oldv, delta)?;
        let err2 = tape.sub(vclip, ret)?;
        let sq2 = tape.square(err2);
        // max(a, b) = -min(-a, -b)
        let na = tape.scale(sq, -1.0);
        let nb = tape.scale(sq2, -1.0);
        let m = tape.minimum(na, nb)?;
        tape.scale(m, -1.0)
    } else {
        sq
    };
    let sq = tape.sum(sq);
    let value = tape.scale(sq, config.vf_coef * 0.5 / denom);

    let ent = tape.sum(entropies);
    let entropy = tape.scale(ent, -config.ent_coef / denom);

    let pv = tape.add(policy, value)?;
    let total = tape.add(pv, entropy)?;
    Ok(LossTerms {
        total,
        policy,
        value,
        entropy,
        ratio,
    })
}
