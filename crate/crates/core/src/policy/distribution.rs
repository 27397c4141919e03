//! Factorized categorical distribution over the seven action components of
//! every own unit.

use rand::Rng;

use super::features::PolicyInput;
use super::model::{PolicyOutput, MASK_VALUE};
use super::PolicyError;
use crate::engine::{JointAction, SubAction, ACTION_LOGITS, COMPONENT_OFFSETS, COMPONENT_WIDTHS};
use crate::numerics::{Tape, Tensor, Var};

/// Chosen index per component for one unit.
pub type UnitChoice = [u8; 7];

/// Draws one index per component from `K x 78` log-probabilities.
pub fn sample_units<R: Rng + ?Sized>(logp: &Tensor, rng: &mut R) -> Vec<UnitChoice> {
    let (k, _) = logp.dims2();
    (0..k)
        .map(|u| {
            let row = logp.row(u);
            std::array::from_fn(|c| sample_component(&row[COMPONENT_OFFSETS[c]..COMPONENT_OFFSETS[c] + COMPONENT_WIDTHS[c]], rng) as u8)
        })
        .collect()
}

/// Most likely index per component; ties resolve to the lowest index.
pub fn greedy_units(logp: &Tensor) -> Vec<UnitChoice> {
    let (k, _) = logp.dims2();
    (0..k)
        .map(|u| {
            let row = logp.row(u);
            std::array::from_fn(|c| {
                let g = &row[COMPONENT_OFFSETS[c]..COMPONENT_OFFSETS[c] + COMPONENT_WIDTHS[c]];
                g.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0 as u8
            })
        })
        .collect()
}

/// Inverse-CDF draw; zero-probability entries are never returned.
fn sample_component<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &lp) in logp.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    last
}

/// Flat indices into the `K x 78` log-prob matrix, seven per unit.
fn choice_indices(choices: &[UnitChoice]) -> Vec<usize> {
    let mut idx = Vec::with_capacity(choices.len() * 7);
    for (u, c) in choices.iter().enumerate() {
        for comp in 0..7 {
            idx.push(u * ACTION_LOGITS + COMPONENT_OFFSETS[comp] + c[comp] as usize);
        }
    }
    idx
}

/// `S x 1` joint log-probabilities of `choices` (aligned with the unit rows).
pub fn log_prob_of(tape: &mut Tape<'_>, out: &PolicyOutput, choices: &[UnitChoice]) -> Result<Var, PolicyError> {
    if choices.len() != out.units() {
        return Err(PolicyError::Shape(format!("{} choices for {} units", choices.len(), out.units())));
    }
    for (u, c) in choices.iter().enumerate() {
        for comp in 0..7 {
            if c[comp] as usize >= COMPONENT_WIDTHS[comp] {
                return Err(PolicyError::Shape(format!("unit {u} component {comp} index {}", c[comp])));
            }
        }
    }
    let idx = choice_indices(choices);
    let lp = tape.value(out.logp).data();
    if let Some(pos) = idx.iter().position(|&i| lp[i] < MASK_VALUE / 2.0) {
        return Err(PolicyError::ZeroProbability {
            unit: pos / 7,
            component: pos % 7,
        });
    }
    let picked = tape.gather(out.logp, &idx)?;
    let col = tape.reshape(picked, &[idx.len(), 1])?;
    let samples = out.unit_sample();
    let targets: Vec<_> = (0..idx.len()).map(|j| Some((samples[j / 7], 1.0))).collect();
    Ok(tape.scatter_rows(col, &targets, out.samples())?)
}

/// `S x 1` sums of per-component entropies over each sample's units.
pub fn entropy_of(tape: &mut Tape<'_>, out: &PolicyOutput) -> Result<Var, PolicyError> {
    let p = tape.exp(out.logp);
    let plogp = tape.mul(p, out.logp)?;
    let ones = tape.constant(Tensor::filled(&[ACTION_LOGITS, 1], -1.0));
    let per_unit = tape.matmul(plogp, ones)?;
    let targets: Vec<_> = out.unit_sample().into_iter().map(|s| Some((s, 1.0))).collect();
    Ok(tape.scatter_rows(per_unit, &targets, out.samples())?)
}

/// Orders for the idle units of one sample. Units that cannot act and NOOP
/// choices produce no order.
pub fn to_joint_action(input: &PolicyInput, choices: &[UnitChoice]) -> JointAction {
    let mut joint = JointAction::new();
    for (u, c) in choices.iter().enumerate() {
        if input.sources[u] && c[0] != 0 {
            joint.push(input.unit_cell(u), SubAction::from_components(*c));
        }
    }
    joint
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::ParamStore;

    fn output_from(tape: &mut Tape<'_>, logits: Vec<f64>, keep: &[bool], rows: Vec<std::ops::Range<usize>>) -> PolicyOutput {
        let k = logits.len() / ACTION_LOGITS;
        let l = tape.constant(Tensor::matrix(k, ACTION_LOGITS, logits));
        let m = tape.mask_fill(l, keep, MASK_VALUE).unwrap();
        let logp = tape.group_log_softmax(m, &COMPONENT_WIDTHS).unwrap();
        let values = tape.constant(Tensor::zeros(&[rows.len(), 1]));
        PolicyOutput {
            encoded: l,
            logits: l,
            logp,
            values,
            unit_rows: rows,
        }
    }

    /// Only index 0 of every parameter group plus the given action types.
    fn degenerate_mask(types: &[usize]) -> Vec<bool> {
        let mut m = vec![false; ACTION_LOGITS];
        for &o in &COMPONENT_OFFSETS {
            m[o] = true;
        }
        for &t in types {
            m[t] = true;
        }
        m
    }

    #[test]
    fn point_mass_has_zero_log_prob_and_entropy() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let out = output_from(&mut tape, vec![0.3; ACTION_LOGITS], &degenerate_mask(&[]), vec![0..1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let choice = sample_units(tape.value(out.logp), &mut rng);
        assert_eq!(choice, vec![[0; 7]]);
        let lp = log_prob_of(&mut tape, &out, &choice).unwrap();
        let h = entropy_of(&mut tape, &out).unwrap();
        assert_eq!(tape.value(lp).item(), 0.0);
        assert_eq!(tape.value(h).item(), 0.0);
    }

    #[test]
    fn uniform_action_type() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let out = output_from(&mut tape, vec![0.0; ACTION_LOGITS], &degenerate_mask(&[1, 2, 3, 4, 5]), vec![0..1]);
        let lp = log_prob_of(&mut tape, &out, &[[3, 0, 0, 0, 0, 0, 0]]).unwrap();
        assert!((tape.value(lp).item() + 6f64.ln()).abs() < 1e-12);
        let h = entropy_of(&mut tape, &out).unwrap();
        assert!((tape.value(h).item() - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_move_entropy_is_ln4() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let mut mask = degenerate_mask(&[]);
        mask[6..10].fill(true);
        let out = output_from(&mut tape, vec![0.0; ACTION_LOGITS], &mask, vec![0..1]);
        let h = entropy_of(&mut tape, &out).unwrap();
        assert!((tape.value(h).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identical_units_double_the_log_prob() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let row: Vec<f64> = (0..ACTION_LOGITS).map(|i| (i as f64 * 0.37).sin()).collect();
        let keep = vec![true; 2 * ACTION_LOGITS];
        let two = output_from(&mut tape, [row.clone(), row.clone()].concat(), &keep, vec![0..2]);
        let one = output_from(&mut tape, row, &keep[..ACTION_LOGITS], vec![0..1]);
        let c = [2, 1, 3, 0, 2, 4, 17];
        let lp2 = log_prob_of(&mut tape, &two, &[c, c]).unwrap();
        let lp1 = log_prob_of(&mut tape, &one, &[c]).unwrap();
        assert!((tape.value(lp2).item() - 2.0 * tape.value(lp1).item()).abs() < 1e-12);
    }

    #[test]
    fn masked_choice_is_rejected() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let out = output_from(&mut tape, vec![0.0; ACTION_LOGITS], &degenerate_mask(&[1]), vec![0..1]);
        let err = log_prob_of(&mut tape, &out, &[[4, 0, 0, 0, 0, 0, 0]]).unwrap_err();
        assert!(matches!(err, PolicyError::ZeroProbability { unit: 0, component: 0 }));
    }

    #[test]
    fn sampling_frequencies_match_probabilities() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let logits: Vec<f64> = (0..ACTION_LOGITS).map(|i| ((i * 7) % 5) as f64 * 0.4).collect();
        let out = output_from(&mut tape, logits, &[true; ACTION_LOGITS], vec![0..1]);
        let lp = tape.value(out.logp).clone();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[sample_units(&lp, &mut rng)[0][0] as usize] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let p = lp.row(0)[i].exp();
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 3.0 * sigma, "type {i}: {c} vs p={p}");
        }
    }
}
