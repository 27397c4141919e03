//! Central finite-difference comparison against tape gradients.

use super::params::{Gradients, ParamStore};
use super::NumericsError;

/// Denominator floor so gradients that are zero on both sides compare as equal.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of `loss` with step `h`.
/// `stride` > 1 checks every `stride`-th element of each parameter.
pub fn check<F>(store: &ParamStore, analytic: &Gradients, h: f64, stride: usize, mut loss: F) -> Result<GradCheck, NumericsError>
where
    F: FnMut(&ParamStore) -> Result<f64, NumericsError>,
{
    let mut probe = store.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.value(id).numel();
        for i in (0..n).step_by(stride.max(1)) {
            let orig = store.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = orig + h;
            let up = loss(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig - h;
            let down = loss(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = rel_error(analytic.get(id).data()[i], numeric);
            out.checked += 1;
            if err > out.max_rel_error {
                out.max_rel_error = err;
                out.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    Ok(out)
}
