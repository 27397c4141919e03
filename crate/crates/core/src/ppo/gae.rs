/// Per-slot advantages and value targets of one environment trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Generalised advantage estimation over one environment's trajectory.
///
/// `terminated[t]` marks that the episode ended with the transition taken at
/// step `t`; the slot after it belongs to a fresh episode. `bootstrap` is the
/// value of the state following the last slot.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    terminated: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> AdvantageSet {
    let n = rewards.len();
    debug_assert!(values.len() == n && terminated.len() == n);
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if terminated[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next_value - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        advantages[t] = next_adv;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    AdvantageSet { advantages, returns }
}
