use ndarray::NdFloat as Float;

/// Generalized advantage estimation over one trajectory segment.
///
/// `values[t]` estimates the state before step `t`; `bootstrap_value`
/// estimates the state after the last step. `dones[t]` marks an episode
/// boundary after step `t`, cutting both the bootstrap and the advantage
/// recursion. Returns `(advantages, returns)` with `returns = A + V`.
pub fn gae<F: Float>(
    rewards: &[F],
    values: &[F],
    bootstrap_value: F,
    dones: &[bool],
    gamma: F,
    lambda: F,
) -> (Vec<F>, Vec<F>) {
    assert_eq!(rewards.len(), values.len());
    assert_eq!(rewards.len(), dones.len());
    let n = rewards.len();
    let mut advantages = vec![F::zero(); n];
    let mut next_value = bootstrap_value;
    let mut next_advantage = F::zero();
    for t in (0..n).rev() {
        let live = if dones[t] { F::zero() } else { F::one() };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_advantage = delta + gamma * lambda * live * next_advantage;
        advantages[t] = next_advantage;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(&a, &v)| a + v).collect();
    (advantages, returns)
}
