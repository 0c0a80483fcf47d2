use super::AlgoError;

/// Generalized advantage estimation.
///
/// `values` has one more entry than `rewards`: the bootstrap value of the
/// state after the last step (0 when that state is terminal). Returns
/// `(advantages, returns)` with `returns = advantages + values[..T]`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), AlgoError> {
    if values.len() != rewards.len() + 1 {
        return Err(AlgoError::Length(format!(
            "GAE needs T + 1 values for T rewards, got {} values for {} rewards",
            values.len(),
            rewards.len()
        )));
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_signal() {
        let (a, r) = compute_gae(&[0.0; 5], &[0.0; 6], 0.99, 0.95).unwrap();
        assert_eq!(a, vec![0.0; 5]);
        assert_eq!(r, vec![0.0; 5]);
    }

    #[test]
    fn single_step() {
        let (a, r) = compute_gae(&[1.0], &[0.0, 0.0], 0.99, 0.95).unwrap();
        assert_eq!((a[0], r[0]), (1.0, 1.0));
    }

    #[test]
    fn two_step_unroll() {
        let (a, _) = compute_gae(&[1.0, 1.0], &[0.0; 3], 0.99, 0.95).unwrap();
        assert_eq!(a[1], 1.0);
        assert!((a[0] - 1.9405).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            compute_gae(&[1.0, 2.0], &[0.0; 2], 0.99, 0.95),
            Err(AlgoError::Length(_))
        ));
    }
}
