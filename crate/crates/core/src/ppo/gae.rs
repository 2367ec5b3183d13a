use crate::error::{Error, Result};

/// Generalized advantage estimates and return targets.
///
/// Episodes are delimited by `dones`; the value after a terminal step is 0.
/// `returns[t] = advantages[t] + values[t]`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "gae inputs have lengths {n}, {}, {}",
            values.len(),
            dones.len()
        )));
    }
    if n > 0 && !dones[n - 1] {
        let start = dones[..n - 1].iter().rposition(|d| *d).map_or(0, |i| i + 1);
        return Err(Error::UnterminatedEpisode(start));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if dones[t] {
            (0.0, 0.0)
        } else {
            (values[t + 1], running)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}
