//! NARMA-10 benchmark series for certifying a reservoir with a ridge readout.

use crate::rng::Rng;

/// Input `u(t) ~ U[0, 0.5)` and target series with
/// `y(t+1) = 0.3·y(t) + 0.05·y(t)·Σ_{i<10} y(t−i) + 1.5·u(t−9)·u(t) + 0.1`.
///
/// `target[t]` is `y(t+1)`, i.e. the value to predict after seeing
/// `input[t]`. Returns `None` if the recursion diverges, which happens for a
/// small fraction of input draws.
pub fn narma10(len: usize, seed: u64) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut rng = Rng::new(seed);
    let u: Vec<f64> = (0..len).map(|_| rng.uniform_range(0.0, 0.5)).collect();
    let mut y = vec![0.0; len + 1];
    for t in 0..len {
        let window: f64 = y[t.saturating_sub(9)..=t].iter().sum();
        let delayed = if t >= 9 { u[t - 9] } else { 0.0 };
        y[t + 1] = 0.3 * y[t] + 0.05 * y[t] * window + 1.5 * delayed * u[t] + 0.1;
        if !y[t + 1].is_finite() || y[t + 1].abs() > 10.0 {
            return None;
        }
    }
    y.remove(0);
    Some((u, y))
}
