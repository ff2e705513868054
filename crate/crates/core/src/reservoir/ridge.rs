use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Linear readout `y = W · [state; input; 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeReadout {
    /// `target_dim × (state_dim + input_dim + 1)`.
    pub weights: DMatrix<f64>,
    pub regularization: f64,
    pub state_dim: usize,
    pub input_dim: usize,
}

impl RidgeReadout {
    pub fn new(weights: DMatrix<f64>, regularization: f64, state_dim: usize, input_dim: usize) -> Result<Self> {
        if weights.ncols() != state_dim + input_dim + 1 {
            return Err(Error::invalid("readout width must be state_dim + input_dim + 1"));
        }
        if !(regularization >= 0.0) || weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("readout needs finite weights and regularization >= 0"));
        }
        Ok(RidgeReadout {
            weights,
            regularization,
            state_dim,
            input_dim,
        })
    }

    pub fn target_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn predict(&self, state: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim || input.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "readout expects state {} and input {}, got {} and {}",
                self.state_dim,
                self.input_dim,
                state.len(),
                input.len()
            )));
        }
        let bias = self.state_dim + self.input_dim;
        Ok((0..self.target_dim())
            .map(|r| {
                let row = self.weights.row(r);
                let s: f64 = state.iter().enumerate().map(|(j, v)| row[j] * v).sum();
                let u: f64 = input.iter().enumerate().map(|(j, v)| row[self.state_dim + j] * v).sum();
                s + u + row[bias]
            })
            .collect())
    }

    /// Predictions for row-aligned state and input matrices.
    pub fn predict_batch(&self, states: &DMatrix<f64>, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let z = design(states, inputs)?;
        if z.ncols() != self.weights.ncols() {
            return Err(Error::invalid("batch dimensions do not match the readout"));
        }
        Ok(z * self.weights.transpose())
    }
}

fn design(states: &DMatrix<f64>, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = states.nrows();
    if inputs.nrows() != n {
        return Err(Error::invalid("states and inputs must have the same number of rows"));
    }
    let (dx, du) = (states.ncols(), inputs.ncols());
    Ok(DMatrix::from_fn(n, dx + du + 1, |t, j| {
        if j < dx {
            states[(t, j)]
        } else if j < dx + du {
            inputs[(t, j - dx)]
        } else {
            1.0
        }
    }))
}

/// Solves `(ZᵀZ + λI) Wᵀ = Zᵀ Y` with `Z = [states, inputs, 1]` row-wise.
pub fn fit_ridge(
    states: &DMatrix<f64>,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> Result<RidgeReadout> {
    if states.nrows() == 0 {
        return Err(Error::invalid("ridge regression needs at least one sample"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("regularization must be a finite non-negative number"));
    }
    if targets.nrows() != states.nrows() {
        return Err(Error::invalid("targets must have one row per sample"));
    }
    let z = design(states, inputs)?;
    let p = z.ncols();
    let mut gram = z.tr_mul(&z);
    for i in 0..p {
        gram[(i, i)] += lambda;
    }
    let rhs = z.tr_mul(targets);
    let singular = || {
        Error::Singular(format!(
            "normal equations are not positive definite (lambda = {lambda}); use a regularization > 0"
        ))
    };
    let chol = gram.clone().cholesky().ok_or_else(singular)?;
    let diag: DVector<f64> = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d.abs()), hi.max(d.abs())));
    if lo * lo <= 1e-13 * hi * hi {
        return Err(singular());
    }
    let wt = chol.solve(&rhs);
    RidgeReadout::new(wt.transpose(), lambda, states.ncols(), inputs.ncols())
}

/// Mean squared error divided by the target variance (pooled over columns).
pub fn nmse(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    assert_eq!(pred.shape(), target.shape());
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let var = target.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let mse = pred.iter().zip(target.iter()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    mse / var
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.standard_normal())
    }

    #[test]
    fn exact_linear_targets_are_recovered() {
        let mut rng = Rng::new(1);
        let (x, u) = (random(60, 6, &mut rng), random(60, 2, &mut rng));
        let truth = random(3, 9, &mut rng);
        let z = design(&x, &u).unwrap();
        let y = &z * truth.transpose();
        let r = fit_ridge(&x, &u, &y, 0.0).unwrap();
        let resid = (r.predict_batch(&x, &u).unwrap() - &y).abs().max();
        assert!(resid < 1e-8, "residual {resid}");
        assert!(nmse(&r.predict_batch(&x, &u).unwrap(), &y) < 1e-6);
    }

    #[test]
    fn huge_regularization_shrinks_to_zero() {
        let mut rng = Rng::new(2);
        let (x, u, y) = (random(50, 4, &mut rng), random(50, 1, &mut rng), random(50, 2, &mut rng));
        let r = fit_ridge(&x, &u, &y, 1e12).unwrap();
        assert!(r.weights.abs().max() < 1e-6);
    }

    #[test]
    fn rank_deficient_without_regularization_fails() {
        let mut rng = Rng::new(3);
        let x = random(10, 3, &mut rng);
        let dup = DMatrix::from_fn(10, 2, |t, j| x[(t, j)]);
        let y = random(10, 1, &mut rng);
        assert!(matches!(fit_ridge(&x, &dup, &y, 0.0), Err(Error::Singular(_))));
        assert!(fit_ridge(&x, &dup, &y, 0.1).is_ok());
    }

    #[test]
    fn predict_uses_bias_column() {
        let mut w = DMatrix::zeros(2, 4);
        w[(0, 3)] = 1.5;
        w[(1, 3)] = -2.0;
        let r = RidgeReadout::new(w, 0.0, 2, 1).unwrap();
        assert_eq!(r.predict(&[9.0, 9.0], &[9.0]).unwrap(), vec![1.5, -2.0]);
        let zero = RidgeReadout::new(DMatrix::zeros(1, 4), 0.0, 2, 1).unwrap();
        assert_eq!(zero.predict(&[1.0, 2.0], &[3.0]).unwrap(), vec![0.0]);
        assert!(zero.predict(&[1.0], &[3.0]).is_err());
    }
}
