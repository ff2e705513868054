use nalgebra::{DMatrix, Schur};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

/// Iteration cap for the block power method.
pub const MAX_ITERATIONS: usize = 10_000;
/// Relative spread of the dominant Ritz modulus over the last [`WINDOW`]
/// iterations below which the estimate is accepted.
pub const RELATIVE_TOLERANCE: f64 = 1e-10;
/// Largest dimension handled by the dense fallback.
pub const DENSE_FALLBACK_MAX_DIM: usize = 1024;

/// Block size. Real matrices often have a complex-conjugate pair of
/// dominant eigenvalues, which a single-vector iteration never settles on;
/// a small block captures the pair and any near-ties.
const BLOCK: usize = 8;
const WINDOW: usize = 50;
const STALL_CHECK: usize = 500;
const START_SEED_TAG: u64 = 0x5bec_7a1a_da05_0001;

/// Compressed sparse row copy of a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..rows {
            for j in 0..cols {
                let v = m[(i, j)];
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        Csr {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `out = self · x`, summing each row in ascending column order.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            *o = self.col_idx[a..b]
                .iter()
                .zip(&self.values[a..b])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }

    /// `out = self · x` for a row-interleaved block of `BLOCK` vectors.
    fn mul_block(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.rows {
            let mut acc = [0.0; BLOCK];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let v = self.values[k];
                let src = &x[self.col_idx[k] * BLOCK..][..BLOCK];
                for b in 0..BLOCK {
                    acc[b] += v * src[b];
                }
            }
            out[i * BLOCK..(i + 1) * BLOCK].copy_from_slice(&acc);
        }
    }
}

/// Largest eigenvalue modulus of a square matrix.
///
/// Runs a block power (subspace) iteration from a fixed seed-derived start
/// block and takes the largest Ritz value modulus. If that does not settle
/// within [`MAX_ITERATIONS`] (ties in modulus, nilpotent or defective
/// matrices) the eigenvalues are computed densely, for matrices up to
/// [`DENSE_FALLBACK_MAX_DIM`].
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::invalid(format!("matrix is {}x{}, not square", n, m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    if n == 0 {
        return Ok(0.0);
    }
    if n > BLOCK {
        if let Some(rho) = block_power(&Csr::from_dense(m), n) {
            return Ok(rho);
        }
    }
    dense_spectral_radius(m)
}

/// Spectral radius from a full real Schur decomposition.
pub fn dense_spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    if n > DENSE_FALLBACK_MAX_DIM {
        return Err(Error::Numeric(format!(
            "block power iteration did not converge and {n} exceeds the dense fallback limit"
        )));
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 100 * n.max(10))
        .ok_or_else(|| Error::Numeric("Schur decomposition did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

fn block_power(a: &Csr, n: usize) -> Option<f64> {
    let mut rng = Rng::new(derive_seed(&[START_SEED_TAG, n as u64]));
    // Row-interleaved n × BLOCK blocks: element (i, b) at i·BLOCK + b.
    let mut q: Vec<f64> = (0..n * BLOCK).map(|_| rng.standard_normal()).collect();
    if !orthonormalize(&mut q, n) {
        return None;
    }
    let mut z = vec![0.0; n * BLOCK];
    let mut history: Vec<f64> = Vec::with_capacity(MAX_ITERATIONS);
    for _ in 0..MAX_ITERATIONS {
        a.mul_block(&q, &mut z);
        let h = DMatrix::from_fn(BLOCK, BLOCK, |i, j| (0..n).map(|r| q[r * BLOCK + i] * z[r * BLOCK + j]).sum());
        let theta = Schur::try_new(h, f64::EPSILON, 1000)?
            .complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        if !theta.is_finite() || theta <= f64::MIN_POSITIVE {
            return None;
        }
        history.push(theta);
        let k = history.len();
        if k > WINDOW {
            // Spread of the last WINDOW estimates ending at iteration i.
            let change = |i: usize| {
                let w = &history[i - WINDOW..i];
                let (lo, hi) = w.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                (hi - lo) / hi
            };
            if change(k) <= RELATIVE_TOLERANCE {
                return Some(theta);
            }
            if k % STALL_CHECK == 0 && k >= 2 * STALL_CHECK && stalled(change(k - STALL_CHECK), change(k), k) {
                return None;
            }
        }
        std::mem::swap(&mut q, &mut z);
        if !orthonormalize(&mut q, n) {
            return None;
        }
    }
    None
}

/// True when the windowed change, contracting at the rate observed over the
/// last [`STALL_CHECK`] iterations, cannot reach the tolerance before the cap.
fn stalled(before: f64, now: f64, done: usize) -> bool {
    if now <= 0.0 || before <= 0.0 {
        return false;
    }
    if now >= before {
        return true;
    }
    let per_iter = (now / before).ln() / STALL_CHECK as f64;
    let needed = (RELATIVE_TOLERANCE / now).ln() / per_iter;
    done as f64 + needed > MAX_ITERATIONS as f64
}

/// Modified Gram–Schmidt, with one reorthogonalisation pass, over the
/// columns of a row-interleaved block. Returns false if the block has
/// (numerically) lost rank.
fn orthonormalize(q: &mut [f64], n: usize) -> bool {
    let col_dot = |q: &[f64], a: usize, b: usize| -> f64 { (0..n).map(|r| q[r * BLOCK + a] * q[r * BLOCK + b]).sum() };
    for i in 0..BLOCK {
        let scale = (0..n).map(|r| q[r * BLOCK + i].abs()).fold(0.0, f64::max);
        for _ in 0..2 {
            for j in 0..i {
                let proj = col_dot(q, i, j);
                for r in 0..n {
                    q[r * BLOCK + i] -= proj * q[r * BLOCK + j];
                }
            }
        }
        let norm = col_dot(q, i, i).sqrt();
        if !(norm > 1e-12 * scale.max(f64::MIN_POSITIVE)) || norm < 1e-290 {
            return false;
        }
        for r in 0..n {
            q[r * BLOCK + i] /= norm;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.3]));
        assert!((spectral_radius(&m).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nilpotent_is_zero() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(spectral_radius(&m).unwrap(), 0.0);
        // Larger shift matrix exercises the block iteration's collapse path.
        let shift = DMatrix::from_fn(20, 20, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
        assert!(spectral_radius(&shift).unwrap() < 1e-8);
    }

    #[test]
    fn rotation_pair_dominates() {
        // Dominant complex pair 0.9·e^{±iπ/3} plus smaller real modes.
        let (c, s) = (0.9 * (std::f64::consts::PI / 3.0).cos(), 0.9 * (std::f64::consts::PI / 3.0).sin());
        let mut m = DMatrix::zeros(8, 8);
        m[(0, 0)] = c;
        m[(0, 1)] = -s;
        m[(1, 0)] = s;
        m[(1, 1)] = c;
        for i in 2..8 {
            m[(i, i)] = 0.1 * i as f64 - 0.05;
        }
        let p = DMatrix::from_fn(8, 8, |i, j| if i == j { 1.0 } else { 0.1 / (1.0 + (i + 2 * j) as f64) });
        let similar = &p * m * p.try_inverse().unwrap();
        assert!((spectral_radius(&similar).unwrap() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn rejects_non_square() {
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn csr_matches_dense_product() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 0.0, 0.0, 0.0, -1.0, 3.0, 0.0]);
        let csr = Csr::from_dense(&m);
        assert_eq!(csr.nnz(), 4);
        let mut out = vec![0.0; 3];
        csr.mul_vec(&[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, vec![7.0, 0.0, 5.0]);
    }
}
