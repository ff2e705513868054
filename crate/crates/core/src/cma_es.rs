//! Ask/tell (μ/μ_w, λ)-CMA-ES with rank-one and rank-μ covariance updates.
//!
//! Strategy constants follow Hansen's tutorial defaults:
//!
//! ```text
//! λ     = 4 + ⌊3 ln n⌋             μ = ⌊λ/2⌋
//! w_i   ∝ ln(λ/2 + 1/2) − ln i      (i = 1..μ, normalised to sum 1)
//! μ_eff = 1 / Σ w_i²
//! c_σ   = (μ_eff + 2) / (n + μ_eff + 5)
//! d_σ   = 1 + 2·max(0, √((μ_eff − 1)/(n + 1)) − 1) + c_σ
//! c_c   = (4 + μ_eff/n) / (n + 4 + 2μ_eff/n)
//! c_1   = 2 / ((n + 1.3)² + μ_eff)
//! c_μ   = min(1 − c_1, 2(μ_eff − 2 + 1/μ_eff) / ((n + 2)² + μ_eff))
//! ```
//!
//! The core minimises; [`Objective::Maximize`] negates fitness at the
//! [`CmaEs::tell`] boundary. Ranking is by fitness, ties by candidate id.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::rng::{Rng, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub params: Vec<f64>,
    pub fitness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaEsConfig {
    pub sigma0: f64,
    pub popsize: Option<usize>,
    /// Generations between eigendecompositions of `C`.
    pub eigen_interval: usize,
    pub seed: u64,
}

impl Default for CmaEsConfig {
    fn default() -> Self {
        CmaEsConfig {
            sigma0: 0.1,
            popsize: None,
            eigen_interval: 1,
            seed: 0,
        }
    }
}

/// Default population size `4 + ⌊3 ln n⌋`.
pub fn default_popsize(dim: usize) -> usize {
    4 + (3.0 * (dim as f64).ln()).floor() as usize
}

/// Constants fixed at initialisation.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyParams {
    pub popsize: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl StrategyParams {
    pub fn new(dim: usize, popsize: usize) -> Self {
        let n = dim as f64;
        let mu = popsize / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (popsize as f64 / 2.0 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        StrategyParams {
            popsize,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaEs {
    pub(crate) dim: usize,
    pub(crate) mean: DVector<f64>,
    pub(crate) sigma: f64,
    pub(crate) cov: DMatrix<f64>,
    pub(crate) path_sigma: DVector<f64>,
    pub(crate) path_c: DVector<f64>,
    pub(crate) generation: usize,
    pub(crate) params: StrategyParams,
    pub(crate) eigen_interval: usize,
    /// Eigenvectors of `C` (columns).
    pub(crate) basis: DMatrix<f64>,
    /// Square roots of the eigenvalues of `C`.
    pub(crate) scales: DVector<f64>,
    pub(crate) eigen_generation: usize,
    pub(crate) rng: Rng,
}

impl CmaEs {
    pub fn new(mean0: Vec<f64>, cfg: &CmaEsConfig) -> Result<Self> {
        let dim = mean0.len();
        if dim == 0 {
            return Err(Error::invalid("CMA-ES needs at least one dimension"));
        }
        if !(cfg.sigma0.is_finite() && cfg.sigma0 > 0.0) {
            return Err(Error::invalid("initial step size must be positive"));
        }
        if mean0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial mean must be finite"));
        }
        let popsize = cfg.popsize.unwrap_or_else(|| default_popsize(dim));
        if popsize < 2 {
            return Err(Error::invalid("population size must be at least 2"));
        }
        Ok(CmaEs {
            dim,
            mean: DVector::from_vec(mean0),
            sigma: cfg.sigma0,
            cov: DMatrix::identity(dim, dim),
            path_sigma: DVector::zeros(dim),
            path_c: DVector::zeros(dim),
            generation: 0,
            params: StrategyParams::new(dim, popsize),
            eigen_interval: cfg.eigen_interval.max(1),
            basis: DMatrix::identity(dim, dim),
            scales: DVector::from_element(dim, 1.0),
            eigen_generation: 0,
            rng: Rng::new(cfg.seed),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn popsize(&self) -> usize {
        self.params.popsize
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn path_sigma(&self) -> &[f64] {
        self.path_sigma.as_slice()
    }

    pub fn path_c(&self) -> &[f64] {
        self.path_c.as_slice()
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn strategy(&self) -> &StrategyParams {
        &self.params
    }

    pub fn rng_state(&self) -> RngState {
        self.rng.state()
    }

    /// Samples `popsize` candidates `m + σ·B·D·z`, `z ~ N(0, I)`.
    pub fn ask(&mut self) -> Vec<Candidate> {
        let n = self.dim;
        (0..self.params.popsize)
            .map(|id| {
                let z = DVector::from_fn(n, |_, _| self.rng.standard_normal());
                let y = &self.basis * z.component_mul(&self.scales);
                let params = (&self.mean + self.sigma * y).as_slice().to_vec();
                Candidate {
                    id,
                    params,
                    fitness: None,
                }
            })
            .collect()
    }

    /// Updates mean, evolution paths, step size and covariance from scored
    /// candidates.
    pub fn tell(&mut self, candidates: &[Candidate], objective: Objective) -> Result<()> {
        let n = self.dim;
        let p = self.params.clone();
        if candidates.len() < p.mu {
            return Err(Error::invalid(format!(
                "tell needs at least {} candidates, got {}",
                p.mu,
                candidates.len()
            )));
        }
        let mut ranked = Vec::with_capacity(candidates.len());
        for c in candidates {
            let f = c
                .fitness
                .ok_or_else(|| Error::invalid(format!("candidate {} has no fitness", c.id)))?;
            if !f.is_finite() {
                return Err(Error::invalid(format!("candidate {} has non-finite fitness {f}", c.id)));
            }
            if c.params.len() != n || c.params.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("candidate {} has invalid parameters", c.id)));
            }
            let key = match objective {
                Objective::Minimize => f,
                Objective::Maximize => -f,
            };
            ranked.push((key, c.id, c));
        }
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let steps: Vec<DVector<f64>> = ranked[..p.mu]
            .iter()
            .map(|(_, _, c)| (DVector::from_column_slice(&c.params) - &self.mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in p.weights.iter().zip(&steps) {
            y_w.axpy(*w, y, 1.0);
        }

        self.mean.axpy(self.sigma, &y_w, 1.0);

        // C^{-1/2}·y_w = B·D^{-1}·Bᵀ·y_w
        let inv_sqrt_y = &self.basis * (self.basis.tr_mul(&y_w).component_div(&self.scales));
        let cs = p.c_sigma;
        self.path_sigma *= 1.0 - cs;
        self.path_sigma.axpy((cs * (2.0 - cs) * p.mu_eff).sqrt(), &inv_sqrt_y, 1.0);

        let g = (self.generation + 1) as f64;
        let ps_norm = self.path_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * g)).sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
        let cc = p.c_c;
        self.path_c *= 1.0 - cc;
        if h_sigma {
            self.path_c.axpy((cc * (2.0 - cc) * p.mu_eff).sqrt(), &y_w, 1.0);
        }
        let delta_h = if h_sigma { 0.0 } else { cc * (2.0 - cc) };

        let weight_sum: f64 = p.weights.iter().sum();
        self.cov *= 1.0 + p.c_1 * delta_h - p.c_1 - p.c_mu * weight_sum;
        self.cov.ger(p.c_1, &self.path_c, &self.path_c, 1.0);
        for (w, y) in p.weights.iter().zip(&steps) {
            self.cov.ger(p.c_mu * w, y, y, 1.0);
        }
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        self.cov = sym;

        self.sigma *= ((cs / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Numeric(format!("step size became {}", self.sigma)));
        }

        self.generation += 1;
        if self.generation - self.eigen_generation >= self.eigen_interval {
            self.update_eigensystem()?;
        }
        Ok(())
    }

    fn update_eigensystem(&mut self) -> Result<()> {
        let eig = SymmetricEigen::try_new(self.cov.clone(), f64::EPSILON, 0)
            .ok_or_else(|| Error::Numeric("eigendecomposition of C did not converge".into()))?;
        if let Some(bad) = eig.eigenvalues.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Numeric(format!("covariance lost positive definiteness (eigenvalue {bad})")));
        }
        self.scales = eig.eigenvalues.map(f64::sqrt);
        self.basis = eig.eigenvectors;
        self.eigen_generation = self.generation;
        Ok(())
    }

    /// Smallest and largest eigenvalue of `C` at the last decomposition.
    pub fn eigenvalue_range(&self) -> (f64, f64) {
        let sq = self.scales.map(|s| s * s);
        (sq.min(), sq.max())
    }

    /// Minimises `f` until `target` is reached or `max_evals` evaluations
    /// are spent. Returns the best fitness and the evaluations used.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&mut self, mut f: F, target: f64, max_evals: usize) -> Result<(f64, usize)> {
        let mut best = f64::INFINITY;
        let mut evals = 0;
        while evals + self.popsize() <= max_evals {
            let mut cands = self.ask();
            for c in &mut cands {
                let v = f(&c.params);
                best = best.min(v);
                c.fitness = Some(v);
            }
            evals += cands.len();
            if best < target {
                break;
            }
            self.tell(&cands, Objective::Minimize)?;
        }
        Ok((best, evals))
    }
}
