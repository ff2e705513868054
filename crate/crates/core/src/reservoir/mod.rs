//! Leaky echo state network.
//!
//! Update rule, with `u` the (optionally bias-augmented) input:
//!
//! ```text
//! x̃(t+1) = tanh(W_in · u(t) + W · x(t))
//! x(t+1) = (1 − α) · x(t) + α · x̃(t+1)
//! ```
//!
//! `W_in` and `W` are drawn once from `N(0, weight_stddev²)`; exactly
//! `round(sparsity · D²)` entries of `W` are then zeroed and `W` is rescaled
//! to the requested spectral radius. In the convolutional pipeline the input
//! is the CNN feature vector and no bias is appended; the generic mode
//! appends a constant 1 and is used with the ridge readout.

mod ridge;
mod spectral;

pub use ridge::{fit_ridge, nmse, RidgeReadout};
pub use spectral::{dense_spectral_radius, spectral_radius, Csr};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirSpec {
    pub input_dim: usize,
    pub state_dim: usize,
    pub leak_rate: f64,
    pub sparsity: f64,
    pub spectral_radius: f64,
    pub weight_stddev: f64,
    pub bias_input: bool,
}

impl Default for ReservoirSpec {
    fn default() -> Self {
        ReservoirSpec {
            input_dim: 512,
            state_dim: 512,
            leak_rate: 0.8,
            sparsity: 0.8,
            spectral_radius: 0.95,
            weight_stddev: 0.1,
            bias_input: false,
        }
    }
}

impl ReservoirSpec {
    /// Generic ESN with a bias-augmented input, for time-series readouts.
    pub fn generic(input_dim: usize, state_dim: usize) -> Self {
        ReservoirSpec {
            input_dim,
            state_dim,
            bias_input: true,
            ..Default::default()
        }
    }

    pub fn effective_input_dim(&self) -> usize {
        self.input_dim + usize::from(self.bias_input)
    }

    /// Number of recurrent weights forced to zero.
    pub fn masked_count(&self) -> usize {
        (self.sparsity * (self.state_dim * self.state_dim) as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.state_dim == 0 {
            return Err(Error::invalid("reservoir input and state dimensions must be positive"));
        }
        if !(0.0..=1.0).contains(&self.leak_rate) {
            return Err(Error::invalid("leak rate must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::invalid("sparsity must lie in [0, 1]"));
        }
        if !(self.spectral_radius.is_finite() && self.spectral_radius > 0.0) {
            return Err(Error::invalid("spectral radius must be positive"));
        }
        if !(self.weight_stddev.is_finite() && self.weight_stddev >= 0.0) {
            return Err(Error::invalid("weight stddev must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    spec: ReservoirSpec,
    seed: u64,
    w_in: DMatrix<f64>,
    w: DMatrix<f64>,
    w_sparse: Csr,
    state: Vec<f64>,
    scratch: Vec<f64>,
}

impl Reservoir {
    /// Samples `W_in` (row-major), then `W` (row-major), then the mask
    /// positions, all from one stream seeded by `seed`.
    pub fn build(spec: ReservoirSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let d = spec.state_dim;
        let e = spec.effective_input_dim();
        let sd = spec.weight_stddev;
        let mut rng = Rng::new(seed);
        let w_in = DMatrix::from_row_iterator(d, e, (0..d * e).map(|_| rng.normal(0.0, sd)).collect::<Vec<_>>());
        let mut w = DMatrix::from_row_iterator(d, d, (0..d * d).map(|_| rng.normal(0.0, sd)).collect::<Vec<_>>());
        for idx in rng.sample_without_replacement(d * d, spec.masked_count()) {
            w[(idx / d, idx % d)] = 0.0;
        }
        let rho = spectral_radius(&w)?;
        if rho <= 1e-12 {
            return Err(Error::RescaleFailure);
        }
        w *= spec.spectral_radius / rho;
        Ok(Self::assemble(spec, seed, w_in, w))
    }

    /// Reservoir with explicit matrices; no masking or rescaling is applied.
    pub fn from_matrices(spec: ReservoirSpec, w_in: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        spec.validate()?;
        if w_in.shape() != (spec.state_dim, spec.effective_input_dim()) {
            return Err(Error::invalid(format!(
                "W_in is {:?}, expected {:?}",
                w_in.shape(),
                (spec.state_dim, spec.effective_input_dim())
            )));
        }
        if w.shape() != (spec.state_dim, spec.state_dim) {
            return Err(Error::invalid("W must be state_dim x state_dim"));
        }
        Ok(Self::assemble(spec, 0, w_in, w))
    }

    fn assemble(spec: ReservoirSpec, seed: u64, w_in: DMatrix<f64>, w: DMatrix<f64>) -> Self {
        let d = spec.state_dim;
        Reservoir {
            w_sparse: Csr::from_dense(&w),
            spec,
            seed,
            w_in,
            w,
            state: vec![0.0; d],
            scratch: vec![0.0; d],
        }
    }

    pub fn spec(&self) -> &ReservoirSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_weights(&self) -> &DMatrix<f64> {
        &self.w_in
    }

    pub fn recurrent_weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn set_state(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.spec.state_dim {
            return Err(Error::invalid(format!(
                "state has length {}, reservoir has {} units",
                state.len(),
                self.spec.state_dim
            )));
        }
        self.state.copy_from_slice(state);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Advances the state by one input and returns it.
    pub fn step(&mut self, input: &[f64]) -> Result<&[f64]> {
        if input.len() != self.spec.input_dim {
            return Err(Error::invalid(format!(
                "input has length {}, reservoir expects {}",
                input.len(),
                self.spec.input_dim
            )));
        }
        let pre = &mut self.scratch;
        self.w_sparse.mul_vec(&self.state, pre);
        for (j, &u) in input.iter().enumerate() {
            if u != 0.0 {
                for (p, &w) in pre.iter_mut().zip(self.w_in.column(j).iter()) {
                    *p += w * u;
                }
            }
        }
        if self.spec.bias_input {
            let bias = self.w_in.column(self.spec.input_dim);
            for (p, &w) in pre.iter_mut().zip(bias.iter()) {
                *p += w;
            }
        }
        let a = self.spec.leak_rate;
        for (x, &p) in self.state.iter_mut().zip(pre.iter()) {
            *x = (1.0 - a) * *x + a * p.tanh();
        }
        Ok(&self.state)
    }

    /// Drives the reservoir through `inputs` (one row per step) and collects
    /// the states, one row per step.
    pub fn run(&mut self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut states = DMatrix::zeros(inputs.nrows(), self.spec.state_dim);
        let mut u = vec![0.0; inputs.ncols()];
        for t in 0..inputs.nrows() {
            for (j, v) in u.iter_mut().enumerate() {
                *v = inputs[(t, j)];
            }
            let x = self.step(&u)?;
            for (j, &v) in x.iter().enumerate() {
                states[(t, j)] = v;
            }
        }
        Ok(states)
    }
}
