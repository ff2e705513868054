//! Linear controller: the only trained parameters of the pipeline.
//!
//! `S = [x_conv; x_esn; 1]`, `Ã = W_out · S`, then a task-specific squash.
//! `W_out` is `n_actions × (d_conv + d_esn + 1)` and is stored flattened
//! row-major, which is also the parameter order seen by the optimizer.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionMode {
    /// Steering, brake, accelerator.
    Continuous3,
    /// Move left or right.
    Discrete2,
}

impl ActionMode {
    pub fn n_actions(self) -> usize {
        match self {
            ActionMode::Continuous3 => 3,
            ActionMode::Discrete2 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionMode::Continuous3 => "continuous3",
            ActionMode::Discrete2 => "discrete2",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ActionMode::Continuous3 => 0,
            ActionMode::Discrete2 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ActionMode::Continuous3),
            1 => Some(ActionMode::Discrete2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveAction {
    /// In `[-1, 1]`.
    pub steer: f64,
    /// In `[0, 1]`.
    pub brake: f64,
    /// In `[0, 1]`.
    pub accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Drive(DriveAction),
    Move(Move),
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Drive(a) => write!(f, "{} {} {}", a.steer, a.brake, a.accel),
            Action::Move(Move::Left) => f.write_str("left"),
            Action::Move(Move::Right) => f.write_str("right"),
        }
    }
}

/// `(tanh a₁, (tanh a₂ + 1)/2, clip(tanh a₃, 0, 1))`.
pub fn squash_continuous(raw: [f64; 3]) -> DriveAction {
    DriveAction {
        steer: raw[0].tanh(),
        brake: (raw[1].tanh() + 1.0) / 2.0,
        accel: raw[2].tanh().clamp(0.0, 1.0),
    }
}

/// Left when `a ≤ 0`.
pub fn threshold_discrete(raw: f64) -> Move {
    if raw <= 0.0 {
        Move::Left
    } else {
        Move::Right
    }
}

/// `[x_conv; x_esn; 1]`.
pub fn assemble_input(x_conv: &[f64], x_esn: &[f64], d_conv: usize, d_esn: usize) -> Result<Vec<f64>> {
    if x_conv.len() != d_conv || x_esn.len() != d_esn {
        return Err(Error::invalid(format!(
            "controller expects features of length {d_conv} + {d_esn}, got {} + {}",
            x_conv.len(),
            x_esn.len()
        )));
    }
    let mut s = Vec::with_capacity(d_conv + d_esn + 1);
    s.extend_from_slice(x_conv);
    s.extend_from_slice(x_esn);
    s.push(1.0);
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerWeights {
    mode: ActionMode,
    input_dim: usize,
    /// Row-major `n_actions × input_dim`.
    weights: Vec<f64>,
}

impl ControllerWeights {
    pub fn zeros(mode: ActionMode, d_conv: usize, d_esn: usize) -> Self {
        let input_dim = d_conv + d_esn + 1;
        ControllerWeights {
            mode,
            input_dim,
            weights: vec![0.0; mode.n_actions() * input_dim],
        }
    }

    /// Takes a flat row-major parameter vector.
    pub fn from_flat(mode: ActionMode, input_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != mode.n_actions() * input_dim {
            return Err(Error::invalid(format!(
                "{} controller with input {input_dim} needs {} parameters, got {}",
                mode.name(),
                mode.n_actions() * input_dim,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("controller weights must be finite"));
        }
        Ok(ControllerWeights {
            mode,
            input_dim,
            weights,
        })
    }

    pub fn parameter_count(mode: ActionMode, d_conv: usize, d_esn: usize) -> usize {
        mode.n_actions() * (d_conv + d_esn + 1)
    }

    pub fn mode(&self) -> ActionMode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_actions(&self) -> usize {
        self.mode.n_actions()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.weights
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ControllerWeights {
            weights: self.weights.iter().map(|w| w * factor).collect(),
            ..self.clone()
        }
    }

    /// `Ã = W_out · S`.
    pub fn raw(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "controller input has length {}, expected {}",
                s.len(),
                self.input_dim
            )));
        }
        Ok(self
            .weights
            .chunks_exact(self.input_dim)
            .map(|row| row.iter().zip(s).map(|(w, x)| w * x).sum())
            .collect())
    }

    pub fn act_continuous(&self, s: &[f64]) -> Result<DriveAction> {
        if self.mode != ActionMode::Continuous3 {
            return Err(Error::InvalidState("controller is not in continuous mode".into()));
        }
        let a = self.raw(s)?;
        Ok(squash_continuous([a[0], a[1], a[2]]))
    }

    pub fn act_discrete(&self, s: &[f64]) -> Result<Move> {
        if self.mode != ActionMode::Discrete2 {
            return Err(Error::InvalidState("controller is not in discrete mode".into()));
        }
        Ok(threshold_discrete(self.raw(s)?[0]))
    }

    pub fn act(&self, s: &[f64]) -> Result<Action> {
        match self.mode {
            ActionMode::Continuous3 => self.act_continuous(s).map(Action::Drive),
            ActionMode::Discrete2 => self.act_discrete(s).map(Action::Move),
        }
    }
}
