//! Convolutional reservoir computing for pixel-based control: a fixed
//! random convolutional feature extractor, a leaky echo state reservoir,
//! and a linear controller trained by CMA-ES, plus two built-in
//! environments and the training and evaluation loop.

pub mod cma_es;
pub mod controller;
pub mod envs;
pub mod error;
pub mod fixed_conv;
pub mod narma;
pub mod persist;
pub mod reservoir;
pub mod rng;
pub mod trainer;

pub use cma_es::{Candidate, CmaEs, CmaEsConfig, Objective};
pub use controller::{Action, ActionMode, ControllerWeights, DriveAction, Move};
pub use envs::{Env, EnvConfig, EnvKind, StepResult};
pub use error::{Error, Result};
pub use fixed_conv::{ConvSpec, FeatureExtractor, Frame, RawImage};
pub use persist::{Checkpoint, ConfigFile, ModelSpec};
pub use reservoir::{Reservoir, ReservoirSpec};
pub use rng::Rng;
pub use trainer::{Pipeline, TrainConfig};
