//! Built-in pixel environments: a tile-track racer with continuous controls
//! and a projectile dodger with left/right moves.
//!
//! Every episode is a pure function of `(config, episode seed, actions)`.
//! Frames are 64×64 RGB bytes drawn from a fixed palette without
//! anti-aliasing.

mod dodge;
mod track;

pub use dodge::{DodgeBall, DodgeParams, Projectile};
pub use track::{TrackParams, TrackRunner};

use crate::controller::{Action, ActionMode, DriveAction, Move};
use crate::error::{Error, Result};
use crate::fixed_conv::RawImage;
use crate::rng::{derive_seed, Rng};

/// Side length of every rendered frame.
pub const RENDER_SIZE: usize = 64;

const WORLD_SEED_TAG: u64 = 0x77_6f72_6c64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    TrackRunner,
    DodgeBall,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::TrackRunner => "track_runner",
            EnvKind::DodgeBall => "dodge_ball",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "track_runner" => Some(EnvKind::TrackRunner),
            "dodge_ball" => Some(EnvKind::DodgeBall),
            _ => None,
        }
    }

    pub fn action_mode(self) -> ActionMode {
        match self {
            EnvKind::TrackRunner => ActionMode::Continuous3,
            EnvKind::DodgeBall => ActionMode::Discrete2,
        }
    }

    pub fn default_max_steps(self) -> usize {
        match self {
            EnvKind::TrackRunner => 1000,
            EnvKind::DodgeBall => 2100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub max_steps: usize,
    /// Mixed into every episode seed.
    pub seed: u64,
    pub track: TrackParams,
    pub dodge: DodgeParams,
}

impl EnvConfig {
    pub fn new(kind: EnvKind) -> Self {
        EnvConfig {
            kind,
            max_steps: kind.default_max_steps(),
            seed: 0,
            track: TrackParams::default(),
            dodge: DodgeParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        match self.kind {
            EnvKind::TrackRunner => self.track.validate(),
            EnvKind::DodgeBall => self.dodge.validate(),
        }
    }

    /// Lowest achievable episode score, used for episodes that fault.
    pub fn failure_score(&self) -> f64 {
        match self.kind {
            EnvKind::TrackRunner => -track::STEP_PENALTY * self.max_steps as f64,
            EnvKind::DodgeBall => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepInfo {
    Track { tiles_visited: usize, n_tiles: usize },
    Dodge { steps_survived: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub frame: RawImage,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub enum Env {
    TrackRunner(TrackRunner),
    DodgeBall(DodgeBall),
}

impl Env {
    /// Builds the episode world from `episode_seed` and returns it with its
    /// first frame.
    pub fn reset(cfg: &EnvConfig, episode_seed: u64) -> Result<(Env, RawImage)> {
        cfg.validate()?;
        let rng = Rng::new(derive_seed(&[WORLD_SEED_TAG, cfg.seed, episode_seed]));
        let env = match cfg.kind {
            EnvKind::TrackRunner => Env::TrackRunner(TrackRunner::new(cfg.track.clone(), cfg.max_steps, rng)),
            EnvKind::DodgeBall => Env::DodgeBall(DodgeBall::new(cfg.dodge.clone(), cfg.max_steps, rng)),
        };
        let frame = env.render();
        Ok((env, frame))
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            Env::TrackRunner(_) => EnvKind::TrackRunner,
            Env::DodgeBall(_) => EnvKind::DodgeBall,
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::InvalidState("step called after the episode ended".into()));
        }
        match (self, action) {
            (Env::TrackRunner(e), Action::Drive(a)) => e.step(a),
            (Env::DodgeBall(e), Action::Move(m)) => Ok(e.step(*m)),
            (env, a) => Err(Error::invalid(format!("action `{a}` does not fit {}", env.kind().name()))),
        }
    }

    pub fn render(&self) -> RawImage {
        match self {
            Env::TrackRunner(e) => e.render(),
            Env::DodgeBall(e) => e.render(),
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            Env::TrackRunner(e) => e.is_done(),
            Env::DodgeBall(e) => e.is_done(),
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            Env::TrackRunner(e) => e.steps(),
            Env::DodgeBall(e) => e.steps(),
        }
    }

    /// A hand-written policy with access to the true world state.
    pub fn heuristic_action(&self) -> Action {
        match self {
            Env::TrackRunner(e) => Action::Drive(e.heuristic_action()),
            Env::DodgeBall(e) => Action::Move(e.heuristic_action()),
        }
    }
}

/// Uniformly random action in the action space of `kind`.
pub fn random_action(kind: EnvKind, rng: &mut Rng) -> Action {
    match kind {
        EnvKind::TrackRunner => Action::Drive(DriveAction {
            steer: rng.uniform_range(-1.0, 1.0),
            brake: rng.uniform(),
            accel: rng.uniform(),
        }),
        EnvKind::DodgeBall => Action::Move(if rng.coin() { Move::Left } else { Move::Right }),
    }
}
