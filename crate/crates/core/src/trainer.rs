//! Population training loop and evaluation protocol.
//!
//! Each generation: ask the optimizer for `n` candidates, let every worker
//! play `m` episodes with its candidate, tell the optimizer the mean scores
//! (maximised), and keep the best candidate seen so far. Episode seeds are
//! hashes of `(namespace, generation, worker, episode)`, so results do not
//! depend on scheduling.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::cma_es::{Candidate, CmaEs, CmaEsConfig, Objective};
use crate::controller::{assemble_input, Action, ActionMode, ControllerWeights};
use crate::envs::{random_action, Env, EnvConfig, StepResult};
use crate::error::{Error, Result};
use crate::fixed_conv::{preprocess, ConvSpec, FeatureExtractor};
use crate::persist::{Checkpoint, ModelSpec, OptimizerBlob};
use crate::reservoir::{Reservoir, ReservoirSpec};
use crate::rng::{derive_seed, Rng};

const TRAIN_NAMESPACE: u64 = 0x7472_6169_6e;
const EVAL_NAMESPACE: u64 = 0x6576_616c;
const RANDOM_POLICY_NAMESPACE: u64 = 0x7261_6e64;
/// Training seeds have this bit clear, evaluation seeds have it set.
const EVAL_SEED_BIT: u64 = 1 << 63;

pub const HISTORY_FILE: &str = "history.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Optimizer settings used by [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct CmaSettings {
    pub sigma0: f64,
    /// Every component of the initial mean.
    pub mean0: f64,
    pub eigen_interval: usize,
    pub seed: u64,
}

impl Default for CmaSettings {
    fn default() -> Self {
        CmaSettings {
            sigma0: 0.1,
            mean0: 0.0,
            eigen_interval: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// `n`: candidates per generation, one per worker.
    pub n_workers: usize,
    /// `m`: episodes per candidate.
    pub episodes_per_candidate: usize,
    pub generations: usize,
    pub env: EnvConfig,
    pub conv: ConvSpec,
    pub extractor_seed: u64,
    /// `input_dim` is taken from `conv.dense_out`.
    pub reservoir: ReservoirSpec,
    pub reservoir_seed: u64,
    pub cma: CmaSettings,
    pub eval_trials: usize,
    pub eval_seed: u64,
    /// Score candidates on the rayon pool rather than one after another.
    pub parallel: bool,
    /// Stop early once a generation's best mean reaches this score.
    pub target_score: Option<f64>,
}

impl TrainConfig {
    pub fn new(env: EnvConfig) -> Self {
        let n_workers = match env.kind.action_mode() {
            ActionMode::Continuous3 => 16,
            ActionMode::Discrete2 => 32,
        };
        TrainConfig {
            n_workers,
            episodes_per_candidate: 8,
            generations: 500,
            env,
            conv: ConvSpec::default(),
            extractor_seed: 0,
            reservoir: ReservoirSpec::default(),
            reservoir_seed: 1,
            cma: CmaSettings::default(),
            eval_trials: 100,
            eval_seed: 0,
            parallel: true,
            target_score: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_workers < 2 {
            return Err(Error::invalid("n_workers must be at least 2 (it is the population size)"));
        }
        if self.episodes_per_candidate == 0 {
            return Err(Error::invalid("episodes_per_candidate must be at least 1"));
        }
        if self.eval_trials == 0 {
            return Err(Error::invalid("eval_trials must be at least 1"));
        }
        self.env.validate()?;
        self.conv.validate()?;
        self.reservoir_spec().validate()?;
        if !(self.cma.sigma0.is_finite() && self.cma.sigma0 > 0.0) || !self.cma.mean0.is_finite() {
            return Err(Error::invalid("cma.sigma0 must be positive and cma.mean0 finite"));
        }
        Ok(())
    }

    /// Reservoir spec with its input tied to the extractor output.
    pub fn reservoir_spec(&self) -> ReservoirSpec {
        ReservoirSpec {
            input_dim: self.conv.dense_out,
            bias_input: false,
            ..self.reservoir.clone()
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            conv: self.conv.clone(),
            extractor_seed: self.extractor_seed,
            reservoir: self.reservoir_spec(),
            reservoir_seed: self.reservoir_seed,
        }
    }

    pub fn action_mode(&self) -> ActionMode {
        self.env.kind.action_mode()
    }

    pub fn parameter_count(&self) -> usize {
        ControllerWeights::parameter_count(self.action_mode(), self.conv.dense_out, self.reservoir.state_dim)
    }
}

/// Seed of training episode `episode` for `worker` in `generation`.
pub fn training_episode_seed(generation: usize, worker: usize, episode: usize) -> u64 {
    derive_seed(&[TRAIN_NAMESPACE, generation as u64, worker as u64, episode as u64]) & !EVAL_SEED_BIT
}

/// Seed of evaluation trial `trial` under `base`.
pub fn evaluation_episode_seed(base: u64, trial: usize) -> u64 {
    derive_seed(&[EVAL_NAMESPACE, base, trial as u64]) | EVAL_SEED_BIT
}

/// Fixed feature extractor and reservoir shared by every worker.
#[derive(Debug, Clone)]
pub struct Pipeline {
    extractor: FeatureExtractor,
    reservoir: Reservoir,
}

/// Per-step record passed to episode observers.
pub struct StepRecord<'a> {
    pub step: usize,
    pub action: &'a Action,
    pub result: &'a StepResult,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub score: f64,
    pub steps: usize,
}

impl Pipeline {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        if spec.reservoir.input_dim != spec.conv.dense_out || spec.reservoir.bias_input {
            return Err(Error::invalid("reservoir input must be the bias-free extractor output"));
        }
        Ok(Pipeline {
            extractor: FeatureExtractor::build(spec.conv.clone(), spec.extractor_seed)?,
            reservoir: Reservoir::build(spec.reservoir.clone(), spec.reservoir_seed)?,
        })
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn reservoir(&self) -> &Reservoir {
        &self.reservoir
    }

    pub fn d_conv(&self) -> usize {
        self.extractor.output_dim()
    }

    pub fn d_esn(&self) -> usize {
        self.reservoir.spec().state_dim
    }

    /// Plays one episode. The reservoir state starts at zero.
    pub fn play_episode(
        &self,
        weights: &ControllerWeights,
        env_cfg: &EnvConfig,
        episode_seed: u64,
        mut observe: impl FnMut(StepRecord<'_>),
    ) -> Result<EpisodeOutcome> {
        if weights.mode() != env_cfg.kind.action_mode() {
            return Err(Error::invalid(format!(
                "{} controller cannot drive {}",
                weights.mode().name(),
                env_cfg.kind.name()
            )));
        }
        if weights.input_dim() != self.d_conv() + self.d_esn() + 1 {
            return Err(Error::invalid("controller input does not match the pipeline dimensions"));
        }
        let mut reservoir = self.reservoir.clone();
        reservoir.reset();
        let (mut env, mut raw) = Env::reset(env_cfg, episode_seed)?;
        let mut score = 0.0;
        while !env.is_done() {
            let x_conv = self.extractor.extract(&preprocess(&raw)?);
            let x_esn = reservoir.step(&x_conv)?;
            let s = assemble_input(&x_conv, x_esn, self.d_conv(), self.d_esn())?;
            let action = weights.act(&s)?;
            let result = env.step(&action)?;
            score += result.reward;
            observe(StepRecord {
                step: env.steps() - 1,
                action: &action,
                result: &result,
            });
            raw = result.frame;
        }
        Ok(EpisodeOutcome {
            score,
            steps: env.steps(),
        })
    }

    fn weights_from(&self, mode: ActionMode, params: &[f64]) -> Result<ControllerWeights> {
        ControllerWeights::from_flat(mode, self.d_conv() + self.d_esn() + 1, params.to_vec())
    }
}

/// `G_i`: mean score of `params` over `m` training episodes. Episodes that
/// fault score the environment's failure score.
pub fn score_candidate(
    pipeline: &Pipeline,
    params: &[f64],
    cfg: &TrainConfig,
    worker: usize,
    generation: usize,
) -> Result<f64> {
    let weights = pipeline.weights_from(cfg.action_mode(), params)?;
    let m = cfg.episodes_per_candidate;
    let mut total = 0.0;
    for j in 0..m {
        let seed = training_episode_seed(generation, worker, j);
        total += match pipeline.play_episode(&weights, &cfg.env, seed, |_| {}) {
            Ok(o) => o.score,
            Err(e) => {
                log::warn!("generation {generation} worker {worker} episode {j}: {e}; scoring as failure");
                cfg.env.failure_score()
            }
        };
    }
    Ok(total / m as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub generation: usize,
    /// `G_i` per candidate, by worker id.
    pub scores: Vec<f64>,
    pub best_mean: f64,
    pub best_candidate_params: Vec<f64>,
    /// Best `G_i` over this and all earlier generations.
    pub running_best: f64,
    pub wall_time: f64,
}

impl GenerationReport {
    /// Deterministic CSV row: generation, best mean, running best, then
    /// every `G_i`.
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{}", self.generation, self.best_mean, self.running_best);
        for s in &self.scores {
            row.push(',');
            row.push_str(&s.to_string());
        }
        row
    }
}

pub fn history_header(n_workers: usize) -> String {
    let mut h = String::from("generation,best_mean,running_best");
    for i in 0..n_workers {
        h.push_str(&format!(",g_{i}"));
    }
    h
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ControllerWeights,
    /// `None` when no generation ran.
    pub best_score: Option<f64>,
    pub history: Vec<GenerationReport>,
}

/// Where and how training writes its artefacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
    /// Text of the configuration, embedded in checkpoints.
    pub config_text: String,
}

/// Runs the full loop from scratch. See [`resume`] to continue from a
/// checkpoint.
pub fn train(cfg: &TrainConfig, out: &TrainOutput) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pipeline = Pipeline::build(&cfg.model_spec())?;
    let dim = cfg.parameter_count();
    let es = CmaEs::new(
        vec![cfg.cma.mean0; dim],
        &CmaEsConfig {
            sigma0: cfg.cma.sigma0,
            popsize: Some(cfg.n_workers),
            eigen_interval: cfg.cma.eigen_interval,
            seed: cfg.cma.seed,
        },
    )?;
    if let Some(dir) = &out.dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(HISTORY_FILE), history_header(cfg.n_workers) + "\n")?;
        std::fs::write(dir.join(TIMING_FILE), "generation,wall_time_s\n")?;
    }
    let initial = pipeline.weights_from(cfg.action_mode(), &vec![cfg.cma.mean0; dim])?;
    run_loop(cfg, &pipeline, es, initial, None, out)
}

/// Continues training from a checkpoint written by [`train`] with the same
/// configuration.
pub fn resume(cfg: &TrainConfig, ckpt: &Checkpoint, out: &TrainOutput) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ckpt.model != cfg.model_spec() {
        return Err(Error::Checkpoint("checkpoint model does not match the configuration".into()));
    }
    let es = match &ckpt.optimizer {
        Some(OptimizerBlob(es)) => es.clone(),
        None => return Err(Error::Checkpoint("checkpoint has no optimizer state to resume from".into())),
    };
    let pipeline = Pipeline::build(&ckpt.model)?;
    run_loop(cfg, &pipeline, es, ckpt.controller.clone(), ckpt.best_score, out)
}

fn run_loop(
    cfg: &TrainConfig,
    pipeline: &Pipeline,
    mut es: CmaEs,
    mut best: ControllerWeights,
    mut best_score: Option<f64>,
    out: &TrainOutput,
) -> Result<TrainOutcome> {
    let mut history = Vec::new();
    while es.generation() < cfg.generations {
        let generation = es.generation();
        let started = Instant::now();
        let mut candidates = es.ask();
        let scores = score_population(pipeline, &candidates, cfg, generation)?;
        for (c, s) in candidates.iter_mut().zip(&scores) {
            c.fitness = Some(*s);
        }
        let top = (0..scores.len())
            .reduce(|a, b| if scores[b] > scores[a] { b } else { a })
            .expect("population is non-empty");
        if best_score.is_none_or(|b| scores[top] > b) {
            best_score = Some(scores[top]);
            best = pipeline.weights_from(cfg.action_mode(), &candidates[top].params)?;
        }
        es.tell(&candidates, Objective::Maximize)?;
        let report = GenerationReport {
            generation,
            best_mean: scores[top],
            best_candidate_params: candidates[top].params.clone(),
            running_best: best_score.expect("set above"),
            scores,
            wall_time: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "generation {generation}: best {:.3}, running best {:.3}, {:.2}s",
            report.best_mean,
            report.running_best,
            report.wall_time
        );
        if let Some(dir) = &out.dir {
            write_generation(dir, cfg, &report, &es, &best, best_score, &out.config_text)?;
        }
        let reached = cfg.target_score.is_some_and(|t| report.best_mean >= t);
        history.push(report);
        if reached {
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        best_score,
        history,
    })
}

fn score_population(pipeline: &Pipeline, candidates: &[Candidate], cfg: &TrainConfig, generation: usize) -> Result<Vec<f64>> {
    let score = |c: &Candidate| score_candidate(pipeline, &c.params, cfg, c.id, generation);
    if cfg.parallel {
        candidates.par_iter().map(score).collect()
    } else {
        candidates.iter().map(score).collect()
    }
}

fn write_generation(
    dir: &Path,
    cfg: &TrainConfig,
    report: &GenerationReport,
    es: &CmaEs,
    best: &ControllerWeights,
    best_score: Option<f64>,
    config_text: &str,
) -> Result<()> {
    use std::io::Write;
    let ckpt = Checkpoint::new(
        cfg.model_spec(),
        best.clone(),
        Some(OptimizerBlob(es.clone())),
        es.generation() as u64,
        best_score,
        config_text,
    );
    let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    ckpt.save(&tmp)?;
    std::fs::rename(&tmp, dir.join(CHECKPOINT_FILE))?;
    let mut f = std::fs::OpenOptions::new().append(true).create(true).open(dir.join(HISTORY_FILE))?;
    writeln!(f, "{}", report.csv_row())?;
    let mut f = std::fs::OpenOptions::new().append(true).create(true).open(dir.join(TIMING_FILE))?;
    writeln!(f, "{},{:.6}", report.generation, report.wall_time)?;
    Ok(())
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Plays `trials` fresh evaluation episodes and returns the mean score and
/// population standard deviation.
pub fn evaluate_generalization(
    pipeline: &Pipeline,
    weights: &ControllerWeights,
    cfg: &TrainConfig,
    trials: usize,
) -> Result<(f64, f64)> {
    Ok(mean_std(&evaluation_scores(pipeline, weights, cfg, trials)?))
}

/// Per-trial scores behind [`evaluate_generalization`].
pub fn evaluation_scores(pipeline: &Pipeline, weights: &ControllerWeights, cfg: &TrainConfig, trials: usize) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(Error::invalid("evaluation needs at least one trial"));
    }
    let play = |t: usize| {
        pipeline
            .play_episode(weights, &cfg.env, evaluation_episode_seed(cfg.eval_seed, t), |_| {})
            .map(|o| o.score)
    };
    if cfg.parallel {
        (0..trials).into_par_iter().map(play).collect()
    } else {
        (0..trials).map(play).collect()
    }
}

/// Score of a uniformly random policy on one episode.
pub fn random_policy_episode(env_cfg: &EnvConfig, episode_seed: u64) -> Result<f64> {
    let (mut env, _) = Env::reset(env_cfg, episode_seed)?;
    let mut rng = Rng::new(derive_seed(&[RANDOM_POLICY_NAMESPACE, episode_seed]));
    let mut score = 0.0;
    while !env.is_done() {
        score += env.step(&random_action(env_cfg.kind, &mut rng))?.reward;
    }
    Ok(score)
}

/// Random-policy scores on the evaluation seeds, the comparison floor for
/// trained controllers.
pub fn random_baseline_scores(cfg: &TrainConfig, trials: usize) -> Result<Vec<f64>> {
    (0..trials)
        .map(|t| random_policy_episode(&cfg.env, evaluation_episode_seed(cfg.eval_seed, t)))
        .collect()
}
