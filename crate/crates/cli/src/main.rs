//! `rcrc`: train, evaluate and inspect reservoir-computing controllers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rcrc_core::envs::Env;
use rcrc_core::fixed_conv::{preprocess, Tensor3};
use rcrc_core::persist::{canonical_text, Checkpoint, ConfigFile};
use rcrc_core::trainer::{
    evaluate_generalization, mean_std, random_baseline_scores, resume, train, Pipeline, TrainConfig, TrainOutput,
    CHECKPOINT_FILE, HISTORY_FILE,
};

/// Root for run directories when `--out` is not given.
const OUTPUT_ROOT_VAR: &str = "RCRC_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "rcrc", version, about = "Fixed random CNN + echo state network + CMA-ES controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a controller; writes history.csv, timing.csv and checkpoint.bin.
    Train {
        config: PathBuf,
        /// Override a config key, e.g. `--set train.generations=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory. Defaults to `$RCRC_OUTPUT_ROOT/<config name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written with the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Average score of a checkpoint's controller over fresh trials.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        /// Also report the random-policy baseline on the same trials.
        #[arg(long)]
        baseline: bool,
    },
    /// Play one episode and dump its frames and a trace CSV.
    Rollout {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-layer activation images and the feature vector for the
    /// first frames of an episode.
    DumpFeatures {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time feature extraction and the reservoir step per frame.
    Bench {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 200)]
        frames: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            overrides,
            out,
            resume: from,
        } => cmd_train(&config, &overrides, out, from.as_deref()),
        Command::Eval {
            checkpoint,
            trials,
            baseline,
        } => cmd_eval(&checkpoint, trials, baseline),
        Command::Rollout { checkpoint, seed, out } => cmd_rollout(&checkpoint, seed, &out),
        Command::DumpFeatures {
            config,
            overrides,
            seed,
            frames,
            out,
        } => cmd_dump_features(&config, &overrides, seed, frames, &out),
        Command::Bench {
            config,
            overrides,
            frames,
        } => cmd_bench(&config, &overrides, frames),
    }
}

fn load_config(path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut file = ConfigFile::parse(&text).with_context(|| format!("in {}", path.display()))?;
    for o in overrides {
        file.set(o)?;
    }
    Ok(file.to_train_config().with_context(|| format!("in {}", path.display()))?)
}

fn config_of(ckpt: &Checkpoint) -> Result<TrainConfig> {
    ConfigFile::parse(&ckpt.config_text)
        .and_then(|f| f.to_train_config())
        .context("checkpoint carries an unreadable configuration")
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, TrainConfig, Pipeline)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let cfg = config_of(&ckpt)?;
    let pipeline = Pipeline::build(&ckpt.model)?;
    Ok((ckpt, cfg, pipeline))
}

fn cmd_train(path: &Path, overrides: &[String], out: Option<PathBuf>, from: Option<&Path>) -> Result<()> {
    let cfg = load_config(path, overrides)?;
    let dir = match out {
        Some(d) => d,
        None => {
            let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(path.file_stem().unwrap_or_default())
        }
    };
    let output = TrainOutput {
        dir: Some(dir.clone()),
        config_text: canonical_text(&cfg),
    };
    let outcome = match from {
        Some(ckpt_path) => {
            let ckpt = Checkpoint::load(ckpt_path).with_context(|| format!("loading {}", ckpt_path.display()))?;
            ckpt.check_config(&output.config_text)?;
            resume(&cfg, &ckpt, &output)?
        }
        None => train(&cfg, &output)?,
    };
    match outcome.best_score {
        Some(s) => println!("best={s} generations={}", outcome.history.len()),
        None => println!("best=none generations=0"),
    }
    println!("history={}", dir.join(HISTORY_FILE).display());
    if !outcome.history.is_empty() || from.is_some() {
        println!("checkpoint={}", dir.join(CHECKPOINT_FILE).display());
    }
    Ok(())
}

fn cmd_eval(path: &Path, trials: Option<usize>, baseline: bool) -> Result<()> {
    let (ckpt, cfg, pipeline) = load_checkpoint(path)?;
    let trials = trials.unwrap_or(cfg.eval_trials);
    let (mean, std) = evaluate_generalization(&pipeline, &ckpt.controller, &cfg, trials)?;
    println!("mean={mean} std={std} trials={trials}");
    if baseline {
        let (mean, std) = mean_std(&random_baseline_scores(&cfg, trials)?);
        println!("baseline_mean={mean} baseline_std={std} trials={trials}");
    }
    Ok(())
}

fn save_rgb(path: &Path, width: usize, height: usize, data: Vec<u8>) -> Result<()> {
    let img = image::RgbImage::from_raw(width as u32, height as u32, data).context("frame buffer has the wrong size")?;
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

fn cmd_rollout(path: &Path, seed: u64, out: &Path) -> Result<()> {
    let (ckpt, cfg, pipeline) = load_checkpoint(path)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (_, first) = Env::reset(&cfg.env, seed)?;
    save_rgb(&out.join("frame_00000.ppm"), first.width, first.height, first.data)?;
    let mut trace = String::from("step,action,reward\n");
    let mut failure = None;
    let outcome = pipeline.play_episode(&ckpt.controller, &cfg.env, seed, |r| {
        writeln!(trace, "{},{},{}", r.step, r.action, r.result.reward).expect("writing to a String");
        if failure.is_none() {
            let f = &r.result.frame;
            let name = out.join(format!("frame_{:05}.ppm", r.step + 1));
            failure = save_rgb(&name, f.width, f.height, f.data.clone()).err();
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    std::fs::write(out.join("trace.csv"), trace).context("writing trace.csv")?;
    println!("score={} steps={}", outcome.score, outcome.steps);
    Ok(())
}

/// Maps activations in [-1, 1] to grey levels.
fn save_channel(path: &Path, t: &Tensor3, c: usize) -> Result<()> {
    let data = t.channel(c).iter().map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8).collect();
    let img = image::GrayImage::from_raw(t.width as u32, t.height as u32, data).context("activation has the wrong size")?;
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

fn cmd_dump_features(path: &Path, overrides: &[String], seed: u64, frames: usize, out: &Path) -> Result<()> {
    if frames == 0 {
        bail!("--frames must be at least 1");
    }
    let cfg = load_config(path, overrides)?;
    let pipeline = Pipeline::build(&cfg.model_spec())?;
    let mut reservoir = pipeline.reservoir().clone();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (mut env, mut raw) = Env::reset(&cfg.env, seed)?;
    let mut features = String::new();
    let mut states = String::new();
    for i in 0..frames {
        save_rgb(&out.join(format!("frame_{i:03}.ppm")), raw.width, raw.height, raw.data.clone())?;
        let act = pipeline.extractor().forward(&preprocess(&raw)?);
        for (l, t) in act.conv.iter().enumerate() {
            for c in 0..t.channels {
                save_channel(&out.join(format!("frame_{i:03}_layer{l}_ch{c:02}.pgm")), t, c)?;
            }
        }
        let x = reservoir.step(&act.features)?;
        writeln!(features, "{}", join(&act.features)).expect("writing to a String");
        writeln!(states, "{}", join(x)).expect("writing to a String");
        if i + 1 == frames || env.is_done() {
            break;
        }
        let a = env.heuristic_action();
        raw = env.step(&a)?.frame;
    }
    std::fs::write(out.join("features.csv"), features)?;
    std::fs::write(out.join("reservoir.csv"), states)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn cmd_bench(path: &Path, overrides: &[String], frames: usize) -> Result<()> {
    if frames == 0 {
        bail!("--frames must be at least 1");
    }
    let cfg = load_config(path, overrides)?;
    let pipeline = Pipeline::build(&cfg.model_spec())?;
    let mut reservoir = pipeline.reservoir().clone();
    let (mut env, mut raw) = Env::reset(&cfg.env, cfg.env.seed)?;
    let mut inputs = Vec::with_capacity(frames);
    while inputs.len() < frames {
        inputs.push(preprocess(&raw)?);
        if env.is_done() {
            (env, raw) = Env::reset(&cfg.env, cfg.env.seed.wrapping_add(inputs.len() as u64))?;
        } else {
            let a = env.heuristic_action();
            raw = env.step(&a)?.frame;
        }
    }
    let t = Instant::now();
    let feats: Vec<Vec<f64>> = inputs.iter().map(|f| pipeline.extractor().extract(f)).collect();
    let extract = t.elapsed().as_secs_f64() / frames as f64;
    let t = Instant::now();
    for f in &feats {
        reservoir.step(f)?;
    }
    let step = t.elapsed().as_secs_f64() / frames as f64;
    println!("extract_ms={:.4} reservoir_ms={:.4} frames={frames}", extract * 1e3, step * 1e3);
    Ok(())
}
