//! Flat `key = value` configuration with dotted keys and `#` comments.
//!
//! ```text
//! # minimal dodge-ball run
//! env.kind = dodge_ball
//! train.workers = 8
//! conv.filters = 8,16,32
//! ```
//!
//! Only `env.kind` is required; every other key has a default. Lists are
//! comma separated. Overrides given as `key=value` use the same grammar.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::envs::{EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::fixed_conv::ConvLayerSpec;
use crate::trainer::TrainConfig;

/// Parsed entries, each remembering the line it came from (0 for
/// overrides).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file = ConfigFile::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = split_entry(content).map_err(|msg| Error::Config { line, msg })?;
            if let Some((first, _)) = file.entries.get(&key) {
                return Err(Error::Config {
                    line,
                    msg: format!("duplicate key `{key}` (first set on line {first})"),
                });
            }
            file.entries.insert(key, (line, value));
        }
        Ok(file)
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) =
            split_entry(assignment.trim()).map_err(|msg| Error::ConfigKey(format!("override `{assignment}`: {msg}")))?;
        self.entries.insert(key, (0, value));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// Resolves the entries against the training schema.
    pub fn to_train_config(&self) -> Result<TrainConfig> {
        let (kind_line, kind) = self
            .entries
            .get("env.kind")
            .ok_or_else(|| Error::ConfigKey("missing required key `env.kind`".into()))?;
        let kind = EnvKind::parse(kind).ok_or_else(|| located(*kind_line, format!("env.kind: unknown environment `{kind}` (expected track_runner or dodge_ball)")))?;
        let mut cfg = TrainConfig::new(EnvConfig::new(kind));
        // Layer lists are applied together once all three are known.
        let mut layers: [Option<(usize, Vec<usize>)>; 3] = [None, None, None];
        for (key, (line, value)) in &self.entries {
            let slot = match key.as_str() {
                "env.kind" => continue,
                "conv.kernels" => Some(0),
                "conv.filters" => Some(1),
                "conv.strides" => Some(2),
                _ => None,
            };
            if let Some(s) = slot {
                layers[s] = Some((*line, parse_list(value).map_err(|m| located(*line, format!("{key}: {m}")))?));
                continue;
            }
            apply(&mut cfg, key, value).map_err(|m| located(*line, m))?;
        }
        if layers.iter().any(Option::is_some) {
            let line = layers.iter().flatten().map(|(l, _)| *l).max().unwrap_or(0);
            let current = |i: usize| -> Vec<usize> {
                cfg.conv
                    .layers
                    .iter()
                    .map(|l| [l.filter_size, l.out_channels, l.stride][i])
                    .collect()
            };
            let [k, f, s] = [0, 1, 2].map(|i| layers[i].clone().map(|(_, v)| v).unwrap_or_else(|| current(i)));
            if k.len() != f.len() || k.len() != s.len() {
                return Err(located(
                    line,
                    format!(
                        "conv.kernels, conv.filters and conv.strides must have equal lengths ({}, {}, {})",
                        k.len(),
                        f.len(),
                        s.len()
                    ),
                ));
            }
            cfg.conv.layers = (0..k.len())
                .map(|i| ConvLayerSpec {
                    filter_size: k[i],
                    out_channels: f[i],
                    stride: s[i],
                })
                .collect();
        }
        cfg.validate().map_err(|e| match e {
            Error::InvalidInput(m) => Error::ConfigKey(m),
            other => other,
        })?;
        Ok(cfg)
    }
}

fn located(line: usize, msg: String) -> Error {
    if line == 0 {
        Error::ConfigKey(format!("override {msg}"))
    } else {
        Error::Config { line, msg }
    }
}

fn split_entry(content: &str) -> std::result::Result<(String, String), String> {
    let (key, value) = content
        .split_once('=')
        .ok_or_else(|| format!("expected `key = value`, found `{content}`"))?;
    let (key, value) = (key.trim(), value.trim());
    let valid_key = !key.is_empty()
        && key
            .split('.')
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
    if !valid_key {
        return Err(format!("invalid key `{key}`"));
    }
    if value.is_empty() {
        return Err(format!("key `{key}` has no value"));
    }
    Ok((key.to_string(), value.to_string()))
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    value.parse().map_err(|e| format!("{key}: cannot parse `{value}`: {e}"))
}

fn parse_list(value: &str) -> std::result::Result<Vec<usize>, String> {
    value
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad list entry `{}`: {e}", p.trim())))
        .collect()
}

fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    macro_rules! set {
        ($field:expr) => {
            $field = parse_value(key, value)?
        };
    }
    let t = &mut cfg.env.track;
    let d = &mut cfg.env.dodge;
    match key {
        "env.max_steps" => set!(cfg.env.max_steps),
        "env.seed" => set!(cfg.env.seed),
        "env.track.min_tiles" => set!(t.min_tiles),
        "env.track.max_tiles" => set!(t.max_tiles),
        "env.track.control_points" => set!(t.control_points),
        "env.track.base_radius" => set!(t.base_radius),
        "env.track.radial_jitter" => set!(t.radial_jitter),
        "env.track.half_width" => set!(t.half_width),
        "env.track.margin" => set!(t.margin),
        "env.track.dt" => set!(t.dt),
        "env.track.steer_gain" => set!(t.steer_gain),
        "env.track.accel_gain" => set!(t.accel_gain),
        "env.track.brake_gain" => set!(t.brake_gain),
        "env.track.drag" => set!(t.drag),
        "env.track.pixels_per_unit" => set!(t.pixels_per_unit),
        "env.dodge.agent_width" => set!(d.agent_width),
        "env.dodge.agent_height" => set!(d.agent_height),
        "env.dodge.agent_stride" => set!(d.agent_stride),
        "env.dodge.projectile_size" => set!(d.projectile_size),
        "env.dodge.spawn_rate" => set!(d.spawn_rate),
        "env.dodge.aimed_fraction" => set!(d.aimed_fraction),
        "env.dodge.min_speed" => set!(d.min_speed),
        "env.dodge.max_speed" => set!(d.max_speed),
        "train.workers" => set!(cfg.n_workers),
        "train.episodes" => set!(cfg.episodes_per_candidate),
        "train.generations" => set!(cfg.generations),
        "train.eval_trials" => set!(cfg.eval_trials),
        "train.eval_seed" => set!(cfg.eval_seed),
        "train.parallel" => set!(cfg.parallel),
        "train.target_score" => {
            cfg.target_score = if value == "none" { None } else { Some(parse_value(key, value)?) }
        }
        "conv.dense_out" => set!(cfg.conv.dense_out),
        "conv.weight_stddev" => set!(cfg.conv.conv_weight_stddev),
        "conv.seed" => set!(cfg.extractor_seed),
        "reservoir.size" => set!(cfg.reservoir.state_dim),
        "reservoir.leak_rate" => set!(cfg.reservoir.leak_rate),
        "reservoir.sparsity" => set!(cfg.reservoir.sparsity),
        "reservoir.spectral_radius" => set!(cfg.reservoir.spectral_radius),
        "reservoir.weight_stddev" => set!(cfg.reservoir.weight_stddev),
        "reservoir.seed" => set!(cfg.reservoir_seed),
        "cma.sigma0" => set!(cfg.cma.sigma0),
        "cma.mean0" => set!(cfg.cma.mean0),
        "cma.eigen_interval" => set!(cfg.cma.eigen_interval),
        "cma.seed" => set!(cfg.cma.seed),
        _ => return Err(format!("unknown key `{key}`")),
    }
    Ok(())
}

/// Every key with its resolved value, sorted by key. Parsing this text
/// gives back the same configuration, and its hash identifies the run.
pub fn canonical_text(cfg: &TrainConfig) -> String {
    let join = |f: fn(&ConvLayerSpec) -> usize| {
        cfg.conv
            .layers
            .iter()
            .map(|l| f(l).to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let t = &cfg.env.track;
    let d = &cfg.env.dodge;
    let entries: Vec<(&str, String)> = vec![
        ("env.kind", cfg.env.kind.name().to_string()),
        ("env.max_steps", cfg.env.max_steps.to_string()),
        ("env.seed", cfg.env.seed.to_string()),
        ("env.track.min_tiles", t.min_tiles.to_string()),
        ("env.track.max_tiles", t.max_tiles.to_string()),
        ("env.track.control_points", t.control_points.to_string()),
        ("env.track.base_radius", t.base_radius.to_string()),
        ("env.track.radial_jitter", t.radial_jitter.to_string()),
        ("env.track.half_width", t.half_width.to_string()),
        ("env.track.margin", t.margin.to_string()),
        ("env.track.dt", t.dt.to_string()),
        ("env.track.steer_gain", t.steer_gain.to_string()),
        ("env.track.accel_gain", t.accel_gain.to_string()),
        ("env.track.brake_gain", t.brake_gain.to_string()),
        ("env.track.drag", t.drag.to_string()),
        ("env.track.pixels_per_unit", t.pixels_per_unit.to_string()),
        ("env.dodge.agent_width", d.agent_width.to_string()),
        ("env.dodge.agent_height", d.agent_height.to_string()),
        ("env.dodge.agent_stride", d.agent_stride.to_string()),
        ("env.dodge.projectile_size", d.projectile_size.to_string()),
        ("env.dodge.spawn_rate", d.spawn_rate.to_string()),
        ("env.dodge.aimed_fraction", d.aimed_fraction.to_string()),
        ("env.dodge.min_speed", d.min_speed.to_string()),
        ("env.dodge.max_speed", d.max_speed.to_string()),
        ("train.workers", cfg.n_workers.to_string()),
        ("train.episodes", cfg.episodes_per_candidate.to_string()),
        ("train.generations", cfg.generations.to_string()),
        ("train.eval_trials", cfg.eval_trials.to_string()),
        ("train.eval_seed", cfg.eval_seed.to_string()),
        ("train.parallel", cfg.parallel.to_string()),
        ("train.target_score", cfg.target_score.map_or("none".to_string(), |v| v.to_string())),
        ("conv.kernels", join(|l| l.filter_size)),
        ("conv.filters", join(|l| l.out_channels)),
        ("conv.strides", join(|l| l.stride)),
        ("conv.dense_out", cfg.conv.dense_out.to_string()),
        ("conv.weight_stddev", cfg.conv.conv_weight_stddev.to_string()),
        ("conv.seed", cfg.extractor_seed.to_string()),
        ("reservoir.size", cfg.reservoir.state_dim.to_string()),
        ("reservoir.leak_rate", cfg.reservoir.leak_rate.to_string()),
        ("reservoir.sparsity", cfg.reservoir.sparsity.to_string()),
        ("reservoir.spectral_radius", cfg.reservoir.spectral_radius.to_string()),
        ("reservoir.weight_stddev", cfg.reservoir.weight_stddev.to_string()),
        ("reservoir.seed", cfg.reservoir_seed.to_string()),
        ("cma.sigma0", cfg.cma.sigma0.to_string()),
        ("cma.mean0", cfg.cma.mean0.to_string()),
        ("cma.eigen_interval", cfg.cma.eigen_interval.to_string()),
        ("cma.seed", cfg.cma.seed.to_string()),
    ];
    let mut sorted = entries;
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    sorted.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
