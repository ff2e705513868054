//! Binary checkpoint: magic, format version, then tagged length-prefixed
//! sections. All integers and floats are little-endian; floats are f64.
//!
//! ```text
//! "RCRCCKPT" u32:version
//! repeat { [u8;4]:tag u64:len payload[len] }
//! ```
//!
//! Sections, in write order: `PRNG` (generator id), `CONV` (layout id,
//! extractor spec and seed), `RESV` (reservoir spec and seed), `META`
//! (generation, best score, config hash and text), optionally `OPTM`
//! (optimizer state), and `CTRL` (action mode, then `W_out` as
//! `u32 rows, u32 cols` followed by `rows·cols` floats, row-major).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use super::codec::{Reader, Writer};
use crate::cma_es::{CmaEs, StrategyParams};
use crate::controller::{ActionMode, ControllerWeights};
use crate::error::{Error, Result};
use crate::fixed_conv::{ConvLayerSpec, ConvSpec, LAYOUT_ID};
use crate::reservoir::ReservoirSpec;
use crate::rng::{Rng, RngState, PRNG_ID};

pub const MAGIC: &[u8; 8] = b"RCRCCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild the fixed parts of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub conv: ConvSpec,
    pub extractor_seed: u64,
    pub reservoir: ReservoirSpec,
    pub reservoir_seed: u64,
}

/// Optimizer state stored alongside the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerBlob(pub CmaEs);

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub prng_id: String,
    pub layout: String,
    pub model: ModelSpec,
    pub controller: ControllerWeights,
    pub optimizer: Option<OptimizerBlob>,
    pub generation: u64,
    pub best_score: Option<f64>,
    pub config_hash: [u8; 32],
    pub config_text: String,
}

/// SHA-256 of a configuration's canonical text.
pub fn config_hash(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

impl Checkpoint {
    pub fn new(
        model: ModelSpec,
        controller: ControllerWeights,
        optimizer: Option<OptimizerBlob>,
        generation: u64,
        best_score: Option<f64>,
        config_text: &str,
    ) -> Self {
        Checkpoint {
            prng_id: PRNG_ID.to_string(),
            layout: LAYOUT_ID.to_string(),
            model,
            controller,
            optimizer,
            generation,
            best_score,
            config_hash: config_hash(config_text),
            config_text: config_text.to_string(),
        }
    }

    /// Fails unless the checkpoint was written for `config_text`.
    pub fn check_config(&self, config_text: &str) -> Result<()> {
        if config_hash(config_text) != self.config_hash {
            return Err(Error::Checkpoint(format!(
                "configuration hash {} does not match the checkpoint's {}",
                hex(&config_hash(config_text)),
                hex(&self.config_hash)
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let mut section = |tag: &[u8; 4], w: Writer| {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(w.buf.len() as u64).to_le_bytes());
            out.extend_from_slice(&w.buf);
        };

        let mut w = Writer::default();
        w.str(&self.prng_id);
        section(b"PRNG", w);

        let mut w = Writer::default();
        w.str(&self.layout);
        w.u64(self.model.extractor_seed);
        let conv = &self.model.conv;
        w.u32(conv.layers.len() as u32);
        for l in &conv.layers {
            w.u32(l.filter_size as u32);
            w.u32(l.out_channels as u32);
            w.u32(l.stride as u32);
        }
        w.u32(conv.dense_out as u32);
        w.f64(conv.conv_weight_stddev);
        section(b"CONV", w);

        let mut w = Writer::default();
        let r = &self.model.reservoir;
        w.u64(self.model.reservoir_seed);
        w.u32(r.input_dim as u32);
        w.u32(r.state_dim as u32);
        w.f64(r.leak_rate);
        w.f64(r.sparsity);
        w.f64(r.spectral_radius);
        w.f64(r.weight_stddev);
        w.bool(r.bias_input);
        section(b"RESV", w);

        let mut w = Writer::default();
        w.u64(self.generation);
        w.opt_f64(self.best_score);
        w.buf.extend_from_slice(&self.config_hash);
        w.str(&self.config_text);
        section(b"META", w);

        if let Some(OptimizerBlob(es)) = &self.optimizer {
            let mut w = Writer::default();
            write_optimizer(&mut w, es);
            section(b"OPTM", w);
        }

        let mut w = Writer::default();
        let c = &self.controller;
        w.u8(c.mode().code());
        w.u32(c.n_actions() as u32);
        w.u32(c.input_dim() as u32);
        for &v in c.as_flat() {
            w.f64(v);
        }
        section(b"CTRL", w);
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut top = Reader::new(data, "header");
        if top.bytes(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = top.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads version {FORMAT_VERSION})"
            )));
        }
        let (mut prng, mut conv, mut resv, mut meta, mut optm, mut ctrl) = (None, None, None, None, None, None);
        while top.remaining() > 0 {
            let tag: [u8; 4] = top.bytes(4)?.try_into().unwrap();
            let name = section_name(&tag)?;
            let len = top.usize()?;
            if top.remaining() < len {
                return Err(Error::Checkpoint(format!(
                    "{name} section truncated: expected {len} bytes, found {}",
                    top.remaining()
                )));
            }
            let payload = top.bytes(len)?;
            let slot = match name {
                "PRNG" => &mut prng,
                "CONV" => &mut conv,
                "RESV" => &mut resv,
                "META" => &mut meta,
                "OPTM" => &mut optm,
                _ => &mut ctrl,
            };
            if slot.replace(payload).is_some() {
                return Err(Error::Checkpoint(format!("duplicate {name} section")));
            }
        }

        let mut r = Reader::new(need(prng, "PRNG")?, "PRNG");
        let prng_id = r.str()?;
        r.finish()?;
        if prng_id != PRNG_ID {
            return Err(Error::Checkpoint(format!(
                "checkpoint uses generator {prng_id}, this build provides {PRNG_ID}"
            )));
        }

        let mut r = Reader::new(need(conv, "CONV")?, "CONV");
        let layout = r.str()?;
        if layout != LAYOUT_ID {
            return Err(Error::Checkpoint(format!("unknown weight layout {layout}")));
        }
        let extractor_seed = r.u64()?;
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            layers.push(ConvLayerSpec {
                filter_size: r.u32()? as usize,
                out_channels: r.u32()? as usize,
                stride: r.u32()? as usize,
            });
        }
        let conv_spec = ConvSpec {
            layers,
            dense_out: r.u32()? as usize,
            conv_weight_stddev: r.f64()?,
        };
        r.finish()?;

        let mut r = Reader::new(need(resv, "RESV")?, "RESV");
        let reservoir_seed = r.u64()?;
        let reservoir = ReservoirSpec {
            input_dim: r.u32()? as usize,
            state_dim: r.u32()? as usize,
            leak_rate: r.f64()?,
            sparsity: r.f64()?,
            spectral_radius: r.f64()?,
            weight_stddev: r.f64()?,
            bias_input: r.bool()?,
        };
        r.finish()?;

        let mut r = Reader::new(need(meta, "META")?, "META");
        let generation = r.u64()?;
        let best_score = r.opt_f64()?;
        let stored_hash: [u8; 32] = r.bytes(32)?.try_into().unwrap();
        let config_text = r.str()?;
        r.finish()?;

        let optimizer = match optm {
            Some(p) => {
                let mut r = Reader::new(p, "OPTM");
                let es = read_optimizer(&mut r)?;
                r.finish()?;
                Some(OptimizerBlob(es))
            }
            None => None,
        };

        let mut r = Reader::new(need(ctrl, "CTRL")?, "CTRL");
        let mode = ActionMode::from_code(r.u8()?).ok_or_else(|| r.error("unknown action mode"))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows != mode.n_actions() {
            return Err(r.error(format!("{} controller must have {} rows, found {rows}", mode.name(), mode.n_actions())));
        }
        let expected = rows * cols * 8;
        if r.remaining() != expected {
            return Err(Error::Checkpoint(format!(
                "W_out of {rows}x{cols} needs {expected} bytes, CTRL section has {}",
                r.remaining()
            )));
        }
        let weights = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let controller =
            ControllerWeights::from_flat(mode, cols, weights).map_err(|e| Error::Checkpoint(format!("CTRL: {e}")))?;

        let ckpt = Checkpoint {
            prng_id,
            layout,
            model: ModelSpec {
                conv: conv_spec,
                extractor_seed,
                reservoir,
                reservoir_seed,
            },
            controller,
            optimizer,
            generation,
            best_score,
            config_hash: stored_hash,
            config_text,
        };
        if config_hash(&ckpt.config_text) == ckpt.config_hash {
            Ok(ckpt)
        } else {
            Err(Error::Checkpoint("embedded configuration does not match its stored hash".into()))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn need<'a>(s: Option<&'a [u8]>, name: &str) -> Result<&'a [u8]> {
    s.ok_or_else(|| Error::Checkpoint(format!("missing {name} section")))
}

fn section_name(tag: &[u8; 4]) -> Result<&'static str> {
    Ok(match tag {
        b"PRNG" => "PRNG",
        b"CONV" => "CONV",
        b"RESV" => "RESV",
        b"META" => "META",
        b"OPTM" => "OPTM",
        b"CTRL" => "CTRL",
        _ => return Err(Error::Checkpoint(format!("unknown section tag {:?}", String::from_utf8_lossy(tag)))),
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_optimizer(w: &mut Writer, es: &CmaEs) {
    let n = es.dim;
    w.usize(n);
    w.f64s(es.mean.as_slice());
    w.f64(es.sigma);
    w.f64s(es.cov.as_slice());
    w.f64s(es.path_sigma.as_slice());
    w.f64s(es.path_c.as_slice());
    w.usize(es.generation);
    let p = &es.params;
    w.usize(p.popsize);
    w.usize(p.mu);
    w.f64s(&p.weights);
    for v in [p.mu_eff, p.c_sigma, p.d_sigma, p.c_c, p.c_1, p.c_mu, p.chi_n] {
        w.f64(v);
    }
    w.usize(es.eigen_interval);
    w.usize(es.eigen_generation);
    w.f64s(es.basis.as_slice());
    w.f64s(es.scales.as_slice());
    let s = es.rng.state();
    w.u64(s.state);
    w.opt_f64(s.spare_normal);
}

fn read_optimizer(r: &mut Reader<'_>) -> Result<CmaEs> {
    let n = r.usize()?;
    let vector = |r: &mut Reader<'_>, len: usize, what: &str| -> Result<Vec<f64>> {
        let v = r.f64s()?;
        if v.len() != len {
            return Err(r.error(format!("{what} has {} entries, expected {len}", v.len())));
        }
        Ok(v)
    };
    let nn = n.checked_mul(n).ok_or_else(|| r.error("dimension overflows"))?;
    let mean = vector(r, n, "mean")?;
    let sigma = r.f64()?;
    let cov = vector(r, nn, "covariance")?;
    let path_sigma = vector(r, n, "p_sigma")?;
    let path_c = vector(r, n, "p_c")?;
    let generation = r.usize()?;
    let popsize = r.usize()?;
    let mu = r.usize()?;
    let weights = vector(r, mu, "weights")?;
    let mut consts = [0.0; 7];
    for c in &mut consts {
        *c = r.f64()?;
    }
    let [mu_eff, c_sigma, c_d, c_c, c_1, c_mu, chi_n] = consts;
    let eigen_interval = r.usize()?;
    let eigen_generation = r.usize()?;
    let basis = vector(r, nn, "eigenvectors")?;
    let scales = vector(r, n, "eigenvalue roots")?;
    let rng = Rng::from_state(RngState {
        state: r.u64()?,
        spare_normal: r.opt_f64()?,
    });
    if n == 0 || popsize < 2 || mu == 0 || mu > popsize || eigen_interval == 0 || !(sigma > 0.0) {
        return Err(r.error("optimizer state is inconsistent"));
    }
    Ok(CmaEs {
        dim: n,
        mean: DVector::from_vec(mean),
        sigma,
        cov: DMatrix::from_vec(n, n, cov),
        path_sigma: DVector::from_vec(path_sigma),
        path_c: DVector::from_vec(path_c),
        generation,
        params: StrategyParams {
            popsize,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma: c_d,
            c_c,
            c_1,
            c_mu,
            chi_n,
        },
        eigen_interval,
        basis: DMatrix::from_vec(n, n, basis),
        scales: DVector::from_vec(scales),
        eigen_generation,
        rng,
    })
}
