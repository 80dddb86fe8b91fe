//! Named model weights, initialization and checkpoint files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use emwave_tensor::{decode_tensors, encode_tensors, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Result, SurrogateError};

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    /// Uniform with the given standard deviation.
    Uniform(f64),
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn xavier(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

fn linear(out: &mut Vec<Entry>, name: &str, fan_in: usize, fan_out: usize, gain: f64) {
    let init = if gain == 0.0 {
        Init::Zeros
    } else {
        Init::Uniform(gain * xavier(fan_in, fan_out))
    };
    out.push(Entry {
        name: format!("{name}.w"),
        shape: vec![fan_in, fan_out],
        init,
    });
    out.push(Entry {
        name: format!("{name}.b"),
        shape: vec![fan_out],
        init: Init::Zeros,
    });
}

fn norm(out: &mut Vec<Entry>, name: &str, dim: usize) {
    out.push(Entry {
        name: format!("{name}.g"),
        shape: vec![dim],
        init: Init::Ones,
    });
    out.push(Entry {
        name: format!("{name}.b"),
        shape: vec![dim],
        init: Init::Zeros,
    });
}

fn layers(out: &mut Vec<Entry>, path: &str, cfg: &ModelConfig) {
    let h = cfg.hidden_dim;
    let inner = h * cfg.mlp_ratio;
    let branch = 1.0 / ((2 * cfg.depth.max(1)) as f64).sqrt();
    for l in 0..cfg.depth {
        let p = format!("{path}.layers.{l}");
        norm(out, &format!("{p}.ln1"), h);
        linear(out, &format!("{p}.attn.qkv"), h, 3 * h, 1.0);
        linear(out, &format!("{p}.attn.out"), h, h, branch);
        norm(out, &format!("{p}.ln2"), h);
        linear(out, &format!("{p}.mlp.fc1"), h, inner, 1.0);
        linear(out, &format!("{p}.mlp.fc2"), inner, h, branch);
    }
    if cfg.depth > 0 {
        norm(out, &format!("{path}.ln_f"), h);
    }
}

fn entries(cfg: &ModelConfig) -> Result<Vec<Entry>> {
    let layout = cfg.layout()?;
    let (h, p, m) = (cfg.hidden_dim, cfg.patch_len, cfg.window);
    let pos = |name: &str| Entry {
        name: name.to_string(),
        shape: vec![layout.n_patches, h],
        init: Init::Uniform(0.02),
    };
    let mut out = Vec::new();
    linear(&mut out, "spatial.embed", m * p, h, 1.0);
    out.push(pos("spatial.pos"));
    layers(&mut out, "spatial", cfg);
    linear(&mut out, "spatial.out", h, h, 1.0);
    if cfg.use_frequency_path {
        let r2 = 2 * cfg.fourier_modes;
        linear(&mut out, "freq.embed", m * r2, h, 1.0);
        out.push(pos("freq.pos"));
        layers(&mut out, "freq", cfg);
        linear(&mut out, "freq.modes", h, r2, 1.0);
        linear(&mut out, "freq.out", p, h, 1.0);
    }
    norm(&mut out, "head.ln", h);
    linear(&mut out, "head.proj", h, p, 0.0);
    Ok(out)
}

/// Ordered named tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
}

impl ModelParams {
    /// Seeded initialization; the output head starts at zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for e in entries(cfg)? {
            let t = match e.init {
                Init::Zeros => Tensor::zeros(&e.shape),
                Init::Ones => Tensor::full(&e.shape, 1.0),
                Init::Uniform(std) => {
                    let a = std * 3f64.sqrt();
                    Tensor::from_fn(&e.shape, |_| rng.gen_range(-a..a))
                }
            };
            names.push(e.name);
            tensors.push(Arc::new(t));
        }
        Ok(Self { names, tensors })
    }

    /// Builds from named tensors, checking names and shapes against `cfg`.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let expected = entries(cfg)?;
        if expected.len() != named.len() {
            return Err(SurrogateError::Checkpoint(format!(
                "{} tensors, config needs {}",
                named.len(),
                expected.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (e, (name, t)) in expected.into_iter().zip(named) {
            if e.name != name || e.shape != t.shape() {
                return Err(SurrogateError::Checkpoint(format!(
                    "tensor '{name}' {:?} does not match '{}' {:?}",
                    t.shape(),
                    e.name,
                    e.shape
                )));
            }
            if !t.is_finite() {
                return Err(SurrogateError::Checkpoint(format!("tensor '{name}' is not finite")));
            }
            names.push(name);
            tensors.push(Arc::new(t));
        }
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Arc<Tensor>] {
        &self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| self.tensors[i].as_ref())
    }

    /// Replaces one tensor; the shape must not change.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| SurrogateError::Checkpoint(format!("no tensor named '{name}'")))?;
        if self.tensors[i].shape() != t.shape() {
            return Err(SurrogateError::Shape(format!(
                "'{name}' is {:?}, got {:?}",
                self.tensors[i].shape(),
                t.shape()
            )));
        }
        self.tensors[i] = Arc::new(t);
        Ok(())
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.tensors[i])
    }

    /// Scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        self.names
            .iter()
            .cloned()
            .zip(self.tensors.iter().map(|t| t.as_ref().clone()))
            .collect()
    }
}

/// Affine standardization of field values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    /// Mean and population std over every value of `rows`.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for row in rows {
            for v in row {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Err(SurrogateError::Data("no values to normalize".into()));
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).max(0.0).sqrt();
        let norm = Self { mean, std };
        norm.validate()?;
        Ok(norm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(SurrogateError::TrainConfig(format!(
                "normalization std must be positive and finite, got mean {} std {}",
                self.mean, self.std
            )));
        }
        Ok(())
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// JSON sidecar stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub normalization: Normalization,
}

/// Sidecar path for a weights file: `best.emwt` → `best.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, params: &ModelParams) -> Result<()> {
    std::fs::write(path, encode_tensors(&params.named()))?;
    let mut json = serde_json::to_string_pretty(meta)?;
    json.push('\n');
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, ModelParams)> {
    let side = sidecar_path(path);
    let meta: CheckpointMeta = serde_json::from_str(
        &std::fs::read_to_string(&side)
            .map_err(|e| SurrogateError::Checkpoint(format!("cannot read sidecar {}: {e}", side.display())))?,
    )?;
    meta.model.validate()?;
    meta.normalization.validate()?;
    let named = decode_tensors(&std::fs::read(path)?)?;
    let params = ModelParams::from_named(&meta.model, named)?;
    Ok((meta, params))
}
