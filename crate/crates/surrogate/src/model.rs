//! Dual-path Fourier transformer: graph construction and inference.

use std::sync::Arc;

use emwave_tensor::{Graph, Tensor, Var};

use crate::config::ModelConfig;
use crate::error::{Result, SurrogateError};
use crate::params::{ModelParams, Normalization};
use crate::tokenizer::TokenLayout;

/// Lazily binds named parameters as graph leaves.
pub struct Binder<'p> {
    params: &'p ModelParams,
    vars: Vec<Option<Var>>,
}

impl<'p> Binder<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Self {
            params,
            vars: vec![None; params.len()],
        }
    }

    pub fn get(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        let i = self
            .params
            .index_of(name)
            .ok_or_else(|| SurrogateError::Config(format!("missing parameter '{name}'")))?;
        Ok(*self.vars[i].get_or_insert_with(|| g.param(self.params.tensors()[i].clone())))
    }

    /// `(parameter index, leaf)` for every parameter used so far.
    pub fn bound(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.vars.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)))
    }
}

fn linear(g: &mut Graph, b: &mut Binder, name: &str, x: Var) -> Result<Var> {
    let w = b.get(g, &format!("{name}.w"))?;
    let bias = b.get(g, &format!("{name}.b"))?;
    Ok(g.linear(x, w, bias)?)
}

fn norm(g: &mut Graph, b: &mut Binder, name: &str, x: Var) -> Result<Var> {
    let gamma = b.get(g, &format!("{name}.g"))?;
    let beta = b.get(g, &format!("{name}.b"))?;
    Ok(g.layer_norm(x, gamma, beta)?)
}

fn attention(g: &mut Graph, b: &mut Binder, name: &str, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (batch, tokens, h) = (shape[0], shape[1], cfg.hidden_dim);
    let (heads, dh) = (cfg.n_heads, cfg.head_dim());
    let qkv = linear(g, b, &format!("{name}.qkv"), x)?;
    let mut split = |offset: usize| -> Result<Var> {
        let part = g.slice(qkv, 2, offset, h)?;
        let part = g.reshape(part, &[batch, tokens, heads, dh])?;
        Ok(g.permute(part, &[0, 2, 1, 3])?)
    };
    let (q, k, v) = (split(0)?, split(h)?, split(2 * h)?);
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let weights = g.softmax(scores);
    let ctx = g.bmm(weights, v, false)?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[batch, tokens, h])?;
    linear(g, b, &format!("{name}.out"), ctx)
}

/// `depth` pre-norm transformer layers followed by the final norm.
fn layers(g: &mut Graph, b: &mut Binder, path: &str, cfg: &ModelConfig, mut h: Var) -> Result<Var> {
    for l in 0..cfg.depth {
        let p = format!("{path}.layers.{l}");
        let x = norm(g, b, &format!("{p}.ln1"), h)?;
        let a = attention(g, b, &format!("{p}.attn"), cfg, x)?;
        h = g.add(h, a)?;
        let x = norm(g, b, &format!("{p}.ln2"), h)?;
        let x = linear(g, b, &format!("{p}.mlp.fc1"), x)?;
        let x = g.gelu(x);
        let x = linear(g, b, &format!("{p}.mlp.fc2"), x)?;
        h = g.add(h, x)?;
    }
    if cfg.depth > 0 {
        h = norm(g, b, &format!("{path}.ln_f"), h)?;
    }
    Ok(h)
}

fn check_tokens(g: &Graph, cfg: &ModelConfig, tokens: Var) -> Result<(usize, usize)> {
    let shape = g.shape(tokens);
    let layout = cfg.layout()?;
    let want = cfg.window * cfg.patch_len;
    if shape.len() != 3 || shape[1] != layout.n_patches || shape[2] != want {
        return Err(SurrogateError::Shape(format!(
            "tokens {:?}, expected [batch, {}, {want}]",
            shape, layout.n_patches
        )));
    }
    Ok((shape[0], shape[1]))
}

/// Spatio-temporal path: `[B, P, m*p]` tokens to `[B, P, hidden]` embeddings.
pub fn spatial_path(g: &mut Graph, b: &mut Binder, cfg: &ModelConfig, tokens: Var) -> Result<Var> {
    check_tokens(g, cfg, tokens)?;
    let h = linear(g, b, "spatial.embed", tokens)?;
    let pos = b.get(g, "spatial.pos")?;
    let h = g.add(h, pos)?;
    let h = layers(g, b, "spatial", cfg, h)?;
    linear(g, b, "spatial.out", h)
}

/// Outputs of the frequency path.
#[derive(Debug, Clone, Copy)]
pub struct FrequencyOutput {
    /// Band-limited patch values `[B, P, p]` before the output projection.
    pub spectral: Var,
    /// Token embeddings `[B, P, hidden]`.
    pub embedding: Var,
}

/// Frequency path: per-snapshot truncated spectra of each patch, mixed in
/// hidden space and mapped back to patch values.
pub fn frequency_path(g: &mut Graph, b: &mut Binder, cfg: &ModelConfig, tokens: Var) -> Result<FrequencyOutput> {
    let (batch, n_patches) = check_tokens(g, cfg, tokens)?;
    let (m, p, r) = (cfg.window, cfg.patch_len, cfg.fourier_modes);
    let scale = (p as f64).sqrt();
    let x = g.reshape(tokens, &[batch, n_patches, m, p])?;
    let modes = g.rfft_truncate(x, r)?;
    let modes = g.scale(modes, 1.0 / scale);
    let modes = g.reshape(modes, &[batch, n_patches, m * 2 * r])?;
    let h = linear(g, b, "freq.embed", modes)?;
    let pos = b.get(g, "freq.pos")?;
    let h = g.add(h, pos)?;
    let h = layers(g, b, "freq", cfg, h)?;
    let out = linear(g, b, "freq.modes", h)?;
    let out = g.scale(out, scale);
    let spectral = g.irfft_pad(out, p)?;
    let embedding = linear(g, b, "freq.out", spectral)?;
    Ok(FrequencyOutput { spectral, embedding })
}

/// Full model on a batch: `tokens [B, P, m*p]` and newest snapshot `last [B, n]`
/// to the predicted next snapshot `[B, n]`.
pub fn forward_graph(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    detok: &Arc<Tensor>,
    tokens: Var,
    last: Var,
) -> Result<Var> {
    let (batch, n_patches) = check_tokens(g, cfg, tokens)?;
    let mut z = spatial_path(g, b, cfg, tokens)?;
    if cfg.use_frequency_path {
        let f = frequency_path(g, b, cfg, tokens)?;
        z = g.add(z, f.embedding)?;
    }
    let z = norm(g, b, "head.ln", z)?;
    let patches = linear(g, b, "head.proj", z)?;
    let flat = g.reshape(patches, &[batch, n_patches * cfg.patch_len])?;
    let field = g.matmul_const(flat, detok.clone())?;
    if cfg.residual {
        Ok(g.add(field, last)?)
    } else {
        Ok(field)
    }
}

/// Model inputs for a batch of windows.
#[derive(Debug, Clone)]
pub struct BatchInput {
    pub tokens: Tensor,
    pub last: Tensor,
}

/// Standardizes and tokenizes windows (rows oldest first).
pub fn prepare_batch(
    cfg: &ModelConfig,
    layout: &TokenLayout,
    norm: &Normalization,
    windows: &[Vec<&[f64]>],
) -> Result<BatchInput> {
    let (m, n) = (cfg.window, cfg.n_cells);
    let per = layout.n_patches * layout.token_len(m);
    let mut tokens = vec![0.0; windows.len() * per];
    let mut last = vec![0.0; windows.len() * n];
    let mut scaled: Vec<Vec<f64>> = vec![vec![0.0; n]; m];
    for (i, w) in windows.iter().enumerate() {
        if w.len() != m {
            return Err(SurrogateError::Shape(format!(
                "window has {} snapshots, model expects {m}",
                w.len()
            )));
        }
        for (dst, row) in scaled.iter_mut().zip(w) {
            if row.len() != n {
                return Err(SurrogateError::Shape(format!(
                    "snapshot has {} cells, model expects {n}",
                    row.len()
                )));
            }
            for (d, v) in dst.iter_mut().zip(row.iter()) {
                *d = norm.forward(*v);
            }
        }
        let rows: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
        layout.tokenize_into(&rows, &mut tokens[i * per..(i + 1) * per])?;
        last[i * n..(i + 1) * n].copy_from_slice(&scaled[m - 1]);
    }
    Ok(BatchInput {
        tokens: Tensor::new(&[windows.len(), layout.n_patches, layout.token_len(m)], tokens)?,
        last: Tensor::new(&[windows.len(), n], last)?,
    })
}

/// Configured model with its weights and field standardization.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub norm: Normalization,
    layout: TokenLayout,
    detok: Arc<Tensor>,
}

impl Surrogate {
    pub fn new(config: ModelConfig, params: ModelParams, norm: Normalization) -> Result<Self> {
        config.validate()?;
        norm.validate()?;
        let layout = config.layout()?;
        let detok = layout.detokenize_matrix();
        Ok(Self {
            config,
            params,
            norm,
            layout,
            detok,
        })
    }

    pub fn layout(&self) -> &TokenLayout {
        &self.layout
    }

    pub fn detok(&self) -> &Arc<Tensor> {
        &self.detok
    }

    /// Standardized predictions `[B, n]` for prepared inputs.
    pub fn predict_standardized(&self, input: &BatchInput) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params);
        let tokens = g.input(input.tokens.clone());
        let last = g.input(input.last.clone());
        let out = forward_graph(&mut g, &mut b, &self.config, &self.detok, tokens, last)?;
        Ok(g.value(out).clone())
    }

    /// Next snapshot for each window, in physical units.
    pub fn predict(&self, windows: &[Vec<&[f64]>]) -> Result<Vec<Vec<f64>>> {
        let input = prepare_batch(&self.config, &self.layout, &self.norm, windows)?;
        let out = self.predict_standardized(&input)?;
        Ok(out
            .data()
            .chunks(self.config.n_cells)
            .map(|row| row.iter().map(|v| self.norm.inverse(*v)).collect())
            .collect())
    }
}

/// Single-window forward pass in the units of `window` (rows oldest first).
pub fn forward(window: &[Vec<f64>], params: &ModelParams, config: &ModelConfig) -> Result<Vec<f64>> {
    let model = Surrogate::new(config.clone(), params.clone(), Normalization::identity())?;
    let rows: Vec<&[f64]> = window.iter().map(Vec::as_slice).collect();
    Ok(model.predict(&[rows])?.remove(0))
}
