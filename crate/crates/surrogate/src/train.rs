//! Teacher-forced one-step training, Adam, and the hyperparameter grid search.

use std::cmp::Ordering;
use std::sync::Arc;
use std::time::Instant;

use emwave_core::datagen::{Dataset, Split};
use emwave_core::exec::{self, Execution};
use emwave_tensor::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, GRID_DEPTH, GRID_HIDDEN, GRID_OVERLAP, GRID_PATCH};
use crate::error::{Result, SurrogateError};
use crate::model::{forward_graph, prepare_batch, Binder, Surrogate};
use crate::params::{ModelParams, Normalization};

/// Windows per gradient chunk; fixed so the reduction order never depends
/// on the worker count.
pub const GRAD_CHUNK: usize = 8;
/// Windows per forward-only validation chunk.
pub const EVAL_CHUNK: usize = 32;
const NOISE_SALT: u64 = 0x6e6f_6973_6500_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Floor of the cosine schedule.
    pub min_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    pub seed: u64,
    /// Fitted on the train split when absent.
    pub normalization: Option<Normalization>,
    /// Random subset of training windows visited per epoch; all when absent.
    pub windows_per_epoch: Option<usize>,
    /// Std of Gaussian noise added to standardized training inputs; targets stay clean.
    pub input_noise: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            min_learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            epochs: 500,
            grad_clip: 1.0,
            seed: 0,
            normalization: None,
            windows_per_epoch: None,
            input_noise: 0.0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SurrogateError::TrainConfig(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.min_learning_rate >= 0.0 && self.min_learning_rate <= self.learning_rate)
        {
            return bad("learning rates must satisfy 0 <= min_learning_rate <= learning_rate, learning_rate > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive");
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return bad("grad_clip must be positive");
        }
        if !(self.input_noise >= 0.0 && self.input_noise.is_finite()) {
            return bad("input_noise must be finite and non-negative");
        }
        if self.windows_per_epoch == Some(0) {
            return bad("windows_per_epoch must be at least 1");
        }
        if let Some(n) = &self.normalization {
            n.validate()?;
        }
        self.model.validate()
    }

    /// Cosine decay from `learning_rate` to `min_learning_rate` over `total` steps.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let frac = if total <= 1 {
            0.0
        } else {
            step as f64 / (total - 1) as f64
        };
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        self.min_learning_rate + (self.learning_rate - self.min_learning_rate) * cos
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Echo of the run configuration with the fitted normalization.
    pub config: TrainConfig,
    pub n_params: usize,
    pub n_train_windows: usize,
    pub n_val_windows: usize,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Path of the persisted best-validation checkpoint, when written.
    pub checkpoint: Option<String>,
    /// Kept out of the JSON so reports stay byte-stable; run manifests carry timings.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

/// One `(window, target)` pair; window rows oldest first.
pub type WindowPair = (Vec<Vec<f64>>, Vec<f64>);

/// Every teacher-forcing pair of a trajectory: targets `t + 1` for `t` in `m-1..rows-1`.
pub fn make_windows(rows: &[Vec<f64>], m: usize) -> Result<Vec<WindowPair>> {
    let starts = window_starts(rows.len(), m)?;
    Ok(starts
        .map(|t| (rows[t + 1 - m..=t].to_vec(), rows[t + 1].clone()))
        .collect())
}

/// Newest-row indices `t` of all windows.
fn window_starts(n_rows: usize, m: usize) -> Result<std::ops::Range<usize>> {
    if m == 0 || n_rows < m + 1 {
        return Err(SurrogateError::Data(format!(
            "trajectory of {n_rows} rows is too short for window {m}"
        )));
    }
    Ok(m - 1..n_rows - 1)
}

/// Trajectories used for fitting (train) and checkpoint selection (val).
pub struct TrainData<'a> {
    pub train: Vec<&'a [Vec<f64>]>,
    pub val: Vec<&'a [Vec<f64>]>,
}

impl<'a> TrainData<'a> {
    pub fn from_dataset(ds: &'a Dataset) -> Result<Self> {
        let pick =
            |s: Split| -> Vec<&'a [Vec<f64>]> { ds.samples_in(s).into_iter().map(|x| x.e_fields.as_slice()).collect() };
        let data = Self {
            train: pick(Split::Train),
            val: pick(Split::Val),
        };
        if data.train.is_empty() || data.val.is_empty() {
            return Err(SurrogateError::Data(
                "dataset needs non-empty train and val splits".into(),
            ));
        }
        Ok(data)
    }
}

struct Standardized {
    rows: Vec<Vec<Vec<f64>>>,
    windows: Vec<(usize, usize)>,
}

impl Standardized {
    fn new(trajs: &[&[Vec<f64>]], norm: &Normalization, m: usize) -> Result<Self> {
        let rows: Vec<Vec<Vec<f64>>> = trajs
            .iter()
            .map(|t| t.iter().map(|r| r.iter().map(|v| norm.forward(*v)).collect()).collect())
            .collect();
        let mut windows = Vec::new();
        for (i, t) in rows.iter().enumerate() {
            windows.extend(window_starts(t.len(), m)?.map(|s| (i, s)));
        }
        Ok(Self { rows, windows })
    }

    fn window(&self, (i, t): (usize, usize), m: usize) -> Vec<&[f64]> {
        self.rows[i][t + 1 - m..=t].iter().map(Vec::as_slice).collect()
    }

    fn target(&self, (i, t): (usize, usize)) -> &[f64] {
        &self.rows[i][t + 1]
    }
}

/// Input perturbation of one optimizer step.
#[derive(Clone, Copy)]
struct Noise {
    std: f64,
    seed: u64,
    step: usize,
}

impl Noise {
    /// Noisy copy of the window at batch position `pos`.
    fn apply(&self, window: &[&[f64]], pos: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((self.step as u64) << 24) | pos as u64);
        window
            .iter()
            .map(|row| {
                row.iter()
                    .map(|v| v + self.std * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }
}

struct Step<'m> {
    model: &'m Surrogate,
}

impl Step<'_> {
    /// Chunk loss scaled by `chunk / total` and its parameter gradients;
    /// `offset` is the position of the chunk's first window in the batch.
    fn chunk(
        &self,
        data: &Standardized,
        idx: &[(usize, usize)],
        total: usize,
        grad: bool,
        noise: Option<(Noise, usize)>,
    ) -> Result<(f64, Vec<Option<Tensor>>)> {
        let cfg = &self.model.config;
        let mut windows: Vec<Vec<&[f64]>> = idx.iter().map(|w| data.window(*w, cfg.window)).collect();
        let noisy: Vec<Vec<Vec<f64>>> = match noise {
            Some((n, offset)) => windows
                .iter()
                .enumerate()
                .map(|(i, w)| n.apply(w, offset + i))
                .collect(),
            None => Vec::new(),
        };
        if !noisy.is_empty() {
            windows = noisy.iter().map(|w| w.iter().map(Vec::as_slice).collect()).collect();
        }
        let input = prepare_batch(cfg, self.model.layout(), &Normalization::identity(), &windows)?;
        let mut target = Vec::with_capacity(idx.len() * cfg.n_cells);
        for w in idx {
            target.extend_from_slice(data.target(*w));
        }
        let target = Arc::new(Tensor::new(&[idx.len(), cfg.n_cells], target)?);
        let mut g = Graph::new();
        let mut b = Binder::new(&self.model.params);
        let tokens = g.input(input.tokens);
        let last = g.input(input.last);
        let pred = forward_graph(&mut g, &mut b, cfg, self.model.detok(), tokens, last)?;
        let mse = g.mse(pred, target)?;
        let loss = g.scale(mse, idx.len() as f64 / total as f64);
        let value = g.value(loss).item();
        let mut grads = vec![None; self.model.params.len()];
        if grad {
            let mut all = g.backward(loss)?;
            for (i, v) in b.bound() {
                grads[i] = all.take(v);
            }
        }
        Ok((value, grads))
    }

    /// Mean loss over `idx` and, when `grad`, the summed gradients in chunk order.
    fn batch(
        &self,
        exec: Execution,
        data: &Standardized,
        idx: &[(usize, usize)],
        chunk: usize,
        grad: bool,
        noise: Option<Noise>,
    ) -> Result<(f64, Vec<Tensor>)> {
        let chunks: Vec<&[(usize, usize)]> = idx.chunks(chunk).collect();
        let parts = exec::try_map_range(exec, chunks.len(), |c| {
            self.chunk(data, chunks[c], idx.len(), grad, noise.map(|n| (n, c * chunk)))
        })?;
        let mut loss = 0.0;
        let mut total: Vec<Tensor> = if grad {
            self.model
                .params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect()
        } else {
            Vec::new()
        };
        for (l, grads) in parts {
            loss += l;
            for (acc, g) in total.iter_mut().zip(grads) {
                if let Some(g) = g {
                    acc.add_assign(&g);
                }
            }
        }
        Ok((loss, total))
    }
}

/// Rescales `grads` in place so their global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

/// Adam moments for every parameter tensor.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(i).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Result of a training run: the best-validation weights and the report.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Surrogate,
    pub report: TrainReport,
}

pub fn train(dataset: &Dataset, config: &TrainConfig, exec: Execution) -> Result<TrainOutcome> {
    train_on(&TrainData::from_dataset(dataset)?, config, exec, &mut |_| {})
}

/// Training on raw trajectories; `on_epoch` sees each finished epoch.
pub fn train_on(
    data: &TrainData,
    config: &TrainConfig,
    exec: Execution,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(SurrogateError::Data(
            "training needs non-empty train and val trajectories".into(),
        ));
    }
    let start = Instant::now();
    let m = config.model.window;
    // statistics come from the train split before val is touched
    let norm = match config.normalization {
        Some(n) => n,
        None => Normalization::fit(data.train.iter().flat_map(|t| t.iter().map(Vec::as_slice)))?,
    };
    let train = Standardized::new(&data.train, &norm, m)?;
    let val = Standardized::new(&data.val, &norm, m)?;
    let mut echo = config.clone();
    echo.normalization = Some(norm);

    let params = ModelParams::init(&config.model, config.seed)?;
    let mut model = Surrogate::new(config.model.clone(), params, norm)?;
    let mut adam = Adam::new(&model.params, config.beta1, config.beta2, config.epsilon);
    let per_epoch = config
        .windows_per_epoch
        .map_or(train.windows.len(), |k| k.min(train.windows.len()));
    let batches = per_epoch.div_ceil(config.batch_size);
    let total_steps = batches * config.epochs;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = train.windows.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = config.learning_rate;
        for (bi, batch) in order[..per_epoch].chunks(config.batch_size).enumerate() {
            let noise = (config.input_noise > 0.0).then_some(Noise {
                std: config.input_noise,
                seed: config.seed ^ NOISE_SALT,
                step,
            });
            let (loss, mut grads) = Step { model: &model }.batch(exec, &train, batch, GRAD_CHUNK, true, noise)?;
            let norm = clip_gradients(&mut grads, config.grad_clip);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(SurrogateError::Diverged { epoch, batch: bi });
            }
            lr = config.lr_at(step, total_steps);
            adam.update(&mut model.params, &grads, lr);
            epoch_loss += loss * batch.len() as f64;
            step += 1;
        }
        let (val_loss, _) = Step { model: &model }.batch(exec, &val, &val.windows, EVAL_CHUNK, false, None)?;
        if !val_loss.is_finite() || !model.params.is_finite() {
            return Err(SurrogateError::Diverged { epoch, batch: batches });
        }
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / per_epoch as f64,
            val_loss,
            learning_rate: lr,
        };
        on_epoch(&stats);
        history.push(stats);
        if best.as_ref().is_none_or(|b| val_loss < b.1) {
            best = Some((epoch, val_loss, model.params.clone()));
        }
    }
    let (best_epoch, best_val_loss, best_params) = best.expect("at least one epoch");
    let n_params = best_params.count();
    let model = Surrogate::new(config.model.clone(), best_params, norm)?;
    Ok(TrainOutcome {
        model,
        report: TrainReport {
            config: echo,
            n_params,
            n_train_windows: train.windows.len(),
            n_val_windows: val.windows.len(),
            epochs: history,
            best_epoch,
            best_val_loss,
            checkpoint: None,
            wall_clock_s: start.elapsed().as_secs_f64(),
        },
    })
}

/// Mean standardized one-step loss of `model` over every window of `trajs`.
pub fn one_step_loss(model: &Surrogate, trajs: &[&[Vec<f64>]], exec: Execution) -> Result<f64> {
    let data = Standardized::new(trajs, &model.norm, model.config.window)?;
    Ok(Step { model }
        .batch(exec, &data, &data.windows, EVAL_CHUNK, false, None)?
        .0)
}

/// Architecture ranges to search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub hidden_dim: Vec<usize>,
    pub patch_len: Vec<usize>,
    pub depth: Vec<usize>,
    pub overlap: Vec<usize>,
}

impl GridSpec {
    /// Search ranges of the reference hyperparameter table.
    pub fn table() -> Self {
        Self {
            hidden_dim: GRID_HIDDEN.to_vec(),
            patch_len: GRID_PATCH.to_vec(),
            depth: GRID_DEPTH.to_vec(),
            overlap: GRID_OVERLAP.to_vec(),
        }
    }

    /// Every combination applied to `base`, in lexicographic order.
    pub fn configs(&self, base: &ModelConfig) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for &hidden_dim in &self.hidden_dim {
            for &patch_len in &self.patch_len {
                for &depth in &self.depth {
                    for &overlap in &self.overlap {
                        out.push(ModelConfig {
                            hidden_dim,
                            patch_len,
                            depth,
                            overlap,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

/// One grid run; `rank` 0 is best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub rank: usize,
    pub index: usize,
    pub report: TrainReport,
}

fn grid_key(c: &ModelConfig) -> (usize, usize, usize, usize) {
    (c.hidden_dim, c.patch_len, c.depth, c.overlap)
}

/// Trains every grid combination and ranks by best validation loss, ties by
/// configuration order. `persist` receives each finished run with its
/// enumeration index.
pub fn grid_search(
    data: &TrainData,
    base: &TrainConfig,
    grid: &GridSpec,
    exec: Execution,
    persist: &(dyn Fn(usize, &TrainOutcome) -> Result<()> + Sync),
) -> Result<Vec<GridEntry>> {
    let configs = grid.configs(&base.model);
    if configs.is_empty() {
        return Err(SurrogateError::TrainConfig("grid is empty".into()));
    }
    let reports = exec::try_map_range(exec, configs.len(), |i| {
        let cfg = TrainConfig {
            model: configs[i].clone(),
            ..base.clone()
        };
        let outcome = train_on(data, &cfg, exec, &mut |_| {})?;
        persist(i, &outcome)?;
        Ok::<_, SurrogateError>(outcome.report)
    })?;
    let mut entries: Vec<GridEntry> = reports
        .into_iter()
        .enumerate()
        .map(|(index, report)| GridEntry { rank: 0, index, report })
        .collect();
    entries.sort_by(|a, b| compare_reports(&a.report, &b.report).then(a.index.cmp(&b.index)));
    for (rank, e) in entries.iter_mut().enumerate() {
        e.rank = rank;
    }
    Ok(entries)
}

/// Total order used by [`grid_search`].
pub fn compare_reports(a: &TrainReport, b: &TrainReport) -> Ordering {
    a.best_val_loss
        .total_cmp(&b.best_val_loss)
        .then_with(|| grid_key(&a.config.model).cmp(&grid_key(&b.config.model)))
}
