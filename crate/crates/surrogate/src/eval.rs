//! Autoregressive rollouts, error statistics, spectra and the ablation harness.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use emwave_core::datagen::{Dataset, Split};
use emwave_core::exec::{self, Execution};
use emwave_core::Case;
use emwave_tensor::fft::rfft;
use serde::{Deserialize, Serialize};

use crate::config::ABLATION_MODES;
use crate::error::{Result, SurrogateError};
use crate::model::Surrogate;
use crate::train::{train, TrainConfig, TrainOutcome, TrainReport};

/// Test samples rolled out together in one batched forward pass.
pub const ROLLOUT_CHUNK: usize = 8;

/// Anything that maps `m`-snapshot windows (rows oldest first) to next snapshots.
pub trait Stepper: Sync {
    fn window(&self) -> usize;
    fn step(&self, windows: &[Vec<&[f64]>]) -> Result<Vec<Vec<f64>>>;
}

impl Stepper for Surrogate {
    fn window(&self) -> usize {
        self.config.window
    }

    fn step(&self, windows: &[Vec<&[f64]>]) -> Result<Vec<Vec<f64>>> {
        self.predict(windows)
    }
}

/// Ground-truth rows behind a read counter.
pub struct TruthRows<'a> {
    rows: &'a [Vec<f64>],
    reads: AtomicUsize,
}

impl<'a> TruthRows<'a> {
    pub fn new(rows: &'a [Vec<f64>]) -> Self {
        Self {
            rows,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, t: usize) -> Option<&'a [f64]> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.rows.get(t).map(Vec::as_slice)
    }

    /// Rows handed out so far.
    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}

/// `‖pred − truth‖₂ / ‖truth‖₂`.
pub fn rel_err(pred: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    (num / den).sqrt()
}

/// Predictions for steps `start..start + predicted.len()` with matching truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub start: usize,
    pub predicted: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
    pub rel_err: Vec<f64>,
}

impl RolloutResult {
    /// Error at absolute step `t`, if predicted.
    pub fn rel_err_at(&self, t: usize) -> Option<f64> {
        t.checked_sub(self.start).and_then(|i| self.rel_err.get(i).copied())
    }
}

/// Autoregressive predictions of steps `m..=horizon` for several seeds in
/// lockstep; only rows `0..m` of each source are read.
pub fn predict_lockstep(stepper: &dyn Stepper, seeds: &[&TruthRows], horizon: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let m = stepper.window();
    let mut windows: Vec<Vec<Vec<f64>>> = Vec::with_capacity(seeds.len());
    for s in seeds {
        let mut w = Vec::with_capacity(m);
        for t in 0..m {
            let row = s
                .row(t)
                .ok_or_else(|| SurrogateError::Data(format!("seed needs {m} rows, source has {}", s.len())))?;
            w.push(row.to_vec());
        }
        windows.push(w);
    }
    let mut out: Vec<Vec<Vec<f64>>> = vec![Vec::new(); seeds.len()];
    for step in m..=horizon {
        let views: Vec<Vec<&[f64]>> = windows
            .iter()
            .map(|w| w[w.len() - m..].iter().map(Vec::as_slice).collect())
            .collect();
        let next = stepper.step(&views)?;
        if next.len() != seeds.len() || next.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SurrogateError::RolloutDiverged { step });
        }
        for ((w, o), row) in windows.iter_mut().zip(out.iter_mut()).zip(next) {
            w.remove(0);
            w.push(row.clone());
            o.push(row);
        }
    }
    Ok(out)
}

fn score(start: usize, predicted: Vec<Vec<f64>>, rows: &[Vec<f64>]) -> Result<RolloutResult> {
    let end = start + predicted.len();
    if rows.len() < end {
        return Err(SurrogateError::Data(format!(
            "truth has {} rows, rollout reaches step {}",
            rows.len(),
            end - 1
        )));
    }
    let truth = rows[start..end].to_vec();
    let rel_err = predicted.iter().zip(&truth).map(|(p, t)| rel_err(p, t)).collect();
    Ok(RolloutResult {
        start,
        predicted,
        truth,
        rel_err,
    })
}

/// Rollout of one trajectory up to step `horizon`.
pub fn rollout(stepper: &dyn Stepper, rows: &[Vec<f64>], horizon: usize) -> Result<RolloutResult> {
    let seed = TruthRows::new(rows);
    let pred = predict_lockstep(stepper, &[&seed], horizon)?.remove(0);
    score(stepper.window(), pred, rows)
}

/// Rollouts of many trajectories, batched in fixed chunks and parallel over chunks.
pub fn rollout_many(
    stepper: &dyn Stepper,
    trajs: &[&[Vec<f64>]],
    horizon: usize,
    exec: Execution,
) -> Result<Vec<RolloutResult>> {
    let chunks: Vec<&[&[Vec<f64>]]> = trajs.chunks(ROLLOUT_CHUNK).collect();
    let parts = exec::try_map_range(exec, chunks.len(), |c| {
        let seeds: Vec<TruthRows> = chunks[c].iter().map(|r| TruthRows::new(r)).collect();
        let refs: Vec<&TruthRows> = seeds.iter().collect();
        let preds = predict_lockstep(stepper, &refs, horizon)?;
        preds
            .into_iter()
            .zip(chunks[c])
            .map(|(p, rows)| score(stepper.window(), p, rows))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(parts.into_iter().flatten().collect())
}

/// Pointwise mean and population std of rel_err across rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub steps: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_cases: usize,
}

impl ErrorCurve {
    pub fn at(&self, t: usize) -> Option<f64> {
        self.steps.iter().position(|s| *s == t).map(|i| self.mean[i])
    }

    /// Mean of the curve over steps `lo..=hi`.
    pub fn window_mean(&self, lo: usize, hi: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .steps
            .iter()
            .zip(&self.mean)
            .filter(|(s, _)| (lo..=hi).contains(*s))
            .map(|(_, v)| *v)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean over every step and case.
    pub fn overall_mean(&self) -> f64 {
        self.mean.iter().sum::<f64>() / self.mean.len().max(1) as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "mean", "std"])?;
        for ((s, m), d) in self.steps.iter().zip(&self.mean).zip(&self.std) {
            w.write_record([s.to_string(), m.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn error_curve(results: &[RolloutResult]) -> Result<ErrorCurve> {
    let first = results
        .first()
        .ok_or_else(|| SurrogateError::Data("no rollouts to aggregate".into()))?;
    if results
        .iter()
        .any(|r| r.start != first.start || r.rel_err.len() != first.rel_err.len())
    {
        return Err(SurrogateError::Shape("rollouts cover different steps".into()));
    }
    let n = results.len() as f64;
    let len = first.rel_err.len();
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for i in 0..len {
        mean[i] = results.iter().map(|r| r.rel_err[i]).sum::<f64>() / n;
        std[i] = (results.iter().map(|r| (r.rel_err[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt();
    }
    Ok(ErrorCurve {
        steps: (first.start..first.start + len).collect(),
        mean,
        std,
        n_cases: results.len(),
    })
}

/// Real-DFT mode magnitudes `0..=n/2`, indexed by integer wavenumber on the unit domain.
pub fn spectrum(field: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if field.len() < 2 {
        return Err(SurrogateError::Data("spectrum needs at least 2 samples".into()));
    }
    let modes = rfft(field);
    let k = (0..modes.len()).map(|k| k as f64).collect();
    Ok((k, modes.iter().map(|c| c.norm()).collect()))
}

/// Test-split spectra at step `t`: mean |truth| and |pred| magnitudes per wavenumber.
pub fn spectrum_table(results: &[RolloutResult], t: usize) -> Result<Vec<(f64, f64, f64)>> {
    let mut acc: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    for r in results {
        let i = t
            .checked_sub(r.start)
            .filter(|i| *i < r.predicted.len())
            .ok_or_else(|| SurrogateError::Data(format!("step {t} outside the rollout")))?;
        let (k, truth) = spectrum(&r.truth[i])?;
        let (_, pred) = spectrum(&r.predicted[i])?;
        let a = acc.get_or_insert_with(|| (k, vec![0.0; truth.len()], vec![0.0; truth.len()]));
        for j in 0..truth.len() {
            a.1[j] += truth[j];
            a.2[j] += pred[j];
        }
    }
    let (k, truth, pred) = acc.ok_or_else(|| SurrogateError::Data("no rollouts".into()))?;
    let n = results.len() as f64;
    Ok((0..k.len()).map(|j| (k[j], truth[j] / n, pred[j] / n)).collect())
}

pub fn write_spectrum_csv(rows: &[(f64, f64, f64)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["wavenumber", "truth", "pred"])?;
    for (k, t, p) in rows {
        w.write_record([k.to_string(), t.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// File name of the spectrum export at step `t`.
pub fn spectrum_file_name(t: usize) -> String {
    format!("spectrum_t{t:03}.csv")
}

/// Rollout horizon in rows for a case.
pub fn horizon(case: Case) -> usize {
    match case {
        Case::Case1 => 200,
        Case::Case2 => 100,
    }
}

/// Full evaluation of a model on one split.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub results: Vec<RolloutResult>,
    pub curve: ErrorCurve,
}

pub fn evaluate(model: &dyn Stepper, ds: &Dataset, split: Split, exec: Execution) -> Result<Evaluation> {
    let samples = ds.samples_in(split);
    if samples.len() < 2 {
        return Err(SurrogateError::Data(format!(
            "split '{}' has {} samples, need at least 2",
            split.name(),
            samples.len()
        )));
    }
    let trajs: Vec<&[Vec<f64>]> = samples.iter().map(|s| s.e_fields.as_slice()).collect();
    let h = horizon(ds.case).min(ds.n_steps);
    let results = rollout_many(model, &trajs, h, exec)?;
    let curve = error_curve(&results)?;
    Ok(Evaluation { results, curve })
}

/// Reference metrics of the frequency-path ablation: (case, f_t+e_t, e_t).
pub const REFERENCE_FREQUENCY_PATH: [(u8, f64, f64); 2] = [(1, 0.0506, 0.3945), (2, 0.0827, 0.1819)];
/// Reference Case-1 metrics of the mode-count ablation: (r, metric).
pub const REFERENCE_MODES: [(usize, f64); 3] = [(4, 0.0825), (8, 0.0506), (16, 0.4795)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub case: u8,
    /// Mean rel_err over the full horizon and the test split.
    pub metric: f64,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub reports: Vec<TrainReport>,
}

impl AblationTable {
    pub fn metric(&self, variant: &str, case: u8) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.case == case)
            .map(|r| r.metric)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["variant", "case", "metric"])?;
        for r in &self.rows {
            w.write_record([r.variant.clone(), r.case.to_string(), r.metric.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const VARIANT_FULL: &str = "f_t+e_t";
pub const VARIANT_SPATIAL: &str = "e_t";

pub fn mode_variant(r: usize) -> String {
    format!("r={r}")
}

/// Variant label and training config for each ablation run of one case.
pub fn ablation_variants(base: &TrainConfig, with_modes: bool) -> Vec<(String, TrainConfig)> {
    let mut out = vec![(VARIANT_FULL.to_string(), base.clone())];
    let mut spatial = base.clone();
    spatial.model.use_frequency_path = false;
    out.push((VARIANT_SPATIAL.to_string(), spatial));
    if with_modes {
        for r in ABLATION_MODES {
            let mut c = base.clone();
            c.model.fourier_modes = r;
            out.push((mode_variant(r), c));
        }
    }
    out
}

fn reference(variant: &str, case: u8) -> Option<f64> {
    let fp = REFERENCE_FREQUENCY_PATH.iter().find(|r| r.0 == case);
    match variant {
        VARIANT_FULL => fp.map(|r| r.1),
        VARIANT_SPATIAL => fp.map(|r| r.2),
        _ if case == 1 => REFERENCE_MODES
            .iter()
            .find(|(r, _)| mode_variant(*r) == variant)
            .map(|r| r.1),
        _ => None,
    }
}

/// Trains and evaluates the frequency-path variants on every dataset and the
/// mode-count variants on Case 1. A mode variant identical to the base run
/// reuses its metric.
pub fn ablate(datasets: &[&Dataset], base: &TrainConfig, exec: Execution) -> Result<AblationTable> {
    ablate_observed(datasets, base, exec, &mut |_, _, _, _| {})
}

/// [`ablate`] that hands every trained model and its test evaluation to
/// `on_run(variant, case, outcome, evaluation)`.
pub fn ablate_observed(
    datasets: &[&Dataset],
    base: &TrainConfig,
    exec: Execution,
    on_run: &mut dyn FnMut(&str, u8, &TrainOutcome, &Evaluation),
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for ds in datasets {
        let case = ds.case.number();
        let mut done: Vec<(TrainConfig, f64)> = Vec::new();
        for (variant, cfg) in ablation_variants(base, ds.case == Case::Case1) {
            let metric = match done.iter().find(|(c, _)| *c == cfg) {
                Some((_, m)) => *m,
                None => {
                    let outcome = train(ds, &cfg, exec)?;
                    let eval = evaluate(&outcome.model, ds, Split::Test, exec)?;
                    let m = eval.curve.overall_mean();
                    on_run(&variant, case, &outcome, &eval);
                    reports.push(outcome.report);
                    done.push((cfg, m));
                    m
                }
            };
            rows.push(AblationRow {
                reference: reference(&variant, case),
                variant,
                case,
                metric,
            });
        }
    }
    Ok(AblationTable { rows, reports })
}
