use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use emwave_core::datagen::{
    draws, generate, manifest_path, read_dataset, sample_spec, write_dataset, Dataset, GenerateConfig, Split,
};
use emwave_core::fv::{simulate, SolverConfig};
use emwave_core::oracle::packet_oracle;
use emwave_core::{initial_state, Case, Execution, Grid1D, MaterialLayout, WavePacketSpec};
use emwave_surrogate::eval::{
    ablate, evaluate, horizon, rollout, spectrum, spectrum_file_name, spectrum_table, write_spectrum_csv,
};
use emwave_surrogate::params::sidecar_path;
use emwave_surrogate::train::{grid_search, train, GridSpec, TrainConfig};
use emwave_surrogate::{load_checkpoint, save_checkpoint, CheckpointMeta, Surrogate, TrainOutcome};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{
    AblateArgs, EvalArgs, ExportArgs, GenerateArgs, GridSearchArgs, RolloutArgs, SolveArgs, TrainArgs, TrainOverrides,
};
use crate::error::{CliError, Result};
use crate::manifest::{manifest_for, RunRecord};

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingFile(path.to_path_buf()))
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    require(path)?;
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    require(path)?;
    Ok(read_dataset(path)?)
}

pub fn load_model(path: &Path) -> Result<Surrogate> {
    require(path)?;
    require(&sidecar_path(path))?;
    let (meta, params) = load_checkpoint(path)?;
    Ok(Surrogate::new(meta.model, params, meta.normalization)?)
}

fn case_of(n: u8) -> Result<Case> {
    Case::from_number(n).ok_or_else(|| CliError::Usage(format!("case must be 1 or 2, got {n}")))
}

fn check_model_fits(model: &Surrogate, ds: &Dataset) -> Result<()> {
    if model.config.n_cells != ds.grid.n_cells() {
        return Err(CliError::Data(format!(
            "checkpoint expects {} cells, dataset has {}",
            model.config.n_cells,
            ds.grid.n_cells()
        )));
    }
    Ok(())
}

/// Optional fields of a generation config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateFile {
    case: Option<u8>,
    n_samples: Option<usize>,
    n_cells: Option<usize>,
}

pub fn run_generate(a: &GenerateArgs, exec: Execution) -> Result<RunRecord> {
    let file: GenerateFile = match &a.config {
        Some(p) => read_json(p)?,
        None => GenerateFile::default(),
    };
    let case = a
        .case
        .or(file.case)
        .ok_or_else(|| CliError::Usage("--case is required when the config does not set it".into()))?;
    let mut cfg = GenerateConfig::new(case_of(case)?, a.seed);
    cfg.n_samples = a.samples.or(file.n_samples).unwrap_or(cfg.n_samples);
    cfg.n_cells = a.cells.or(file.n_cells).unwrap_or(cfg.n_cells);
    let ds = generate(&cfg, exec)?;
    write_dataset(&ds, &a.out)?;
    println!(
        "dataset={} case={} samples={} cells={} rows={}",
        a.out.display(),
        case,
        ds.samples.len(),
        ds.grid.n_cells(),
        ds.n_steps + 1
    );
    Ok(RunRecord {
        config_path: a.config.clone(),
        seed: Some(a.seed),
        outputs: vec![a.out.clone(), manifest_path(&a.out)],
        manifest: Some(manifest_for(&a.out)),
        ..Default::default()
    })
}

/// Worst per-step `max |E − E_exact| / max |E_exact|` of one trajectory against exact cell averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverValidation {
    pub max_rel_err: f64,
    pub worst_step: usize,
    /// Simulation time alone.
    pub runtime_s: f64,
}

pub fn validate_solver(spec: &WavePacketSpec, mat: &MaterialLayout, grid: &Grid1D) -> Result<SolverValidation> {
    let config = SolverConfig::standard(grid, mat)?;
    let init = initial_state(spec, grid, mat)?;
    let t = Instant::now();
    let traj = simulate(&init, grid, mat, &config)?;
    let runtime_s = t.elapsed().as_secs_f64();
    let oracle = packet_oracle(*spec, *grid, *mat);
    let mut worst = (0.0, 0);
    for s in &traj.states {
        let (exact, _) = oracle.cell_averages(s.time);
        let num = s.e.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let den = exact.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let rel = num / den;
        if rel > worst.0 {
            worst = (rel, s.step);
        }
    }
    Ok(SolverValidation {
        max_rel_err: worst.0,
        worst_step: worst.1,
        runtime_s,
    })
}

pub fn run_solve(a: &SolveArgs) -> Result<RunRecord> {
    let case = case_of(a.case)?;
    let (r1, r2, r3) = match &a.draws {
        Some(d) if d.len() == 2 || d.len() == 3 => (d[0], d[1], d.get(2).copied().unwrap_or(0.5)),
        Some(d) => return Err(CliError::Usage(format!("--draws takes 2 or 3 values, got {}", d.len()))),
        None => draws(a.seed, a.sample),
    };
    let (spec, mat) = sample_spec(case, r1, r2, Some(r3))?;
    let grid = Grid1D::unit(a.cells)?;
    let mut record = RunRecord {
        seed: a.draws.is_none().then_some(a.seed),
        ..Default::default()
    };
    if let Some(out) = &a.out {
        let config = SolverConfig::standard(&grid, &mat)?;
        let traj = simulate(&initial_state(&spec, &grid, &mat)?, &grid, &mat, &config)?;
        let mut w = csv::Writer::from_path(out)?;
        let mut header = vec!["step".to_string()];
        header.extend((0..a.cells).map(|i| format!("e{i}")));
        w.write_record(&header)?;
        for s in &traj.states {
            let mut rec = vec![s.step.to_string()];
            rec.extend(s.e.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        record.outputs.push(out.clone());
        record.manifest = Some(manifest_for(out));
        println!(
            "trajectory={} steps={} c2={}",
            out.display(),
            traj.states.len() - 1,
            mat.c2()
        );
    }
    if a.validate {
        let v = validate_solver(&spec, &mat, &grid)?;
        println!(
            "max_rel_err={:e} worst_step={} runtime_s={:.4} threshold={:e}",
            v.max_rel_err, v.worst_step, v.runtime_s, a.threshold
        );
        record.timings.push(("simulate_s".into(), v.runtime_s));
        if v.max_rel_err.is_nan() || v.max_rel_err >= a.threshold {
            return Err(CliError::Validation(format!(
                "max pointwise relative error {:e} at step {} exceeds {:e}",
                v.max_rel_err, v.worst_step, a.threshold
            )));
        }
    }
    Ok(record)
}

/// Config file (or defaults) with flag overrides applied, then validated.
pub fn train_config(path: Option<&Path>, seed: Option<u64>, ov: &TrainOverrides) -> Result<TrainConfig> {
    let mut c: TrainConfig = match path {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    macro_rules! set {
        ($field:expr, $flag:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(c.epochs, ov.epochs);
    set!(c.learning_rate, ov.learning_rate);
    set!(c.batch_size, ov.batch_size);
    set!(c.input_noise, ov.input_noise);
    set!(c.model.hidden_dim, ov.hidden_dim);
    set!(c.model.depth, ov.depth);
    set!(c.model.n_heads, ov.heads);
    set!(c.model.patch_len, ov.patch_len);
    set!(c.model.overlap, ov.overlap);
    set!(c.model.window, ov.window);
    set!(c.model.fourier_modes, ov.modes);
    if ov.windows_per_epoch.is_some() {
        c.windows_per_epoch = ov.windows_per_epoch;
    }
    if ov.no_frequency_path {
        c.model.use_frequency_path = false;
    }
    c.validate()?;
    Ok(c)
}

fn fit_cells(cfg: &mut TrainConfig, ds: &Dataset) {
    cfg.model.n_cells = ds.grid.n_cells();
}

fn save_outcome(outcome: &TrainOutcome, path: &Path) -> Result<PathBuf> {
    let meta = CheckpointMeta {
        model: outcome.model.config.clone(),
        normalization: outcome.model.norm,
    };
    save_checkpoint(path, &meta, &outcome.model.params)?;
    let mut report = outcome.report.clone();
    report.checkpoint = Some(path.display().to_string());
    let report_path = path.with_extension("report.json");
    write_json(&report, &report_path)?;
    Ok(report_path)
}

pub fn run_train(a: &TrainArgs, exec: Execution) -> Result<RunRecord> {
    let ds = load_dataset(&a.dataset)?;
    let mut cfg = train_config(a.config.as_deref(), Some(a.seed), &a.overrides)?;
    fit_cells(&mut cfg, &ds);
    cfg.validate()?;
    let outcome = train(&ds, &cfg, exec)?;
    let report_path = save_outcome(&outcome, &a.out)?;
    println!(
        "checkpoint={} best_epoch={} best_val_loss={:e} params={}",
        a.out.display(),
        outcome.report.best_epoch,
        outcome.report.best_val_loss,
        outcome.report.n_params
    );
    Ok(RunRecord {
        config_path: a.config.clone(),
        seed: Some(cfg.seed),
        inputs: vec![a.dataset.clone()],
        outputs: vec![a.out.clone(), sidecar_path(&a.out), report_path],
        timings: vec![("train_s".into(), outcome.report.wall_clock_s)],
        manifest: Some(manifest_for(&a.out)),
    })
}

#[derive(Debug, Serialize)]
struct RankingEntry {
    rank: usize,
    index: usize,
    hidden_dim: usize,
    patch_len: usize,
    depth: usize,
    overlap: usize,
    best_val_loss: f64,
    checkpoint: String,
}

pub fn run_grid_search(a: &GridSearchArgs, exec: Execution) -> Result<RunRecord> {
    let ds = load_dataset(&a.dataset)?;
    let mut base = train_config(a.config.as_deref(), a.seed, &a.overrides)?;
    fit_cells(&mut base, &ds);
    let grid: GridSpec = match &a.grid {
        Some(p) => read_json(p)?,
        None => GridSpec::table(),
    };
    ensure_dir(&a.out_dir)?;
    let data = emwave_surrogate::TrainData::from_dataset(&ds)?;
    let ckpt = |i: usize| a.out_dir.join(format!("run_{i:02}.emwt"));
    let persist = |i: usize, o: &TrainOutcome| -> emwave_surrogate::Result<()> {
        save_outcome(o, &ckpt(i)).map(|_| ()).map_err(|e| match e {
            CliError::Io(io) => emwave_surrogate::SurrogateError::Io(io),
            other => emwave_surrogate::SurrogateError::Data(other.to_string()),
        })
    };
    let entries = grid_search(&data, &base, &grid, exec, &persist)?;
    let mut outputs = Vec::new();
    let ranking: Vec<RankingEntry> = entries
        .iter()
        .map(|e| {
            let m = &e.report.config.model;
            outputs.push(ckpt(e.index));
            outputs.push(sidecar_path(&ckpt(e.index)));
            outputs.push(ckpt(e.index).with_extension("report.json"));
            RankingEntry {
                rank: e.rank,
                index: e.index,
                hidden_dim: m.hidden_dim,
                patch_len: m.patch_len,
                depth: m.depth,
                overlap: m.overlap,
                best_val_loss: e.report.best_val_loss,
                checkpoint: ckpt(e.index).display().to_string(),
            }
        })
        .collect();
    let ranking_path = a.out_dir.join("ranking.json");
    write_json(&ranking, &ranking_path)?;
    outputs.push(ranking_path);
    if let Some(best) = ranking.first() {
        println!(
            "runs={} best_index={} best_val_loss={:e}",
            ranking.len(),
            best.index,
            best.best_val_loss
        );
    }
    Ok(RunRecord {
        config_path: a.config.clone(),
        seed: Some(base.seed),
        inputs: vec![a.dataset.clone()],
        outputs,
        manifest: Some(manifest_for(&a.out_dir)),
        ..Default::default()
    })
}

pub fn run_rollout(a: &RolloutArgs) -> Result<RunRecord> {
    let ds = load_dataset(&a.dataset)?;
    let model = load_model(&a.checkpoint)?;
    check_model_fits(&model, &ds)?;
    let sample = ds
        .sample(a.sample)
        .ok_or_else(|| CliError::Data(format!("dataset has no sample {}", a.sample)))?;
    let h = a.steps.unwrap_or_else(|| horizon(ds.case).min(ds.n_steps));
    let r = rollout(&model, &sample.e_fields, h)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    let mut header = vec!["step".to_string(), "rel_err".to_string()];
    header.extend((0..ds.grid.n_cells()).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for (i, row) in r.predicted.iter().enumerate() {
        let mut rec = vec![(r.start + i).to_string(), r.rel_err[i].to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let last = r.rel_err.last().copied().unwrap_or(0.0);
    println!(
        "rollout={} steps={}..={} final_rel_err={last:e}",
        a.out.display(),
        r.start,
        h
    );
    Ok(RunRecord {
        inputs: vec![a.checkpoint.clone(), sidecar_path(&a.checkpoint), a.dataset.clone()],
        outputs: vec![a.out.clone()],
        manifest: Some(manifest_for(&a.out)),
        ..Default::default()
    })
}

/// Spectrum and snapshot steps shown for each case.
pub fn default_plot_steps(case: Case) -> Vec<usize> {
    match case {
        Case::Case1 => vec![100, 200],
        Case::Case2 => vec![50, 100],
    }
}

fn split_of(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(CliError::Usage(format!("unknown split '{other}'"))),
    }
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    split: String,
    n_cases: usize,
    first_step: usize,
    last_step: usize,
    overall_mean: f64,
    max_mean_first_75: f64,
}

pub fn run_eval(a: &EvalArgs, exec: Execution) -> Result<RunRecord> {
    let ds = load_dataset(&a.dataset)?;
    let model = load_model(&a.checkpoint)?;
    check_model_fits(&model, &ds)?;
    let ev = evaluate(&model, &ds, split_of(&a.split)?, exec)?;
    ensure_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    let curve_path = a.out_dir.join("error_curve.csv");
    ev.curve.write_csv(&curve_path)?;
    outputs.push(curve_path);
    for t in a.spectrum_steps.clone().unwrap_or_else(|| default_plot_steps(ds.case)) {
        let table = spectrum_table(&ev.results, t)?;
        let p = a.out_dir.join(spectrum_file_name(t));
        write_spectrum_csv(&table, &p)?;
        outputs.push(p);
    }
    let summary = EvalSummary {
        split: a.split.clone(),
        n_cases: ev.curve.n_cases,
        first_step: ev.curve.steps[0],
        last_step: *ev.curve.steps.last().expect("non-empty curve"),
        overall_mean: ev.curve.overall_mean(),
        max_mean_first_75: ev.curve.mean.iter().take(75).copied().fold(0.0, f64::max),
    };
    let summary_path = a.out_dir.join("eval.json");
    write_json(&summary, &summary_path)?;
    outputs.push(summary_path);
    println!(
        "cases={} overall_mean_rel_err={:e} max_mean_rel_err_first_75={:e}",
        summary.n_cases, summary.overall_mean, summary.max_mean_first_75
    );
    Ok(RunRecord {
        inputs: vec![a.checkpoint.clone(), sidecar_path(&a.checkpoint), a.dataset.clone()],
        outputs,
        manifest: Some(manifest_for(&a.out_dir)),
        ..Default::default()
    })
}

pub fn run_ablate(a: &AblateArgs, exec: Execution) -> Result<RunRecord> {
    let sets = a.dataset.iter().map(|p| load_dataset(p)).collect::<Result<Vec<_>>>()?;
    let mut base = train_config(a.config.as_deref(), a.seed, &a.overrides)?;
    fit_cells(&mut base, &sets[0]);
    if sets.iter().any(|d| d.grid.n_cells() != base.model.n_cells) {
        return Err(CliError::Data("ablation datasets must share one grid".into()));
    }
    let refs: Vec<&Dataset> = sets.iter().collect();
    let table = ablate(&refs, &base, exec)?;
    ensure_dir(&a.out_dir)?;
    let csv_path = a.out_dir.join("ablation.csv");
    table.write_csv(&csv_path)?;
    let json_path = a.out_dir.join("ablation.json");
    write_json(&table, &json_path)?;
    for r in &table.rows {
        match r.reference {
            Some(x) => println!(
                "case={} variant={} metric={:e} reference={x}",
                r.case, r.variant, r.metric
            ),
            None => println!("case={} variant={} metric={:e}", r.case, r.variant, r.metric),
        }
    }
    Ok(RunRecord {
        config_path: a.config.clone(),
        seed: Some(base.seed),
        inputs: a.dataset.clone(),
        outputs: vec![csv_path, json_path],
        manifest: Some(manifest_for(&a.out_dir)),
        ..Default::default()
    })
}

pub fn run_export(a: &ExportArgs) -> Result<RunRecord> {
    let ds = load_dataset(&a.dataset)?;
    let model = load_model(&a.checkpoint)?;
    check_model_fits(&model, &ds)?;
    let sample = ds
        .sample(a.sample)
        .ok_or_else(|| CliError::Data(format!("dataset has no sample {}", a.sample)))?;
    let steps = a.steps.clone().unwrap_or_else(|| default_plot_steps(ds.case));
    let last = *steps
        .iter()
        .max()
        .ok_or_else(|| CliError::Usage("--steps is empty".into()))?;
    let r = rollout(&model, &sample.e_fields, last)?;
    ensure_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    for t in steps {
        let i = t
            .checked_sub(r.start)
            .ok_or_else(|| CliError::Usage(format!("step {t} precedes the first prediction {}", r.start)))?;
        let (pred, truth) = (&r.predicted[i], &r.truth[i]);
        let p = a.out_dir.join(format!("fields_s{:03}_t{t:03}.csv", a.sample));
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["x", "truth", "pred", "residual"])?;
        for c in 0..truth.len() {
            w.write_record([
                ds.grid.center(c).to_string(),
                truth[c].to_string(),
                pred[c].to_string(),
                (pred[c] - truth[c]).to_string(),
            ])?;
        }
        w.flush()?;
        outputs.push(p);
        let (k, ts) = spectrum(truth)?;
        let (_, ps) = spectrum(pred)?;
        let rows: Vec<(f64, f64, f64)> = (0..k.len()).map(|j| (k[j], ts[j], ps[j])).collect();
        let p = a.out_dir.join(format!("spectrum_s{:03}_t{t:03}.csv", a.sample));
        write_spectrum_csv(&rows, &p)?;
        outputs.push(p);
    }
    println!("exported={} files", outputs.len());
    Ok(RunRecord {
        inputs: vec![a.checkpoint.clone(), sidecar_path(&a.checkpoint), a.dataset.clone()],
        outputs,
        manifest: Some(manifest_for(&a.out_dir)),
        ..Default::default()
    })
}
