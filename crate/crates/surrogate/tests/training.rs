use emwave_core::Execution;
use emwave_surrogate::train::{clip_gradients, grid_search, make_windows, one_step_loss, Adam, GridSpec, TrainData};
use emwave_surrogate::{train_on, ModelConfig, ModelParams, Normalization, SurrogateError, TrainConfig};
use emwave_tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        n_cells: 16,
        hidden_dim: 16,
        patch_len: 5,
        overlap: 1,
        depth: 1,
        n_heads: 2,
        window: 2,
        fourier_modes: 3,
        use_frequency_path: true,
        mlp_ratio: 2,
        residual: true,
    }
}

/// Periodic advection by one cell per step of a random smooth profile.
fn advection(n: usize, rows: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ph: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    (0..rows)
        .map(|t| {
            (0..n)
                .map(|i| {
                    let x = ((i + n - t % n) % n) as f64 / n as f64 * std::f64::consts::TAU;
                    (0..3).map(|k| a[k] * ((k + 1) as f64 * x + ph[k]).sin()).sum()
                })
                .collect()
        })
        .collect()
}

type Trajectories = Vec<Vec<Vec<f64>>>;

fn advection_sets() -> (Trajectories, Trajectories) {
    let train = (0..8).map(|s| advection(16, 12, s)).collect();
    let val = (100..102).map(|s| advection(16, 12, s)).collect();
    (train, val)
}

fn data<'a>(train: &'a [Vec<Vec<f64>>], val: &'a [Vec<Vec<f64>>]) -> TrainData<'a> {
    TrainData {
        train: train.iter().map(Vec::as_slice).collect(),
        val: val.iter().map(Vec::as_slice).collect(),
    }
}

/// Serialized form; excludes wall-clock timings.
fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap()
}

fn tiny_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 5,
        model: tiny_model(),
        ..TrainConfig::default()
    }
}

#[test]
fn window_counts_and_indexing() {
    let rows: Vec<Vec<f64>> = (0..201).map(|t| vec![t as f64; 4]).collect();
    let w = make_windows(&rows, 5).unwrap();
    assert_eq!(w.len(), 196);
    assert_eq!(
        w[0].0.iter().map(|r| r[0]).collect::<Vec<_>>(),
        vec![0.0, 1.0, 2.0, 3.0, 4.0]
    );
    assert_eq!(w[0].1[0], 5.0);
    assert_eq!(w[195].1[0], 200.0);
    let pairs = make_windows(&rows, 1).unwrap();
    assert_eq!(pairs.len(), 200);
    assert!(pairs
        .iter()
        .enumerate()
        .all(|(t, (w, y))| w[0][0] == t as f64 && y[0] == t as f64 + 1.0));
    assert!(matches!(make_windows(&rows[..5], 5), Err(SurrogateError::Data(_))));
    assert!(make_windows(&rows, 0).is_err());
}

#[test]
fn smoke_training_reduces_loss_hundredfold() {
    let (train, val) = advection_sets();
    let out = train_on(
        &data(&train, &val),
        &tiny_config(200),
        Execution::Sequential,
        &mut |_| {},
    )
    .unwrap();
    let first = out.report.epochs[0].train_loss;
    let last = out.report.epochs.last().unwrap().train_loss;
    assert!(last * 100.0 <= first, "{first} -> {last}");
    assert_eq!(out.report.epochs.len(), 200);
    let best = &out.report.epochs[out.report.best_epoch];
    assert_eq!(best.val_loss, out.report.best_val_loss);
    assert!(out.report.epochs.iter().all(|e| e.val_loss >= out.report.best_val_loss));
}

#[test]
fn same_seed_gives_identical_weights() {
    let (train, val) = advection_sets();
    let cfg = tiny_config(3);
    let a = train_on(&data(&train, &val), &cfg, Execution::Sequential, &mut |_| {}).unwrap();
    let b = train_on(&data(&train, &val), &cfg, Execution::Parallel, &mut |_| {}).unwrap();
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(json(&a.report), json(&b.report));
    let other = TrainConfig { seed: 6, ..cfg };
    let c = train_on(&data(&train, &val), &other, Execution::Sequential, &mut |_| {}).unwrap();
    assert_ne!(a.model.params, c.model.params);
}

#[test]
fn spatial_only_variant_trains_with_fewer_parameters() {
    let (train, val) = advection_sets();
    let mut cfg = tiny_config(2);
    let full = train_on(&data(&train, &val), &cfg, Execution::Sequential, &mut |_| {}).unwrap();
    cfg.model.use_frequency_path = false;
    let spatial = train_on(&data(&train, &val), &cfg, Execution::Sequential, &mut |_| {}).unwrap();
    assert!(spatial.report.n_params < full.report.n_params);
    assert!(spatial.model.params.names().iter().all(|n| !n.starts_with("freq")));
}

#[test]
fn statistics_come_from_the_train_split() {
    let (train, mut val) = advection_sets();
    for row in val.iter_mut().flatten() {
        row.iter_mut().for_each(|v| *v = *v * 50.0 + 9.0);
    }
    let out = train_on(&data(&train, &val), &tiny_config(1), Execution::Sequential, &mut |_| {}).unwrap();
    let expect = Normalization::fit(train.iter().flatten().map(Vec::as_slice)).unwrap();
    assert_eq!(out.report.config.normalization, Some(expect));
    assert_eq!(out.model.norm, expect);
}

#[test]
fn batch_loss_is_mean_of_sample_losses() {
    let (train, val) = advection_sets();
    let out = train_on(&data(&train, &val), &tiny_config(2), Execution::Sequential, &mut |_| {}).unwrap();
    let model = &out.model;
    let trajs: Vec<&[Vec<f64>]> = val.iter().map(Vec::as_slice).collect();
    let batched = one_step_loss(model, &trajs, Execution::Sequential).unwrap();
    let mut per_sample = Vec::new();
    for traj in &val {
        for (w, y) in make_windows(traj, 2).unwrap() {
            let view: Vec<&[f64]> = w.iter().map(Vec::as_slice).collect();
            let pred = model.predict(&[view]).unwrap().remove(0);
            let se: f64 = pred
                .iter()
                .zip(&y)
                .map(|(p, t)| (model.norm.forward(*p) - model.norm.forward(*t)).powi(2))
                .sum();
            per_sample.push(se / y.len() as f64);
        }
    }
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    assert!(
        (batched - mean).abs() <= 1e-10 * mean.abs().max(1e-300),
        "{batched} vs {mean}"
    );
    assert!((out.report.best_val_loss - batched).abs() <= 1e-10 * batched);
}

#[test]
fn non_finite_validation_aborts_with_location() {
    let (train, mut val) = advection_sets();
    val[1][3][2] = f64::NAN;
    let err = train_on(&data(&train, &val), &tiny_config(2), Execution::Sequential, &mut |_| {}).unwrap_err();
    assert!(matches!(err, SurrogateError::Diverged { epoch: 0, .. }), "{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    let (train, val) = advection_sets();
    for cfg in [
        TrainConfig {
            epochs: 0,
            ..tiny_config(1)
        },
        TrainConfig {
            batch_size: 0,
            ..tiny_config(1)
        },
        TrainConfig {
            grad_clip: 0.0,
            ..tiny_config(1)
        },
        TrainConfig {
            normalization: Some(Normalization { mean: 0.0, std: 0.0 }),
            ..tiny_config(1)
        },
    ] {
        assert!(train_on(&data(&train, &val), &cfg, Execution::Sequential, &mut |_| {}).is_err());
    }
}

#[test]
fn cosine_schedule_endpoints() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(0, 100), 1e-3);
    assert!((cfg.lr_at(99, 100) - 1e-5).abs() < 1e-18);
    let lrs: Vec<f64> = (0..100).map(|s| cfg.lr_at(s, 100)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert!((cfg.lr_at(50, 101) - (1e-5 + (1e-3 - 1e-5) / 2.0)).abs() < 1e-15);
}

#[test]
fn first_adam_step_moves_by_learning_rate() {
    let cfg = ModelConfig {
        use_frequency_path: false,
        ..tiny_model()
    };
    let mut params = ModelParams::init(&cfg, 1).unwrap();
    let before = params.clone();
    let grads: Vec<Tensor> = params
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Tensor::from_fn(t.shape(), |k| {
                if (i + k) % 3 == 0 {
                    0.0
                } else {
                    ((i * 7 + k) as f64).sin()
                }
            })
        })
        .collect();
    let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
    adam.update(&mut params, &grads, 0.01);
    for (i, grad) in grads.iter().enumerate() {
        for k in 0..grad.numel() {
            let g = grad.data()[k];
            let step = before.tensors()[i].data()[k] - params.tensors()[i].data()[k];
            // bias-corrected first step is lr * g / (|g| + eps)
            let expect = 0.01 * g / (g.abs() + 1e-8);
            assert!((step - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn grid_enumerates_the_reference_ranges() {
    let configs = GridSpec::table().configs(&ModelConfig::default());
    assert_eq!(configs.len(), 36);
    let mut keys: Vec<_> = configs
        .iter()
        .map(|c| (c.hidden_dim, c.patch_len, c.depth, c.overlap))
        .collect();
    let sorted = {
        let mut k = keys.clone();
        k.sort();
        k
    };
    assert_eq!(keys, sorted);
    keys.dedup();
    assert_eq!(keys.len(), 36);
    assert!(configs.iter().all(|c| c.validate().is_ok()));
}

#[test]
fn singleton_grid_matches_train() {
    let (train, val) = advection_sets();
    let cfg = tiny_config(2);
    let grid = GridSpec {
        hidden_dim: vec![16],
        patch_len: vec![5],
        depth: vec![1],
        overlap: vec![1],
    };
    let ranked = grid_search(&data(&train, &val), &cfg, &grid, Execution::Sequential, &|_, _| Ok(())).unwrap();
    let direct = train_on(&data(&train, &val), &cfg, Execution::Sequential, &mut |_| {}).unwrap();
    assert_eq!(ranked.len(), 1);
    assert_eq!(json(&ranked[0].report), json(&direct.report));
}

#[test]
fn grid_ranking_is_total_and_deterministic() {
    let (train, val) = advection_sets();
    let cfg = tiny_config(1);
    let grid = GridSpec {
        hidden_dim: vec![8, 16],
        patch_len: vec![4, 5],
        depth: vec![1],
        overlap: vec![0, 1],
    };
    let seen = std::sync::Mutex::new(Vec::new());
    let persist = |i: usize, _: &emwave_surrogate::TrainOutcome| {
        seen.lock().unwrap().push(i);
        Ok(())
    };
    let a = grid_search(&data(&train, &val), &cfg, &grid, Execution::Parallel, &persist).unwrap();
    let b = grid_search(&data(&train, &val), &cfg, &grid, Execution::Sequential, &|_, _| Ok(())).unwrap();
    assert_eq!(json(&a), json(&b));
    assert_eq!(a.len(), 8);
    let mut idx = seen.into_inner().unwrap();
    idx.sort();
    assert_eq!(idx, (0..8).collect::<Vec<_>>());
    assert!(a
        .windows(2)
        .all(|w| w[0].report.best_val_loss <= w[1].report.best_val_loss));
    assert!(a.iter().enumerate().all(|(r, e)| e.rank == r));
    let empty = GridSpec { depth: vec![], ..grid };
    assert!(grid_search(&data(&train, &val), &cfg, &empty, Execution::Sequential, &|_, _| Ok(())).is_err());
}

proptest! {
    #[test]
    fn clipping_never_increases_the_norm(vals in proptest::collection::vec(-100.0f64..100.0, 1..40), clip in 0.01f64..50.0) {
        let mut grads = vec![
            Tensor::new(&[vals.len()], vals.clone()).unwrap(),
            Tensor::new(&[vals.len()], vals.iter().map(|v| v * 0.5).collect()).unwrap(),
        ];
        let norm = |g: &[Tensor]| g.iter().map(|t| t.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        let before = norm(&grads);
        let reported = clip_gradients(&mut grads, clip);
        let after = norm(&grads);
        prop_assert!((reported - before).abs() <= 1e-12 * before.max(1.0));
        prop_assert!(after <= before * (1.0 + 1e-12));
        prop_assert!(after <= clip * (1.0 + 1e-12) || after == before);
    }
}
