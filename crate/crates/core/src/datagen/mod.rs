//! Reproducible Case 1 / Case 2 datasets built from solver trajectories.

mod io;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{try_map_range, Execution};
use crate::fv::{simulate, SolverConfig};
use crate::grid::{Grid1D, MaterialLayout};
use crate::packet::{initial_state, Case, WavePacketSpec};

pub use io::{
    decode, encode, manifest_path, read_dataset, write_dataset, write_manifest, DatasetManifest, FORMAT_VERSION, MAGIC,
};

/// Interface position used by both cases.
pub const INTERFACE_POSITION: f64 = 0.5;
/// Default grid resolution.
pub const DEFAULT_CELLS: usize = 256;
/// Default number of trajectories.
pub const DEFAULT_SAMPLES: usize = 200;
/// Steps discarded before Case 2 data starts.
pub const CASE2_OFFSET: usize = 100;
/// Solver steps per trajectory for both cases.
pub const SIMULATED_STEPS: usize = 200;

/// Stream id reserved for the split shuffle; sample ids use `0..n`.
const SPLIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// One trajectory: only `E` is kept; `c2` is metadata never shown to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u32,
    pub spec: WavePacketSpec,
    pub c2: f64,
    /// `rows x n_cells`, row 0 is the (reindexed) initial state.
    pub e_fields: Vec<Vec<f64>>,
}

impl Sample {
    pub fn n_rows(&self) -> usize {
        self.e_fields.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub case: Case,
    pub samples: Vec<Sample>,
    pub split: BTreeMap<u32, Split>,
    pub grid: Grid1D,
    pub n_steps: usize,
    pub time_offset: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn split_ids(&self, which: Split) -> Vec<u32> {
        self.split
            .iter()
            .filter(|(_, s)| **s == which)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Samples of one split, in id order.
    pub fn samples_in(&self, which: Split) -> Vec<&Sample> {
        self.samples
            .iter()
            .filter(|s| self.split.get(&s.id) == Some(&which))
            .collect()
    }

    pub fn sample(&self, id: u32) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

/// Parameters of a generation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub case: Case,
    pub n_samples: usize,
    pub seed: u64,
    pub n_cells: usize,
}

impl GenerateConfig {
    pub fn new(case: Case, seed: u64) -> Self {
        Self {
            case,
            n_samples: DEFAULT_SAMPLES,
            seed,
            n_cells: DEFAULT_CELLS,
        }
    }

    pub fn stored_steps(&self) -> usize {
        stored_steps(self.case)
    }
}

pub fn stored_steps(case: Case) -> usize {
    match case {
        Case::Case1 => SIMULATED_STEPS,
        Case::Case2 => SIMULATED_STEPS - CASE2_OFFSET,
    }
}

pub fn time_offset(case: Case) -> usize {
    match case {
        Case::Case1 => 0,
        Case::Case2 => CASE2_OFFSET,
    }
}

/// Packet and material for one set of uniform draws.
pub fn sample_spec(case: Case, r1: f64, r2: f64, r3: Option<f64>) -> Result<(WavePacketSpec, MaterialLayout)> {
    let spec = WavePacketSpec::from_draws(case, r1, r2, r3)?;
    let c2 = match spec.r3 {
        Some(r3) => 1.0 / (1.0 + 2.0 * r3),
        None => 1.0 / 3.0,
    };
    Ok((spec, MaterialLayout::new(1.0, c2, INTERFACE_POSITION)?))
}

/// Uniform draws `(r1, r2, r3)` for sample `id`, from its own ChaCha stream.
pub fn draws(seed: u64, id: u32) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    let r1 = rng.gen::<f64>();
    let r2 = rng.gen::<f64>();
    let r3 = rng.gen::<f64>();
    (r1, r2, r3)
}

/// Deterministic 80/10/10 partition (160/20/20 for 200 samples), indexed by id.
pub fn split_assignment(n_samples: usize, seed: u64) -> BTreeMap<u32, Split> {
    let mut ids: Vec<u32> = (0..n_samples as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    ids.shuffle(&mut rng);
    let n_val = n_samples / 10;
    let n_test = n_samples / 10;
    let n_train = n_samples - n_val - n_test;
    ids.iter()
        .enumerate()
        .map(|(pos, id)| {
            let s = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (*id, s)
        })
        .collect()
}

/// Simulates the trajectory for an already-drawn packet.
pub fn simulate_sample(
    id: u32,
    case: Case,
    spec: WavePacketSpec,
    mat: MaterialLayout,
    grid: &Grid1D,
) -> Result<Sample> {
    let wrap = |e: Error| Error::Sample {
        id,
        source: Box::new(e),
    };
    let config = SolverConfig::standard(grid, &mat).map_err(wrap)?;
    let initial = initial_state(&spec, grid, &mat).map_err(wrap)?;
    let traj = simulate(&initial, grid, &mat, &config).map_err(wrap)?;
    let e_fields = traj.states.into_iter().skip(time_offset(case)).map(|s| s.e).collect();
    Ok(Sample {
        id,
        spec,
        c2: mat.c2(),
        e_fields,
    })
}

fn build_sample(config: &GenerateConfig, grid: &Grid1D, id: u32) -> Result<Sample> {
    let (r1, r2, r3) = draws(config.seed, id);
    let (spec, mat) = sample_spec(config.case, r1, r2, Some(r3)).map_err(|e| Error::Sample {
        id,
        source: Box::new(e),
    })?;
    simulate_sample(id, config.case, spec, mat, grid)
}

/// Generates a full dataset; samples are simulated independently.
pub fn generate(config: &GenerateConfig, exec: Execution) -> Result<Dataset> {
    let grid = Grid1D::unit(config.n_cells)?;
    let samples = try_map_range(exec, config.n_samples, |i| build_sample(config, &grid, i as u32))?;
    Ok(Dataset {
        case: config.case,
        samples,
        split: split_assignment(config.n_samples, config.seed),
        grid,
        n_steps: config.stored_steps(),
        time_offset: time_offset(config.case),
        seed: config.seed,
    })
}

/// Re-simulates one stored sample from its packet parameters.
pub fn regenerate_sample(ds: &Dataset, id: u32) -> Result<Sample> {
    let stored = ds
        .sample(id)
        .ok_or_else(|| Error::Format(format!("no sample with id {id}")))?;
    let s = stored.spec;
    let (spec, mat) = sample_spec(ds.case, s.r1, s.r2, s.r3)?;
    simulate_sample(id, ds.case, spec, mat, &ds.grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case2_speed_range() {
        let (_, m) = sample_spec(Case::Case2, 0.5, 0.5, Some(0.0)).unwrap();
        assert_eq!(m.c2(), 1.0);
        let (_, m) = sample_spec(Case::Case2, 0.5, 0.5, Some(1.0)).unwrap();
        assert!((m.c2() - 1.0 / 3.0).abs() < 1e-15);
        let (_, m) = sample_spec(Case::Case1, 0.5, 0.5, Some(0.0)).unwrap();
        assert!((m.c2() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pure_gaussian_flag() {
        let (s, _) = sample_spec(Case::Case1, 0.149, 0.2, None).unwrap();
        assert!(s.pure_gaussian);
    }

    #[test]
    fn split_is_a_partition() {
        let split = split_assignment(200, 11);
        assert_eq!(split.len(), 200);
        let count = |w: Split| split.values().filter(|s| **s == w).count();
        assert_eq!(
            (count(Split::Train), count(Split::Val), count(Split::Test)),
            (160, 20, 20)
        );
        assert_eq!(split, split_assignment(200, 11));
        assert_ne!(split, split_assignment(200, 12));
        assert!(split_assignment(0, 3).is_empty());
    }

    #[test]
    fn draws_are_per_sample_streams() {
        let a = draws(7, 3);
        assert_eq!(a, draws(7, 3));
        assert_ne!(a, draws(7, 4));
        assert_ne!(a, draws(8, 3));
        for v in [a.0, a.1, a.2] {
            assert!((0.0..1.0).contains(&v));
        }
    }
}
