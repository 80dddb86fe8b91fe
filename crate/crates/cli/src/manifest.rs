//! Per-run audit record: inputs and outputs with their SHA-256 digests.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Self> {
        let mut f = fs::File::open(path).map_err(|_| CliError::MissingFile(path.to_path_buf()))?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            bytes += n as u64;
        }
        Ok(Self {
            path: path.display().to_string(),
            sha256: format!("{:x}", hasher.finalize()),
            bytes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub args: Vec<String>,
    pub config_path: Option<String>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub test_mode: bool,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub wall_clock_s: f64,
    /// Extra timings reported by the subcommand (e.g. training time).
    pub timings: Vec<(String, f64)>,
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// What a subcommand touched, filled in while it runs.
#[derive(Debug, Default)]
pub struct RunRecord {
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timings: Vec<(String, f64)>,
    /// Where the manifest goes.
    pub manifest: Option<PathBuf>,
}

pub struct Clock {
    started_ms: u128,
    start: Instant,
}

impl Clock {
    pub fn start() -> Self {
        Self {
            started_ms: unix_ms(),
            start: Instant::now(),
        }
    }

    pub fn finish(
        &self,
        subcommand: &str,
        args: Vec<String>,
        jobs: Option<usize>,
        test_mode: bool,
        record: &RunRecord,
    ) -> Result<RunManifest> {
        let hash = |paths: &[PathBuf]| paths.iter().map(|p| Artifact::of(p)).collect::<Result<Vec<_>>>();
        Ok(RunManifest {
            subcommand: subcommand.to_string(),
            args,
            config_path: record.config_path.as_ref().map(|p| p.display().to_string()),
            seed: record.seed,
            jobs,
            test_mode,
            inputs: hash(&record.inputs)?,
            outputs: hash(&record.outputs)?,
            started_unix_ms: self.started_ms,
            finished_unix_ms: unix_ms(),
            wall_clock_s: self.start.elapsed().as_secs_f64(),
            timings: record.timings.clone(),
        })
    }
}

/// Default manifest location for a run whose main output is `out`.
pub fn manifest_for(out: &Path) -> PathBuf {
    if out.is_dir() {
        return out.join("run.json");
    }
    let mut p = out.as_os_str().to_owned();
    p.push(".run.json");
    PathBuf::from(p)
}

pub fn write(manifest: &RunManifest, path: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(manifest).map_err(|e| CliError::Data(e.to_string()))?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}
