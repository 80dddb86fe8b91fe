//! `EMW1` binary container and its JSON sidecar.
//!
//! Layout (little-endian): magic `EMW1`, version `u32`, case `u8`,
//! n_samples `u32`, n_steps `u32`, n_cells `u32`, seed `u64`, then per sample
//! id `u32`, `r1 r2 r3 sigma x_s k` as `f64`, flags `u8`, `c2` `f64` and the
//! row-major `(n_steps + 1) x n_cells` matrix of `E` values.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{split_assignment, time_offset, Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::packet::{Case, WavePacketSpec, ENVELOPE_CENTER};

pub const MAGIC: &[u8; 4] = b"EMW1";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_BYTES: u64 = 4 + 4 + 1 + 4 + 4 + 4 + 8;
const FLAG_PURE_GAUSSIAN: u8 = 1;
const FLAG_HAS_R3: u8 = 2;

fn sample_bytes(rows: u64, cells: u64) -> u64 {
    4 + 6 * 8 + 1 + 8 + rows * cells * 8
}

/// Serializes `ds` into the binary container.
pub fn encode(ds: &Dataset) -> Vec<u8> {
    let rows = ds.n_steps as u64 + 1;
    let cells = ds.grid.n_cells() as u64;
    let mut out = Vec::with_capacity((HEADER_BYTES + ds.samples.len() as u64 * sample_bytes(rows, cells)) as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(ds.case.number());
    out.extend_from_slice(&(ds.samples.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.n_steps as u32).to_le_bytes());
    out.extend_from_slice(&(cells as u32).to_le_bytes());
    out.extend_from_slice(&ds.seed.to_le_bytes());
    for s in &ds.samples {
        out.extend_from_slice(&s.id.to_le_bytes());
        let sp = &s.spec;
        for v in [sp.r1, sp.r2, sp.r3.unwrap_or(0.0), sp.sigma, sp.x_s, sp.k] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut flags = 0u8;
        if sp.pure_gaussian {
            flags |= FLAG_PURE_GAUSSIAN;
        }
        if sp.r3.is_some() {
            flags |= FLAG_HAS_R3;
        }
        out.push(flags);
        out.extend_from_slice(&s.c2.to_le_bytes());
        for row in &s.e_fields {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        a
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

/// Parses a binary container produced by [`encode`].
pub fn decode(buf: &[u8]) -> Result<Dataset> {
    if (buf.len() as u64) < HEADER_BYTES {
        return Err(Error::ShapeMismatch {
            expected: HEADER_BYTES,
            found: buf.len() as u64,
        });
    }
    if &buf[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected \"EMW1\"", &buf[..4])));
    }
    let mut c = Cursor { buf, pos: 4 };
    let version = c.u32();
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let case_byte = c.u8();
    let case = Case::from_number(case_byte).ok_or_else(|| Error::Format(format!("unknown case tag {case_byte}")))?;
    let n_samples = c.u32() as u64;
    let n_steps = c.u32() as u64;
    let n_cells = c.u32() as u64;
    let seed = c.u64();

    let expected = HEADER_BYTES + n_samples * sample_bytes(n_steps + 1, n_cells);
    if expected != buf.len() as u64 {
        return Err(Error::ShapeMismatch {
            expected,
            found: buf.len() as u64,
        });
    }
    let grid = Grid1D::unit(n_cells as usize)?;

    let mut samples = Vec::with_capacity(n_samples as usize);
    for _ in 0..n_samples {
        let id = c.u32();
        let [r1, r2, r3, sigma, x_s, k] = [(); 6].map(|_| c.f64());
        let flags = c.u8();
        let c2 = c.f64();
        let e_fields = (0..=n_steps).map(|_| (0..n_cells).map(|_| c.f64()).collect()).collect();
        samples.push(Sample {
            id,
            spec: WavePacketSpec {
                r1,
                r2,
                r3: (flags & FLAG_HAS_R3 != 0).then_some(r3),
                x_g: ENVELOPE_CENTER,
                sigma,
                x_s,
                k,
                pure_gaussian: flags & FLAG_PURE_GAUSSIAN != 0,
                case,
            },
            c2,
            e_fields,
        });
    }

    Ok(Dataset {
        case,
        samples,
        split: split_assignment(n_samples as usize, seed),
        grid,
        n_steps: n_steps as usize,
        time_offset: time_offset(case),
        seed,
    })
}

/// Human-readable summary written next to the binary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub magic: String,
    pub version: u32,
    pub case: u8,
    pub n_samples: usize,
    pub n_steps: usize,
    pub n_cells: usize,
    pub seed: u64,
    pub time_offset: usize,
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl DatasetManifest {
    pub fn of(ds: &Dataset) -> Self {
        Self {
            magic: String::from_utf8_lossy(MAGIC).into_owned(),
            version: FORMAT_VERSION,
            case: ds.case.number(),
            n_samples: ds.samples.len(),
            n_steps: ds.n_steps,
            n_cells: ds.grid.n_cells(),
            seed: ds.seed,
            time_offset: ds.time_offset,
            train: ds.split_ids(Split::Train),
            val: ds.split_ids(Split::Val),
            test: ds.split_ids(Split::Test),
        }
    }
}

/// Path of the JSON sidecar for `path` (`case1.emw` -> `case1.emw.json`).
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn write_manifest(ds: &Dataset, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&DatasetManifest::of(ds))?;
    fs::write(manifest_path(path), json + "\n")?;
    Ok(())
}

/// Writes the binary container and its sidecar manifest.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(ds))?;
    f.flush()?;
    write_manifest(ds, path)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode(&fs::read(path)?)
}
