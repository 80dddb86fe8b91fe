//! Overlapping patch tokenizer and its averaging inverse.

use std::sync::Arc;

use emwave_tensor::Tensor;

use crate::error::{Result, SurrogateError};

/// Patch geometry for one field length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub n_cells: usize,
    pub patch_len: usize,
    pub overlap: usize,
    pub stride: usize,
    pub n_padded: usize,
    pub n_patches: usize,
}

impl TokenLayout {
    pub fn new(n_cells: usize, patch_len: usize, overlap: usize) -> Result<Self> {
        if patch_len <= overlap {
            return Err(SurrogateError::Config(format!(
                "patch_len {patch_len} must exceed overlap {overlap}"
            )));
        }
        if patch_len > n_cells {
            return Err(SurrogateError::Config(format!(
                "patch_len {patch_len} exceeds n_cells {n_cells}"
            )));
        }
        let stride = patch_len - overlap;
        let extra = (n_cells - patch_len).div_ceil(stride);
        let n_padded = patch_len + extra * stride;
        Ok(Self {
            n_cells,
            patch_len,
            overlap,
            stride,
            n_padded,
            n_patches: extra + 1,
        })
    }

    /// Cells per token for an `m`-snapshot window.
    pub fn token_len(&self, m: usize) -> usize {
        m * self.patch_len
    }

    /// Writes the tokens of one window (rows oldest first) into `out`,
    /// laid out `[patch][snapshot][offset]`.
    pub fn tokenize_into(&self, window: &[&[f64]], out: &mut [f64]) -> Result<()> {
        let (p, m) = (self.patch_len, window.len());
        if out.len() != self.n_patches * m * p {
            return Err(SurrogateError::Shape(format!(
                "token buffer holds {} values, layout needs {}",
                out.len(),
                self.n_patches * m * p
            )));
        }
        for (s, row) in window.iter().enumerate() {
            if row.len() != self.n_cells {
                return Err(SurrogateError::Shape(format!(
                    "snapshot {s} has {} cells, expected {}",
                    row.len(),
                    self.n_cells
                )));
            }
        }
        let last = self.n_cells - 1;
        for j in 0..self.n_patches {
            for (s, row) in window.iter().enumerate() {
                let dst = &mut out[(j * m + s) * p..(j * m + s + 1) * p];
                for (q, d) in dst.iter_mut().enumerate() {
                    *d = row[(j * self.stride + q).min(last)];
                }
            }
        }
        Ok(())
    }

    /// Number of patches covering each cell.
    pub fn coverage(&self) -> Vec<usize> {
        let mut count = vec![0usize; self.n_cells];
        for j in 0..self.n_patches {
            for q in 0..self.patch_len {
                let cell = j * self.stride + q;
                if cell < self.n_cells {
                    count[cell] += 1;
                }
            }
        }
        count
    }

    /// Averages patch values `[n_patches * patch_len]` back onto the cells.
    pub fn detokenize(&self, tokens: &[f64]) -> Result<Vec<f64>> {
        if tokens.len() != self.n_patches * self.patch_len {
            return Err(SurrogateError::Shape(format!(
                "{} patch values for a layout of {} x {}",
                tokens.len(),
                self.n_patches,
                self.patch_len
            )));
        }
        // mean as first value plus averaged deviations, exact when patches agree
        let mut first: Vec<Option<f64>> = vec![None; self.n_cells];
        let mut dev = vec![0.0; self.n_cells];
        for j in 0..self.n_patches {
            for q in 0..self.patch_len {
                let cell = j * self.stride + q;
                if cell < self.n_cells {
                    let v = tokens[j * self.patch_len + q];
                    match first[cell] {
                        None => first[cell] = Some(v),
                        Some(f) => dev[cell] += v - f,
                    }
                }
            }
        }
        Ok(first
            .iter()
            .zip(&dev)
            .zip(self.coverage())
            .map(|((f, d), c)| f.unwrap_or(0.0) + d / c as f64)
            .collect())
    }

    /// `[n_patches * patch_len, n_cells]` matrix applying [`Self::detokenize`] to row vectors.
    pub fn detokenize_matrix(&self) -> Arc<Tensor> {
        let (p, n) = (self.patch_len, self.n_cells);
        let count = self.coverage();
        let mut m = Tensor::zeros(&[self.n_patches * p, n]);
        for j in 0..self.n_patches {
            for q in 0..p {
                let cell = j * self.stride + q;
                if cell < n {
                    m.data_mut()[(j * p + q) * n + cell] = 1.0 / count[cell] as f64;
                }
            }
        }
        Arc::new(m)
    }
}

/// Tokens of one window: `tokens[j]` concatenates the `m` snapshots over patch `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub layout: TokenLayout,
    pub window: usize,
    pub tokens: Vec<Vec<f64>>,
}

pub fn tokenize_overlap(window: &[Vec<f64>], patch_len: usize, overlap: usize) -> Result<TokenGrid> {
    let first = window
        .first()
        .ok_or_else(|| SurrogateError::Shape("empty window".into()))?;
    let layout = TokenLayout::new(first.len(), patch_len, overlap)?;
    let rows: Vec<&[f64]> = window.iter().map(Vec::as_slice).collect();
    let len = layout.token_len(rows.len());
    let mut flat = vec![0.0; layout.n_patches * len];
    layout.tokenize_into(&rows, &mut flat)?;
    Ok(TokenGrid {
        layout,
        window: rows.len(),
        tokens: flat.chunks(len).map(<[f64]>::to_vec).collect(),
    })
}

/// Inverse of [`tokenize_overlap`] for single-snapshot patches `[n_patches][p]`.
pub fn detokenize_overlap(tokens: &[Vec<f64>], patch_len: usize, overlap: usize, n_cells: usize) -> Result<Vec<f64>> {
    let layout = TokenLayout::new(n_cells, patch_len, overlap)?;
    if tokens.len() != layout.n_patches || tokens.iter().any(|t| t.len() != patch_len) {
        return Err(SurrogateError::Shape(format!(
            "expected {} patches of {patch_len} values",
            layout.n_patches
        )));
    }
    layout.detokenize(&tokens.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_counts() {
        let l = TokenLayout::new(256, 33, 1).unwrap();
        assert_eq!((l.n_padded, l.n_patches), (257, 8));
        let l = TokenLayout::new(256, 132, 0).unwrap();
        assert_eq!((l.n_padded, l.n_patches), (264, 2));
        let l = TokenLayout::new(4, 4, 0).unwrap();
        assert_eq!((l.n_padded, l.n_patches), (4, 1));
    }

    #[test]
    fn detokenize_matrix_matches_loop() {
        let l = TokenLayout::new(10, 4, 1).unwrap();
        let t: Vec<f64> = (0..l.n_patches * 4).map(|i| (i as f64).sin()).collect();
        let direct = l.detokenize(&t).unwrap();
        let m = l.detokenize_matrix();
        for (c, d) in direct.iter().enumerate() {
            let v: f64 = (0..t.len()).map(|k| t[k] * m.data()[k * 10 + c]).sum();
            assert!((v - d).abs() < 1e-15);
        }
    }
}
