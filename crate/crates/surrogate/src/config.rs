use serde::{Deserialize, Serialize};

use crate::error::{Result, SurrogateError};
use crate::tokenizer::TokenLayout;

/// Hidden sizes of the hyperparameter search grid.
pub const GRID_HIDDEN: [usize; 2] = [256, 512];
/// Patch lengths of the hyperparameter search grid.
pub const GRID_PATCH: [usize; 3] = [33, 66, 132];
/// Layer counts of the hyperparameter search grid.
pub const GRID_DEPTH: [usize; 3] = [6, 10, 12];
/// Overlap widths of the hyperparameter search grid.
pub const GRID_OVERLAP: [usize; 2] = [0, 1];
/// Mode counts of the truncation ablation.
pub const ABLATION_MODES: [usize; 3] = [4, 8, 16];

/// Architecture of the dual-path surrogate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_cells: usize,
    pub hidden_dim: usize,
    pub patch_len: usize,
    pub overlap: usize,
    /// Transformer layers per path.
    pub depth: usize,
    pub n_heads: usize,
    /// Input snapshots `m`.
    pub window: usize,
    /// Retained Fourier modes `r`.
    pub fourier_modes: usize,
    pub use_frequency_path: bool,
    pub mlp_ratio: usize,
    /// Predict `s_t + F(window)` instead of `F(window)`.
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_cells: 256,
            hidden_dim: 128,
            patch_len: 33,
            overlap: 1,
            depth: 4,
            n_heads: 4,
            window: 5,
            fourier_modes: 8,
            use_frequency_path: true,
            mlp_ratio: 4,
            residual: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SurrogateError::Config(msg));
        if self.hidden_dim == 0 || self.n_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "hidden_dim {} must be a positive multiple of n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be at least 1".into());
        }
        TokenLayout::new(self.n_cells, self.patch_len, self.overlap)?;
        let max = self.patch_len / 2 + 1;
        if self.use_frequency_path && (self.fourier_modes == 0 || self.fourier_modes > max) {
            return bad(format!(
                "fourier_modes {} outside 1..={max} for patch_len {}",
                self.fourier_modes, self.patch_len
            ));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<TokenLayout> {
        TokenLayout::new(self.n_cells, self.patch_len, self.overlap)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }
}
