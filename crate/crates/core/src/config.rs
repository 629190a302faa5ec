//! Model dimension configuration shared by every module.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Architecture dimensions. Defaults follow the reference configuration:
/// 128-wide hidden layers, n-gram kernels {1, 3, 5}, two graph inference
/// layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Vocabulary size including the PAD/UNK reserved ids.
    pub vocab_size: usize,
    /// Token positions per text (sequences are padded/truncated to this).
    pub l_d: usize,
    /// Image feature rows per item.
    pub l_i: usize,
    /// Word embedding width.
    pub d_emb: usize,
    /// Text feature width (the per-kernel output widths sum to this).
    pub d_d: usize,
    /// Image feature width.
    pub d_i: usize,
    /// Shared latent width.
    pub d_c: usize,
    /// 1-D convolution kernel sizes for the text encoder.
    pub kernel_sizes: Vec<usize>,
    /// Evidence-graph inference layers (L).
    pub graph_layers: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            vocab_size: 1000,
            l_d: 32,
            l_i: 12,
            d_emb: 64,
            d_d: 128,
            d_i: 128,
            d_c: 128,
            kernel_sizes: vec![1, 3, 5],
            graph_layers: 2,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::invalid("vocab_size must be >= 2 (PAD and UNK)"));
        }
        for (name, v) in [
            ("l_d", self.l_d),
            ("l_i", self.l_i),
            ("d_emb", self.d_emb),
            ("d_d", self.d_d),
            ("d_i", self.d_i),
            ("d_c", self.d_c),
            ("graph_layers", self.graph_layers),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.kernel_sizes.is_empty() {
            return Err(Error::invalid("at least one kernel size required"));
        }
        for &c in &self.kernel_sizes {
            if c % 2 == 0 {
                return Err(Error::invalid(format!(
                    "kernel size {c} is even; same-length convolution needs odd sizes"
                )));
            }
        }
        if self.d_d < self.kernel_sizes.len() {
            return Err(Error::invalid("d_d smaller than the number of kernels"));
        }
        Ok(())
    }

    /// Output width for each kernel; widths sum to `d_d`, remainder spread
    /// over the first kernels.
    pub fn kernel_out_widths(&self) -> Vec<usize> {
        let k = self.kernel_sizes.len();
        let base = self.d_d / k;
        let extra = self.d_d % k;
        (0..k).map(|i| base + usize::from(i < extra)).collect()
    }
}
