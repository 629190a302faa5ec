//! Multi-scale image front end.
//!
//! The backbone is pluggable: `Passthrough` accepts precomputed feature
//! rows (the synthetic datasets ship these), `TinyConv` runs three strided
//! convolution stages over a raw single-channel image, projects each
//! stage's channels to d_i, and stacks the flattened scales so the
//! three-scale concatenation structure is exercised end to end.

use crate::config::ModelDims;
use crate::error::{Error, Result};
use crate::numerics::{linear, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TinyConvSpec {
    /// Side length of the square input image.
    pub input_side: usize,
    pub strides: [usize; 3],
    pub channels: [usize; 3],
    /// Square kernel side; same-padding of (kernel-1)/2 is applied.
    pub kernel: usize,
}

impl Default for TinyConvSpec {
    fn default() -> Self {
        TinyConvSpec { input_side: 16, strides: [2, 2, 2], channels: [4, 8, 8], kernel: 3 }
    }
}

impl TinyConvSpec {
    fn stage_side(side: usize, kernel: usize, stride: usize) -> usize {
        let pad = (kernel - 1) / 2;
        (side + 2 * pad - kernel) / stride + 1
    }

    /// Spatial side of each stage output.
    pub fn stage_sides(&self) -> [usize; 3] {
        let s1 = Self::stage_side(self.input_side, self.kernel, self.strides[0]);
        let s2 = Self::stage_side(s1, self.kernel, self.strides[1]);
        let s3 = Self::stage_side(s2, self.kernel, self.strides[2]);
        [s1, s2, s3]
    }

    /// Total feature rows after flattening and stacking all three scales.
    pub fn output_rows(&self) -> usize {
        self.stage_sides().iter().map(|s| s * s).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::invalid("tiny-conv kernel must be odd"));
        }
        if self.strides.contains(&0) || self.channels.contains(&0) {
            return Err(Error::invalid("tiny-conv strides and channels must be positive"));
        }
        if self.stage_sides().contains(&0) {
            return Err(Error::invalid("tiny-conv input too small for the configured strides"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageBackend {
    /// Features arrive precomputed as an l_i × d_i matrix.
    Passthrough,
    /// Three strided convolution stages over a raw square image.
    TinyConv(TinyConvSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageInput {
    /// Precomputed feature rows, l_i × d_i.
    Features(Tensor),
    /// Raw single-channel square image.
    Raw(Tensor),
}

/// Tape handles for tiny-conv parameters: per stage a flattened kernel
/// [k²·c_in, c_out] with bias [1, c_out], plus a per-stage channel
/// projection [c_out, d_i].
#[derive(Debug, Clone)]
pub struct TinyConvVars {
    pub stages: Vec<(Var, Var)>,
    pub projs: Vec<Var>,
}

/// 0/1 gather matrix mapping flattened input positions to the (dy, dx)
/// patch element of each flattened output position.
fn patch_selector(in_side: usize, out_side: usize, stride: usize, pad: usize, dy: usize, dx: usize) -> Tensor {
    let mut data = vec![0.0; out_side * out_side * in_side * in_side];
    let cols = in_side * in_side;
    for oy in 0..out_side {
        for ox in 0..out_side {
            let iy = (oy * stride + dy) as isize - pad as isize;
            let ix = (ox * stride + dx) as isize - pad as isize;
            if iy < 0 || ix < 0 || iy >= in_side as isize || ix >= in_side as isize {
                continue;
            }
            let row = oy * out_side + ox;
            let col = iy as usize * in_side + ix as usize;
            data[row * cols + col] = 1.0;
        }
    }
    Tensor::new(vec![out_side * out_side, cols], data).expect("selector shape is consistent")
}

/// One stage: im2col by constant row selectors, then linear + tanh.
fn conv_stage(
    tape: &mut Tape,
    x: Var, // [in_side², c_in]
    in_side: usize,
    stride: usize,
    kernel: usize,
    weights: (Var, Var),
) -> Result<(Var, usize)> {
    let pad = (kernel - 1) / 2;
    let out_side = TinyConvSpec::stage_side(in_side, kernel, stride);
    let mut cols = None;
    for dy in 0..kernel {
        for dx in 0..kernel {
            let sel = tape.constant(patch_selector(in_side, out_side, stride, pad, dy, dx));
            let gathered = tape.matmul(sel, x)?;
            cols = Some(match cols {
                None => gathered,
                Some(prev) => tape.concat(prev, gathered, 1)?,
            });
        }
    }
    let cols = cols.expect("kernel is positive");
    let pre = linear(tape, cols, weights.0, weights.1)?;
    Ok((tape.tanh(pre), out_side))
}

/// Produce the l_i × d_i visual representation for one item.
pub fn encode_image_multiscale(
    tape: &mut Tape,
    input: &ImageInput,
    backend: &ImageBackend,
    vars: Option<&TinyConvVars>,
    dims: &ModelDims,
) -> Result<Var> {
    match (backend, input) {
        (ImageBackend::Passthrough, ImageInput::Features(f)) => {
            if f.shape() != [dims.l_i, dims.d_i] {
                return Err(Error::BadShape {
                    op: "encode_image_multiscale",
                    shape: f.shape().to_vec(),
                    expected: format!("[{}, {}]", dims.l_i, dims.d_i),
                });
            }
            Ok(tape.constant(f.clone()))
        }
        (ImageBackend::TinyConv(spec), ImageInput::Raw(img)) => {
            spec.validate()?;
            if img.shape() != [spec.input_side, spec.input_side] {
                return Err(Error::BadShape {
                    op: "encode_image_multiscale",
                    shape: img.shape().to_vec(),
                    expected: format!("[{0}, {0}]", spec.input_side),
                });
            }
            if spec.output_rows() != dims.l_i {
                return Err(Error::invalid(format!(
                    "tiny-conv produces {} rows but l_i is {}",
                    spec.output_rows(),
                    dims.l_i
                )));
            }
            let vars = vars.ok_or_else(|| {
                Error::invalid("tiny-conv backend requires tiny-conv parameters")
            })?;

            // flatten the image to a one-channel position matrix
            let x0 = Tensor::new(vec![img.numel(), 1], img.data().to_vec())?;
            let mut x = tape.constant(x0);
            let mut side = spec.input_side;
            let mut scales = Vec::with_capacity(3);
            for stage in 0..3 {
                let (out, out_side) =
                    conv_stage(tape, x, side, spec.strides[stage], spec.kernel, vars.stages[stage])?;
                let projected = tape.matmul(out, vars.projs[stage])?;
                scales.push(projected);
                x = out;
                side = out_side;
            }
            let mut stacked = scales[0];
            for &s in &scales[1..] {
                stacked = tape.concat(stacked, s, 0)?;
            }
            Ok(stacked)
        }
        _ => Err(Error::invalid("image input kind does not match the configured backend")),
    }
}
