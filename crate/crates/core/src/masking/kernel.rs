//! Kernel masks for the masked convolution block.
//!
//! Rows are 1-indexed kernel taps. The static mask keeps tap `i` iff
//! `i ≤ k/2 − m` or `i ≥ k/2 + m` (real division), i.e. the central `2m`
//! taps are removed. The intensity-guided variant additionally removes the
//! tap whose position collects the highest average score.

use ndarray::Array2;

use crate::autograd::Mat;
use crate::error::{EmsError, Result};

fn tap_kept(i: usize, k: usize, m: usize) -> bool {
    // i ≤ k/2 − m  ⇔  2i ≤ k − 2m ;  i ≥ k/2 + m  ⇔  2i ≥ k + 2m
    let (i2, k, m2) = (2 * i as i64, k as i64, 2 * m as i64);
    i2 <= k - m2 || i2 >= k + m2
}

/// Binary `k×d` mask `D`; identical across the `d` channel columns.
pub fn build_kernel_mask(k: usize, m: usize, d: usize) -> Result<Mat> {
    if k < 3 || k % 2 == 0 {
        return Err(EmsError::invalid(format!("kernel size must be odd and at least 3, got {k}")));
    }
    if m == 0 || d == 0 {
        return Err(EmsError::invalid(format!("need m >= 1 and d >= 1, got m={m} d={d}")));
    }
    if !(1..=k).any(|i| tap_kept(i, k, m)) {
        return Err(EmsError::invalid(format!("kernel mask k={k} m={m} removes every tap")));
    }
    Ok(Array2::from_shape_fn((k, d), |(r, _)| if tap_kept(r + 1, k, m) { 1.0 } else { 0.0 }))
}

/// Center parameter `m` for a "mask size" given as the number of centrally
/// removed taps. The static mask always removes an even count `2m`, so odd
/// sizes round up.
pub fn center_param_for_mask_size(mask_size: usize) -> usize {
    mask_size.div_ceil(2).max(1)
}

/// Slides a width-`k` window over `scores` with the given stride and returns
/// the 1-indexed kernel position with the highest average score over all
/// complete windows (lowest position on ties).
pub fn ems_kernel_position(scores: &[f64], k: usize, stride: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(EmsError::invalid("kernel size and stride must be positive"));
    }
    if scores.len() < k {
        return Err(EmsError::invalid(format!("sequence of {} frames is shorter than the kernel ({k})", scores.len())));
    }
    let mut sums = vec![0.0; k];
    let mut windows = 0usize;
    let mut start = 0;
    while start + k <= scores.len() {
        for (p, s) in sums.iter_mut().enumerate() {
            *s += scores[start + p];
        }
        windows += 1;
        start += stride;
    }
    let mut best = 0;
    for p in 1..k {
        if sums[p] / windows as f64 > sums[best] / windows as f64 {
            best = p;
        }
    }
    Ok(best + 1)
}

/// `D` with row `position` (1-indexed) forced to zero.
pub fn combine_kernel_masks(d: &Mat, position: usize) -> Result<Mat> {
    if position == 0 || position > d.nrows() {
        return Err(EmsError::invalid(format!("kernel position {position} outside [1, {}]", d.nrows())));
    }
    let mut out = d.clone();
    out.row_mut(position - 1).fill(0.0);
    if out.iter().all(|&v| v == 0.0) {
        return Err(EmsError::invalid("effective kernel mask removes every tap"));
    }
    Ok(out)
}

/// Full description of a masked convolution's tap mask.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMaskSpec {
    pub kernel_size: usize,
    pub center_param: usize,
    pub channels: usize,
    pub stride: usize,
    base: Mat,
}

impl KernelMaskSpec {
    pub fn new(kernel_size: usize, center_param: usize, channels: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(EmsError::invalid("window stride must be positive"));
        }
        let base = build_kernel_mask(kernel_size, center_param, channels)?;
        Ok(Self { kernel_size, center_param, channels, stride, base })
    }

    /// The static mask `D`.
    pub fn base(&self) -> &Mat {
        &self.base
    }

    pub fn ems_position(&self, scores: &[f64]) -> Result<usize> {
        ems_kernel_position(scores, self.kernel_size, self.stride)
    }

    /// Mask applied for one utterance: `D` alone, or `D` with the
    /// intensity-selected tap removed.
    pub fn effective(&self, scores: Option<&[f64]>) -> Result<Mat> {
        match scores {
            Some(s) => combine_kernel_masks(&self.base, self.ems_position(s)?),
            None => Ok(self.base.clone()),
        }
    }
}
