//! Visual feature masking.
//!
//! Two corruption schemes over a `[frames, dim]` feature matrix, applied
//! during training only and re-drawn fresh for every example:
//!
//! * spatial: an exact, uniformly chosen fraction of individual positions
//!   is zeroed (no replacement);
//! * temporal: one contiguous band of feature columns is zeroed, the same
//!   band in every frame.

use rand::Rng;

use crate::autodiff::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("mask ratio must lie in [0, 1], got {value}")]
    InvalidRatio { value: f64 },

    #[error("masking needs a rank-2 feature matrix, got shape {shape:?}")]
    NotAMatrix { shape: Vec<usize> },
}

/// Fractions of features to corrupt. `spatial_ratio` applies to individual
/// positions; `temporal_ratio` to the width of the zeroed column band.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskConfig {
    pub spatial_ratio: f64,
    pub temporal_ratio: f64,
}

impl MaskConfig {
    pub const DEFAULT_SPATIAL: f64 = 0.30;
    pub const DEFAULT_TEMPORAL: f64 = 0.15;

    pub fn new(spatial_ratio: f64, temporal_ratio: f64) -> Result<Self, MaskError> {
        for value in [spatial_ratio, temporal_ratio] {
            if !(0.0..=1.0).contains(&value) {
                return Err(MaskError::InvalidRatio { value });
            }
        }
        Ok(MaskConfig {
            spatial_ratio,
            temporal_ratio,
        })
    }

    /// Both corruptions disabled; masking becomes the identity.
    pub fn disabled() -> Self {
        MaskConfig {
            spatial_ratio: 0.0,
            temporal_ratio: 0.0,
        }
    }
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            spatial_ratio: Self::DEFAULT_SPATIAL,
            temporal_ratio: Self::DEFAULT_TEMPORAL,
        }
    }
}

/// Boolean record of which positions were zeroed.
#[derive(Debug, Clone)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    hit: Vec<bool>,
}

impl Mask {
    fn clear(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            hit: vec![false; rows * cols],
        }
    }

    pub fn is_hit(&self, row: usize, col: usize) -> bool {
        self.hit[row * self.cols + col]
    }

    pub fn count(&self) -> usize {
        self.hit.iter().filter(|&&h| h).count()
    }
}

fn require_matrix(features: &Tensor) -> Result<(usize, usize), MaskError> {
    if features.rank() != 2 {
        return Err(MaskError::NotAMatrix {
            shape: features.shape().to_vec(),
        });
    }
    Ok((features.rows(), features.cols()))
}

/// Zeroes exactly `round(ratio * rows * cols)` positions chosen uniformly
/// without replacement. Unmasked positions are returned bit-for-bit intact.
pub fn mask_spatial<R: Rng>(
    features: &Tensor,
    ratio: f64,
    rng: &mut R,
) -> Result<(Tensor, Mask), MaskError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(MaskError::InvalidRatio { value: ratio });
    }
    let (rows, cols) = require_matrix(features)?;
    let total = rows * cols;
    let n = (ratio * total as f64).round() as usize;

    let mut out = features.clone();
    let mut mask = Mask::clear(rows, cols);
    if n > 0 {
        for idx in rand::seq::index::sample(rng, total, n) {
            out.data_mut()[idx] = 0.0;
            mask.hit[idx] = true;
        }
    }
    Ok((out, mask))
}

/// Zeroes one contiguous band of `round(ratio * cols)` feature columns with
/// a uniformly chosen start, identically in every frame. A zero-width band
/// is the identity.
pub fn mask_temporal_chunk<R: Rng>(
    features: &Tensor,
    ratio: f64,
    rng: &mut R,
) -> Result<(Tensor, Mask), MaskError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(MaskError::InvalidRatio { value: ratio });
    }
    let (rows, cols) = require_matrix(features)?;
    let width = (ratio * cols as f64).round() as usize;

    let mut out = features.clone();
    let mut mask = Mask::clear(rows, cols);
    if width > 0 {
        let start = rng.gen_range(0..=cols - width);
        for row in 0..rows {
            for col in start..start + width {
                out.data_mut()[row * cols + col] = 0.0;
                mask.hit[row * cols + col] = true;
            }
        }
    }
    Ok((out, mask))
}
