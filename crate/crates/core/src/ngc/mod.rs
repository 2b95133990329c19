//! Nearest gradient calibration.
//!
//! After backpropagation only the texels a view actually sampled (T_U) carry
//! gradient. [`calibrate`] gives every other trainable texel the gradient of
//! its nearest sampled texel, provided that neighbour lies within the search
//! radius τ (Euclidean distance on the texel grid). Texels farther than τ from
//! every sample, and all masked texels, stay zero.

mod kdtree;

pub use kdtree::{Neighbor, TexelCoord, TexelIndex, LEAF_SIZE};

use crate::error::{Error, Result};
use crate::renderer::{GradField, TextureDims, TrainableMask};

/// Search radius τ in texel units.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct SearchRadius(f64);

impl SearchRadius {
    pub const ZERO: SearchRadius = SearchRadius(0.0);
    pub const UNBOUNDED: SearchRadius = SearchRadius(f64::MAX);

    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::InvalidConfig(format!("search radius {tau} must be finite and >= 0")));
        }
        Ok(Self(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Whether a neighbour at squared distance `dist_sq` is close enough.
    #[inline]
    pub fn admits(self, dist_sq: u64) -> bool {
        (dist_sq as f64).sqrt() <= self.0
    }
}

impl Default for SearchRadius {
    fn default() -> Self {
        SearchRadius(8.0)
    }
}

/// Extends `grad` from its sampled texels to unsampled trainable texels.
///
/// Sampled texels keep their gradient unchanged; an unsampled trainable texel
/// `p` receives exactly the gradient of `q = argmin ‖p − q‖₂` over sampled
/// texels when `‖p − q‖₂ ≤ τ`. The index is rebuilt on every call since T_U
/// differs per view.
pub fn calibrate(grad: &GradField, mask: &TrainableMask, tau: SearchRadius) -> Result<GradField> {
    let dims = grad.dims();
    if mask.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: (dims.width, dims.height),
            actual: (mask.dims().width, mask.dims().height),
        });
    }
    let sampled: Vec<usize> = grad
        .touched()
        .iter()
        .copied()
        .filter(|&id| mask.is_trainable(id))
        .collect();
    let input = grad.clone().masked(mask);
    if sampled.is_empty() {
        return Ok(input);
    }

    let index = TexelIndex::from_ids(&sampled, dims)?;
    let mut out = input.as_slice().to_vec();
    let mut is_sampled = vec![false; dims.len()];
    for &id in &sampled {
        is_sampled[id] = true;
    }
    for id in 0..dims.len() {
        if !mask.is_trainable(id) || is_sampled[id] {
            continue;
        }
        let (c, r) = dims.coord(id);
        let n = index.nearest(TexelCoord::new(c as u32, r as u32));
        if tau.admits(n.dist_sq) {
            out[3 * id..3 * id + 3].copy_from_slice(&input.get(n.id));
        }
    }
    GradField::from_dense(dims, out)
}

/// Trainable texels NGC would fill for a view sampling `sampled`: the sampled
/// set itself plus every trainable texel within τ of it.
pub fn calibrated_coverage(sampled: &[usize], mask: &TrainableMask, tau: SearchRadius) -> Result<Vec<usize>> {
    let dims: TextureDims = mask.dims();
    let mut unit = vec![0.0; dims.len() * 3];
    for &id in sampled {
        if mask.is_trainable(id) {
            unit[3 * id] = 1.0;
        }
    }
    let field = GradField::from_dense(dims, unit)?;
    Ok(calibrate(&field, mask, tau)?.touched().to_vec())
}
