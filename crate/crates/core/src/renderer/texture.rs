use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ppm::{self, Depth};
use crate::scene::Mesh;

/// Texture grid size in texels. Texel ids are row-major: `row * width + col`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TextureDims {
    pub width: usize,
    pub height: usize,
}

impl TextureDims {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidTexture(format!("{width}x{height} texture")));
        }
        Ok(Self { width, height })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn id(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn coord(&self, id: usize) -> (usize, usize) {
        (id % self.width, id / self.width)
    }

    /// Nearest texel for a uv coordinate; v = 1 is the top row.
    #[inline]
    pub fn texel_at(&self, uv: [f64; 2]) -> (u32, u32) {
        let col = ((uv[0] * self.width as f64).floor().max(0.0) as usize).min(self.width - 1);
        let row = (((1.0 - uv[1]) * self.height as f64).floor().max(0.0) as usize).min(self.height - 1);
        (col as u32, row as u32)
    }
}

/// The boolean mask K selecting the trainable texels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainableMask {
    dims: TextureDims,
    bits: Vec<bool>,
}

impl TrainableMask {
    pub fn new(dims: TextureDims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                actual: bits.len(),
            });
        }
        if !bits.iter().any(|&b| b) {
            return Err(Error::InvalidTexture("mask has no trainable texels".into()));
        }
        Ok(Self { dims, bits })
    }

    pub fn all(dims: TextureDims) -> Self {
        Self {
            dims,
            bits: vec![true; dims.len()],
        }
    }

    /// Texels whose square overlaps any uv triangle of the mesh, i.e. every
    /// texel nearest-texel sampling can ever reach.
    pub fn from_uv_charts(mesh: &Mesh, dims: TextureDims) -> Result<Self> {
        let mut bits = vec![false; dims.len()];
        let (w, h) = (dims.width as f64, dims.height as f64);
        for f in 0..mesh.faces().len() {
            // texel space: x = u*w, y = (1-v)*h
            let tri = mesh.face_uvs(f).map(|[u, v]| [u * w, (1.0 - v) * h]);
            let x0 = tri.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let x1 = (tri.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max).floor() as usize).min(dims.width - 1);
            let y0 = tri.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let y1 = (tri.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max).floor() as usize).min(dims.height - 1);
            for row in y0..=y1 {
                for col in x0..=x1 {
                    let cell = [col as f64, row as f64, col as f64 + 1.0, row as f64 + 1.0];
                    if triangle_overlaps_box(&tri, cell) {
                        bits[dims.id(col, row)] = true;
                    }
                }
            }
        }
        Self::new(dims, bits)
    }

    /// Any nonzero sample marks the texel trainable.
    pub fn from_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let r = ppm::read(path)?;
        let dims = TextureDims::new(r.width, r.height)?;
        let bits = r
            .data
            .chunks_exact(r.channels)
            .map(|px| px.iter().any(|&v| v > 0.0))
            .collect();
        Self::new(dims, bits)
    }

    pub fn dims(&self) -> TextureDims {
        self.dims
    }

    #[inline]
    pub fn is_trainable(&self, id: usize) -> bool {
        self.bits[id]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Trainable texel ids in ascending order.
    pub fn trainable_ids(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

// Separating-axis test between a triangle and an axis-aligned box; touching
// counts as overlap.
fn triangle_overlaps_box(tri: &[[f64; 2]; 3], b: [f64; 4]) -> bool {
    let corners = [[b[0], b[1]], [b[2], b[1]], [b[2], b[3]], [b[0], b[3]]];
    for axis in 0..2 {
        let lo = tri.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
        let hi = tri.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
        if hi < b[axis] || lo > b[axis + 2] {
            return false;
        }
    }
    for i in 0..3 {
        let (p, q) = (tri[i], tri[(i + 1) % 3]);
        let n = [q[1] - p[1], p[0] - q[0]];
        let proj = |v: [f64; 2]| n[0] * v[0] + n[1] * v[1];
        let t = tri.map(proj);
        let c = corners.map(proj);
        let (tlo, thi) = (t.iter().cloned().fold(f64::INFINITY, f64::min), t.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let (clo, chi) = (c.iter().cloned().fold(f64::INFINITY, f64::min), c.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        if thi < clo || tlo > chi {
            return false;
        }
    }
    true
}

/// Trainable RGB texture. Values live in `[0, 1]`; the mask is fixed at
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    dims: TextureDims,
    rgb: Vec<f64>,
    mask: TrainableMask,
}

impl Texture {
    pub fn new(rgb: Vec<f64>, mask: TrainableMask) -> Result<Self> {
        let dims = mask.dims();
        if rgb.len() != dims.len() * 3 {
            return Err(Error::LengthMismatch {
                expected: dims.len() * 3,
                actual: rgb.len(),
            });
        }
        let rgb = rgb.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self { dims, rgb, mask })
    }

    pub fn uniform(color: [f64; 3], mask: TrainableMask) -> Self {
        let rgb = (0..mask.dims().len()).flat_map(|_| color).collect();
        Self::new(rgb, mask).expect("length matches by construction")
    }

    /// Uniform random values in `[0.4, 0.6]` from a seeded generator.
    pub fn random_init(mask: TrainableMask, rng: &mut impl Rng) -> Self {
        let rgb = (0..mask.dims().len() * 3)
            .map(|_| rng.random_range(0.4..=0.6))
            .collect();
        Self::new(rgb, mask).expect("length matches by construction")
    }

    pub fn seeded(mask: TrainableMask, seed: u64) -> Self {
        Self::random_init(mask, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Loads RGB values from a PPM; the mask must match its dimensions.
    pub fn from_ppm(path: impl AsRef<Path>, mask: TrainableMask) -> Result<Self> {
        let r = ppm::read(path)?;
        if (r.width, r.height) != (mask.dims().width, mask.dims().height) {
            return Err(Error::DimensionMismatch {
                expected: (mask.dims().width, mask.dims().height),
                actual: (r.width, r.height),
            });
        }
        let rgb = match r.channels {
            3 => r.data,
            _ => r.data.iter().flat_map(|&g| [g, g, g]).collect(),
        };
        Self::new(rgb, mask)
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        ppm::write_p6(path, self.dims.width, self.dims.height, &self.rgb, Depth::Sixteen)
    }

    pub fn dims(&self) -> TextureDims {
        self.dims
    }

    pub fn mask(&self) -> &TrainableMask {
        &self.mask
    }

    pub fn rgb(&self) -> &[f64] {
        &self.rgb
    }

    #[inline]
    pub fn texel(&self, id: usize) -> [f64; 3] {
        [self.rgb[3 * id], self.rgb[3 * id + 1], self.rgb[3 * id + 2]]
    }

    /// Writes one trainable texel channel, clamped to `[0, 1]`. Masked texels
    /// are left alone and `false` is returned.
    pub fn set_channel(&mut self, id: usize, channel: usize, value: f64) -> bool {
        if !self.mask.is_trainable(id) {
            return false;
        }
        self.rgb[3 * id + channel] = value.clamp(0.0, 1.0);
        true
    }

    /// Sets a texel regardless of the mask. Intended for building fixtures.
    pub fn set_texel_unmasked(&mut self, id: usize, rgb: [f64; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.rgb[3 * id + c] = v.clamp(0.0, 1.0);
        }
    }
}

/// Texture-shaped gradient with the set of texels holding nonzero values.
#[derive(Clone, Debug, PartialEq)]
pub struct GradField {
    dims: TextureDims,
    grad: Vec<f64>,
    touched: Vec<usize>,
}

impl GradField {
    pub fn zeros(dims: TextureDims) -> Self {
        Self {
            dims,
            grad: vec![0.0; dims.len() * 3],
            touched: Vec::new(),
        }
    }

    /// Wraps a dense `3 * width * height` buffer; touched texels are exactly
    /// those with a nonzero channel.
    pub fn from_dense(dims: TextureDims, grad: Vec<f64>) -> Result<Self> {
        if grad.len() != dims.len() * 3 {
            return Err(Error::LengthMismatch {
                expected: dims.len() * 3,
                actual: grad.len(),
            });
        }
        let touched = grad
            .chunks_exact(3)
            .enumerate()
            .filter(|(_, g)| g.iter().any(|&v| v != 0.0))
            .map(|(i, _)| i)
            .collect();
        Ok(Self { dims, grad, touched })
    }

    pub fn dims(&self) -> TextureDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.grad
    }

    pub fn into_dense(self) -> Vec<f64> {
        self.grad
    }

    /// Sorted texel ids with nonzero gradient.
    pub fn touched(&self) -> &[usize] {
        &self.touched
    }

    pub fn is_touched(&self, id: usize) -> bool {
        self.touched.binary_search(&id).is_ok()
    }

    #[inline]
    pub fn get(&self, id: usize) -> [f64; 3] {
        [self.grad[3 * id], self.grad[3 * id + 1], self.grad[3 * id + 2]]
    }

    pub fn dot(&self, other: &GradField) -> f64 {
        self.grad.iter().zip(&other.grad).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.touched.is_empty()
    }

    /// Zeroes every texel outside the trainable mask.
    pub fn masked(mut self, mask: &TrainableMask) -> Self {
        assert_eq!(mask.dims(), self.dims, "mask and gradient dims differ");
        self.touched.retain(|&id| {
            let keep = mask.is_trainable(id);
            if !keep {
                self.grad[3 * id..3 * id + 3].fill(0.0);
            }
            keep
        });
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_dense(self.dims, self.grad.iter().map(|v| v * s).collect()).expect("same length")
    }
}
