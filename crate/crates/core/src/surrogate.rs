//! Frozen two-layer convolutional scorer standing in for an object detector.
//!
//! `score = mean(ReLU(conv2(ReLU(conv1(image)))))` over every output position
//! and channel. Both convolutions use valid padding, stride 1 and no bias, so
//! the score is positively homogeneous in the input and an all-black image
//! scores exactly zero.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::renderer::{Background, Image, Texture};
use crate::scene::{CameraPose, Mesh};

pub const CHANNELS: usize = 8;
pub const K1: usize = 5;
pub const K2: usize = 3;
/// Smallest input side for which both layers produce at least one output.
pub const RECEPTIVE_FIELD: usize = K1 + K2 - 1;

const IN_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    seed: u64,
    /// `[out][in][ky][kx]`
    conv1: Vec<f64>,
    /// `[out][in][ky][kx]`
    conv2: Vec<f64>,
}

/// Planar activation maps saved by [`Surrogate::forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input_dims: (usize, usize),
    pre1: Vec<f64>,
    post1: Vec<f64>,
    pre2: Vec<f64>,
    post2: Vec<f64>,
}

impl ForwardCache {
    pub fn input_dims(&self) -> (usize, usize) {
        self.input_dims
    }

    /// On/off state of every ReLU in both layers. Two inputs with equal
    /// patterns lie on the same linear piece of the score.
    pub fn gate_pattern(&self) -> Vec<bool> {
        self.pre1.iter().chain(&self.pre2).map(|&v| v > 0.0).collect()
    }

    pub fn layer1_dims(&self) -> (usize, usize) {
        (self.input_dims.0 - K1 + 1, self.input_dims.1 - K1 + 1)
    }

    pub fn layer2_dims(&self) -> (usize, usize) {
        let (w, h) = self.layer1_dims();
        (w - K2 + 1, h - K2 + 1)
    }

    pub fn pre_activations(&self) -> (&[f64], &[f64]) {
        (&self.pre1, &self.pre2)
    }

    pub fn post_activations(&self) -> (&[f64], &[f64]) {
        (&self.post1, &self.post2)
    }
}

impl Surrogate {
    /// Weights are unit normals scaled by `1/sqrt(fan_in)`, conv1 drawn first.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let scale = 1.0 / (fan_in as f64).sqrt();
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect()
        };
        let conv1 = draw(CHANNELS * IN_CHANNELS * K1 * K1, IN_CHANNELS * K1 * K1);
        let conv2 = draw(CHANNELS * CHANNELS * K2 * K2, CHANNELS * K2 * K2);
        Self { seed, conv1, conv2 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn conv1_weights(&self) -> &[f64] {
        &self.conv1
    }

    pub fn conv2_weights(&self) -> &[f64] {
        &self.conv2
    }

    pub fn forward(&self, image: &Image) -> Result<(f64, ForwardCache)> {
        let (w, h) = image.dims();
        if w < RECEPTIVE_FIELD || h < RECEPTIVE_FIELD {
            return Err(Error::ImageTooSmall {
                width: w,
                height: h,
                min: RECEPTIVE_FIELD,
            });
        }
        let planar = to_planar(image);
        let (w1, h1) = (w - K1 + 1, h - K1 + 1);
        let (w2, h2) = (w1 - K2 + 1, h1 - K2 + 1);

        let pre1 = conv_valid(&planar, IN_CHANNELS, w, h, &self.conv1, K1);
        let post1: Vec<f64> = pre1.iter().map(|&v| relu(v)).collect();
        let pre2 = conv_valid(&post1, CHANNELS, w1, h1, &self.conv2, K2);
        let post2: Vec<f64> = pre2.iter().map(|&v| relu(v)).collect();

        let score = post2.iter().sum::<f64>() / (CHANNELS * w2 * h2) as f64;
        let cache = ForwardCache {
            input_dims: (w, h),
            pre1,
            post1,
            pre2,
            post2,
        };
        Ok((score, cache))
    }

    /// Forward pass without keeping the activations.
    pub fn score(&self, image: &Image) -> Result<f64> {
        self.forward(image).map(|(s, _)| s)
    }

    /// Gradient of [`suppression_loss`] with respect to the input image.
    /// ReLU's subgradient at zero is taken as zero.
    pub fn backward(&self, cache: &ForwardCache) -> Result<Image> {
        let (w, h) = cache.input_dims;
        let (w1, h1) = cache.layer1_dims();
        let (w2, h2) = cache.layer2_dims();
        if cache.pre1.len() != CHANNELS * w1 * h1 || cache.pre2.len() != CHANNELS * w2 * h2 {
            return Err(Error::LengthMismatch {
                expected: CHANNELS * w2 * h2,
                actual: cache.pre2.len(),
            });
        }

        let g = 1.0 / (CHANNELS * w2 * h2) as f64;
        let d_pre2: Vec<f64> = cache.pre2.iter().map(|&v| if v > 0.0 { g } else { 0.0 }).collect();
        let mut d_post1 = conv_transpose(&d_pre2, CHANNELS, w2, h2, &self.conv2, K2);
        for (d, &z) in d_post1.iter_mut().zip(&cache.pre1) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        let d_input = conv_transpose(&d_post1, IN_CHANNELS, w1, h1, &self.conv1, K1);
        Ok(from_planar(&d_input, w, h))
    }
}

/// Identity: lower score means less detection evidence.
#[inline]
pub fn suppression_loss(score: f64) -> f64 {
    score
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn to_planar(img: &Image) -> Vec<f64> {
    let n = img.width * img.height;
    let mut out = vec![0.0; 3 * n];
    for (p, px) in img.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * n + p] = px[c];
        }
    }
    out
}

fn from_planar(planar: &[f64], w: usize, h: usize) -> Image {
    let n = w * h;
    let mut img = Image::zeros(w, h);
    for p in 0..n {
        for c in 0..3 {
            img.data[3 * p + c] = planar[c * n + p];
        }
    }
    img
}

// Valid cross-correlation of a planar `[c_in][h][w]` input with `[c_out][c_in][k][k]`
// weights; produces `[c_out][h-k+1][w-k+1]`.
fn conv_valid(input: &[f64], c_in: usize, w: usize, h: usize, weights: &[f64], k: usize) -> Vec<f64> {
    let c_out = weights.len() / (c_in * k * k);
    let (wo, ho) = (w - k + 1, h - k + 1);
    let mut out = vec![0.0; c_out * wo * ho];
    for oc in 0..c_out {
        let plane = &mut out[oc * wo * ho..(oc + 1) * wo * ho];
        for ic in 0..c_in {
            let src = &input[ic * w * h..(ic + 1) * w * h];
            for ky in 0..k {
                for kx in 0..k {
                    let wt = weights[((oc * c_in + ic) * k + ky) * k + kx];
                    for y in 0..ho {
                        let row_in = &src[(y + ky) * w + kx..(y + ky) * w + kx + wo];
                        let row_out = &mut plane[y * wo..(y + 1) * wo];
                        for (o, &i) in row_out.iter_mut().zip(row_in) {
                            *o += wt * i;
                        }
                    }
                }
            }
        }
    }
    out
}

// Adjoint of `conv_valid` with respect to its input: scatters `[c_out][ho][wo]`
// back onto `[c_in][ho+k-1][wo+k-1]`.
fn conv_transpose(grad_out: &[f64], c_in: usize, wo: usize, ho: usize, weights: &[f64], k: usize) -> Vec<f64> {
    let c_out = weights.len() / (c_in * k * k);
    let (w, h) = (wo + k - 1, ho + k - 1);
    let mut grad_in = vec![0.0; c_in * w * h];
    for oc in 0..c_out {
        let plane = &grad_out[oc * wo * ho..(oc + 1) * wo * ho];
        for ic in 0..c_in {
            let dst = &mut grad_in[ic * w * h..(ic + 1) * w * h];
            for ky in 0..k {
                for kx in 0..k {
                    let wt = weights[((oc * c_in + ic) * k + ky) * k + kx];
                    for y in 0..ho {
                        let row_g = &plane[y * wo..(y + 1) * wo];
                        let row_in = &mut dst[(y + ky) * w + kx..(y + ky) * w + kx + wo];
                        for (d, &gv) in row_in.iter_mut().zip(row_g) {
                            *d += wt * gv;
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// One row of a detection sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseScore {
    pub pose: CameraPose,
    pub score: f64,
}

/// Renders each pose over the evaluation background and scores it.
pub fn detection_score_sweep(
    surrogate: &Surrogate,
    mesh: &Mesh,
    texture: &Texture,
    poses: &[CameraPose],
    background: &Background,
) -> Result<Vec<PoseScore>> {
    use rayon::prelude::*;
    if poses.is_empty() {
        return Err(Error::InvalidGrid("no poses to evaluate".into()));
    }
    poses
        .par_iter()
        .map(|pose| {
            let (w, h) = pose.image_dims();
            let bg = background.render(w, h);
            let (_, img) = crate::renderer::render_view(mesh, texture, pose, &bg)?;
            Ok(PoseScore {
                pose: *pose,
                score: surrogate.score(&img)?,
            })
        })
        .collect()
}

/// Mean of [`detection_score_sweep`] scores.
pub fn mean_score(rows: &[PoseScore]) -> f64 {
    rows.iter().map(|r| r.score).sum::<f64>() / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| std::array::from_fn(|_| rng.random::<f64>()))
    }

    #[test]
    fn weights_are_seeded() {
        assert_eq!(Surrogate::new(42), Surrogate::new(42));
        assert_ne!(Surrogate::new(42).conv1, Surrogate::new(43).conv1);
        let s = Surrogate::new(42);
        assert_eq!(s.conv1.len(), 8 * 75);
        assert_eq!(s.conv2.len(), 8 * 72);
    }

    #[test]
    fn zero_image_scores_zero_with_zero_gradient() {
        let s = Surrogate::new(1);
        let (score, cache) = s.forward(&Image::zeros(20, 20)).unwrap();
        assert_eq!(score, 0.0);
        let g = s.backward(&cache).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_small_image_is_rejected() {
        let s = Surrogate::new(1);
        assert!(matches!(s.forward(&Image::zeros(6, 30)), Err(Error::ImageTooSmall { .. })));
        assert!(s.forward(&Image::zeros(7, 7)).is_ok());
    }

    #[test]
    fn loss_is_identity() {
        assert_eq!(suppression_loss(0.0), 0.0);
        assert_eq!(suppression_loss(3.2), 3.2);
        assert!(suppression_loss(1.0) < suppression_loss(1.5));
    }

    // Oracle: direct nested-sum definition, independent of the planar kernels.
    fn naive_score(s: &Surrogate, img: &Image) -> f64 {
        let (w, h) = img.dims();
        let (w1, h1) = (w - 4, h - 4);
        let (w2, h2) = (w1 - 2, h1 - 2);
        let mut l1 = vec![vec![vec![0.0; w1]; h1]; 8];
        for (oc, plane) in l1.iter_mut().enumerate() {
            for (y, row) in plane.iter_mut().enumerate() {
                for (x, out) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for ic in 0..3 {
                        for ky in 0..5 {
                            for kx in 0..5 {
                                acc += s.conv1[((oc * 3 + ic) * 5 + ky) * 5 + kx] * img.pixel(x + kx, y + ky)[ic];
                            }
                        }
                    }
                    *out = acc.max(0.0);
                }
            }
        }
        let mut total = 0.0;
        for oc in 0..8 {
            for y in 0..h2 {
                for x in 0..w2 {
                    let mut acc = 0.0;
                    for (ic, plane) in l1.iter().enumerate() {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                acc += s.conv2[((oc * 8 + ic) * 3 + ky) * 3 + kx] * plane[y + ky][x + kx];
                            }
                        }
                    }
                    total += acc.max(0.0);
                }
            }
        }
        total / (8 * w2 * h2) as f64
    }

    #[test]
    fn forward_matches_naive_definition() {
        let s = Surrogate::new(9);
        let img = random_image(13, 11, 4);
        let fast = s.score(&img).unwrap();
        let slow = naive_score(&s, &img);
        assert!((fast - slow).abs() <= 1e-12 * slow.abs().max(1.0), "{fast} vs {slow}");
    }

    #[test]
    fn positive_homogeneity_on_all_positive_case() {
        // all-positive weights keep every pre-activation positive
        let mut s = Surrogate::new(5);
        s.conv1.iter_mut().for_each(|w| *w = w.abs());
        s.conv2.iter_mut().for_each(|w| *w = w.abs());
        let img = random_image(16, 16, 8);
        let (a, cache) = s.forward(&img).unwrap();
        assert!(cache.pre2.iter().all(|&v| v > 0.0));
        let b = s.score(&img.scaled(2.0)).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn relu_gate_closed_at_exact_zero() {
        // a lone bright pixel in the corner of a black image: most
        // pre-activations are exactly zero and must pass no gradient
        let s = Surrogate::new(3);
        let mut img = Image::zeros(12, 12);
        img.data[0] = 1.0;
        let (_, cache) = s.forward(&img).unwrap();
        let zeros = cache.pre2.iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > 0);
        let g = s.backward(&cache).unwrap();
        // only input pixels inside the receptive field of a nonzero unit can
        // carry gradient: x, y < 5 + 3 - 1 from the corner unit (0,0)
        for y in 0..12 {
            for x in 0..12 {
                if x >= 7 || y >= 7 {
                    assert_eq!(g.pixel(x, y), [0.0; 3]);
                }
            }
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        let s = Surrogate::new(42);
        let img = random_image(32, 32, 42);
        let (_, cache) = s.forward(&img).unwrap();
        let grad = s.backward(&cache).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let step = 1e-3;
        let (mut checked, mut kinks) = (0, 0);
        while checked < 50 {
            let i = rng.random_range(0..img.data.len());
            let mut plus = img.clone();
            plus.data[i] += step;
            let mut minus = img.clone();
            minus.data[i] -= step;
            let (fp, cp) = s.forward(&plus).unwrap();
            let (fm, cm) = s.forward(&minus).unwrap();
            // a ReLU flipping inside the stencil makes the difference quotient
            // straddle two linear pieces; draw another coordinate
            if cp.gate_pattern() != cm.gate_pattern() {
                kinks += 1;
                assert!(kinks < 50, "too many kinks");
                continue;
            }
            let fd = (fp - fm) / (2.0 * step);
            let an = grad.data[i];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(err < 1e-4, "index {i}: fd {fd} analytic {an}");
            checked += 1;
        }
    }

    #[test]
    fn taylor_first_order() {
        let s = Surrogate::new(42);
        let img = random_image(24, 24, 1);
        let (base, cache) = s.forward(&img).unwrap();
        let grad = s.backward(&cache).unwrap();
        let i = 3 * (12 * 24 + 12) + 1;
        let mut prev = f64::INFINITY;
        for eps in [1e-2, 1e-3, 1e-4] {
            let mut moved = img.clone();
            moved.data[i] += eps;
            let resid = (s.score(&moved).unwrap() - base - grad.data[i] * eps).abs();
            assert!(resid <= prev.max(1e-15));
            assert!(resid < 1e-3 * eps + 1e-14, "eps {eps} resid {resid}");
            prev = resid;
        }
    }

    #[test]
    fn deterministic_forward_backward() {
        let s = Surrogate::new(7);
        let img = random_image(20, 20, 2);
        let (a, ca) = s.forward(&img).unwrap();
        let (b, cb) = s.forward(&img).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(s.backward(&ca).unwrap(), s.backward(&cb).unwrap());
    }
}
