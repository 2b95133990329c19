//! The attack loop: render each view of a minibatch, backpropagate the
//! suppression loss into texture space, calibrate per view, decorrelate across
//! views, then take an Adam step on the trainable texels.

mod adam;

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};

use crate::error::{Error, Result};
use crate::lpgd::{self, LpgdConfig, ViewGrad};
use crate::ngc::{self, SearchRadius};
use crate::renderer::{self, Background, GradField, Image, Texture, TrainableMask};
use crate::scene::{pose_grid, CameraPose, Mesh, PoseGrid};
use crate::surrogate::{suppression_loss, Surrogate};

/// Range of the optional per-view brightness multiplier.
pub const BRIGHTNESS_RANGE: (f64, f64) = (0.7, 1.3);

// independent ChaCha streams derived from the run seed
const STREAM_TEXTURE: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_BRIGHTNESS: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Views per minibatch.
    pub k: usize,
    pub tau: SearchRadius,
    pub enable_ngc: bool,
    pub enable_lpgd: bool,
    pub lpgd: LpgdConfig,
    pub seed: u64,
    pub grid: PoseGrid,
    pub fov_deg: f64,
    pub image_w: usize,
    pub image_h: usize,
    pub background: Background,
    pub augment_brightness: bool,
    /// Record pre/post-decorrelation cosine similarities in [`StepMetrics`].
    pub lpgd_diagnostics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 3,
            k: 8,
            tau: SearchRadius::default(),
            enable_ngc: true,
            enable_lpgd: true,
            lpgd: LpgdConfig::default(),
            seed: 0,
            grid: PoseGrid::new(vec![0.0, 15.0, 30.0, 45.0], 12.0, vec![5.0, 10.0, 15.0])
                .expect("static grid is valid"),
            fov_deg: 60.0,
            image_w: 256,
            image_h: 256,
            background: Background::default(),
            augment_brightness: false,
            lpgd_diagnostics: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr {} must be positive", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.k > self.grid.len() {
            return Err(Error::NotEnoughPoses {
                requested: self.k,
                available: self.grid.len(),
            });
        }
        LpgdConfig::new(self.lpgd.rel_eps)?;
        crate::scene::make_pose(0.0, 0.0, 1.0, self.fov_deg, self.image_w, self.image_h)?;
        Ok(())
    }

    pub fn poses(&self) -> Result<Vec<CameraPose>> {
        pose_grid(&self.grid, self.fov_deg, self.image_w, self.image_h)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.grid.len() / self.k
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepTimings {
    /// Rendering, surrogate forward/backward and texture scatter, summed over views.
    pub forward_backward: Duration,
    pub ngc: Duration,
    pub lpgd: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    /// In minibatch order.
    pub view_losses: Vec<f64>,
    /// Norm of the update handed to Adam.
    pub grad_norm: f64,
    /// Mean |T_U| per view.
    pub coverage_pre: f64,
    /// Mean touched-set size per view after calibration.
    pub coverage_post: f64,
    pub timings: StepTimings,
    /// Upper-triangle cosine similarities before and after orthogonalization
    /// (loss-sorted order), when diagnostics are on and LPGD ran.
    pub cosines: Option<(Vec<f64>, Vec<f64>)>,
}

struct ViewOutcome {
    view: ViewGrad,
    sampled: usize,
    calibrated: usize,
    t_fb: Duration,
    t_ngc: Duration,
}

fn view_gradient(
    mesh: &Mesh,
    texture: &Texture,
    surrogate: &Surrogate,
    config: &TrainConfig,
    pose: &CameraPose,
    brightness: f64,
    view_index: usize,
) -> Result<ViewOutcome> {
    let start = Instant::now();
    let (w, h) = pose.image_dims();
    let bg = config.background.render(w, h);
    let (map, mut img) = renderer::render_view(mesh, texture, pose, &bg)?;
    if brightness != 1.0 {
        img = img.scaled(brightness);
    }
    let (score, cache) = surrogate.forward(&img)?;
    let loss = suppression_loss(score);
    let mut grad_img: Image = surrogate.backward(&cache)?;
    if brightness != 1.0 {
        grad_img = grad_img.scaled(brightness);
    }
    let grad = renderer::backprop_to_texture(&grad_img, &map)?.masked(texture.mask());
    let t_fb = start.elapsed();

    let sampled = grad.touched().len();
    let start = Instant::now();
    let grad = if config.enable_ngc {
        ngc::calibrate(&grad, texture.mask(), config.tau)?
    } else {
        grad
    };
    let t_ngc = start.elapsed();
    Ok(ViewOutcome {
        sampled,
        calibrated: grad.touched().len(),
        view: ViewGrad { loss, grad, view_index },
        t_fb,
        t_ngc,
    })
}

/// One optimization step on `batch`. `rng` is only consumed when brightness
/// augmentation is enabled (one draw per view, in batch order).
pub fn train_step(
    texture: &mut Texture,
    mesh: &Mesh,
    surrogate: &Surrogate,
    batch: &[CameraPose],
    config: &TrainConfig,
    adam: &mut AdamState,
    rng: &mut impl Rng,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let brightness: Vec<f64> = if config.augment_brightness {
        batch
            .iter()
            .map(|_| rng.random_range(BRIGHTNESS_RANGE.0..=BRIGHTNESS_RANGE.1))
            .collect()
    } else {
        vec![1.0; batch.len()]
    };

    let frozen: &Texture = texture;
    let outcomes: Vec<ViewOutcome> = batch
        .par_iter()
        .zip(brightness.par_iter())
        .enumerate()
        .map(|(i, (pose, &b))| view_gradient(mesh, frozen, surrogate, config, pose, b, i))
        .collect::<Result<_>>()?;

    let k = outcomes.len() as f64;
    let mut timings = StepTimings::default();
    let (mut pre, mut post) = (0usize, 0usize);
    for o in &outcomes {
        timings.forward_backward += o.t_fb;
        timings.ngc += o.t_ngc;
        pre += o.sampled;
        post += o.calibrated;
    }
    let view_losses: Vec<f64> = outcomes.iter().map(|o| o.view.loss).collect();
    let views: Vec<ViewGrad> = outcomes.into_iter().map(|o| o.view).collect();

    let start = Instant::now();
    let mut cosines = None;
    let update: GradField = if config.enable_lpgd {
        if config.lpgd_diagnostics {
            let d = lpgd::decorrelate_detailed(views, &config.lpgd)?;
            let before: Vec<GradField> = d.ordered.iter().map(|v| v.grad.clone()).collect();
            cosines = Some((lpgd::pairwise_cosines(&before), lpgd::pairwise_cosines(&d.orthogonal.fields)));
            d.update
        } else {
            lpgd::decorrelate(views, &config.lpgd)?
        }
    } else {
        lpgd::mean_gradient(&views)?
    };
    timings.lpgd = if config.enable_lpgd { start.elapsed() } else { Duration::ZERO };

    adam.update(texture, &update, config.lr);

    Ok(StepMetrics {
        step: adam.step() as usize - 1,
        epoch: 0,
        mean_loss: view_losses.iter().sum::<f64>() / k,
        view_losses,
        grad_norm: update.norm(),
        coverage_pre: pre as f64 / k,
        coverage_post: post as f64 / k,
        timings,
        cosines,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub texture: Texture,
    pub log: Vec<StepMetrics>,
}

impl TrainOutcome {
    /// Mean of the per-step mean losses for each epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let epochs = self.log.iter().map(|m| m.epoch + 1).max().unwrap_or(0);
        (0..epochs)
            .map(|e| {
                let rows: Vec<f64> = self.log.iter().filter(|m| m.epoch == e).map(|m| m.mean_loss).collect();
                rows.iter().sum::<f64>() / rows.len() as f64
            })
            .collect()
    }
}

pub fn train(mesh: &Mesh, surrogate: &Surrogate, mask: &TrainableMask, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(mesh, surrogate, mask, config, |_, _| Ok(()))
}

/// Seeded initial texture for a run: uniform in `[0.4, 0.6]`.
pub fn initial_texture(mask: &TrainableMask, seed: u64) -> Texture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_TEXTURE);
    Texture::random_init(mask.clone(), &mut rng)
}

/// [`train`] with a hook called after every step with the step's metrics and
/// the updated texture.
pub fn train_with<F>(
    mesh: &Mesh,
    surrogate: &Surrogate,
    mask: &TrainableMask,
    config: &TrainConfig,
    mut on_step: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&StepMetrics, &Texture) -> Result<()>,
{
    config.validate()?;
    let poses = config.poses()?;
    let mut texture = initial_texture(mask, config.seed);
    let mut adam = AdamState::new(mask);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(STREAM_SHUFFLE);
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(config.seed);
    jitter_rng.set_stream(STREAM_BRIGHTNESS);

    let mut log = Vec::with_capacity(config.epochs * config.steps_per_epoch());
    let mut order: Vec<usize> = (0..poses.len()).collect();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks_exact(config.k) {
            let batch: Vec<CameraPose> = chunk.iter().map(|&i| poses[i]).collect();
            let mut m = train_step(&mut texture, mesh, surrogate, &batch, config, &mut adam, &mut jitter_rng)?;
            m.epoch = epoch;
            on_step(&m, &texture)?;
            log.push(m);
        }
    }
    Ok(TrainOutcome { texture, log })
}

/// Mean per-step time of each stage over a training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverheadReport {
    pub steps: usize,
    pub forward_backward_s: f64,
    pub ngc_s: f64,
    pub lpgd_s: f64,
}

impl OverheadReport {
    pub fn from_log(log: &[StepMetrics]) -> Self {
        let n = log.len().max(1) as f64;
        let mean = |f: fn(&StepTimings) -> Duration| log.iter().map(|m| f(&m.timings).as_secs_f64()).sum::<f64>() / n;
        Self {
            steps: log.len(),
            forward_backward_s: mean(|t| t.forward_backward),
            ngc_s: mean(|t| t.ngc),
            lpgd_s: mean(|t| t.lpgd),
        }
    }

    pub fn ngc_ratio(&self) -> f64 {
        self.ngc_s / self.forward_backward_s
    }

    pub fn lpgd_ratio(&self) -> f64 {
        self.lpgd_s / self.forward_backward_s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageRow {
    pub distance_m: f64,
    pub views: usize,
    /// Mean sampled trainable texels per view.
    pub sampled: f64,
    /// Mean trainable texels reached after calibration per view.
    pub calibrated: f64,
    pub trainable: usize,
}

impl CoverageRow {
    pub fn sampled_ratio(&self) -> f64 {
        self.sampled / self.trainable as f64
    }

    pub fn calibrated_ratio(&self) -> f64 {
        self.calibrated / self.trainable as f64
    }
}

/// Sampled versus calibrated texel coverage, grouped by camera distance in
/// order of first appearance.
pub fn coverage_report(
    mesh: &Mesh,
    texture: &Texture,
    poses: &[CameraPose],
    tau: SearchRadius,
) -> Result<Vec<CoverageRow>> {
    if poses.is_empty() {
        return Err(Error::InvalidGrid("coverage report needs at least one pose".into()));
    }
    let mask = texture.mask();
    let per_pose: Vec<(f64, usize, usize)> = poses
        .par_iter()
        .map(|pose| {
            let map = renderer::rasterize(mesh, pose, texture.dims());
            let sampled: Vec<usize> = map
                .sampled_texels()
                .into_iter()
                .filter(|&id| mask.is_trainable(id))
                .collect();
            let reached = ngc::calibrated_coverage(&sampled, mask, tau)?;
            Ok((pose.distance_m(), sampled.len(), reached.len()))
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<CoverageRow> = Vec::new();
    for (d, s, c) in per_pose {
        let row = match rows.iter_mut().find(|r| r.distance_m == d) {
            Some(r) => r,
            None => {
                rows.push(CoverageRow {
                    distance_m: d,
                    views: 0,
                    sampled: 0.0,
                    calibrated: 0.0,
                    trainable: mask.trainable_count(),
                });
                rows.last_mut().unwrap()
            }
        };
        row.views += 1;
        row.sampled += s as f64;
        row.calibrated += c as f64;
    }
    for r in &mut rows {
        r.sampled /= r.views as f64;
        r.calibrated /= r.views as f64;
    }
    Ok(rows)
}
