use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use texcamo_core::optim::{coverage_report, initial_texture, train_with, OverheadReport};
use texcamo_core::renderer::{rasterize, render_view, write_texel_mask};
use texcamo_core::scene::{make_pose, pose_grid};
use texcamo_core::surrogate::{detection_score_sweep, mean_score, PoseScore};
use texcamo_core::{
    ngc, ppm, Background, CameraPose, Image, Mesh, SearchRadius, Surrogate, Texture, TextureDims, TrainConfig,
    TrainableMask,
};

use crate::config::{ConfigError, RunConfig, Sweep};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] texcamo_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    /// 1 for configuration problems, 2 for failures during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Comma-separated writer with a header row and LF line endings.
pub struct Csv {
    w: BufWriter<File>,
}

impl Csv {
    pub fn create(path: &Path, header: &[&str]) -> io::Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", header.join(","))?;
        Ok(Self { w })
    }

    pub fn row(&mut self, fields: &[String]) -> io::Result<()> {
        writeln!(self.w, "{}", fields.join(","))
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.w.flush()
    }
}

/// Floats inside a single CSV field.
fn join_semicolon(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn config_hash(cfg: &RunConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_text().as_bytes()))
}

fn prepare_out(cfg: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("resolved_config.txt"), cfg.to_text())?;
    Ok(())
}

/// Reads any PPM as a texture with every texel trainable.
pub fn load_texture(path: &Path) -> CliResult<Texture> {
    let r = ppm::read(path)?;
    let dims = TextureDims::new(r.width, r.height)?;
    Ok(Texture::from_ppm(path, TrainableMask::all(dims))?)
}

pub fn eval_poses(cfg: &RunConfig) -> CliResult<Vec<CameraPose>> {
    let grid = cfg.eval_grid()?;
    Ok(pose_grid(&grid, cfg.fov_deg, cfg.image_width, cfg.image_height)?)
}

/// Mean score over the poses sharing a key, in order of first appearance.
#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    pub key: f64,
    pub poses: usize,
    pub mean_score: f64,
}

pub fn aggregate(rows: &[PoseScore], key: impl Fn(&CameraPose) -> f64) -> Vec<Bucket> {
    let mut out: Vec<Bucket> = Vec::new();
    for r in rows {
        let k = key(&r.pose);
        match out.iter_mut().find(|b| b.key == k) {
            Some(b) => {
                b.poses += 1;
                b.mean_score += r.score;
            }
            None => out.push(Bucket {
                key: k,
                poses: 1,
                mean_score: r.score,
            }),
        }
    }
    for b in &mut out {
        b.mean_score /= b.poses as f64;
    }
    out
}

fn write_pose_scores(path: &Path, rows: &[PoseScore]) -> io::Result<()> {
    let mut csv = Csv::create(path, &["azimuth_deg", "elevation_deg", "distance_m", "score"])?;
    for r in rows {
        csv.row(&[
            r.pose.azimuth_deg().to_string(),
            r.pose.elevation_deg().to_string(),
            r.pose.distance_m().to_string(),
            r.score.to_string(),
        ])?;
    }
    csv.finish()
}

fn write_buckets(path: &Path, key: &str, buckets: &[Bucket]) -> io::Result<()> {
    let mut csv = Csv::create(path, &[key, "poses", "mean_score"])?;
    for b in buckets {
        csv.row(&[b.key.to_string(), b.poses.to_string(), b.mean_score.to_string()])?;
    }
    csv.finish()
}

#[derive(Clone, Debug)]
pub struct AttackSummary {
    pub eval_poses: usize,
    pub initial_mean: f64,
    pub final_mean: f64,
    pub steps: usize,
    pub overhead: OverheadReport,
}

/// Trains a texture and writes it with its logs, checkpoints and an
/// initial-versus-final evaluation into `cfg.out`.
pub fn cmd_attack(cfg: &RunConfig) -> CliResult<AttackSummary> {
    let mesh = cfg.load_mesh()?;
    let mask = cfg.load_mask(&mesh)?;
    let train = cfg.train_config()?;
    let poses = eval_poses(cfg)?;
    prepare_out(cfg)?;
    let out = &cfg.out;
    let surrogate = Surrogate::new(cfg.surrogate_seed);
    let hash = config_hash(cfg);

    let init = initial_texture(&mask, train.seed);
    init.write_ppm(out.join("texture_init.ppm"))?;
    if cfg.coverage_dumps {
        write_coverage(cfg, &mesh, &init, &train)?;
    }

    let mut metrics = Csv::create(
        &out.join("metrics.csv"),
        &["step", "epoch", "mean_loss", "view_losses", "grad_norm", "coverage_pre", "coverage_post"],
    )?;
    let mut timings = Csv::create(
        &out.join("timings.csv"),
        &["step", "t_forward_backward_s", "t_ngc_s", "t_lpgd_s"],
    )?;
    let mut diagnostics = if cfg.lpgd_diagnostics {
        Some(Csv::create(
            &out.join("lpgd_diagnostics.csv"),
            &["step", "batch_losses", "cos_pre", "cos_post"],
        )?)
    } else {
        None
    };
    if cfg.checkpoint_every > 0 {
        fs::create_dir_all(out.join("checkpoints"))?;
    }

    let per_epoch = train.steps_per_epoch();
    let mut io_err: Option<io::Error> = None;
    let outcome = train_with(&mesh, &surrogate, &mask, &train, |m, tex| {
        let r: io::Result<()> = (|| {
            metrics.row(&[
                m.step.to_string(),
                m.epoch.to_string(),
                m.mean_loss.to_string(),
                join_semicolon(&m.view_losses),
                m.grad_norm.to_string(),
                m.coverage_pre.to_string(),
                m.coverage_post.to_string(),
            ])?;
            timings.row(&[
                m.step.to_string(),
                m.timings.forward_backward.as_secs_f64().to_string(),
                m.timings.ngc.as_secs_f64().to_string(),
                m.timings.lpgd.as_secs_f64().to_string(),
            ])?;
            if let (Some(csv), Some((pre, post))) = (diagnostics.as_mut(), m.cosines.as_ref()) {
                csv.row(&[
                    m.step.to_string(),
                    join_semicolon(&m.view_losses),
                    join_semicolon(pre),
                    join_semicolon(post),
                ])?;
            }
            if cfg.checkpoint_every > 0 && (m.step + 1) % cfg.checkpoint_every == 0 {
                let stem = out.join("checkpoints").join(format!("step_{:06}", m.step + 1));
                tex.write_ppm(stem.with_extension("ppm")).map_err(io::Error::other)?;
                fs::write(
                    stem.with_extension("txt"),
                    format!("step = {}\nconfig_sha256 = {hash}\n", m.step + 1),
                )?;
            }
            Ok(())
        })();
        if (m.step + 1) % per_epoch == 0 {
            eprintln!("epoch {}/{} step {} loss {}", m.epoch + 1, train.epochs, m.step + 1, m.mean_loss);
        }
        r.map_err(|e| {
            let msg = e.to_string();
            io_err = Some(e);
            texcamo_core::Error::InvalidConfig(format!("writing outputs failed: {msg}"))
        })
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let outcome = outcome?;
    metrics.finish()?;
    timings.finish()?;
    if let Some(d) = diagnostics {
        d.finish()?;
    }
    outcome.texture.write_ppm(out.join("texture_final.ppm"))?;

    let before = detection_score_sweep(&surrogate, &mesh, &init, &poses, &train.background)?;
    let after = detection_score_sweep(&surrogate, &mesh, &outcome.texture, &poses, &train.background)?;
    write_pose_scores(&out.join("eval_final.csv"), &after)?;
    let overhead = OverheadReport::from_log(&outcome.log);
    let summary = AttackSummary {
        eval_poses: poses.len(),
        initial_mean: mean_score(&before),
        final_mean: mean_score(&after),
        steps: outcome.log.len(),
        overhead,
    };
    fs::write(out.join("summary.txt"), summary_text(&summary))?;
    fs::write(out.join("overhead.txt"), overhead_text(&overhead))?;
    Ok(summary)
}

pub fn summary_text(s: &AttackSummary) -> String {
    format!(
        "surrogate suppression score (mean over {} eval poses, lower is better)\n\
         initial: {}\nfinal: {}\nrelative change: {}\nsteps: {}\n",
        s.eval_poses,
        s.initial_mean,
        s.final_mean,
        (s.final_mean - s.initial_mean) / s.initial_mean,
        s.steps
    )
}

pub fn overhead_text(o: &OverheadReport) -> String {
    format!(
        "mean seconds per step over {} steps\n\
         forward_backward: {}\nngc: {}\nlpgd: {}\n\
         ngc / forward_backward: {}\nlpgd / forward_backward: {}\n",
        o.steps,
        o.forward_backward_s,
        o.ngc_s,
        o.lpgd_s,
        o.ngc_ratio(),
        o.lpgd_ratio()
    )
}

fn write_coverage(cfg: &RunConfig, mesh: &Mesh, texture: &Texture, train: &TrainConfig) -> CliResult<()> {
    let dir = cfg.out.join("coverage");
    fs::create_dir_all(&dir)?;
    let tau = if train.enable_ngc { train.tau } else { SearchRadius::ZERO };
    let rows = coverage_report(mesh, texture, &train.poses()?, tau)?;
    let mut csv = Csv::create(
        &dir.join("coverage.csv"),
        &["distance_m", "views", "sampled", "calibrated", "trainable"],
    )?;
    for r in &rows {
        csv.row(&[
            r.distance_m.to_string(),
            r.views.to_string(),
            r.sampled.to_string(),
            r.calibrated.to_string(),
            r.trainable.to_string(),
        ])?;
    }
    csv.finish()?;
    let mask = texture.mask();
    for &d in train.grid.distances() {
        let pose = make_pose(cfg.render_azimuth, cfg.render_elevation, d, train.fov_deg, train.image_w, train.image_h)?;
        let sampled: Vec<usize> = rasterize(mesh, &pose, texture.dims())
            .sampled_texels()
            .into_iter()
            .filter(|&id| mask.is_trainable(id))
            .collect();
        let reached = ngc::calibrated_coverage(&sampled, mask, tau)?;
        write_texel_mask(dir.join(format!("d{d}_sampled.ppm")), texture.dims(), &sampled)?;
        write_texel_mask(dir.join(format!("d{d}_calibrated.ppm")), texture.dims(), &reached)?;
    }
    Ok(())
}

/// One training configuration inside an ablation.
#[derive(Clone, Debug)]
pub struct Variant {
    pub id: String,
    pub config: TrainConfig,
}

pub fn quartet(base: &TrainConfig) -> Vec<Variant> {
    [("baseline", false, false), ("ngc", true, false), ("lpgd", false, true), ("ngc+lpgd", true, true)]
        .into_iter()
        .map(|(id, ngc, lpgd)| Variant {
            id: id.to_string(),
            config: TrainConfig {
                enable_ngc: ngc,
                enable_lpgd: lpgd,
                ..base.clone()
            },
        })
        .collect()
}

pub fn variants(cfg: &RunConfig, base: &TrainConfig) -> CliResult<Vec<Variant>> {
    cfg.check_sweep()?;
    Ok(match cfg.sweep {
        Sweep::Quartet => quartet(base),
        Sweep::Tau => cfg
            .sweep_taus
            .iter()
            .map(|&t| {
                Ok(Variant {
                    id: format!("tau={t}"),
                    config: TrainConfig {
                        enable_ngc: true,
                        tau: SearchRadius::new(t)?,
                        ..base.clone()
                    },
                })
            })
            .collect::<CliResult<_>>()?,
        Sweep::K => cfg
            .sweep_ks
            .iter()
            .map(|&k| Variant {
                id: format!("k={k}"),
                config: TrainConfig { k, ..base.clone() },
            })
            .collect(),
    })
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub id: String,
    pub config: TrainConfig,
    pub final_mean_score: f64,
    pub texture: Texture,
}

/// Trains each variant in turn from the same initial texture and scores it
/// on `poses`.
pub fn run_variants(
    mesh: &Mesh,
    mask: &TrainableMask,
    surrogate: &Surrogate,
    variants: &[Variant],
    poses: &[CameraPose],
    background: &Background,
) -> CliResult<Vec<AblationRow>> {
    variants
        .iter()
        .map(|v| {
            let out = train_with(mesh, surrogate, mask, &v.config, |_, _| Ok(()))?;
            let scores = detection_score_sweep(surrogate, mesh, &out.texture, poses, background)?;
            Ok(AblationRow {
                id: v.id.clone(),
                config: v.config.clone(),
                final_mean_score: mean_score(&scores),
                texture: out.texture,
            })
        })
        .collect()
}

pub fn cmd_ablate(cfg: &RunConfig) -> CliResult<Vec<AblationRow>> {
    let mesh = cfg.load_mesh()?;
    let mask = cfg.load_mask(&mesh)?;
    let base = cfg.train_config()?;
    let list = variants(cfg, &base)?;
    let poses = eval_poses(cfg)?;
    let strip_pose = make_pose(
        cfg.render_azimuth,
        cfg.render_elevation,
        cfg.render_distance,
        cfg.fov_deg,
        cfg.image_width,
        cfg.image_height,
    )?;
    prepare_out(cfg)?;
    let surrogate = Surrogate::new(cfg.surrogate_seed);
    let tex_dir = cfg.out.join("textures");
    fs::create_dir_all(&tex_dir)?;

    let mut csv = Csv::create(
        &cfg.out.join("ablation.csv"),
        &["config_id", "enable_ngc", "enable_lpgd", "tau", "k", "final_mean_score"],
    )?;
    let bg = base.background.render(cfg.image_width, cfg.image_height);
    let mut rows = Vec::with_capacity(list.len());
    let mut strip = Vec::with_capacity(list.len());
    for v in &list {
        let row = run_variants(&mesh, &mask, &surrogate, std::slice::from_ref(v), &poses, &base.background)?
            .pop()
            .expect("one variant in, one row out");
        eprintln!("{}: final mean score {}", row.id, row.final_mean_score);
        csv.row(&[
            row.id.clone(),
            row.config.enable_ngc.to_string(),
            row.config.enable_lpgd.to_string(),
            row.config.tau.get().to_string(),
            row.config.k.to_string(),
            row.final_mean_score.to_string(),
        ])?;
        row.texture.write_ppm(tex_dir.join(format!("{}.ppm", file_stem(&row.id))))?;
        strip.push(render_view(&mesh, &row.texture, &strip_pose, &bg)?.1);
        rows.push(row);
    }
    csv.finish()?;
    Image::hstack(&strip).write_ppm(cfg.out.join("ablation_strip.ppm"))?;
    Ok(rows)
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect()
}

pub fn pose_file_name(pose: &CameraPose) -> String {
    format!("az{}_el{}_d{}.ppm", pose.azimuth_deg(), pose.elevation_deg(), pose.distance_m())
}

/// Renders the input texture at one pose, or at every eval-grid pose when
/// `render_grid` is set.
pub fn cmd_render(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let mesh = cfg.load_mesh()?;
    let path = cfg.texture_path()?;
    let background = cfg.load_background()?;
    let poses = if cfg.render_grid {
        eval_poses(cfg)?
    } else {
        vec![make_pose(
            cfg.render_azimuth,
            cfg.render_elevation,
            cfg.render_distance,
            cfg.fov_deg,
            cfg.image_width,
            cfg.image_height,
        )
        .map_err(|e| ConfigError::Field {
            field: "render_distance".into(),
            msg: e.to_string(),
        })?]
    };
    let texture = load_texture(path)?;
    prepare_out(cfg)?;
    let bg = background.render(cfg.image_width, cfg.image_height);
    let mut written = Vec::with_capacity(poses.len());
    for pose in &poses {
        let (_, img) = render_view(&mesh, &texture, pose, &bg)?;
        let p = cfg.out.join(pose_file_name(pose));
        img.write_ppm(&p)?;
        written.push(p);
    }
    Ok(written)
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub rows: Vec<PoseScore>,
    pub by_elevation: Vec<Bucket>,
    pub by_distance: Vec<Bucket>,
    pub mean: f64,
}

/// Scores the input texture over the eval grid.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<EvalSummary> {
    let mesh = cfg.load_mesh()?;
    let path = cfg.texture_path()?;
    let background = cfg.load_background()?;
    let poses = eval_poses(cfg)?;
    let texture = load_texture(path)?;
    prepare_out(cfg)?;
    let surrogate = Surrogate::new(cfg.surrogate_seed);
    let rows = detection_score_sweep(&surrogate, &mesh, &texture, &poses, &background)?;
    let by_elevation = aggregate(&rows, |p| p.elevation_deg());
    let by_distance = aggregate(&rows, |p| p.distance_m());
    write_pose_scores(&cfg.out.join("eval.csv"), &rows)?;
    write_buckets(&cfg.out.join("eval_by_elevation.csv"), "elevation_deg", &by_elevation)?;
    write_buckets(&cfg.out.join("eval_by_distance.csv"), "distance_m", &by_distance)?;
    let mean = mean_score(&rows);
    Ok(EvalSummary {
        rows,
        by_elevation,
        by_distance,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(az: f64, el: f64, d: f64, score: f64) -> PoseScore {
        PoseScore {
            pose: make_pose(az, el, d, 60.0, 16, 16).unwrap(),
            score,
        }
    }

    #[test]
    fn aggregate_keeps_first_appearance_order() {
        let rows = [row(0.0, 10.0, 5.0, 1.0), row(0.0, 0.0, 5.0, 2.0), row(90.0, 10.0, 7.0, 4.0)];
        let by_el = aggregate(&rows, |p| p.elevation_deg());
        assert_eq!(by_el.len(), 2);
        assert_eq!((by_el[0].key, by_el[0].poses, by_el[0].mean_score), (10.0, 2, 2.5));
        assert_eq!((by_el[1].key, by_el[1].poses), (0.0, 1));
    }

    #[test]
    fn pose_names_use_plain_numbers() {
        let p = make_pose(45.0, 15.0, 7.5, 60.0, 16, 16).unwrap();
        assert_eq!(pose_file_name(&p), "az45_el15_d7.5.ppm");
    }

    #[test]
    fn sweep_variant_ids() {
        let base = TrainConfig::default();
        let ids: Vec<String> = quartet(&base).into_iter().map(|v| v.id).collect();
        assert_eq!(ids, ["baseline", "ngc", "lpgd", "ngc+lpgd"]);
        let cfg = RunConfig {
            sweep: Sweep::Tau,
            ..RunConfig::default()
        };
        assert_eq!(variants(&cfg, &base).unwrap().len(), 6);
        let cfg = RunConfig {
            sweep: Sweep::K,
            ..RunConfig::default()
        };
        let v = variants(&cfg, &base).unwrap();
        assert_eq!(v.iter().map(|v| v.config.k).collect::<Vec<_>>(), [1, 5, 10, 20, 40]);
        assert_eq!(file_stem("ngc+lpgd"), "ngc_lpgd");
        assert_eq!(file_stem("tau=0.5"), "tau_0.5");
    }
}
