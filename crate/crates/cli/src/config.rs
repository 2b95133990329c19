//! Run configuration: a flat `key = value` text format that maps onto
//! [`TrainConfig`] plus the paths and per-subcommand options of the CLI.

use std::fmt::{self, Display};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use texcamo_core::lpgd::LpgdConfig;
use texcamo_core::scene::{load_obj, make_pose};
use texcamo_core::{Background, Mesh, PoseGrid, SearchRadius, TextureDims, TrainConfig, TrainableMask};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{field}: {msg}")]
    Field { field: String, msg: String },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("cannot read config file {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn field_err(field: &str, msg: impl Display) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        msg: msg.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskSource {
    /// Texels covered by any face's UV triangle.
    UvCharts,
    AllTrainable,
    /// PPM whose nonzero texels are trainable.
    Image(PathBuf),
}

impl Display for MaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskSource::UvCharts => f.write_str("uv-charts"),
            MaskSource::AllTrainable => f.write_str("all-trainable"),
            MaskSource::Image(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for MaskSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "" => Err("expected uv-charts, all-trainable or a PPM path".into()),
            "uv-charts" => Ok(MaskSource::UvCharts),
            "all-trainable" => Ok(MaskSource::AllTrainable),
            path => Ok(MaskSource::Image(PathBuf::from(path))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackgroundSpec {
    /// The built-in sky-to-ground gradient.
    Sky,
    Flat([f64; 3]),
    Vertical { top: [f64; 3], bottom: [f64; 3] },
    Image(PathBuf),
}

fn fmt_rgb(c: &[f64; 3]) -> String {
    format!("{},{},{}", c[0], c[1], c[2])
}

fn parse_rgb(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = parse_list(s)?;
    match v[..] {
        [r, g, b] if v.iter().all(|x| (0.0..=1.0).contains(x)) => Ok([r, g, b]),
        _ => Err(format!("expected three values in [0, 1], got {s:?}")),
    }
}

impl Display for BackgroundSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackgroundSpec::Sky => f.write_str("sky"),
            BackgroundSpec::Flat(c) => write!(f, "flat:{}", fmt_rgb(c)),
            BackgroundSpec::Vertical { top, bottom } => write!(f, "vertical:{}:{}", fmt_rgb(top), fmt_rgb(bottom)),
            BackgroundSpec::Image(p) => write!(f, "image:{}", p.display()),
        }
    }
}

impl FromStr for BackgroundSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "sky" {
            return Ok(BackgroundSpec::Sky);
        }
        if let Some(rest) = s.strip_prefix("flat:") {
            return Ok(BackgroundSpec::Flat(parse_rgb(rest)?));
        }
        if let Some(rest) = s.strip_prefix("vertical:") {
            let (top, bottom) = rest.split_once(':').ok_or("expected vertical:r,g,b:r,g,b")?;
            return Ok(BackgroundSpec::Vertical {
                top: parse_rgb(top)?,
                bottom: parse_rgb(bottom)?,
            });
        }
        if let Some(path) = s.strip_prefix("image:") {
            if !path.is_empty() {
                return Ok(BackgroundSpec::Image(PathBuf::from(path)));
            }
        }
        Err(format!("expected sky, flat:r,g,b, vertical:r,g,b:r,g,b or image:PATH, got {s:?}"))
    }
}

/// What `ablate` varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    /// Baseline, NGC only, LPGD only, both.
    Quartet,
    Tau,
    K,
}

impl Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sweep::Quartet => "quartet",
            Sweep::Tau => "tau",
            Sweep::K => "k",
        })
    }
}

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "quartet" => Ok(Sweep::Quartet),
            "tau" => Ok(Sweep::Tau),
            "k" => Ok(Sweep::K),
            _ => Err(format!("expected quartet, tau or k, got {s:?}")),
        }
    }
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|e| format!("{x:?}: {e}")))
        .collect()
}

fn fmt_list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {s:?}")),
    }
}

fn parse_num<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: Display,
{
    s.parse::<T>().map_err(|e| format!("{s:?}: {e}"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mesh: PathBuf,
    pub texture_width: usize,
    pub texture_height: usize,
    pub mask: MaskSource,
    pub out: PathBuf,
    pub seed: u64,
    pub surrogate_seed: u64,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub lr: f64,
    pub epochs: usize,
    pub k: usize,
    /// NGC search radius in texels.
    pub tau: f64,
    pub enable_ngc: bool,
    pub enable_lpgd: bool,
    pub lpgd_rel_eps: f64,
    pub augment_brightness: bool,
    pub fov_deg: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub background: BackgroundSpec,
    pub train_elevations: Vec<f64>,
    pub train_azimuth_step: f64,
    pub train_distances: Vec<f64>,
    pub eval_elevations: Vec<f64>,
    pub eval_azimuth_step: f64,
    pub eval_distances: Vec<f64>,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    pub lpgd_diagnostics: bool,
    pub coverage_dumps: bool,
    pub sweep: Sweep,
    pub sweep_taus: Vec<f64>,
    pub sweep_ks: Vec<usize>,
    /// Input texture for `render` and `eval`.
    pub texture: Option<PathBuf>,
    pub render_azimuth: f64,
    pub render_elevation: f64,
    pub render_distance: f64,
    pub render_grid: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            mesh: PathBuf::from("assets/car.obj"),
            texture_width: 256,
            texture_height: 256,
            mask: MaskSource::UvCharts,
            out: PathBuf::from("out"),
            seed: train.seed,
            surrogate_seed: 0,
            threads: 0,
            lr: train.lr,
            epochs: train.epochs,
            k: train.k,
            tau: train.tau.get(),
            enable_ngc: train.enable_ngc,
            enable_lpgd: train.enable_lpgd,
            lpgd_rel_eps: train.lpgd.rel_eps,
            augment_brightness: train.augment_brightness,
            fov_deg: train.fov_deg,
            image_width: train.image_w,
            image_height: train.image_h,
            background: BackgroundSpec::Sky,
            train_elevations: train.grid.elevations().to_vec(),
            train_azimuth_step: train.grid.azimuth_step_deg(),
            train_distances: train.grid.distances().to_vec(),
            eval_elevations: vec![0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 45.0, 60.0],
            eval_azimuth_step: 10.0,
            eval_distances: vec![5.0, 7.5, 10.0, 12.5, 15.0],
            checkpoint_every: 0,
            lpgd_diagnostics: false,
            coverage_dumps: false,
            sweep: Sweep::Quartet,
            sweep_taus: vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0],
            sweep_ks: vec![1, 5, 10, 20, 40],
            texture: None,
            render_azimuth: 45.0,
            render_elevation: 15.0,
            render_distance: 10.0,
            render_grid: false,
        }
    }
}

/// Every key in serialization order.
pub const KEYS: &[&str] = &[
    "mesh",
    "texture_width",
    "texture_height",
    "mask",
    "out",
    "seed",
    "surrogate_seed",
    "threads",
    "lr",
    "epochs",
    "k",
    "tau",
    "enable_ngc",
    "enable_lpgd",
    "lpgd_rel_eps",
    "augment_brightness",
    "fov_deg",
    "image_width",
    "image_height",
    "background",
    "train_elevations",
    "train_azimuth_step",
    "train_distances",
    "eval_elevations",
    "eval_azimuth_step",
    "eval_distances",
    "checkpoint_every",
    "lpgd_diagnostics",
    "coverage_dumps",
    "sweep",
    "sweep_taus",
    "sweep_ks",
    "texture",
    "render_azimuth",
    "render_elevation",
    "render_distance",
    "render_grid",
];

impl RunConfig {
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "mesh" => self.mesh.display().to_string(),
            "texture_width" => self.texture_width.to_string(),
            "texture_height" => self.texture_height.to_string(),
            "mask" => self.mask.to_string(),
            "out" => self.out.display().to_string(),
            "seed" => self.seed.to_string(),
            "surrogate_seed" => self.surrogate_seed.to_string(),
            "threads" => self.threads.to_string(),
            "lr" => self.lr.to_string(),
            "epochs" => self.epochs.to_string(),
            "k" => self.k.to_string(),
            "tau" => self.tau.to_string(),
            "enable_ngc" => self.enable_ngc.to_string(),
            "enable_lpgd" => self.enable_lpgd.to_string(),
            "lpgd_rel_eps" => self.lpgd_rel_eps.to_string(),
            "augment_brightness" => self.augment_brightness.to_string(),
            "fov_deg" => self.fov_deg.to_string(),
            "image_width" => self.image_width.to_string(),
            "image_height" => self.image_height.to_string(),
            "background" => self.background.to_string(),
            "train_elevations" => fmt_list(&self.train_elevations),
            "train_azimuth_step" => self.train_azimuth_step.to_string(),
            "train_distances" => fmt_list(&self.train_distances),
            "eval_elevations" => fmt_list(&self.eval_elevations),
            "eval_azimuth_step" => self.eval_azimuth_step.to_string(),
            "eval_distances" => fmt_list(&self.eval_distances),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "lpgd_diagnostics" => self.lpgd_diagnostics.to_string(),
            "coverage_dumps" => self.coverage_dumps.to_string(),
            "sweep" => self.sweep.to_string(),
            "sweep_taus" => fmt_list(&self.sweep_taus),
            "sweep_ks" => fmt_list(&self.sweep_ks),
            "texture" => self.texture.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "render_azimuth" => self.render_azimuth.to_string(),
            "render_elevation" => self.render_elevation.to_string(),
            "render_distance" => self.render_distance.to_string(),
            "render_grid" => self.render_grid.to_string(),
            _ => return None,
        })
    }

    /// Parses `value` into the field named `key`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let r: Result<(), String> = (|| {
            match key {
                "mesh" => self.mesh = non_empty_path(v)?,
                "texture_width" => self.texture_width = parse_num(v)?,
                "texture_height" => self.texture_height = parse_num(v)?,
                "mask" => self.mask = v.parse()?,
                "out" => self.out = non_empty_path(v)?,
                "seed" => self.seed = parse_num(v)?,
                "surrogate_seed" => self.surrogate_seed = parse_num(v)?,
                "threads" => self.threads = parse_num(v)?,
                "lr" => self.lr = parse_num(v)?,
                "epochs" => self.epochs = parse_num(v)?,
                "k" => self.k = parse_num(v)?,
                "tau" => self.tau = parse_num(v)?,
                "enable_ngc" => self.enable_ngc = parse_bool(v)?,
                "enable_lpgd" => self.enable_lpgd = parse_bool(v)?,
                "lpgd_rel_eps" => self.lpgd_rel_eps = parse_num(v)?,
                "augment_brightness" => self.augment_brightness = parse_bool(v)?,
                "fov_deg" => self.fov_deg = parse_num(v)?,
                "image_width" => self.image_width = parse_num(v)?,
                "image_height" => self.image_height = parse_num(v)?,
                "background" => self.background = v.parse()?,
                "train_elevations" => self.train_elevations = parse_list(v)?,
                "train_azimuth_step" => self.train_azimuth_step = parse_num(v)?,
                "train_distances" => self.train_distances = parse_list(v)?,
                "eval_elevations" => self.eval_elevations = parse_list(v)?,
                "eval_azimuth_step" => self.eval_azimuth_step = parse_num(v)?,
                "eval_distances" => self.eval_distances = parse_list(v)?,
                "checkpoint_every" => self.checkpoint_every = parse_num(v)?,
                "lpgd_diagnostics" => self.lpgd_diagnostics = parse_bool(v)?,
                "coverage_dumps" => self.coverage_dumps = parse_bool(v)?,
                "sweep" => self.sweep = v.parse()?,
                "sweep_taus" => self.sweep_taus = parse_list(v)?,
                "sweep_ks" => self.sweep_ks = parse_list(v)?,
                "texture" => self.texture = (!v.is_empty()).then(|| PathBuf::from(v)),
                "render_azimuth" => self.render_azimuth = parse_num(v)?,
                "render_elevation" => self.render_elevation = parse_num(v)?,
                "render_distance" => self.render_distance = parse_num(v)?,
                "render_grid" => self.render_grid = parse_bool(v)?,
                _ => return Err("unknown key".into()),
            }
            Ok(())
        })();
        r.map_err(|msg| field_err(key, msg))
    }

    /// Reads `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored; a repeated key is an error.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    msg: format!("duplicate key {key:?}"),
                });
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Every key, one per line, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# texcamo run configuration\n");
        for key in KEYS {
            let v = self.get(key).expect("every listed key has a value");
            s.push_str(key);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    pub fn texture_dims(&self) -> Result<TextureDims, ConfigError> {
        TextureDims::new(self.texture_width, self.texture_height).map_err(|e| field_err("texture_width", e))
    }

    pub fn train_grid(&self) -> Result<PoseGrid, ConfigError> {
        PoseGrid::new(self.train_elevations.clone(), self.train_azimuth_step, self.train_distances.clone())
            .map_err(|e| field_err("train_elevations", e))
    }

    pub fn eval_grid(&self) -> Result<PoseGrid, ConfigError> {
        PoseGrid::new(self.eval_elevations.clone(), self.eval_azimuth_step, self.eval_distances.clone())
            .map_err(|e| field_err("eval_elevations", e))
    }

    pub fn load_background(&self) -> Result<Background, ConfigError> {
        Ok(match &self.background {
            BackgroundSpec::Sky => Background::default(),
            BackgroundSpec::Flat(c) => Background::Flat(*c),
            BackgroundSpec::Vertical { top, bottom } => Background::Vertical {
                top: *top,
                bottom: *bottom,
            },
            BackgroundSpec::Image(p) => Background::load(p).map_err(|e| field_err("background", e))?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let tau = SearchRadius::new(self.tau).map_err(|e| field_err("tau", e))?;
        let lpgd = LpgdConfig::new(self.lpgd_rel_eps).map_err(|e| field_err("lpgd_rel_eps", e))?;
        make_pose(0.0, 0.0, 1.0, self.fov_deg, self.image_width, self.image_height)
            .map_err(|e| field_err("image_width", e))?;
        let c = TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            k: self.k,
            tau,
            enable_ngc: self.enable_ngc,
            enable_lpgd: self.enable_lpgd,
            lpgd,
            seed: self.seed,
            grid: self.train_grid()?,
            fov_deg: self.fov_deg,
            image_w: self.image_width,
            image_h: self.image_height,
            background: self.load_background()?,
            augment_brightness: self.augment_brightness,
            lpgd_diagnostics: self.lpgd_diagnostics,
        };
        c.validate().map_err(|e| {
            let field = match e {
                texcamo_core::Error::NotEnoughPoses { .. } => "k",
                _ if self.lr <= 0.0 || !self.lr.is_finite() => "lr",
                _ if self.epochs == 0 => "epochs",
                _ => "k",
            };
            field_err(field, e)
        })?;
        Ok(c)
    }

    pub fn load_mesh(&self) -> Result<Mesh, ConfigError> {
        if !self.mesh.is_file() {
            return Err(field_err("mesh", format!("file not found: {}", self.mesh.display())));
        }
        load_obj(&self.mesh).map_err(|e| field_err("mesh", e))
    }

    pub fn load_mask(&self, mesh: &Mesh) -> Result<TrainableMask, ConfigError> {
        let dims = self.texture_dims()?;
        let mask = match &self.mask {
            MaskSource::UvCharts => TrainableMask::from_uv_charts(mesh, dims),
            MaskSource::AllTrainable => Ok(TrainableMask::all(dims)),
            MaskSource::Image(p) => {
                if !p.is_file() {
                    return Err(field_err("mask", format!("file not found: {}", p.display())));
                }
                TrainableMask::from_ppm(p)
            }
        }
        .map_err(|e| field_err("mask", e))?;
        if mask.dims() != dims {
            return Err(field_err(
                "mask",
                format!(
                    "mask is {}x{} but the texture is {}x{}",
                    mask.dims().width,
                    mask.dims().height,
                    dims.width,
                    dims.height
                ),
            ));
        }
        Ok(mask)
    }

    /// The `texture` input path, required to exist.
    pub fn texture_path(&self) -> Result<&Path, ConfigError> {
        let p = self.texture.as_deref().ok_or_else(|| field_err("texture", "no input texture given"))?;
        if !p.is_file() {
            return Err(field_err("texture", format!("file not found: {}", p.display())));
        }
        Ok(p)
    }

    pub fn check_sweep(&self) -> Result<(), ConfigError> {
        match self.sweep {
            Sweep::Quartet => Ok(()),
            Sweep::Tau if self.sweep_taus.is_empty() => Err(field_err("sweep_taus", "empty list")),
            Sweep::K if self.sweep_ks.is_empty() => Err(field_err("sweep_ks", "empty list")),
            Sweep::Tau => {
                for &t in &self.sweep_taus {
                    SearchRadius::new(t).map_err(|e| field_err("sweep_taus", e))?;
                }
                Ok(())
            }
            Sweep::K => {
                let n = self.train_grid()?.len();
                for &k in &self.sweep_ks {
                    if k == 0 || k > n {
                        return Err(field_err("sweep_ks", format!("k {k} outside 1..={n}")));
                    }
                }
                Ok(())
            }
        }
    }
}

fn non_empty_path(v: &str) -> Result<PathBuf, String> {
    if v.is_empty() {
        Err("empty path".into())
    } else {
        Ok(PathBuf::from(v))
    }
}
