//! Pipeline configuration as `section.key = value` pairs (INI files).

use std::path::Path;

use ini::Ini;

use crate::cache::ExtractConfig;
use crate::classifier::{GammaMode, TrainConfig};
use crate::descriptor::Channel;
use crate::encoding::{EncodingConfig, KMeansConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub extract: ExtractConfig,
    /// `M`: a window covers `M + 1` frames.
    pub window_span: usize,
    /// Training windows whose span reaches an annotated boundary are dropped.
    pub boundary_margin: usize,
    pub kmeans: KMeansConfig,
    pub sample_frac: f64,
    pub encoding: EncodingConfig,
    pub train: TrainConfig,
    pub lambda: f64,
    pub radius: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            extract: ExtractConfig::default(),
            window_span: 30,
            boundary_margin: 15,
            kmeans: KMeansConfig::default(),
            sample_frac: 0.1,
            encoding: EncodingConfig::default(),
            train: TrainConfig::default(),
            lambda: 1.0,
            radius: 5,
        }
    }
}

/// Every recognised key, in file order.
pub const KEYS: &[&str] = &[
    "flow.levels",
    "flow.pyr_scale",
    "flow.window",
    "flow.iterations",
    "flow.poly_radius",
    "flow.poly_sigma",
    "tracking.grid_step",
    "tracking.traj_length",
    "tracking.num_scales",
    "tracking.scale_factor",
    "tracking.min_eig_frac",
    "tracking.static_std_px",
    "tracking.max_step_px",
    "tracking.max_step_frac",
    "tracking.median_kernel",
    "descriptor.volume_size",
    "descriptor.spatial_cells",
    "descriptor.temporal_cells",
    "descriptor.hog_bins",
    "descriptor.hof_bins",
    "descriptor.mbh_bins",
    "descriptor.zero_flow_thresh",
    "affine.grid_step",
    "affine.inlier_px",
    "affine.iterations",
    "affine.min_inlier_ratio",
    "affine.seed",
    "affine.min_samples",
    "window.span",
    "window.boundary_margin",
    "encoding.k",
    "encoding.seed",
    "encoding.sample_frac",
    "encoding.kmeans_max_iter",
    "encoding.kmeans_tol",
    "encoding.shape_levels",
    "encoding.hog_levels",
    "encoding.hof_levels",
    "encoding.mbhx_levels",
    "encoding.mbhy_levels",
    "encoding.kinematic_levels",
    "encoding.statistical",
    "encoding.camera",
    "svm.c_grid",
    "svm.gamma",
    "svm.folds",
    "svm.seed",
    "svm.max_iter",
    "svm.tol",
    "svm.cache_rows",
    "svm.gamma_pairs",
    "mrf.lambda",
    "mrf.radius",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{value}'"))),
    }
}

fn level_channel(key: &str) -> Option<Channel> {
    let name = key.strip_prefix("encoding.")?.strip_suffix("_levels")?;
    Channel::from_name(name)
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = &mut self.extract.flow;
        let t = &mut self.extract.tracker;
        let d = &mut self.extract.descriptor;
        let a = &mut self.extract.affine;
        match key {
            "flow.levels" => f.levels = parse(key, value)?,
            "flow.pyr_scale" => f.pyr_scale = parse(key, value)?,
            "flow.window" => f.window = parse(key, value)?,
            "flow.iterations" => f.iterations = parse(key, value)?,
            "flow.poly_radius" => f.poly_radius = parse(key, value)?,
            "flow.poly_sigma" => f.poly_sigma = parse(key, value)?,
            "tracking.grid_step" => t.grid_step = parse(key, value)?,
            "tracking.traj_length" => t.traj_length = parse(key, value)?,
            "tracking.num_scales" => t.num_scales = parse(key, value)?,
            "tracking.scale_factor" => t.scale_factor = parse(key, value)?,
            "tracking.min_eig_frac" => t.min_eig_frac = parse(key, value)?,
            "tracking.static_std_px" => t.static_std_px = parse(key, value)?,
            "tracking.max_step_px" => t.max_step_px = parse(key, value)?,
            "tracking.max_step_frac" => t.max_step_frac = parse(key, value)?,
            "tracking.median_kernel" => t.median_kernel = parse(key, value)?,
            "descriptor.volume_size" => d.volume_size = parse(key, value)?,
            "descriptor.spatial_cells" => d.spatial_cells = parse(key, value)?,
            "descriptor.temporal_cells" => d.temporal_cells = parse(key, value)?,
            "descriptor.hog_bins" => d.hog_bins = parse(key, value)?,
            "descriptor.hof_bins" => d.hof_bins = parse(key, value)?,
            "descriptor.mbh_bins" => d.mbh_bins = parse(key, value)?,
            "descriptor.zero_flow_thresh" => d.zero_flow_thresh = parse(key, value)?,
            "affine.grid_step" => a.grid_step = parse(key, value)?,
            "affine.inlier_px" => a.inlier_px = parse(key, value)?,
            "affine.iterations" => a.iterations = parse(key, value)?,
            "affine.min_inlier_ratio" => a.min_inlier_ratio = parse(key, value)?,
            "affine.seed" => a.seed = parse(key, value)?,
            "affine.min_samples" => a.min_samples = parse(key, value)?,
            "window.span" => self.window_span = parse(key, value)?,
            "window.boundary_margin" => self.boundary_margin = parse(key, value)?,
            "encoding.k" => self.kmeans.k = parse(key, value)?,
            "encoding.seed" => self.kmeans.seed = parse(key, value)?,
            "encoding.sample_frac" => self.sample_frac = parse(key, value)?,
            "encoding.kmeans_max_iter" => self.kmeans.max_iter = parse(key, value)?,
            "encoding.kmeans_tol" => self.kmeans.tol = parse(key, value)?,
            "encoding.statistical" => self.encoding.statistical = parse_bool(key, value)?,
            "encoding.camera" => self.encoding.camera = parse_bool(key, value)?,
            "svm.c_grid" => {
                self.train.c_grid = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "svm.gamma" => {
                self.train.gamma = if value.trim().eq_ignore_ascii_case("auto") {
                    GammaMode::Auto
                } else {
                    GammaMode::Explicit(parse(key, value)?)
                }
            }
            "svm.folds" => self.train.folds = parse(key, value)?,
            "svm.seed" => self.train.seed = parse(key, value)?,
            "svm.max_iter" => self.train.max_iter = parse(key, value)?,
            "svm.tol" => self.train.tol = parse(key, value)?,
            "svm.cache_rows" => self.train.cache_rows = parse(key, value)?,
            "svm.gamma_pairs" => self.train.gamma_pairs = parse(key, value)?,
            "mrf.lambda" => self.lambda = parse(key, value)?,
            "mrf.radius" => self.radius = parse(key, value)?,
            _ => {
                let c = level_channel(key).ok_or_else(|| Error::Config(format!("unknown key '{key}'")))?;
                let levels: usize = parse(key, value)?;
                self.encoding.set_channel(c, (levels > 0).then_some(levels));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let f = &self.extract.flow;
        let t = &self.extract.tracker;
        let d = &self.extract.descriptor;
        let a = &self.extract.affine;
        Some(match key {
            "flow.levels" => f.levels.to_string(),
            "flow.pyr_scale" => f.pyr_scale.to_string(),
            "flow.window" => f.window.to_string(),
            "flow.iterations" => f.iterations.to_string(),
            "flow.poly_radius" => f.poly_radius.to_string(),
            "flow.poly_sigma" => f.poly_sigma.to_string(),
            "tracking.grid_step" => t.grid_step.to_string(),
            "tracking.traj_length" => t.traj_length.to_string(),
            "tracking.num_scales" => t.num_scales.to_string(),
            "tracking.scale_factor" => t.scale_factor.to_string(),
            "tracking.min_eig_frac" => t.min_eig_frac.to_string(),
            "tracking.static_std_px" => t.static_std_px.to_string(),
            "tracking.max_step_px" => t.max_step_px.to_string(),
            "tracking.max_step_frac" => t.max_step_frac.to_string(),
            "tracking.median_kernel" => t.median_kernel.to_string(),
            "descriptor.volume_size" => d.volume_size.to_string(),
            "descriptor.spatial_cells" => d.spatial_cells.to_string(),
            "descriptor.temporal_cells" => d.temporal_cells.to_string(),
            "descriptor.hog_bins" => d.hog_bins.to_string(),
            "descriptor.hof_bins" => d.hof_bins.to_string(),
            "descriptor.mbh_bins" => d.mbh_bins.to_string(),
            "descriptor.zero_flow_thresh" => d.zero_flow_thresh.to_string(),
            "affine.grid_step" => a.grid_step.to_string(),
            "affine.inlier_px" => a.inlier_px.to_string(),
            "affine.iterations" => a.iterations.to_string(),
            "affine.min_inlier_ratio" => a.min_inlier_ratio.to_string(),
            "affine.seed" => a.seed.to_string(),
            "affine.min_samples" => a.min_samples.to_string(),
            "window.span" => self.window_span.to_string(),
            "window.boundary_margin" => self.boundary_margin.to_string(),
            "encoding.k" => self.kmeans.k.to_string(),
            "encoding.seed" => self.kmeans.seed.to_string(),
            "encoding.sample_frac" => self.sample_frac.to_string(),
            "encoding.kmeans_max_iter" => self.kmeans.max_iter.to_string(),
            "encoding.kmeans_tol" => self.kmeans.tol.to_string(),
            "encoding.statistical" => self.encoding.statistical.to_string(),
            "encoding.camera" => self.encoding.camera.to_string(),
            "svm.c_grid" => self.train.c_grid.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
            "svm.gamma" => match self.train.gamma {
                GammaMode::Auto => "auto".into(),
                GammaMode::Explicit(g) => g.to_string(),
            },
            "svm.folds" => self.train.folds.to_string(),
            "svm.seed" => self.train.seed.to_string(),
            "svm.max_iter" => self.train.max_iter.to_string(),
            "svm.tol" => self.train.tol.to_string(),
            "svm.cache_rows" => self.train.cache_rows.to_string(),
            "svm.gamma_pairs" => self.train.gamma_pairs.to_string(),
            "mrf.lambda" => self.lambda.to_string(),
            "mrf.radius" => self.radius.to_string(),
            _ => {
                let c = level_channel(key)?;
                let levels = self.encoding.channels.iter().find(|s| s.channel == c).map_or(0, |s| s.levels);
                levels.to_string()
            }
        })
    }

    /// Applies `section.key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            for (k, v) in props.iter() {
                let key = match section {
                    Some(s) => format!("{s}.{k}"),
                    None => k.to_string(),
                };
                cfg.set(&key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_ini_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_ini_string(&self) -> String {
        let mut ini = Ini::new();
        for key in KEYS {
            let (section, name) = key.split_once('.').expect("keys are sectioned");
            ini.with_section(Some(section)).set(name, self.get(key).expect("known key"));
        }
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ini output is UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ini_string()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.extract.validate()?;
        if self.window_span % 2 != 0 || self.window_span < self.extract.tracker.traj_length {
            return Err(Error::Config(format!(
                "window span {} must be even and at least the trajectory length {}",
                self.window_span, self.extract.tracker.traj_length
            )));
        }
        if !(self.sample_frac > 0.0 && self.sample_frac <= 1.0) {
            return Err(Error::Config("encoding.sample_frac must be in (0, 1]".into()));
        }
        if self.kmeans.k < 2 {
            return Err(Error::Config("encoding.k must be >= 2".into()));
        }
        self.encoding.validate()?;
        self.train.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || self.radius == 0 {
            return Err(Error::Config("mrf.lambda must be >= 0 and mrf.radius >= 1".into()));
        }
        Ok(())
    }

    /// Histogram channels whose descriptors must be kept after extraction.
    pub fn channels(&self) -> Vec<Channel> {
        self.encoding.channels.iter().map(|c| c.channel).collect()
    }
}
