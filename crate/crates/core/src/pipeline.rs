//! Run configuration and the oracle setup shared by the CLI and the tests.

use std::collections::BTreeMap;

use crate::config::{parse_flag, KeyValues};
use crate::denoisers::{Bias2d, Bias3d, Oracle2d, Oracle3d};
use crate::geometry::{bake_colors, bake_grid, ColorGrid, SceneSpec, SdfGrid};
use crate::priors::{build_prior, PriorConfig, RadiancePrior};
use crate::render::{field_from_grid, make_camera_ring, CameraPose, MultiViewSet, RenderConfig};
use crate::sampler::{SamplerConfig, SamplerInputs, SAMPLER_KEYS};
use crate::{Error, Result};

/// Label whose target is the scene with its own palette.
pub const OWN_LABEL: &str = "object";

/// Named recolor labels.
pub const LABEL_COLORS: &[(&str, [f64; 3])] = &[
    ("red", [0.85, 0.15, 0.15]),
    ("green", [0.15, 0.7, 0.25]),
    ("blue", [0.15, 0.35, 0.85]),
    ("gold", [0.9, 0.65, 0.1]),
    ("purple", [0.6, 0.2, 0.7]),
    ("teal", [0.1, 0.7, 0.7]),
    ("white", [0.95, 0.95, 0.95]),
    ("gray", [0.5, 0.5, 0.5]),
];

/// The scene as described by `label`: its own palette, or every part
/// recolored to a named color.
pub fn labeled_scene(scene: &SceneSpec, label: &str) -> Result<SceneSpec> {
    if label == OWN_LABEL {
        return Ok(scene.clone());
    }
    let rgb = LABEL_COLORS
        .iter()
        .find(|(name, _)| *name == label)
        .map(|(_, rgb)| *rgb)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown label '{label}'")))?;
    let mut out = scene.clone();
    for label in scene.labels() {
        out = out.with_palette(label, rgb);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewConfig {
    pub count: usize,
    pub elevation: f64,
    pub radius: f64,
    pub fov: f64,
    pub size: usize,
    pub seed: u64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            count: 8,
            elevation: 30.0,
            radius: 3.0,
            fov: 40.0,
            size: 64,
            seed: 0,
        }
    }
}

impl ViewConfig {
    pub fn ring(&self) -> Result<Vec<CameraPose>> {
        make_camera_ring(self.count, self.elevation, self.radius, self.fov, self.size, self.size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub lambda_c: f64,
    pub lambda_p: f64,
    pub bias_3d: f64,
    pub bias_2d: Option<Bias2d>,
    /// Labels with a 2D target besides the sampler's own.
    pub labels: Vec<String>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            lambda_c: 0.5,
            lambda_p: 0.3,
            bias_3d: 0.0,
            bias_2d: None,
            labels: vec![OWN_LABEL.into()],
        }
    }
}

pub fn parse_bias_2d(s: &str) -> Result<Option<Bias2d>> {
    let bad = || Error::InvalidParameter(format!("bias_2d '{s}': expected none, shift:<px> or hue:<deg>"));
    if s == "none" || s.is_empty() {
        return Ok(None);
    }
    let (kind, v) = s.split_once(':').ok_or_else(bad)?;
    match kind {
        "shift" => Ok(Some(Bias2d::Shift(v.parse().map_err(|_| bad())?))),
        "hue" => Ok(Some(Bias2d::Hue(v.parse().map_err(|_| bad())?))),
        _ => Err(bad()),
    }
}

pub fn format_bias_2d(b: Option<Bias2d>) -> String {
    match b {
        None => "none".into(),
        Some(Bias2d::Shift(k)) => format!("shift:{k}"),
        Some(Bias2d::Hue(d)) => format!("hue:{d}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub resolution: usize,
    pub views: ViewConfig,
    /// Ray samples for dataset and final renders.
    pub render_samples: usize,
    pub sampler: SamplerConfig,
    pub oracle: OracleConfig,
    pub prior: PriorConfig,
    pub use_prior: bool,
    pub prior_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            resolution: 32,
            views: ViewConfig::default(),
            render_samples: 64,
            sampler: SamplerConfig::default(),
            oracle: OracleConfig::default(),
            prior: PriorConfig::default(),
            use_prior: true,
            prior_seed: 0,
        }
    }
}

const RUN_KEYS: &[&str] = &[
    "grid.n",
    "views.count",
    "views.elevation",
    "views.radius",
    "views.fov",
    "views.size",
    "views.seed",
    "render.samples",
    "oracle.lambda_c",
    "oracle.lambda_p",
    "oracle.bias_3d",
    "oracle.bias_2d",
    "oracle.labels",
    "prior.enabled",
    "prior.t0",
    "prior.resolution",
    "prior.drop_probability",
    "prior.seed",
];

impl RunConfig {
    pub fn render_config(&self) -> RenderConfig {
        RenderConfig::default().with_samples(self.render_samples)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.prior.validate()?;
        if self.views.count == 0 {
            return Err(Error::InvalidCount("views.count must be at least 1".into()));
        }
        if self.render_samples < 2 {
            return Err(Error::InvalidCount("render.samples must be at least 2".into()));
        }
        Ok(())
    }

    /// Every label the 2D oracle needs a target for.
    pub fn labels(&self) -> Vec<String> {
        let mut labels = self.oracle.labels.clone();
        if let Some(l) = &self.sampler.label {
            labels.push(l.clone());
        }
        labels.sort();
        labels.dedup();
        labels
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = self.sampler.to_kv();
        kv.set("grid.n", self.resolution);
        kv.set("views.count", self.views.count);
        kv.set("views.elevation", self.views.elevation);
        kv.set("views.radius", self.views.radius);
        kv.set("views.fov", self.views.fov);
        kv.set("views.size", self.views.size);
        kv.set("views.seed", self.views.seed);
        kv.set("render.samples", self.render_samples);
        kv.set("oracle.lambda_c", self.oracle.lambda_c);
        kv.set("oracle.lambda_p", self.oracle.lambda_p);
        kv.set("oracle.bias_3d", self.oracle.bias_3d);
        kv.set("oracle.bias_2d", format_bias_2d(self.oracle.bias_2d));
        kv.set("oracle.labels", self.oracle.labels.join(","));
        kv.set("prior.enabled", self.use_prior);
        kv.set("prior.t0", self.prior.t0);
        kv.set("prior.resolution", self.prior.coarse_resolution);
        kv.set("prior.drop_probability", self.prior.drop_probability);
        kv.set("prior.seed", self.prior_seed);
        kv
    }

    /// Keys outside the run sections are rejected unless listed in `extra`.
    pub fn from_kv(kv: &KeyValues, extra: &[&str]) -> Result<Self> {
        let known: Vec<&str> = RUN_KEYS.iter().chain(SAMPLER_KEYS).chain(extra).copied().collect();
        kv.check_known(&known)?;
        let d = RunConfig::default();
        let cfg = RunConfig {
            resolution: kv.get_or("grid.n", d.resolution)?,
            views: ViewConfig {
                count: kv.get_or("views.count", d.views.count)?,
                elevation: kv.get_or("views.elevation", d.views.elevation)?,
                radius: kv.get_or("views.radius", d.views.radius)?,
                fov: kv.get_or("views.fov", d.views.fov)?,
                size: kv.get_or("views.size", d.views.size)?,
                seed: kv.get_or("views.seed", d.views.seed)?,
            },
            render_samples: kv.get_or("render.samples", d.render_samples)?,
            sampler: SamplerConfig::from_kv(kv)?,
            oracle: OracleConfig {
                lambda_c: kv.get_or("oracle.lambda_c", d.oracle.lambda_c)?,
                lambda_p: kv.get_or("oracle.lambda_p", d.oracle.lambda_p)?,
                bias_3d: kv.get_or("oracle.bias_3d", d.oracle.bias_3d)?,
                bias_2d: parse_bias_2d(kv.get_str("oracle.bias_2d").unwrap_or("none"))?,
                labels: match kv.get_str("oracle.labels") {
                    None => d.oracle.labels,
                    Some(s) => s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
                },
            },
            prior: PriorConfig {
                t0: kv.get_or("prior.t0", d.prior.t0)?,
                coarse_resolution: kv.get_or("prior.resolution", d.prior.coarse_resolution)?,
                drop_probability: kv.get_or("prior.drop_probability", d.prior.drop_probability)?,
            },
            use_prior: kv.get_str("prior.enabled").map(parse_flag).unwrap_or(Ok(d.use_prior))?,
            prior_seed: kv.get_or("prior.seed", d.prior_seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Render `scene` baked at `n` from every pose.
pub fn scene_views(scene: &SceneSpec, n: usize, poses: &[CameraPose], cfg: &RunConfig) -> Result<MultiViewSet> {
    let g = bake_grid(scene, n)?;
    let c = bake_colors(scene, n)?;
    let field = field_from_grid(&g, &c, cfg.sampler.density);
    MultiViewSet::render(&field, poses, &cfg.render_config(), cfg.views.seed)
}

/// Ground truth, prior and oracles for one scene.
pub struct OracleSetup {
    pub gt: SdfGrid,
    pub colors: ColorGrid,
    pub poses: Vec<CameraPose>,
    /// Unperturbed views of the scene with its own palette.
    pub views: MultiViewSet,
    pub prior: Option<RadiancePrior>,
    pub oracle_3d: Oracle3d,
    pub oracle_2d: Oracle2d,
}

impl OracleSetup {
    pub fn build(scene: &SceneSpec, cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.resolution;
        let (s3, s2) = cfg.sampler.schedules()?;
        let gt = bake_grid(scene, n)?;
        let colors = bake_colors(scene, n)?;
        let poses = cfg.views.ring()?;
        let views = scene_views(scene, n, &poses, cfg)?;
        let mut targets = BTreeMap::new();
        for label in cfg.labels() {
            let v = if label == OWN_LABEL {
                views.clone()
            } else {
                scene_views(&labeled_scene(scene, &label)?, n, &poses, cfg)?
            };
            targets.insert(label, v);
        }
        let prior = if cfg.use_prior {
            Some(build_prior(scene, &cfg.prior, &s3, cfg.prior_seed)?)
        } else {
            None
        };
        let bias_3d = (cfg.oracle.bias_3d != 0.0).then_some(Bias3d {
            amplitude: cfg.oracle.bias_3d,
        });
        Ok(OracleSetup {
            oracle_3d: Oracle3d::new(gt.clone(), cfg.oracle.lambda_c, cfg.oracle.lambda_p, s3)?.with_bias(bias_3d),
            oracle_2d: Oracle2d::new(targets, cfg.oracle.lambda_c, s2)?.with_bias(cfg.oracle.bias_2d)?,
            gt,
            colors,
            poses,
            views,
            prior,
        })
    }

    pub fn inputs(&self) -> SamplerInputs<'_> {
        SamplerInputs {
            denoiser_3d: &self.oracle_3d,
            denoiser_2d: &self.oracle_2d,
            prior: self.prior.as_ref(),
            poses: &self.poses,
            resolution: self.gt.resolution(),
            gt_views: Some(&self.views),
        }
    }
}
