//! Bidirectional sampling: the 3D and 2D reverse processes advance in
//! lockstep, each conditioned on the other's current clean estimate, with
//! classifier-free extrapolation on the prior (3D) and the label (2D).

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_flag, KeyValues};
use crate::denoisers::{Cond2d, Cond3d, Denoiser2d, Denoiser3d};
use crate::geometry::{ColorGrid, SdfGrid};
use crate::priors::{drop_prior, RadiancePrior};
use crate::projection::{back_project_views, HullConfig};
use crate::render::{
    field_from_grid, CameraPose, ImageBuffer, MultiViewSet, RenderConfig, SDensityParams, VIEW_CHANNELS,
};
use crate::scheduler::{
    ddpm_step, gaussian_vec, make_schedule, predict_x0, NoiseSchedule, ScheduleKind, StepMode, StepOptions,
};
use crate::{Error, Result};

/// `uncond + γ (cond - uncond)`, returning the exact inputs at γ = 0 and 1.
pub fn guidance_combine(uncond: &[f64], cond: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if uncond.len() != cond.len() {
        return Err(Error::shape(uncond.len(), cond.len()));
    }
    if !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!("guidance scale must be finite, got {gamma}")));
    }
    if gamma == 0.0 {
        return Ok(uncond.to_vec());
    }
    if gamma == 1.0 {
        return Ok(cond.to_vec());
    }
    Ok(uncond.iter().zip(cond).map(|(u, c)| u + gamma * (c - u)).collect())
}

/// Prior-present vs prior-dropped extrapolation of ε_3d.
pub fn guidance_combine_3d(uncond: &[f64], cond: &[f64], gamma_3d: f64) -> Result<Vec<f64>> {
    guidance_combine(uncond, cond, gamma_3d)
}

/// Labeled vs empty-label extrapolation of ε_2d.
pub fn guidance_combine_2d(uncond: &[f64], cond: &[f64], gamma_2d: f64) -> Result<Vec<f64>> {
    guidance_combine(uncond, cond, gamma_2d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub schedule_3d: ScheduleKind,
    pub schedule_2d: ScheduleKind,
    pub gamma_3d: f64,
    pub gamma_2d: f64,
    pub enable_2d_to_3d: bool,
    pub enable_3d_to_2d: bool,
    pub teacher_forced: bool,
    pub seed: u64,
    pub mode: StepMode,
    /// Ray samples for the intermediate renders H.
    pub guidance_samples: usize,
    pub density: SDensityParams,
    pub label: Option<String>,
    pub snapshot_every: usize,
    /// Clamp for the 2D clean estimate.
    pub clip_2d: Option<(f64, f64)>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 50,
            schedule_3d: ScheduleKind::Cosine,
            schedule_2d: ScheduleKind::Cosine,
            gamma_3d: 3.0,
            gamma_2d: 7.5,
            enable_2d_to_3d: true,
            enable_3d_to_2d: true,
            teacher_forced: false,
            seed: 0,
            mode: StepMode::Ancestral,
            guidance_samples: 32,
            density: SDensityParams::default(),
            label: Some("object".into()),
            snapshot_every: 10,
            clip_2d: Some((0.0, 1.0)),
        }
    }
}

pub const SAMPLER_KEYS: &[&str] = &[
    "sched3d.kind",
    "sched3d.steps",
    "sched2d.kind",
    "sched2d.steps",
    "sampler.gamma_3d",
    "sampler.gamma_2d",
    "sampler.enable_2d_to_3d",
    "sampler.enable_3d_to_2d",
    "sampler.teacher_forced",
    "sampler.seed",
    "sampler.mode",
    "sampler.guidance_samples",
    "sampler.label",
    "sampler.snapshot_every",
    "sampler.clip_2d",
    "render.s",
];

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::InvalidCount(format!("sampler needs at least 2 steps, got {}", self.steps)));
        }
        if !self.gamma_3d.is_finite() || !self.gamma_2d.is_finite() {
            return Err(Error::InvalidParameter("guidance scales must be finite".into()));
        }
        if self.guidance_samples < 2 {
            return Err(Error::InvalidCount("guidance renders need at least 2 ray samples".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::InvalidCount("snapshot interval must be positive".into()));
        }
        if let Some((lo, hi)) = self.clip_2d {
            if !(lo < hi) {
                return Err(Error::InvalidParameter(format!("bad clip range {lo}:{hi}")));
            }
        }
        Ok(())
    }

    pub fn schedules(&self) -> Result<(NoiseSchedule, NoiseSchedule)> {
        Ok((make_schedule(self.schedule_3d, self.steps)?, make_schedule(self.schedule_2d, self.steps)?))
    }

    pub fn guidance_render(&self) -> RenderConfig {
        RenderConfig::default().with_samples(self.guidance_samples)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("sched3d.kind", self.schedule_3d);
        kv.set("sched3d.steps", self.steps);
        kv.set("sched2d.kind", self.schedule_2d);
        kv.set("sched2d.steps", self.steps);
        kv.set("sampler.gamma_3d", self.gamma_3d);
        kv.set("sampler.gamma_2d", self.gamma_2d);
        kv.set("sampler.enable_2d_to_3d", self.enable_2d_to_3d);
        kv.set("sampler.enable_3d_to_2d", self.enable_3d_to_2d);
        kv.set("sampler.teacher_forced", self.teacher_forced);
        kv.set("sampler.seed", self.seed);
        kv.set("sampler.mode", self.mode);
        kv.set("sampler.guidance_samples", self.guidance_samples);
        kv.set("sampler.label", self.label.as_deref().unwrap_or(""));
        kv.set("sampler.snapshot_every", self.snapshot_every);
        kv.set(
            "sampler.clip_2d",
            match self.clip_2d {
                Some((lo, hi)) => format!("{lo}:{hi}"),
                None => "none".into(),
            },
        );
        kv.set("render.s", self.density.s);
        kv
    }

    /// Missing keys keep their defaults.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = SamplerConfig::default();
        let steps = kv.get_or("sched3d.steps", d.steps)?;
        if kv.get_or("sched2d.steps", steps)? != steps {
            return Err(Error::InvalidParameter("sched2d.steps must equal sched3d.steps".into()));
        }
        let flag = |key: &str, default: bool| -> Result<bool> { kv.get_str(key).map(parse_flag).unwrap_or(Ok(default)) };
        let clip_2d = match kv.get_str("sampler.clip_2d") {
            None => d.clip_2d,
            Some("none") => None,
            Some(s) => {
                let (lo, hi) = s
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidParameter(format!("sampler.clip_2d={s}: expected lo:hi")))?;
                let num = |v: &str| {
                    v.parse::<f64>()
                        .map_err(|e| Error::InvalidParameter(format!("sampler.clip_2d={s}: {e}")))
                };
                Some((num(lo)?, num(hi)?))
            }
        };
        let cfg = SamplerConfig {
            steps,
            schedule_3d: kv.get_or("sched3d.kind", d.schedule_3d)?,
            schedule_2d: kv.get_or("sched2d.kind", d.schedule_2d)?,
            gamma_3d: kv.get_or("sampler.gamma_3d", d.gamma_3d)?,
            gamma_2d: kv.get_or("sampler.gamma_2d", d.gamma_2d)?,
            enable_2d_to_3d: flag("sampler.enable_2d_to_3d", d.enable_2d_to_3d)?,
            enable_3d_to_2d: flag("sampler.enable_3d_to_2d", d.enable_3d_to_2d)?,
            teacher_forced: flag("sampler.teacher_forced", d.teacher_forced)?,
            seed: kv.get_or("sampler.seed", d.seed)?,
            mode: kv.get_or("sampler.mode", d.mode)?,
            guidance_samples: kv.get_or("sampler.guidance_samples", d.guidance_samples)?,
            density: SDensityParams::new(kv.get_or("render.s", d.density.s)?)?,
            label: match kv.get_str("sampler.label") {
                None => d.label,
                Some("") => None,
                Some(s) => Some(s.to_string()),
            },
            snapshot_every: kv.get_or("sampler.snapshot_every", d.snapshot_every)?,
            clip_2d,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything a run reads besides its config.
#[derive(Clone, Copy)]
pub struct SamplerInputs<'a> {
    pub denoiser_3d: &'a dyn Denoiser3d,
    pub denoiser_2d: &'a dyn Denoiser2d,
    pub prior: Option<&'a RadiancePrior>,
    pub poses: &'a [CameraPose],
    pub resolution: usize,
    /// Ground-truth views for teacher forcing.
    pub gt_views: Option<&'a MultiViewSet>,
}

/// Noisy states at step `t` plus the denoised views of the previous step.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    pub t: usize,
    pub f: Vec<f64>,
    pub v: MultiViewSet,
    pub v_denoised: MultiViewSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub eps3d_rms: f64,
    pub eps2d_rms: f64,
    /// Inside-node count of F'_0.
    pub f0_inside: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// State entering the step.
    pub state: SamplerState,
    pub f0_pred: Vec<f64>,
    pub renders: Option<MultiViewSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub every: usize,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: SamplerState,
    pub record: StepRecord,
    pub f0_pred: Vec<f64>,
    pub renders: Option<MultiViewSet>,
}

#[derive(Debug, Clone)]
pub struct SamplerOutput {
    pub f0: SdfGrid,
    pub v0: MultiViewSet,
    /// Colors back-projected from the final views.
    pub colors: ColorGrid,
    pub trajectory: Trajectory,
    pub manifest: KeyValues,
}

const STREAM_INIT_3D: u64 = 1;
const STREAM_INIT_2D: u64 = 2;
const STREAM_STEP_3D: u64 = 3;
const STREAM_STEP_2D: u64 = 4;
const STREAM_RENDER: u64 = 5;

/// Independent random stream per (seed, purpose, step).
pub fn stream_seed(seed: u64, stream: u64, t: usize) -> u64 {
    seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn stream_rng(seed: u64, stream: u64, t: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, stream, t))
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

fn clip(v: &mut [f64], range: Option<(f64, f64)>) {
    if let Some((lo, hi)) = range {
        for x in v {
            *x = x.clamp(lo, hi);
        }
    }
}

fn step_2d_eps(d2: &dyn Denoiser2d, v: &MultiViewSet, t: usize, renders: Option<&MultiViewSet>, cfg: &SamplerConfig) -> Result<Vec<f64>> {
    let cond = d2.eps(
        v,
        t,
        &Cond2d {
            renders,
            label: cfg.label.as_deref(),
        },
    )?;
    let uncond = d2.eps(v, t, &Cond2d { renders, label: None })?;
    guidance_combine_2d(&uncond, &cond, cfg.gamma_2d)
}

/// F_T, V_T ~ N(0, I) and the bootstrap cache of denoised views.
pub fn initial_state(cfg: &SamplerConfig, inputs: &SamplerInputs) -> Result<SamplerState> {
    cfg.validate()?;
    if inputs.poses.is_empty() {
        return Err(Error::InvalidCount("sampler needs at least one pose".into()));
    }
    let n = inputs.resolution;
    let (_, s2) = cfg.schedules()?;
    let f = gaussian_vec(&mut stream_rng(cfg.seed, STREAM_INIT_3D, 0), n * n * n);
    let mut rng = stream_rng(cfg.seed, STREAM_INIT_2D, 0);
    let images = inputs
        .poses
        .iter()
        .map(|p| {
            let data = gaussian_vec(&mut rng, p.width * p.height * VIEW_CHANNELS);
            ImageBuffer::from_data(p.width, p.height, VIEW_CHANNELS, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let v = MultiViewSet::new(inputs.poses.to_vec(), images)?;
    let v_denoised = if cfg.teacher_forced {
        inputs
            .gt_views
            .cloned()
            .ok_or_else(|| Error::InvalidParameter("teacher forcing needs ground-truth views".into()))?
    } else {
        let t = cfg.steps;
        let eps = step_2d_eps(inputs.denoiser_2d, &v, t, None, cfg)?;
        let mut x0 = predict_x0(&v.to_flat(), &eps, t, &s2)?;
        clip(&mut x0, cfg.clip_2d);
        v.with_flat(&x0)?
    };
    Ok(SamplerState {
        t: cfg.steps,
        f,
        v,
        v_denoised,
    })
}

/// One joint reverse step from `state.t` to `state.t - 1`.
pub fn bidi_step(state: &SamplerState, inputs: &SamplerInputs, cfg: &SamplerConfig, scheds: &(NoiseSchedule, NoiseSchedule)) -> Result<StepOutcome> {
    let t = state.t;
    let inner = || -> Result<StepOutcome> {
        if t == 0 {
            return Err(Error::InvalidParameter("reverse step needs t >= 1".into()));
        }
        let (s3, s2) = scheds;
        let n = inputs.resolution;
        let cache = if cfg.teacher_forced {
            inputs
                .gt_views
                .ok_or_else(|| Error::InvalidParameter("teacher forcing needs ground-truth views".into()))?
        } else {
            &state.v_denoised
        };

        // (1) prior-present vs prior-dropped 3D calls.
        let cond = Cond3d {
            view_guidance: cfg.enable_2d_to_3d,
            views: Some(cache),
            prior: inputs.prior,
            label: cfg.label.as_deref(),
        };
        let eps_c = inputs.denoiser_3d.eps(&state.f, t, &cond)?;
        let eps_u = match inputs.prior {
            Some(p) => {
                let dropped = drop_prior(p);
                inputs.denoiser_3d.eps(
                    &state.f,
                    t,
                    &Cond3d {
                        prior: Some(&dropped),
                        ..cond
                    },
                )?
            }
            None => eps_c.clone(),
        };
        let eps3 = guidance_combine_3d(&eps_u, &eps_c, cfg.gamma_3d)?;

        // (2) clean 3D estimate.
        let f0_pred = predict_x0(&state.f, &eps3, t, s3)?;

        // (3) render it from every pose.
        let renders = if cfg.enable_3d_to_2d {
            let grid = SdfGrid::from_values(n, f0_pred.clone())?;
            let colors = back_project_views(cache, n, &HullConfig::default())?.colors;
            let field = field_from_grid(&grid, &colors, cfg.density);
            Some(MultiViewSet::render(
                &field,
                inputs.poses,
                &cfg.guidance_render(),
                stream_seed(cfg.seed, STREAM_RENDER, t),
            )?)
        } else {
            None
        };

        // (4) labeled vs empty-label 2D calls.
        let eps2 = step_2d_eps(inputs.denoiser_2d, &state.v, t, renders.as_ref(), cfg)?;

        // (5) reverse steps.
        let opts3 = StepOptions {
            mode: cfg.mode,
            clip: None,
        };
        let opts2 = StepOptions {
            mode: cfg.mode,
            clip: cfg.clip_2d,
        };
        let f = ddpm_step(&state.f, &eps3, t, s3, opts3, &mut stream_rng(cfg.seed, STREAM_STEP_3D, t))?;
        let v_flat = state.v.to_flat();
        let v = ddpm_step(&v_flat, &eps2, t, s2, opts2, &mut stream_rng(cfg.seed, STREAM_STEP_2D, t))?;

        // (6) cache the denoised views.
        let mut den = predict_x0(&v_flat, &eps2, t, s2)?;
        clip(&mut den, cfg.clip_2d);

        Ok(StepOutcome {
            record: StepRecord {
                t,
                eps3d_rms: rms(&eps3),
                eps2d_rms: rms(&eps2),
                f0_inside: f0_pred.iter().filter(|x| **x < 0.0).count(),
            },
            next: SamplerState {
                t: t - 1,
                f,
                v: state.v.with_flat(&v)?,
                v_denoised: state.v.with_flat(&den)?,
            },
            f0_pred,
            renders,
        })
    };
    inner().map_err(|e| e.at_step(t))
}

/// Run the remaining steps from `state` down to t = 0.
pub fn resume(cfg: &SamplerConfig, inputs: &SamplerInputs, mut state: SamplerState) -> Result<SamplerOutput> {
    let start = Instant::now();
    let scheds = cfg.schedules()?;
    let mut trajectory = Trajectory {
        every: cfg.snapshot_every,
        records: Vec::with_capacity(state.t),
        snapshots: Vec::new(),
    };
    while state.t > 0 {
        let out = bidi_step(&state, inputs, cfg, &scheds)?;
        if state.t % cfg.snapshot_every == 0 || state.t == cfg.steps {
            trajectory.snapshots.push(Snapshot {
                state: state.clone(),
                f0_pred: out.f0_pred,
                renders: out.renders,
            });
        }
        trajectory.records.push(out.record);
        state = out.next;
    }
    let n = inputs.resolution;
    let f0 = SdfGrid::from_values(n, state.f)?;
    let colors = back_project_views(&state.v, n, &HullConfig::default())?.colors;
    let mut manifest = cfg.to_kv();
    manifest.set("run.config_hash", cfg.to_kv().hash());
    manifest.set("run.resolution", n);
    manifest.set("run.views", inputs.poses.len());
    manifest.set("sched3d.descriptor", scheds.0.descriptor());
    manifest.set("sched2d.descriptor", scheds.1.descriptor());
    match inputs.prior {
        Some(p) => {
            manifest.set("prior.source", &p.provenance.source);
            manifest.set("prior.t0", p.provenance.t0);
            manifest.set("prior.seed", p.provenance.seed);
            manifest.set("prior.dropped", p.provenance.dropped);
        }
        None => manifest.set("prior.source", "none"),
    }
    manifest.set("timing.sample_seconds", format!("{:.3}", start.elapsed().as_secs_f64()));
    Ok(SamplerOutput {
        f0,
        v0: state.v,
        colors,
        trajectory,
        manifest,
    })
}

pub fn run_sampler(cfg: &SamplerConfig, inputs: &SamplerInputs) -> Result<SamplerOutput> {
    let state = initial_state(cfg, inputs)?;
    resume(cfg, inputs, state)
}

/// Same geometry inputs and seeds, one run per label at an elevated γ_2d.
pub fn control_texture(cfg: &SamplerConfig, inputs: &SamplerInputs, labels: &[&str], gamma_2d: f64) -> Result<Vec<SamplerOutput>> {
    labels
        .iter()
        .map(|label| {
            let c = SamplerConfig {
                label: Some(label.to_string()),
                gamma_2d,
                ..cfg.clone()
            };
            run_sampler(&c, inputs)
        })
        .collect()
}

/// Same label and seeds, one run per prior at an elevated γ_3d.
pub fn control_geometry(
    cfg: &SamplerConfig,
    inputs: &SamplerInputs,
    priors: &[&RadiancePrior],
    gamma_3d: f64,
) -> Result<Vec<SamplerOutput>> {
    let c = SamplerConfig {
        gamma_3d,
        ..cfg.clone()
    };
    priors
        .iter()
        .map(|p| {
            run_sampler(
                &c,
                &SamplerInputs {
                    prior: Some(*p),
                    ..*inputs
                },
            )
        })
        .collect()
}
