//! Distillation of a sampled field into a high-resolution voxel radiance
//! field, the analytic compositing gradient, and low-noise score refinement.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::config::KeyValues;
use crate::geometry::{ColorGrid, SdfGrid, MIN_RESOLUTION};
use crate::lattice::{self, Stencil};
use crate::render::{
    composite, field_from_grid, pixel_rng, random_pose, ray_interval, sample_ray, CameraPose, Composite,
    ImageBuffer, MultiViewSet, RadianceField, RaySamples, RenderConfig, SDensityParams,
};
use crate::scheduler::{gaussian_vec, make_schedule, NoiseSchedule, ScheduleKind};
use crate::{Error, Result, Vec3};

/// Color given to voxels before any fitting.
pub const INITIAL_GRAY: [f64; 3] = [0.5; 3];

/// Dense density and color grids with a binary occupancy mask.
#[derive(Debug, Clone, PartialEq)]
pub struct HiResField {
    n: usize,
    density: Vec<f64>,
    colors: Vec<[f64; 3]>,
    mask: Vec<bool>,
    params: SDensityParams,
}

impl HiResField {
    /// Zero density and gray colors.
    pub fn new(n: usize, mask: Vec<bool>, params: SDensityParams) -> Result<Self> {
        let len = n * n * n;
        Self::from_parts(n, vec![0.0; len], vec![INITIAL_GRAY; len], mask, params)
    }

    /// Nodes sampled from `source`; density outside the mask is zeroed.
    pub fn resample<F: RadianceField + ?Sized>(
        source: &F,
        n: usize,
        mask: Vec<bool>,
        params: SDensityParams,
    ) -> Result<Self> {
        let len = n * n * n;
        let nodes: Vec<(f64, [f64; 3])> = (0..len)
            .into_par_iter()
            .map(|k| {
                let p = lattice::point_of_index(n, k);
                (source.density(&p).max(0.0), source.color(&p, &Vec3::z()))
            })
            .collect();
        let density = nodes.iter().zip(&mask).map(|((d, _), m)| if *m { *d } else { 0.0 }).collect();
        let colors = nodes.into_iter().map(|(_, c)| c.map(|v| v.clamp(0.0, 1.0))).collect();
        Self::from_parts(n, density, colors, mask, params)
    }

    pub fn from_parts(
        n: usize,
        density: Vec<f64>,
        colors: Vec<[f64; 3]>,
        mask: Vec<bool>,
        params: SDensityParams,
    ) -> Result<Self> {
        if n < MIN_RESOLUTION {
            return Err(Error::InvalidResolution(n, MIN_RESOLUTION));
        }
        let len = n * n * n;
        for (name, got) in [("density", density.len()), ("colors", colors.len()), ("mask", mask.len())] {
            if got != len {
                return Err(Error::shape(format!("{len} {name} values"), got));
            }
        }
        if density.iter().zip(&mask).any(|(d, m)| !(d.is_finite() && *d >= 0.0) || (!m && *d != 0.0)) {
            return Err(Error::InvalidParameter(
                "density must be finite, non-negative and zero outside the mask".into(),
            ));
        }
        Ok(HiResField {
            n,
            density,
            colors,
            mask,
            params,
        })
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn density_values(&self) -> &[f64] {
        &self.density
    }

    pub fn color_values(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn params(&self) -> SDensityParams {
        self.params
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_finite(&self) -> bool {
        self.density.iter().all(|v| v.is_finite()) && self.colors.iter().flatten().all(|v| v.is_finite())
    }

    /// Mean |σ - σ'| over the nodes masked in either field.
    pub fn density_l1(&self, other: &HiResField) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::shape(format!("resolution {}", self.n), format!("resolution {}", other.n)));
        }
        let (mut sum, mut count) = (0.0, 0usize);
        for k in 0..self.density.len() {
            if self.mask[k] || other.mask[k] {
                sum += (self.density[k] - other.density[k]).abs();
                count += 1;
            }
        }
        Ok(if count == 0 { 0.0 } else { sum / count as f64 })
    }

    /// Gradient step on masked nodes, then projection onto σ ≥ 0 and colors in [0, 1].
    fn stepped(&self, grad: &Gradient, step: f64) -> HiResField {
        let mut out = self.clone();
        for k in 0..self.density.len() {
            if !self.mask[k] {
                continue;
            }
            out.density[k] = (self.density[k] - step * grad.density[k]).max(0.0);
            for c in 0..3 {
                out.colors[k][c] = (self.colors[k][c] - step * grad.colors[k][c]).clamp(0.0, 1.0);
            }
        }
        out
    }

    /// Sign step with per-parameter sizes scaled by `mult`, then projection.
    fn sign_stepped(&self, grad: &Gradient, steps: &Gradient, mult: f64) -> HiResField {
        let mut out = self.clone();
        for k in 0..self.density.len() {
            if !self.mask[k] {
                continue;
            }
            out.density[k] = (self.density[k] - mult * steps.density[k] * sign(grad.density[k])).max(0.0);
            for c in 0..3 {
                let v = self.colors[k][c] - mult * steps.colors[k][c] * sign(grad.colors[k][c]);
                out.colors[k][c] = v.clamp(0.0, 1.0);
            }
        }
        out
    }

    pub fn color_grid(&self) -> ColorGrid {
        ColorGrid::from_values(self.n, self.colors.clone()).expect("color grid matches resolution")
    }
}

impl RadianceField for HiResField {
    fn density(&self, p: &Vec3) -> f64 {
        Stencil::new(self.n, p).apply(&self.density)
    }
    fn color(&self, p: &Vec3, _: &Vec3) -> [f64; 3] {
        Stencil::new(self.n, p).apply3(&self.colors)
    }
}

/// |d| at which the S-density equals `sigma`; 0 at or above the peak.
pub fn inverse_s_density(sigma: f64, params: SDensityParams) -> f64 {
    let s = params.s;
    if sigma >= 0.25 * s {
        return 0.0;
    }
    if sigma <= 0.0 {
        return f64::INFINITY;
    }
    let x = 2.0 * sigma / ((s - 2.0 * sigma) + (s * (s - 4.0 * sigma)).sqrt());
    -x.ln() / s
}

/// Signed distance recovered from density. Magnitude from the inverse
/// S-density, capped at `cap`; sign from a flood fill that marks nodes
/// reachable from the boundary without crossing the one-voxel shell as outside.
pub fn density_to_sdf(field: &HiResField, cap: f64) -> SdfGrid {
    let n = field.n;
    let h = lattice::spacing(n);
    let dist: Vec<f64> = field.density.iter().map(|s| inverse_s_density(*s, field.params).min(cap)).collect();
    let barrier: Vec<bool> = dist.iter().map(|d| *d <= h).collect();
    let mut outside = vec![false; dist.len()];
    let mut queue = VecDeque::new();
    for k in 0..dist.len() {
        let (x, y, z) = lattice::unflatten(n, k);
        let edge = [x, y, z].iter().any(|v| *v == 0 || *v == n - 1);
        if edge && !barrier[k] {
            outside[k] = true;
            queue.push_back(k);
        }
    }
    while let Some(k) = queue.pop_front() {
        for j in lattice::neighbors6(n, k) {
            if !outside[j] && !barrier[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        }
    }
    let values = (0..dist.len())
        .map(|k| {
            let positive = outside[k] || (barrier[k] && lattice::neighbors6(n, k).any(|j| outside[j]));
            if positive {
                dist[k]
            } else {
                -dist[k]
            }
        })
        .collect();
    SdfGrid::from_values(n, values).expect("lattice sized values")
}

/// Nodes whose local opacity `1 - exp(-σ δ_h)` exceeds `threshold`, dilated by one node.
pub fn occupancy_bound<F: RadianceField + ?Sized>(source: &F, n: usize, threshold: f64) -> Result<Vec<bool>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("occupancy threshold {threshold} outside (0, 1)")));
    }
    if n < MIN_RESOLUTION {
        return Err(Error::InvalidResolution(n, MIN_RESOLUTION));
    }
    let h = lattice::spacing(n);
    let raw: Vec<bool> = (0..n * n * n)
        .into_par_iter()
        .map(|k| 1.0 - (-source.density(&lattice::point_of_index(n, k)) * h).exp() > threshold)
        .collect();
    Ok(lattice::dilate26(n, &raw))
}

/// Gradient with respect to every node; zero outside the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub density: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
}

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Gradient {
            density: vec![0.0; len],
            colors: vec![[0.0; 3]; len],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.density.iter().all(|v| *v == 0.0) && self.colors.iter().flatten().all(|v| *v == 0.0)
    }

    fn scale(&mut self, s: f64) {
        self.density.iter_mut().for_each(|v| *v *= s);
        self.colors.iter_mut().flatten().for_each(|v| *v *= s);
    }

    fn add_scaled(&mut self, other: &Gradient, s: f64) {
        for (a, b) in self.density.iter_mut().zip(&other.density) {
            *a += s * b;
        }
        for (a, b) in self.colors.iter_mut().flatten().zip(other.colors.iter().flatten()) {
            *a += s * b;
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean |pred - target|; subgradient sign(pred - target), 0 at ties.
    L1,
    /// Mean (pred - target)².
    L2,
}

impl LossKind {
    fn value(self, d: f64) -> f64 {
        match self {
            LossKind::L1 => d.abs(),
            LossKind::L2 => d * d,
        }
    }

    fn slope(self, d: f64) -> f64 {
        match self {
            LossKind::L1 => sign(d),
            LossKind::L2 => 2.0 * d,
        }
    }
}

/// One camera ray with its samples and compositing terms; `None` traces miss the cube.
type Trace = Option<(RaySamples, Composite)>;

fn trace_view<F: RadianceField + ?Sized>(field: &F, pose: &CameraPose, cfg: &RenderConfig, seed: u64) -> Result<Vec<Trace>> {
    pose.validate()?;
    pose.gen_rays()
        .par_iter()
        .enumerate()
        .map(|(k, ray)| match ray_interval(ray, cfg) {
            None => Ok(None),
            Some((near, far)) => {
                let mut rng = pixel_rng(seed, k);
                let samples = sample_ray(field, ray, cfg.samples, near, far, &mut rng)?;
                let comp = composite(&samples, cfg.background);
                Ok(Some((samples, comp)))
            }
        })
        .collect()
}

fn trace_colors(traces: &[Trace], background: [f64; 3]) -> Vec<[f64; 3]> {
    traces
        .iter()
        .map(|t| t.as_ref().map_or(background, |(_, c)| c.result.color))
        .collect()
}

/// Unclamped composited colors of one view.
pub fn render_colors<F: RadianceField + ?Sized>(
    field: &F,
    pose: &CameraPose,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<ImageBuffer> {
    let colors = trace_colors(&trace_view(field, pose, cfg, seed)?, cfg.background);
    ImageBuffer::from_data(pose.width, pose.height, 3, colors.into_iter().flatten().collect())
}

/// Sparse per-node contributions of one ray given `dL/dC`.
fn ray_backward(n: usize, samples: &RaySamples, comp: &Composite, dl_dc: [f64; 3], background: [f64; 3]) -> Vec<(usize, f64, [f64; 3])> {
    let count = samples.m.len();
    let dot = |a: [f64; 3]| a[0] * dl_dc[0] + a[1] * dl_dc[1] + a[2] * dl_dc[2];
    let t_final = comp.trans[count];
    // Radiance arriving from behind sample i: Σ_{j>i} w_j c_j + T_final bg.
    let mut behind = dot(background) * t_final;
    let mut out = Vec::with_capacity(count * 8);
    for i in (0..count).rev() {
        let ci = dot(samples.color[i]);
        let d_sigma = samples.delta * (comp.trans[i + 1] * ci - behind);
        let w = comp.weights[i];
        behind += w * ci;
        if d_sigma == 0.0 && w == 0.0 {
            continue;
        }
        let st = Stencil::new(n, &samples.points[i]);
        for k in 0..8 {
            let tw = st.w[k];
            if tw != 0.0 {
                out.push((st.idx[k], tw * d_sigma, dl_dc.map(|g| tw * w * g)));
            }
        }
    }
    out
}

/// Ordered reduction of per-ray contributions into a dense gradient.
fn accumulate(field: &HiResField, traces: &[Trace], dl_dc: &[[f64; 3]], background: [f64; 3]) -> Gradient {
    let parts: Vec<Vec<(usize, f64, [f64; 3])>> = traces
        .par_iter()
        .zip(dl_dc.par_iter())
        .map(|(t, g)| match t {
            Some((s, c)) if g.iter().any(|v| *v != 0.0) => ray_backward(field.n, s, c, *g, background),
            _ => Vec::new(),
        })
        .collect();
    let mut grad = Gradient::zeros(field.density.len());
    for (idx, ds, dc) in parts.into_iter().flatten() {
        if field.mask[idx] {
            grad.density[idx] += ds;
            for c in 0..3 {
                grad.colors[idx][c] += dc[c];
            }
        }
    }
    grad
}

/// Mean per-channel loss between a render of `field` and `target`, and its
/// exact gradient through the compositing estimator.
pub fn grad_render(
    field: &HiResField,
    pose: &CameraPose,
    cfg: &RenderConfig,
    seed: u64,
    target: &ImageBuffer,
    kind: LossKind,
) -> Result<(f64, Gradient)> {
    if target.width != pose.width || target.height != pose.height || target.channels != 3 {
        return Err(Error::shape(
            format!("{}x{}x3 target", pose.width, pose.height),
            format!("{}x{}x{}", target.width, target.height, target.channels),
        ));
    }
    let traces = trace_view(field, pose, cfg, seed)?;
    let pred = trace_colors(&traces, cfg.background);
    let norm = 1.0 / (3 * pred.len()) as f64;
    let mut loss = 0.0;
    let dl_dc: Vec<[f64; 3]> = pred
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut g = [0.0; 3];
            for c in 0..3 {
                let d = p[c] - target.data[k * 3 + c];
                loss += kind.value(d);
                g[c] = kind.slope(d) * norm;
            }
            g
        })
        .collect();
    Ok((loss * norm, accumulate(field, &traces, &dl_dc, cfg.background)))
}

pub fn grad_render_l1(
    field: &HiResField,
    pose: &CameraPose,
    cfg: &RenderConfig,
    seed: u64,
    target: &ImageBuffer,
) -> Result<(f64, Gradient)> {
    grad_render(field, pose, cfg, seed, target, LossKind::L1)
}

fn render_loss(field: &HiResField, pose: &CameraPose, cfg: &RenderConfig, seed: u64, target: &ImageBuffer) -> Result<f64> {
    let pred = render_colors(field, pose, cfg, seed)?;
    Ok(pred.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.data.len() as f64)
}

/// A failed optimization together with the last accepted field.
#[derive(Debug)]
pub struct Aborted {
    pub error: Error,
    pub field: HiResField,
}

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for Aborted {}

impl From<Box<Aborted>> for Error {
    fn from(a: Box<Aborted>) -> Self {
        a.error
    }
}

fn abort(error: Error, field: HiResField) -> Box<Aborted> {
    Box::new(Aborted { error, field })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillInit {
    /// Zero density, gray colors.
    Zero,
    /// Nodes copied from the source field.
    Resample,
}

impl fmt::Display for DistillInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistillInit::Zero => "zero",
            DistillInit::Resample => "resample",
        })
    }
}

impl FromStr for DistillInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(DistillInit::Zero),
            "resample" => Ok(DistillInit::Resample),
            other => Err(Error::InvalidParameter(format!("unknown distill init '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub resolution: usize,
    /// Local opacity threshold of the occupancy bound.
    pub threshold: f64,
    pub iterations: usize,
    /// Initial per-parameter step.
    pub step: f64,
    pub w_density: f64,
    pub w_render: f64,
    pub views_per_iter: usize,
    pub image_size: usize,
    pub samples: usize,
    pub init: DistillInit,
    /// Backtracking halvings tried before an iteration is skipped.
    pub max_halvings: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            resolution: 64,
            threshold: 0.01,
            iterations: 500,
            step: 0.25,
            w_density: 1.0,
            w_render: 0.1,
            views_per_iter: 1,
            image_size: 32,
            samples: 48,
            init: DistillInit::Zero,
            max_halvings: 20,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParameter(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !(self.w_density >= 0.0 && self.w_render >= 0.0) || self.w_density + self.w_render <= 0.0 {
            return Err(Error::InvalidParameter("loss weights must be non-negative and not both zero".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!("step {} must be positive", self.step)));
        }
        if self.resolution < MIN_RESOLUTION {
            return Err(Error::InvalidResolution(self.resolution, MIN_RESOLUTION));
        }
        if self.w_render > 0.0 && self.views_per_iter == 0 {
            return Err(Error::InvalidCount("render loss needs at least one view per iteration".into()));
        }
        Ok(())
    }

    fn render_config(&self) -> RenderConfig {
        RenderConfig::default().with_samples(self.samples)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("distill.resolution", self.resolution);
        kv.set("distill.threshold", self.threshold);
        kv.set("distill.iterations", self.iterations);
        kv.set("distill.step", self.step);
        kv.set("distill.w_density", self.w_density);
        kv.set("distill.w_render", self.w_render);
        kv.set("distill.views", self.views_per_iter);
        kv.set("distill.image_size", self.image_size);
        kv.set("distill.samples", self.samples);
        kv.set("distill.init", self.init);
        kv.set("distill.max_halvings", self.max_halvings);
        kv
    }

    /// Missing keys keep their defaults; other keys are ignored.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = DistillConfig::default();
        let cfg = DistillConfig {
            resolution: kv.get_or("distill.resolution", d.resolution)?,
            threshold: kv.get_or("distill.threshold", d.threshold)?,
            iterations: kv.get_or("distill.iterations", d.iterations)?,
            step: kv.get_or("distill.step", d.step)?,
            w_density: kv.get_or("distill.w_density", d.w_density)?,
            w_render: kv.get_or("distill.w_render", d.w_render)?,
            views_per_iter: kv.get_or("distill.views", d.views_per_iter)?,
            image_size: kv.get_or("distill.image_size", d.image_size)?,
            samples: kv.get_or("distill.samples", d.samples)?,
            init: kv.get_or("distill.init", d.init)?,
            max_halvings: kv.get_or("distill.max_halvings", d.max_halvings)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn pose_template(&self) -> Result<CameraPose> {
        CameraPose::new(0.0, 30.0, 3.0, 40.0, self.image_size, self.image_size)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistillReport {
    pub masked_nodes: usize,
    pub iterations: usize,
    /// Per-iteration losses of the accepted field.
    pub density_l1: Vec<f64>,
    pub render_l1: Vec<f64>,
    pub total: Vec<f64>,
    /// Backtracking halvings across all iterations.
    pub halvings: usize,
    /// Mean per-node density step at the end.
    pub final_step: f64,
    pub seconds: f64,
}

impl DistillReport {
    pub fn final_density_l1(&self) -> f64 {
        self.density_l1.last().copied().unwrap_or(f64::NAN)
    }
}

struct Batch {
    poses: Vec<(CameraPose, u64)>,
    targets: Vec<ImageBuffer>,
}

struct Distiller<'a> {
    cfg: &'a DistillConfig,
    render: RenderConfig,
    /// Source density at masked nodes.
    target_density: Vec<(usize, f64)>,
}

impl Distiller<'_> {
    fn density_loss(&self, field: &HiResField) -> (f64, Vec<(usize, f64)>) {
        let m = self.target_density.len().max(1) as f64;
        let mut loss = 0.0;
        let grads = self
            .target_density
            .iter()
            .map(|(k, t)| {
                let d = field.density[*k] - t;
                loss += d.abs();
                (*k, LossKind::L1.slope(d) / m)
            })
            .collect();
        (loss / m, grads)
    }

    fn loss(&self, field: &HiResField, batch: &Batch) -> Result<(f64, f64)> {
        let dens = self.density_loss(field).0;
        let mut rend = 0.0;
        if self.cfg.w_render > 0.0 {
            for ((pose, seed), target) in batch.poses.iter().zip(&batch.targets) {
                rend += render_loss(field, pose, &self.render, *seed, target)?;
            }
            rend /= batch.poses.len() as f64;
        }
        Ok((dens, rend))
    }

    fn total(&self, (dens, rend): (f64, f64)) -> f64 {
        self.cfg.w_density * dens + self.cfg.w_render * rend
    }

    fn gradient(&self, field: &HiResField, batch: &Batch) -> Result<Gradient> {
        let mut grad = Gradient::zeros(field.density.len());
        if self.cfg.w_density > 0.0 {
            for (k, g) in self.density_loss(field).1 {
                grad.density[k] += self.cfg.w_density * g;
            }
        }
        if self.cfg.w_render > 0.0 {
            let share = self.cfg.w_render / batch.poses.len() as f64;
            for ((pose, seed), target) in batch.poses.iter().zip(&batch.targets) {
                let (_, g) = grad_render_l1(field, pose, &self.render, *seed, target)?;
                grad.add_scaled(&g, share);
            }
        }
        Ok(grad)
    }
}

/// Fit a high-resolution field to `source` by gradient descent on masked
/// density L1 plus render L1 under fresh random poses each iteration.
pub fn distill<F: RadianceField + ?Sized, R: Rng + ?Sized>(
    source: &F,
    params: SDensityParams,
    cfg: &DistillConfig,
    rng: &mut R,
) -> std::result::Result<(HiResField, DistillReport), Box<Aborted>> {
    let start = Instant::now();
    let n = cfg.resolution;
    let empty = || HiResField::new(n.max(MIN_RESOLUTION), vec![false; n.max(MIN_RESOLUTION).pow(3)], params);
    let setup = || -> Result<(HiResField, Vec<(usize, f64)>, CameraPose)> {
        cfg.validate()?;
        let mask = occupancy_bound(source, n, cfg.threshold)?;
        let target_density: Vec<(usize, f64)> = mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(k, _)| (k, source.density(&lattice::point_of_index(n, k)).max(0.0)))
            .collect();
        let field = match cfg.init {
            DistillInit::Zero => HiResField::new(n, mask, params)?,
            DistillInit::Resample => HiResField::resample(source, n, mask, params)?,
        };
        Ok((field, target_density, cfg.pose_template()?))
    };
    let (mut field, target_density, template) = match setup() {
        Ok(v) => v,
        Err(e) => return Err(abort(e, empty().expect("minimum resolution field"))),
    };
    let d = Distiller {
        cfg,
        render: cfg.render_config(),
        target_density,
    };
    let mut report = DistillReport {
        masked_nodes: d.target_density.len(),
        final_step: cfg.step,
        ..Default::default()
    };
    let len = field.density.len();
    let mut steps = Gradient {
        density: vec![cfg.step; len],
        colors: vec![[cfg.step; 3]; len],
    };
    let mut previous = Gradient::zeros(len);
    let mut initial = None;
    for it in 0..cfg.iterations {
        let outcome = (|| -> Result<(f64, f64)> {
            let mut batch = Batch {
                poses: Vec::new(),
                targets: Vec::new(),
            };
            if cfg.w_render > 0.0 {
                for _ in 0..cfg.views_per_iter {
                    let pose = random_pose(rng, &template);
                    let seed: u64 = rng.random();
                    batch.targets.push(render_colors(source, &pose, &d.render, seed)?);
                    batch.poses.push((pose, seed));
                }
            }
            let current = d.loss(&field, &batch)?;
            let start_total = d.total(current);
            let reference = *initial.get_or_insert(start_total);
            if !start_total.is_finite() || (reference > 0.0 && start_total > 10.0 * reference) {
                return Err(Error::Diverged {
                    iteration: it,
                    loss: start_total,
                    initial: reference,
                });
            }
            let grad = d.gradient(&field, &batch)?;
            if grad.is_zero() {
                return Ok(current);
            }
            // A sign flip means the parameter stepped over its optimum.
            for k in 0..len {
                if grad.density[k] * previous.density[k] < 0.0 {
                    steps.density[k] *= 0.5;
                }
                for c in 0..3 {
                    if grad.colors[k][c] * previous.colors[k][c] < 0.0 {
                        steps.colors[k][c] *= 0.5;
                    }
                }
            }
            previous = grad.clone();
            let mut mult = 1.0;
            for _ in 0..=cfg.max_halvings {
                let cand = field.sign_stepped(&grad, &steps, mult);
                let losses = d.loss(&cand, &batch)?;
                if d.total(losses) <= start_total {
                    field = cand;
                    return Ok(losses);
                }
                mult *= 0.5;
                report.halvings += 1;
            }
            Ok(current)
        })();
        match outcome {
            Ok((dens, rend)) => {
                report.density_l1.push(dens);
                report.render_l1.push(rend);
                report.total.push(d.total((dens, rend)));
                report.iterations = it + 1;
            }
            Err(e) => return Err(abort(e, field)),
        }
    }
    let masked: Vec<f64> = (0..len).filter(|k| field.mask[*k]).map(|k| steps.density[k]).collect();
    let step = masked.iter().sum::<f64>() / masked.len().max(1) as f64;
    report.final_step = step;
    report.seconds = start.elapsed().as_secs_f64();
    Ok((field, report))
}

/// One score query: a noised render and the noise that produced it.
#[derive(Debug, Clone, Copy)]
pub struct ScoreQuery<'a> {
    pub x_t: &'a ImageBuffer,
    pub noise: &'a ImageBuffer,
    pub t: usize,
    pub alpha_bar: f64,
    pub pose: &'a CameraPose,
    pub view: usize,
}

pub trait ScoreSource: Sync {
    /// Predicted noise for `query.x_t`.
    fn eps(&self, query: &ScoreQuery) -> Result<ImageBuffer>;
}

/// Returns the true noise: every residual is exactly zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrueNoise;

impl ScoreSource for TrueNoise {
    fn eps(&self, q: &ScoreQuery) -> Result<ImageBuffer> {
        Ok(q.noise.clone())
    }
}

fn oracle_noise(q: &ScoreQuery, target: &ImageBuffer) -> Result<ImageBuffer> {
    q.x_t.check_same_shape(target)?;
    let (a, b) = (q.alpha_bar.sqrt(), (1.0 - q.alpha_bar).sqrt());
    let data = q.x_t.data.iter().zip(&target.data).map(|(x, y)| (x - a * y) / b).collect();
    ImageBuffer::from_data(target.width, target.height, 3, data)
}

/// Noise implied by a fixed set of views, indexed by pose.
#[derive(Debug, Clone)]
pub struct ViewOracle<'a> {
    pub views: &'a MultiViewSet,
}

impl ScoreSource for ViewOracle<'_> {
    fn eps(&self, q: &ScoreQuery) -> Result<ImageBuffer> {
        if q.view >= self.views.len() {
            return Err(Error::InvalidParameter(format!("view {} of {}", q.view, self.views.len())));
        }
        oracle_noise(q, &self.views.rgb(q.view))
    }
}

/// Noise implied by renders of a reference field at the queried pose.
#[derive(Debug, Clone)]
pub struct FieldOracle<F> {
    pub field: F,
    pub render: RenderConfig,
    pub seed: u64,
}

impl<F: RadianceField> ScoreSource for FieldOracle<F> {
    fn eps(&self, q: &ScoreQuery) -> Result<ImageBuffer> {
        oracle_noise(q, &render_colors(&self.field, q.pose, &self.render, self.seed)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdsWeight {
    /// w(t) = 1 - ᾱ_t.
    OneMinusAlphaBar,
    Unit,
}

impl fmt::Display for SdsWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SdsWeight::OneMinusAlphaBar => "one_minus_alpha_bar",
            SdsWeight::Unit => "unit",
        })
    }
}

impl FromStr for SdsWeight {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_minus_alpha_bar" => Ok(SdsWeight::OneMinusAlphaBar),
            "unit" => Ok(SdsWeight::Unit),
            other => Err(Error::InvalidParameter(format!("unknown SDS weight '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    /// Noise levels drawn from `[lo T, hi T]`.
    pub t_range: (f64, f64),
    pub iterations: usize,
    /// Step per masked node.
    pub step: f64,
    pub weight: SdsWeight,
    pub schedule: ScheduleKind,
    pub schedule_steps: usize,
    pub samples: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            t_range: (0.02, 0.5),
            iterations: 200,
            step: 0.2,
            weight: SdsWeight::OneMinusAlphaBar,
            schedule: ScheduleKind::Cosine,
            schedule_steps: 1000,
            samples: 48,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.t_range;
        if !(lo > 0.0 && lo < hi && hi <= 1.0) {
            return Err(Error::InvalidParameter(format!("t range [{lo}, {hi}] must satisfy 0 < lo < hi <= 1")));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!("step {} must be positive", self.step)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("refine.range", format!("{}:{}", self.t_range.0, self.t_range.1));
        kv.set("refine.iterations", self.iterations);
        kv.set("refine.step", self.step);
        kv.set("refine.weight", self.weight);
        kv.set("refine.schedule", self.schedule);
        kv.set("refine.schedule_steps", self.schedule_steps);
        kv.set("refine.samples", self.samples);
        kv
    }

    /// Missing keys keep their defaults; other keys are ignored.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = RefineConfig::default();
        let cfg = RefineConfig {
            t_range: match kv.get_str("refine.range") {
                Some(r) => parse_range(r)?,
                None => d.t_range,
            },
            iterations: kv.get_or("refine.iterations", d.iterations)?,
            step: kv.get_or("refine.step", d.step)?,
            weight: kv.get_or("refine.weight", d.weight)?,
            schedule: kv.get_or("refine.schedule", d.schedule)?,
            schedule_steps: kv.get_or("refine.schedule_steps", d.schedule_steps)?,
            samples: kv.get_or("refine.samples", d.samples)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.schedule, self.schedule_steps)
    }

    fn step_bounds(&self) -> (usize, usize) {
        let t = self.schedule_steps as f64;
        let lo = ((self.t_range.0 * t).ceil() as usize).max(1);
        let hi = ((self.t_range.1 * t).floor() as usize).clamp(lo, self.schedule_steps);
        (lo, hi)
    }
}

/// Parse `lo:hi`.
pub fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidParameter(format!("expected lo:hi, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineReport {
    pub iterations: usize,
    pub t_values: Vec<usize>,
    pub residual_rms: Vec<f64>,
    /// Mean masked |σ - σ_init| after refinement.
    pub init_density_l1: f64,
    pub seconds: f64,
}

/// Score distillation at low noise levels over poses drawn from `poses`.
pub fn sds_refine<S: ScoreSource + ?Sized, R: Rng + ?Sized>(
    field: &HiResField,
    score: &S,
    poses: &[CameraPose],
    cfg: &RefineConfig,
    rng: &mut R,
) -> std::result::Result<(HiResField, RefineReport), Box<Aborted>> {
    let start = Instant::now();
    let mut current = field.clone();
    let mut report = RefineReport::default();
    let check = || -> Result<NoiseSchedule> {
        cfg.validate()?;
        if poses.is_empty() && cfg.iterations > 0 {
            return Err(Error::InvalidCount("refinement needs at least one pose".into()));
        }
        cfg.schedule()
    };
    let sched = check().map_err(|e| abort(e, field.clone()))?;
    let (lo, hi) = cfg.step_bounds();
    let render = RenderConfig::default().with_samples(cfg.samples);
    let scale = field.masked_count().max(1) as f64;
    let mass = |f: &HiResField| f.density.iter().sum::<f64>();
    let initial_mass = mass(field);
    for it in 0..cfg.iterations {
        let outcome = (|| -> Result<()> {
            let t = rng.random_range(lo..=hi);
            let view = rng.random_range(0..poses.len());
            let seed: u64 = rng.random();
            let pose = &poses[view];
            let ab = sched.alpha_bar(t);
            let traces = trace_view(&current, pose, &render, seed)?;
            let x: Vec<f64> = trace_colors(&traces, render.background).into_iter().flatten().collect();
            let noise = gaussian_vec(rng, x.len());
            let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
            let x_t = x.iter().zip(&noise).map(|(x, e)| a * x + b * e).collect();
            let noise = ImageBuffer::from_data(pose.width, pose.height, 3, noise)?;
            let x_t = ImageBuffer::from_data(pose.width, pose.height, 3, x_t)?;
            let eps = score.eps(&ScoreQuery {
                x_t: &x_t,
                noise: &noise,
                t,
                alpha_bar: ab,
                pose,
                view,
            })?;
            x_t.check_same_shape(&eps)?;
            let w = match cfg.weight {
                SdsWeight::OneMinusAlphaBar => 1.0 - ab,
                SdsWeight::Unit => 1.0,
            };
            let norm = 1.0 / x.len() as f64;
            let residual: Vec<f64> = eps.data.iter().zip(&noise.data).map(|(p, e)| w * (p - e)).collect();
            report.t_values.push(t);
            report.residual_rms.push((residual.iter().map(|r| r * r).sum::<f64>() * norm).sqrt());
            if residual.iter().all(|r| *r == 0.0) {
                return Ok(());
            }
            let dl_dc: Vec<[f64; 3]> = residual
                .chunks_exact(3)
                .map(|r| [r[0] * norm, r[1] * norm, r[2] * norm])
                .collect();
            let mut grad = accumulate(&current, &traces, &dl_dc, render.background);
            grad.scale(scale);
            let next = current.stepped(&grad, cfg.step);
            let m = mass(&next);
            if !next.is_finite() || m > 10.0 * initial_mass.max(1.0) {
                return Err(Error::Diverged {
                    iteration: it,
                    loss: m,
                    initial: initial_mass,
                });
            }
            current = next;
            Ok(())
        })();
        if let Err(e) = outcome {
            return Err(abort(e, current));
        }
        report.iterations = it + 1;
    }
    report.init_density_l1 = current.density_l1(field).unwrap_or(f64::NAN);
    report.seconds = start.elapsed().as_secs_f64();
    Ok((current, report))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PostReport {
    pub distill: DistillReport,
    pub refine: RefineReport,
}

/// Occupancy bound, distillation and refinement against the sampled views.
pub fn distill_then_refine<R: Rng + ?Sized>(
    f0: &SdfGrid,
    colors: &ColorGrid,
    v0: &MultiViewSet,
    params: SDensityParams,
    distill_cfg: &DistillConfig,
    refine_cfg: &RefineConfig,
    rng: &mut R,
) -> Result<(HiResField, PostReport)> {
    let stage = |stage, e: Box<Aborted>| Error::InStage {
        stage,
        source: Box::new(e.error),
    };
    let source = field_from_grid(f0, colors, params);
    let (distilled, distill) = distill(&source, params, distill_cfg, rng).map_err(|e| stage("distill", e))?;
    let score = ViewOracle { views: v0 };
    let (field, refine) =
        sds_refine(&distilled, &score, v0.poses(), refine_cfg, rng).map_err(|e| stage("refine", e))?;
    Ok((field, PostReport { distill, refine }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{bake_colors, bake_grid, SceneSpec};
    use crate::metrics::metric_iou;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere_source(n: usize) -> (SdfGrid, ColorGrid) {
        let s = SceneSpec::sphere(0.5);
        (bake_grid(&s, n).unwrap(), bake_colors(&s, n).unwrap())
    }

    /// |d| bound of the S-density support above `tau` at voxel edge `h`, by bisection.
    fn shell_half_width(tau: f64, h: f64, p: SDensityParams) -> f64 {
        let above = |d: f64| 1.0 - (-crate::render::sdf_to_density(d, p) * h).exp() > tau;
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if above(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    #[test]
    fn inverse_s_density_round_trips() {
        let p = SDensityParams::default();
        for d in [0.0, 0.01, 0.1, 0.3, 0.7] {
            let s = crate::render::sdf_to_density(d, p);
            assert!((inverse_s_density(s, p) - d).abs() < 1e-9, "{d}");
        }
        assert_eq!(inverse_s_density(0.0, p), f64::INFINITY);
    }

    #[test]
    fn occupancy_bound_matches_analytic_shell() {
        let p = SDensityParams::default();
        assert!(occupancy_bound(&crate::render::EmptyField, 16, 0.01).unwrap().iter().all(|m| !m));
        assert!(occupancy_bound(&crate::render::EmptyField, 16, 1.0).is_err());
        let (g, c) = sphere_source(32);
        let n = 64;
        let mask = occupancy_bound(&field_from_grid(&g, &c, p), n, 0.01).unwrap();
        let w = shell_half_width(0.01, lattice::spacing(n), p);
        let raw: Vec<bool> = (0..n * n * n)
            .map(|k| (lattice::point_of_index(n, k).norm() - 0.5).abs() < w)
            .collect();
        let oracle = lattice::dilate26(n, &raw);
        let inter = mask.iter().zip(&oracle).filter(|(a, b)| **a && **b).count();
        let union = mask.iter().zip(&oracle).filter(|(a, b)| **a || **b).count();
        let iou = inter as f64 / union as f64;
        assert!(iou > 0.9, "{iou}");
    }

    fn random_field(n: usize, rng: &mut ChaCha8Rng) -> HiResField {
        let len = n * n * n;
        let density = (0..len).map(|_| rng.random_range(0.0..3.0)).collect();
        let colors = (0..len).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        HiResField::from_parts(n, density, colors, vec![true; len], SDensityParams::default()).unwrap()
    }

    fn small_pose() -> CameraPose {
        CameraPose::new(30.0, 20.0, 3.0, 40.0, 12, 12).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let field = random_field(8, &mut rng);
        let pose = small_pose();
        let cfg = RenderConfig::default().with_samples(16);
        let target = ImageBuffer::from_data(12, 12, 3, (0..432).map(|_| rng.random()).collect()).unwrap();
        let (_, g) = grad_render(&field, &pose, &cfg, 5, &target, LossKind::L2).unwrap();
        let loss = |f: &HiResField| grad_render(f, &pose, &cfg, 5, &target, LossKind::L2).unwrap().0;
        let h = 1e-3;
        let len = field.density.len();
        let mut checked = 0;
        while checked < 100 {
            let k = rng.random_range(0..len);
            let channel = rng.random_range(0..4usize);
            let analytic = if channel == 3 { g.density[k] } else { g.colors[k][channel] };
            let (mut plus, mut minus) = (field.clone(), field.clone());
            if channel == 3 {
                plus.density[k] += h;
                minus.density[k] -= h;
            } else {
                plus.colors[k][channel] += h;
                minus.colors[k][channel] -= h;
            }
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((analytic - fd).abs() <= 1e-3 * fd.abs().max(1e-6), "node {k} ch {channel}: {analytic} vs {fd}");
            checked += 1;
        }
    }

    #[test]
    fn unreached_colors_get_no_gradient() {
        let n = 8;
        let len = n * n * n;
        let field = HiResField::new(n, vec![true; len], SDensityParams::default()).unwrap();
        let pose = small_pose();
        let target = ImageBuffer::filled(12, 12, &[0.2; 3]);
        let (_, g) = grad_render_l1(&field, &pose, &RenderConfig::default().with_samples(16), 1, &target).unwrap();
        assert!(g.colors.iter().flatten().all(|v| *v == 0.0));
        assert!(g.density.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn color_gradient_is_linear_in_color_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let field = random_field(8, &mut rng);
        let pose = small_pose();
        let cfg = RenderConfig {
            background: [0.0; 3],
            ..RenderConfig::default().with_samples(16)
        };
        let target = ImageBuffer::from_data(12, 12, 3, (0..432).map(|_| rng.random()).collect()).unwrap();
        let c = 0.5;
        let mut scaled = field.clone();
        scaled.colors.iter_mut().flatten().for_each(|v| *v *= c);
        let mut scaled_target = target.clone();
        scaled_target.data.iter_mut().for_each(|v| *v *= c);
        let (_, g) = grad_render(&field, &pose, &cfg, 2, &target, LossKind::L2).unwrap();
        let (_, gs) = grad_render(&scaled, &pose, &cfg, 2, &scaled_target, LossKind::L2).unwrap();
        for (a, b) in g.colors.iter().flatten().zip(gs.colors.iter().flatten()) {
            assert!((a * c - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_out_nodes_stay_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 8;
        let len = n * n * n;
        let mask: Vec<bool> = (0..len).map(|k| k % 3 == 0).collect();
        let density = (0..len).map(|k| if mask[k] { 1.0 } else { 0.0 }).collect();
        let field = HiResField::from_parts(n, density, vec![[0.3; 3]; len], mask.clone(), SDensityParams::default()).unwrap();
        let target = ImageBuffer::from_data(12, 12, 3, (0..432).map(|_| rng.random()).collect()).unwrap();
        let (_, g) = grad_render_l1(&field, &small_pose(), &RenderConfig::default().with_samples(16), 1, &target).unwrap();
        for k in 0..len {
            if !mask[k] {
                assert_eq!(g.density[k], 0.0);
                assert_eq!(g.colors[k], [0.0; 3]);
            }
        }
        let stepped = field.stepped(&g, 10.0);
        assert!((0..len).all(|k| mask[k] || stepped.density[k] == 0.0));
        assert!(HiResField::from_parts(n, vec![1.0; len], vec![[0.0; 3]; len], mask, SDensityParams::default()).is_err());
    }

    fn small_distill() -> DistillConfig {
        DistillConfig {
            resolution: 24,
            iterations: 60,
            image_size: 16,
            samples: 24,
            ..Default::default()
        }
    }

    #[test]
    fn resampled_start_is_a_fixed_point() {
        let p = SDensityParams::default();
        let (g, c) = sphere_source(16);
        let source = field_from_grid(&g, &c, p);
        let cfg = DistillConfig {
            init: DistillInit::Resample,
            w_render: 0.0,
            iterations: 5,
            ..small_distill()
        };
        let (field, report) = distill(&source, p, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(report.density_l1[0], 0.0);
        let mask = occupancy_bound(&source, cfg.resolution, cfg.threshold).unwrap();
        assert_eq!(field, HiResField::resample(&source, cfg.resolution, mask, p).unwrap());
    }

    #[test]
    fn density_only_fit_reaches_the_sampled_target() {
        let p = SDensityParams::default();
        let (g, c) = sphere_source(16);
        let source = field_from_grid(&g, &c, p);
        let cfg = DistillConfig {
            w_render: 0.0,
            iterations: 400,
            ..small_distill()
        };
        let (field, report) = distill(&source, p, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(report.total.windows(2).all(|w| w[1] <= w[0]));
        for k in 0..field.density.len() {
            if field.mask[k] {
                let t = source.density(&lattice::point_of_index(cfg.resolution, k));
                assert!((field.density[k] - t).abs() < 1e-3, "{} vs {t}", field.density[k]);
            }
        }
    }

    #[test]
    fn joint_fit_decreases_density_loss() {
        let p = SDensityParams::default();
        let (g, c) = sphere_source(16);
        let source = field_from_grid(&g, &c, p);
        let (_, report) = distill(&source, p, &small_distill(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(report.final_density_l1() < 0.2 * report.density_l1[0], "{:?}", report.density_l1.last());
        assert!(report.render_l1.last().unwrap() < &report.render_l1[0]);
    }

    #[test]
    fn bad_config_aborts_with_state() {
        let p = SDensityParams::default();
        let cfg = DistillConfig {
            threshold: 0.0,
            ..small_distill()
        };
        let err = distill(&crate::render::EmptyField, p, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err.error, Error::InvalidParameter(_)));
        assert!(RefineConfig {
            t_range: (0.5, 0.2),
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!(parse_range("0.02:0.5").unwrap(), (0.02, 0.5));
        let d = DistillConfig {
            init: DistillInit::Resample,
            ..small_distill()
        };
        assert_eq!(DistillConfig::from_kv(&d.to_kv()).unwrap(), d);
        let r = RefineConfig {
            t_range: (0.02, 0.2),
            weight: SdsWeight::Unit,
            ..Default::default()
        };
        assert_eq!(RefineConfig::from_kv(&r.to_kv()).unwrap(), r);
        assert!(parse_range("0.02").is_err());
    }

    #[test]
    fn true_noise_score_is_a_bitwise_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let field = random_field(8, &mut rng);
        let poses = vec![small_pose()];
        let cfg = RefineConfig {
            iterations: 10,
            samples: 16,
            ..Default::default()
        };
        let (out, report) = sds_refine(&field, &TrueNoise, &poses, &cfg, &mut rng).unwrap();
        assert_eq!(out, field);
        assert_eq!(report.iterations, 10);
        assert!(report.residual_rms.iter().all(|r| *r == 0.0));
        let (same, _) = sds_refine(&field, &TrueNoise, &poses, &RefineConfig { iterations: 0, ..cfg }, &mut rng).unwrap();
        assert_eq!(same, field);
    }

    #[test]
    fn density_to_sdf_recovers_sphere() {
        let p = SDensityParams::default();
        let (g, c) = sphere_source(32);
        let source = field_from_grid(&g, &c, p);
        let n = 48;
        let mask = occupancy_bound(&source, n, 0.01).unwrap();
        let field = HiResField::resample(&source, n, mask, p).unwrap();
        let sdf = density_to_sdf(&field, 0.3);
        let gt = bake_grid(&SceneSpec::sphere(0.5), n).unwrap();
        let iou = metric_iou(&sdf, &gt, 0.0).unwrap();
        assert!(iou > 0.9, "{iou}");
    }
}
