//! Denoiser contracts for both domains and the analytic oracles that
//! implement them.
//!
//! An oracle knows a clean target and returns the noise that maps the
//! current state onto it. Conditioning moves the target: the 3D oracle
//! blends toward the visual hull of the supplied views and toward the
//! prior's coarse occupancy, the 2D oracle blends toward the supplied
//! renders.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::geometry::SdfGrid;
use crate::lattice;
use crate::priors::RadiancePrior;
use crate::projection::{back_project_views, hull_to_sdf, HullConfig};
use crate::render::{ImageBuffer, MultiViewSet};
use crate::scheduler::NoiseSchedule;
use crate::{Error, Result, Vec3};

/// Conditioning for a 3D denoiser call.
#[derive(Debug, Clone, Copy, Default)]
pub struct Cond3d<'a> {
    /// Whether the call is steered by views at all.
    pub view_guidance: bool,
    pub views: Option<&'a MultiViewSet>,
    /// `None` or a dropped prior both mean "no prior".
    pub prior: Option<&'a RadiancePrior>,
    pub label: Option<&'a str>,
}

/// Conditioning for a 2D denoiser call. `label == None` is the empty label.
#[derive(Debug, Clone, Copy, Default)]
pub struct Cond2d<'a> {
    pub renders: Option<&'a MultiViewSet>,
    pub label: Option<&'a str>,
}

pub trait Denoiser3d: Sync {
    /// ε'_3d for the flattened grid `f_t`.
    fn eps(&self, f_t: &[f64], t: usize, cond: &Cond3d) -> Result<Vec<f64>>;
}

pub trait Denoiser2d: Sync {
    /// ε'_2d for every view, flattened in [`MultiViewSet::to_flat`] order.
    fn eps(&self, v_t: &MultiViewSet, t: usize, cond: &Cond2d) -> Result<Vec<f64>>;
}

/// `(x_t - √ᾱ x0) / √(1-ᾱ)`.
pub fn oracle_eps(x_t: &[f64], x0: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if x_t.len() != x0.len() {
        return Err(Error::shape(x_t.len(), x0.len()));
    }
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    if ab >= 1.0 {
        return Err(Error::Numerical(format!("oracle noise undefined at t={t} (alpha_bar = 1)")));
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t.iter().zip(x0).map(|(x, y)| (x - a * y) / b).collect())
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {w}")))
    }
}

/// `(1 - w) a + w b`, returning `a` untouched at `w = 0`.
fn blend(a: Vec<f64>, b: &[f64], w: f64) -> Vec<f64> {
    if w == 0.0 {
        return a;
    }
    a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect()
}

/// Additive SDF warp `a · sin(π(x + y)) · cos(πz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bias3d {
    pub amplitude: f64,
}

impl Bias3d {
    pub fn at(&self, p: &Vec3) -> f64 {
        let pi = std::f64::consts::PI;
        self.amplitude * (pi * (p.x + p.y)).sin() * (pi * p.z).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bias2d {
    /// Rotate colors about the gray axis by this many degrees.
    Hue(f64),
    /// Shift view `k` horizontally by `(-1)^k` times this many pixels.
    Shift(i64),
}

#[derive(Debug, Clone)]
pub struct Oracle3d {
    target: SdfGrid,
    pub lambda_c: f64,
    pub lambda_p: f64,
    pub hull: HullConfig,
    sched: NoiseSchedule,
}

impl Oracle3d {
    pub fn new(target: SdfGrid, lambda_c: f64, lambda_p: f64, sched: NoiseSchedule) -> Result<Self> {
        check_weight("lambda_c", lambda_c)?;
        check_weight("lambda_p", lambda_p)?;
        Ok(Oracle3d {
            target,
            lambda_c,
            lambda_p,
            hull: HullConfig::default(),
            sched,
        })
    }

    /// Same oracle aiming at `target + bias`.
    pub fn with_bias(mut self, bias: Option<Bias3d>) -> Self {
        if let Some(b) = bias.filter(|b| b.amplitude != 0.0) {
            let n = self.target.resolution();
            for (i, v) in self.target.values_mut().iter_mut().enumerate() {
                *v += b.at(&lattice::point_of_index(n, i));
            }
        }
        self
    }

    pub fn target(&self) -> &SdfGrid {
        &self.target
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    /// The clean grid the oracle steers toward under `cond`.
    pub fn implied_x0(&self, cond: &Cond3d) -> Result<Vec<f64>> {
        let n = self.target.resolution();
        let mut own = self.target.values().to_vec();
        if let Some(prior) = cond.prior.filter(|p| !p.is_dropped() && self.lambda_p > 0.0) {
            own = blend(own, prior.occupancy_sdf(n).values(), self.lambda_p);
        }
        if !cond.view_guidance || self.lambda_c == 0.0 {
            return Ok(own);
        }
        let views = cond
            .views
            .ok_or_else(|| Error::InvalidParameter("3D conditioning needs views when lambda_c > 0".into()))?;
        let bp = back_project_views(views, n, &self.hull)?;
        let hull = hull_to_sdf(&bp.evidence, n, &self.hull);
        Ok(blend(own, hull.values(), self.lambda_c))
    }
}

impl Denoiser3d for Oracle3d {
    fn eps(&self, f_t: &[f64], t: usize, cond: &Cond3d) -> Result<Vec<f64>> {
        oracle_eps(f_t, &self.implied_x0(cond)?, t, &self.sched)
    }
}

/// Neutral target of the empty label.
pub const NEUTRAL_GRAY: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct Oracle2d {
    targets: BTreeMap<String, MultiViewSet>,
    pub lambda_c: f64,
    sched: NoiseSchedule,
}

fn rotate_hue(rgb: [f64; 3], degrees: f64) -> [f64; 3] {
    // Rodrigues rotation about (1, 1, 1)/√3.
    let (s, c) = degrees.to_radians().sin_cos();
    let k = 1.0 / 3.0f64.sqrt();
    let v = Vec3::new(rgb[0], rgb[1], rgb[2]);
    let axis = Vec3::new(k, k, k);
    let r = v * c + axis.cross(&v) * s + axis * axis.dot(&v) * (1.0 - c);
    [r.x, r.y, r.z]
}

fn shift_image(img: &ImageBuffer, dx: i64) -> ImageBuffer {
    let mut out = img.clone();
    let w = img.width as i64;
    for j in 0..img.height {
        for i in 0..img.width {
            let src = (i as i64 - dx).clamp(0, w - 1) as usize;
            out.pixel_mut(i, j).copy_from_slice(img.pixel(src, j));
        }
    }
    out
}

/// Apply a 2D perturbation to a view set.
pub fn perturb_views(views: &MultiViewSet, bias: Bias2d) -> Result<MultiViewSet> {
    match bias {
        Bias2d::Hue(deg) => views.map_images(|_, img| {
            let mut out = img.clone();
            for px in out.data.chunks_mut(img.channels) {
                let r = rotate_hue([px[0], px[1], px[2]], deg);
                for c in 0..3 {
                    px[c] = r[c].clamp(0.0, 1.0);
                }
            }
            out
        }),
        Bias2d::Shift(k) => views.map_images(|v, img| shift_image(img, if v % 2 == 0 { k } else { -k })),
    }
}

impl Oracle2d {
    /// `targets` maps each label to its clean view set.
    pub fn new(targets: BTreeMap<String, MultiViewSet>, lambda_c: f64, sched: NoiseSchedule) -> Result<Self> {
        check_weight("lambda_c", lambda_c)?;
        if targets.is_empty() {
            return Err(Error::InvalidCount("2D oracle needs at least one labeled target".into()));
        }
        let first = targets.values().next().expect("non-empty");
        for v in targets.values() {
            if v.len() != first.len() || v.flat_len() != first.flat_len() {
                return Err(Error::shape(first.flat_len(), v.flat_len()));
            }
        }
        Ok(Oracle2d {
            targets,
            lambda_c,
            sched,
        })
    }

    pub fn single(label: &str, target: MultiViewSet, lambda_c: f64, sched: NoiseSchedule) -> Result<Self> {
        Oracle2d::new(BTreeMap::from([(label.to_string(), target)]), lambda_c, sched)
    }

    pub fn with_bias(mut self, bias: Option<Bias2d>) -> Result<Self> {
        if let Some(b) = bias {
            for v in self.targets.values_mut() {
                *v = perturb_views(v, b)?;
            }
        }
        Ok(self)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.targets.keys().map(String::as_str)
    }

    pub fn target(&self, label: &str) -> Option<&MultiViewSet> {
        self.targets.get(label)
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    /// Per-view clean targets under `cond`, flattened.
    pub fn implied_x0(&self, cond: &Cond2d) -> Result<Vec<f64>> {
        let template = self.targets.values().next().expect("non-empty");
        let own = match cond.label {
            Some(l) => self
                .targets
                .get(l)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown label '{l}'")))?
                .to_flat(),
            None => vec![NEUTRAL_GRAY; template.flat_len()],
        };
        match cond.renders {
            Some(h) if self.lambda_c > 0.0 => {
                if h.len() != template.len() || h.flat_len() != template.flat_len() {
                    return Err(Error::shape(
                        format!("{} renders", template.len()),
                        format!("{} renders of {} values", h.len(), h.flat_len()),
                    ));
                }
                Ok(blend(own, &h.to_flat(), self.lambda_c))
            }
            _ => Ok(own),
        }
    }
}

impl Denoiser2d for Oracle2d {
    fn eps(&self, v_t: &MultiViewSet, t: usize, cond: &Cond2d) -> Result<Vec<f64>> {
        let x0 = self.implied_x0(cond)?;
        let flat = v_t.to_flat();
        if flat.len() != x0.len() {
            return Err(Error::shape(x0.len(), flat.len()));
        }
        // Per-view chunks keep the reduction order fixed.
        let per_view = flat.len() / v_t.len();
        let sched = &self.sched;
        let chunks: Vec<Vec<f64>> = flat
            .par_chunks(per_view)
            .zip(x0.par_chunks(per_view))
            .map(|(x, y)| oracle_eps(x, y, t, sched))
            .collect::<Result<_>>()?;
        Ok(chunks.concat())
    }
}
