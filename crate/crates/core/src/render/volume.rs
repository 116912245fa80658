//! S-density conversion and emission-absorption volume rendering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::geometry::{ColorGrid, SdfGrid};
use crate::render::camera::{CameraPose, Ray};
use crate::render::image::ImageBuffer;
use crate::{Error, Result, Vec3};

/// Guard for the depth normalization.
pub const DEPTH_EPS: f64 = 1e-10;

pub const DEFAULT_SHARPNESS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SDensityParams {
    pub s: f64,
}

impl SDensityParams {
    pub fn new(s: f64) -> Result<Self> {
        if s > 0.0 && s.is_finite() {
            Ok(SDensityParams { s })
        } else {
            Err(Error::InvalidParameter(format!("S-density sharpness {s} must be > 0")))
        }
    }
}

impl Default for SDensityParams {
    fn default() -> Self {
        SDensityParams { s: DEFAULT_SHARPNESS }
    }
}

/// Logistic density `s e^{-s x} / (1 + e^{-s x})^2`; peaks at `s / 4` on
/// the surface and decays on both sides.
#[inline]
pub fn sdf_to_density(sdf: f64, params: SDensityParams) -> f64 {
    let e = (-params.s * sdf.abs()).exp();
    params.s * e / ((1.0 + e) * (1.0 + e))
}

pub trait RadianceField: Sync {
    fn density(&self, p: &Vec3) -> f64;
    fn color(&self, p: &Vec3, dir: &Vec3) -> [f64; 3];
    /// Signed distance, for fields that carry one. Used for silhouettes.
    fn sdf(&self, _p: &Vec3) -> Option<f64> {
        None
    }
}

/// Nothing but background.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptyField;

impl RadianceField for EmptyField {
    fn density(&self, _: &Vec3) -> f64 {
        0.0
    }
    fn color(&self, _: &Vec3, _: &Vec3) -> [f64; 3] {
        [0.0; 3]
    }
}

/// Density from an SDF grid through the S-density, color from a color grid.
#[derive(Debug, Clone)]
pub struct GridField<'a> {
    pub sdf: &'a SdfGrid,
    pub colors: &'a ColorGrid,
    pub params: SDensityParams,
}

pub fn field_from_grid<'a>(sdf: &'a SdfGrid, colors: &'a ColorGrid, params: SDensityParams) -> GridField<'a> {
    GridField { sdf, colors, params }
}

impl RadianceField for GridField<'_> {
    fn density(&self, p: &Vec3) -> f64 {
        sdf_to_density(self.sdf.sample_trilinear(p), self.params)
    }
    fn color(&self, p: &Vec3, _: &Vec3) -> [f64; 3] {
        self.colors.sample(p)
    }
    fn sdf(&self, p: &Vec3) -> Option<f64> {
        Some(self.sdf.sample_trilinear(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub samples: usize,
    pub t_near: f64,
    pub t_far: f64,
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            samples: 64,
            t_near: 0.0,
            t_far: 1.0e3,
            background: [1.0, 1.0, 1.0],
        }
    }
}

impl RenderConfig {
    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayResult {
    pub color: [f64; 3],
    pub depth: f64,
    pub transmittance: f64,
    /// 1 when a sample reached the zero level set of the field's SDF; for
    /// fields without an SDF, the opacity `1 - transmittance`.
    pub silhouette: f64,
}

/// Stratified samples along one ray with the field evaluated at each.
#[derive(Debug, Clone)]
pub struct RaySamples {
    pub m: Vec<f64>,
    pub points: Vec<Vec3>,
    pub sigma: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub delta: f64,
}

/// Per-sample compositing quantities.
#[derive(Debug, Clone)]
pub struct Composite {
    pub result: RayResult,
    pub alpha: Vec<f64>,
    /// Transmittance before each sample; `trans[n]` is the final one.
    pub trans: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn sample_ray<F: RadianceField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    ray: &Ray,
    n_samples: usize,
    t_near: f64,
    t_far: f64,
    rng: &mut R,
) -> Result<RaySamples> {
    if !(t_near < t_far) || !t_near.is_finite() || !t_far.is_finite() {
        return Err(Error::DegenerateInterval { near: t_near, far: t_far });
    }
    if n_samples < 2 {
        return Err(Error::InvalidCount(format!("need at least 2 ray samples, got {n_samples}")));
    }
    let delta = (t_far - t_near) / n_samples as f64;
    let mut out = RaySamples {
        m: Vec::with_capacity(n_samples),
        points: Vec::with_capacity(n_samples),
        sigma: Vec::with_capacity(n_samples),
        color: Vec::with_capacity(n_samples),
        delta,
    };
    for i in 0..n_samples {
        let m = t_near + (i as f64 + rng.random::<f64>()) * delta;
        let p = ray.at(m);
        out.m.push(m);
        out.sigma.push(field.density(&p));
        out.color.push(field.color(&p, &ray.dir));
        out.points.push(p);
    }
    Ok(out)
}

pub fn composite(samples: &RaySamples, background: [f64; 3]) -> Composite {
    let n = samples.m.len();
    let mut alpha = Vec::with_capacity(n);
    let mut trans = Vec::with_capacity(n + 1);
    let mut weights = Vec::with_capacity(n);
    let mut t = 1.0;
    let mut color = [0.0; 3];
    let mut wsum = 0.0;
    let mut depth = 0.0;
    for i in 0..n {
        let a = 1.0 - (-samples.sigma[i] * samples.delta).exp();
        let w = t * a;
        trans.push(t);
        alpha.push(a);
        weights.push(w);
        for c in 0..3 {
            color[c] += w * samples.color[i][c];
        }
        wsum += w;
        depth += w * samples.m[i];
        t *= 1.0 - a;
    }
    trans.push(t);
    for c in 0..3 {
        color[c] += t * background[c];
    }
    Composite {
        result: RayResult {
            color,
            depth: depth / wsum.max(DEPTH_EPS),
            transmittance: t,
            silhouette: 1.0 - t,
        },
        alpha,
        trans,
        weights,
    }
}

pub fn render_ray<F: RadianceField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    ray: &Ray,
    n_samples: usize,
    t_near: f64,
    t_far: f64,
    background: [f64; 3],
    rng: &mut R,
) -> Result<RayResult> {
    let samples = sample_ray(field, ray, n_samples, t_near, t_far, rng)?;
    let mut result = composite(&samples, background).result;
    if let Some(first) = samples.points.first().and_then(|p| field.sdf(p)) {
        let hit = first <= 0.0 || samples.points[1..].iter().any(|p| field.sdf(p).is_some_and(|d| d <= 0.0));
        result.silhouette = if hit { 1.0 } else { 0.0 };
    }
    Ok(result)
}

/// Rendered color, expected depth, final transmittance and silhouette per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub rgb: ImageBuffer,
    pub depth: ImageBuffer,
    pub transmittance: ImageBuffer,
    pub silhouette: ImageBuffer,
}

impl RenderedView {
    /// RGB plus the silhouette as a fourth channel.
    pub fn rgbs(&self) -> ImageBuffer {
        let mut out = ImageBuffer::new(self.rgb.width, self.rgb.height, 4);
        for (k, px) in out.data.chunks_mut(4).enumerate() {
            px[..3].copy_from_slice(&self.rgb.data[k * 3..k * 3 + 3]);
            px[3] = self.silhouette.data[k];
        }
        out
    }
}

/// Independent stream per pixel so traversal order cannot change results.
pub fn pixel_rng(seed: u64, pixel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pixel as u64);
    rng
}

/// Sampling interval of a ray: the cube intersection clipped to the
/// configured near/far range. `None` when the ray misses.
pub fn ray_interval(ray: &Ray, cfg: &RenderConfig) -> Option<(f64, f64)> {
    let (a, b) = ray.clip_to_cube()?;
    let (near, far) = (a.max(cfg.t_near), b.min(cfg.t_far));
    (near < far).then_some((near, far))
}

fn render_pixel<F: RadianceField + ?Sized>(
    field: &F,
    ray: &Ray,
    cfg: &RenderConfig,
    seed: u64,
    pixel: usize,
) -> Result<RayResult> {
    match ray_interval(ray, cfg) {
        Some((near, far)) => {
            let mut rng = pixel_rng(seed, pixel);
            render_ray(field, ray, cfg.samples, near, far, cfg.background, &mut rng)
        }
        None => Ok(RayResult {
            color: cfg.background,
            depth: 0.0,
            transmittance: 1.0,
            silhouette: 0.0,
        }),
    }
}

fn assemble(cam: &CameraPose, results: Vec<RayResult>) -> RenderedView {
    let (w, h) = (cam.width, cam.height);
    let mut rgb = ImageBuffer::new(w, h, 3);
    let mut depth = ImageBuffer::new(w, h, 1);
    let mut trans = ImageBuffer::new(w, h, 1);
    let mut sil = ImageBuffer::new(w, h, 1);
    for (k, r) in results.into_iter().enumerate() {
        for c in 0..3 {
            rgb.data[k * 3 + c] = r.color[c].clamp(0.0, 1.0);
        }
        depth.data[k] = r.depth;
        trans.data[k] = r.transmittance;
        sil.data[k] = r.silhouette;
    }
    RenderedView {
        rgb,
        depth,
        transmittance: trans,
        silhouette: sil,
    }
}

pub fn render_view<F: RadianceField + ?Sized>(
    field: &F,
    cam: &CameraPose,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<RenderedView> {
    cam.validate()?;
    let rays = cam.gen_rays();
    let results = rays
        .par_iter()
        .enumerate()
        .map(|(k, ray)| render_pixel(field, ray, cfg, seed, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(cam, results))
}

/// Single-threaded reference traversal (reverse pixel order).
pub fn render_view_serial<F: RadianceField + ?Sized>(
    field: &F,
    cam: &CameraPose,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<RenderedView> {
    cam.validate()?;
    let rays = cam.gen_rays();
    let mut results = vec![
        RayResult {
            color: [0.0; 3],
            depth: 0.0,
            transmittance: 0.0,
            silhouette: 0.0,
        };
        rays.len()
    ];
    for k in (0..rays.len()).rev() {
        results[k] = render_pixel(field, &rays[k], cfg, seed, k)?;
    }
    Ok(assemble(cam, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{bake_colors, bake_grid, SceneSpec};
    use crate::render::camera::make_camera_ring;

    struct Slab {
        sigma: f64,
        lo: f64,
        hi: f64,
        color: [f64; 3],
    }

    impl RadianceField for Slab {
        fn density(&self, p: &Vec3) -> f64 {
            if p.z >= self.lo && p.z < self.hi {
                self.sigma
            } else {
                0.0
            }
        }
        fn color(&self, _: &Vec3, _: &Vec3) -> [f64; 3] {
            self.color
        }
    }

    fn z_ray() -> Ray {
        Ray {
            origin: Vec3::new(0.0, 0.0, 0.0),
            dir: Vec3::new(0.0, 0.0, 1.0),
        }
    }

    #[test]
    fn density_peak_symmetry_and_normalization() {
        let p = SDensityParams::new(20.0).unwrap();
        assert_eq!(sdf_to_density(0.0, p), 5.0);
        for x in [0.01, 0.1, 0.37, 2.0] {
            assert_eq!(sdf_to_density(x, p), sdf_to_density(-x, p));
            assert!(sdf_to_density(x, p) < 5.0);
        }
        // Midpoint rule over [-2, 2].
        let n = 40_000;
        let h = 4.0 / n as f64;
        let integral: f64 = (0..n).map(|i| sdf_to_density(-2.0 + (i as f64 + 0.5) * h, p) * h).sum();
        assert!((integral - 1.0).abs() < 0.01);
        assert!(SDensityParams::new(0.0).is_err());
    }

    #[test]
    fn empty_space_is_background() {
        let mut rng = pixel_rng(1, 0);
        let r = render_ray(&EmptyField, &z_ray(), 16, 0.0, 1.0, [0.2, 0.3, 0.4], &mut rng).unwrap();
        assert_eq!(r.color, [0.2, 0.3, 0.4]);
        assert_eq!(r.transmittance, 1.0);
    }

    #[test]
    fn degenerate_interval_is_an_error() {
        let mut rng = pixel_rng(1, 0);
        assert!(render_ray(&EmptyField, &z_ray(), 16, 1.0, 1.0, [0.0; 3], &mut rng).is_err());
        assert!(render_ray(&EmptyField, &z_ray(), 1, 0.0, 1.0, [0.0; 3], &mut rng).is_err());
    }

    #[test]
    fn slab_matches_beer_lambert() {
        let slab = Slab {
            sigma: 4.0,
            lo: 0.25,
            hi: 0.75,
            color: [1.0, 0.0, 0.0],
        };
        let mut rng = pixel_rng(7, 0);
        let r = render_ray(&slab, &z_ray(), 256, 0.0, 1.0, [1.0; 3], &mut rng).unwrap();
        let expected = (-2.0f64).exp();
        assert!((r.transmittance - expected).abs() / expected < 0.01, "{}", r.transmittance);
    }

    #[test]
    fn opaque_wall_occludes() {
        let wall = Slab {
            sigma: 1e4,
            lo: 0.4,
            hi: 0.6,
            color: [1.0, 0.0, 0.0],
        };
        let mut rng = pixel_rng(7, 0);
        let r = render_ray(&wall, &z_ray(), 128, 0.0, 1.0, [1.0; 3], &mut rng).unwrap();
        assert!(r.transmittance < 1e-9);
        assert!((r.color[0] - 1.0).abs() < 1e-9 && r.color[1] < 1e-9);
        assert!((r.depth - 0.4).abs() < 0.02);
    }

    #[test]
    fn weights_and_final_transmittance_partition_unity() {
        let slab = Slab {
            sigma: 3.3,
            lo: 0.1,
            hi: 0.9,
            color: [0.5; 3],
        };
        let mut rng = pixel_rng(9, 0);
        let s = sample_ray(&slab, &z_ray(), 97, 0.0, 1.0, &mut rng).unwrap();
        let c = composite(&s, [1.0; 3]);
        let total: f64 = c.weights.iter().sum::<f64>() + c.result.transmittance;
        assert!((total - 1.0).abs() <= 4.0 * f64::EPSILON);
        assert!(c.trans.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn sphere_silhouettes_agree_across_ring() {
        let scene = SceneSpec::sphere(0.5);
        let sdf = bake_grid(&scene, 32).unwrap();
        let colors = bake_colors(&scene, 32).unwrap();
        let field = field_from_grid(&sdf, &colors, SDensityParams::default());
        let cfg = RenderConfig::default();
        let areas: Vec<f64> = make_camera_ring(8, 30.0, 3.0, 40.0, 48, 48)
            .unwrap()
            .iter()
            .map(|cam| {
                let v = render_view(&field, cam, &cfg, 5).unwrap();
                v.transmittance.data.iter().filter(|t| **t < 0.5).count() as f64
            })
            .collect();
        let mean = areas.iter().sum::<f64>() / 8.0;
        assert!(mean > 100.0);
        for a in &areas {
            assert!((a - mean).abs() / mean < 0.02, "{areas:?}");
        }
    }

    #[test]
    fn parallel_and_serial_renders_identical() {
        let scene = SceneSpec::cube(0.4);
        let sdf = bake_grid(&scene, 16).unwrap();
        let colors = bake_colors(&scene, 16).unwrap();
        let field = field_from_grid(&sdf, &colors, SDensityParams::default());
        let cam = CameraPose::new(30.0, 30.0, 3.0, 40.0, 24, 20).unwrap();
        let cfg = RenderConfig::default().with_samples(32);
        let a = render_view(&field, &cam, &cfg, 11).unwrap();
        let b = render_view_serial(&field, &cam, &cfg, 11).unwrap();
        let c = render_view(&field, &cam, &cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let empty = render_view(&EmptyField, &cam, &cfg, 11).unwrap();
        assert!(empty.rgb.data.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn silhouette_matches_analytic_sphere() {
        let r = 0.5;
        let scene = SceneSpec::sphere(r);
        let sdf = bake_grid(&scene, 32).unwrap();
        let colors = bake_colors(&scene, 32).unwrap();
        let field = field_from_grid(&sdf, &colors, SDensityParams::default());
        let cam = CameraPose::new(45.0, 30.0, 3.0, 40.0, 64, 64).unwrap();
        let v = render_view(&field, &cam, &RenderConfig::default(), 3).unwrap();
        let f = cam.frame();
        let mut wrong = 0;
        for j in 0..64 {
            for i in 0..64 {
                let ray = f.ray(i as f64, j as f64);
                let d = ray.origin.cross(&ray.dir).norm() / ray.dir.norm();
                let s = v.silhouette.pixel(i, j)[0];
                if (d - r).abs() > 0.03 && (s == 1.0) != (d < r) {
                    wrong += 1;
                }
            }
        }
        assert_eq!(wrong, 0);
        assert!(v.silhouette.data.iter().all(|s| *s == 0.0 || *s == 1.0));
    }

    #[test]
    fn stratified_render_converges_to_dense_reference() {
        let scene = SceneSpec::sphere(0.5);
        let sdf = bake_grid(&scene, 32).unwrap();
        let colors = bake_colors(&scene, 32).unwrap();
        let field = field_from_grid(&sdf, &colors, SDensityParams::default());
        let cam = CameraPose::new(0.0, 30.0, 3.0, 40.0, 64, 64).unwrap();
        let coarse = render_view(&field, &cam, &RenderConfig::default().with_samples(64), 1).unwrap();
        let dense = render_view(&field, &cam, &RenderConfig::default().with_samples(4096), 2).unwrap();
        let mse = coarse.rgb.data.iter().zip(&dense.rgb.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            / coarse.rgb.data.len() as f64;
        let psnr = -10.0 * mse.log10();
        assert!(psnr > 35.0, "{psnr}");
    }
}
