//! Fast invariant checks for the `selftest` command.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distill::{grad_render, sds_refine, HiResField, LossKind, RefineConfig, TrueNoise};
use crate::geometry::{bake_grid, SceneSpec, SdfGrid};
use crate::io::{decode_views, encode_views, GridFile};
use crate::lattice;
use crate::pipeline::{OracleSetup, RunConfig, ViewConfig};
use crate::projection::{aggregate_mean_var, project_point, sample_image_bilinear};
use crate::render::{
    composite, make_camera_ring, sample_ray, sdf_to_density, CameraPose, EmptyField, ImageBuffer, MultiViewSet,
    RenderConfig, SDensityParams,
};
use crate::sampler::{guidance_combine, run_sampler};
use crate::scheduler::{forward_noise, gaussian_vec, make_schedule, predict_x0, ScheduleKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type CheckFn = fn() -> Result<(bool, String)>;

pub const CHECKS: &[(&str, CheckFn)] = &[
    ("scheduler_round_trip", scheduler_round_trip),
    ("guidance_identities", guidance_identities),
    ("s_density_peak", s_density_peak),
    ("compositing_weights", compositing_weights),
    ("aggregation_vs_naive", aggregation_vs_naive),
    ("render_gradient_fd", render_gradient_fd),
    ("sds_zero_residual_noop", sds_zero_residual_noop),
    ("io_round_trip", io_round_trip),
    ("sampler_determinism", sampler_determinism),
];

/// Run every check; failures and errors are reported, never raised.
pub fn run_selftest() -> Vec<Check> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let start = Instant::now();
            let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
            Check {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn scheduler_round_trip() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = gaussian_vec(&mut rng, 256);
    let eps = gaussian_vec(&mut rng, 256);
    let mut worst: f64 = 0.0;
    for kind in [ScheduleKind::LinearBeta, ScheduleKind::Cosine] {
        let s = make_schedule(kind, 1000)?;
        for t in [1, 10, 250, 500, 900] {
            let xt = forward_noise(&x0, t, &eps, &s)?;
            worst = worst.max(max_abs_diff(&predict_x0(&xt, &eps, t, &s)?, &x0));
        }
    }
    Ok((worst < 1e-9, format!("max error {worst:.2e}")))
}

fn guidance_identities() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = gaussian_vec(&mut rng, 64);
    let c = gaussian_vec(&mut rng, 64);
    let ok = guidance_combine(&u, &c, 0.0)? == u
        && guidance_combine(&u, &c, 1.0)? == c
        && max_abs_diff(&guidance_combine(&u, &c, 2.0)?, &u.iter().zip(&c).map(|(a, b)| 2.0 * b - a).collect::<Vec<_>>())
            < 1e-12;
    Ok((ok, "gamma 0, 1 and 2".into()))
}

fn s_density_peak() -> Result<(bool, String)> {
    let p = SDensityParams::default();
    let peak = sdf_to_density(0.0, p);
    let sym = (sdf_to_density(0.1, p) - sdf_to_density(-0.1, p)).abs();
    let ok = (peak - p.s / 4.0).abs() < 1e-12 && sym < 1e-12 && sdf_to_density(0.05, p) < peak;
    Ok((ok, format!("peak {peak}, s/4 {}", p.s / 4.0)))
}

fn compositing_weights() -> Result<(bool, String)> {
    struct Fog(f64);
    impl crate::render::RadianceField for Fog {
        fn density(&self, _: &crate::Vec3) -> f64 {
            self.0
        }
        fn color(&self, _: &crate::Vec3, _: &crate::Vec3) -> [f64; 3] {
            [0.2, 0.4, 0.6]
        }
    }
    let pose = CameraPose::new(0.0, 0.0, 3.0, 40.0, 8, 8)?;
    let ray = pose.frame().ray(4.0, 4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (sigma, near, far, n) = (1.5, 2.0, 4.0, 32);
    let c = composite(&sample_ray(&Fog(sigma), &ray, n, near, far, &mut rng)?, [1.0; 3]);
    let sum: f64 = c.weights.iter().sum::<f64>() + c.trans[n];
    let expected_t = (-sigma * (far - near)).exp();
    let empty = composite(&sample_ray(&EmptyField, &ray, n, near, far, &mut rng)?, [1.0; 3]);
    let err = (sum - 1.0).abs().max((c.trans[n] - expected_t).abs());
    Ok((err < 1e-12 && empty.trans[n] == 1.0, format!("max error {err:.2e}")))
}

fn aggregation_vs_naive() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let poses = make_camera_ring(3, 30.0, 3.0, 40.0, 12, 12)?;
    let images = (0..3)
        .map(|_| ImageBuffer::from_data(12, 12, 4, (0..12 * 12 * 4).map(|_| rng.random()).collect()))
        .collect::<Result<Vec<_>>>()?;
    let views = MultiViewSet::new(poses, images)?;
    let n = 8;
    let vol = aggregate_mean_var(n, &views)?;
    let mut worst: f64 = 0.0;
    for idx in 0..n * n * n {
        let p = lattice::point_of_index(n, idx);
        let samples: Vec<Vec<f64>> = views
            .poses()
            .iter()
            .zip(views.images())
            .filter_map(|(pose, img)| {
                let pr = project_point(&p, pose);
                if !pr.visible {
                    return None;
                }
                let (s, inside) = sample_image_bilinear(img, pr.u, pr.v);
                inside.then_some(s)
            })
            .collect();
        if samples.len() != vol.coverage(idx) {
            return Ok((false, format!("coverage differs at node {idx}")));
        }
        if samples.is_empty() {
            continue;
        }
        let m = samples.len() as f64;
        for k in 0..4 {
            let mean = samples.iter().map(|s| s[k]).sum::<f64>() / m;
            let var = samples.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / m;
            worst = worst.max((vol.mean(idx)[k] - mean).abs()).max((vol.variance(idx)[k] - var).abs());
        }
    }
    Ok((worst < 1e-12, format!("max error {worst:.2e}")))
}

fn render_gradient_fd() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 8;
    let len = n * n * n;
    let density: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..3.0)).collect();
    let colors: Vec<[f64; 3]> = (0..len).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let params = SDensityParams::default();
    let build = |d: &[f64], c: &[[f64; 3]]| HiResField::from_parts(n, d.to_vec(), c.to_vec(), vec![true; len], params);
    let field = build(&density, &colors)?;
    let pose = CameraPose::new(30.0, 20.0, 3.0, 40.0, 8, 8)?;
    let cfg = RenderConfig::default().with_samples(12);
    let target = ImageBuffer::from_data(8, 8, 3, (0..192).map(|_| rng.random()).collect())?;
    let loss = |f: &HiResField| grad_render(f, &pose, &cfg, 7, &target, LossKind::L2).map(|r| r.0);
    let (_, g) = grad_render(&field, &pose, &cfg, 7, &target, LossKind::L2)?;
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.random_range(0..len);
        let ch = rng.random_range(0..4usize);
        let (mut dp, mut dm, mut cp, mut cm) = (density.clone(), density.clone(), colors.clone(), colors.clone());
        let analytic = if ch == 3 {
            dp[k] += h;
            dm[k] -= h;
            g.density[k]
        } else {
            cp[k][ch] += h;
            cm[k][ch] -= h;
            g.colors[k][ch]
        };
        let fd = (loss(&build(&dp, &cp)?)? - loss(&build(&dm, &cm)?)?) / (2.0 * h);
        worst = worst.max((analytic - fd).abs() / fd.abs().max(1e-6));
    }
    Ok((worst < 1e-3, format!("max relative error {worst:.2e}")))
}

fn sds_zero_residual_noop() -> Result<(bool, String)> {
    let n = 8;
    let g = bake_grid(&SceneSpec::sphere(0.5), n)?;
    let params = SDensityParams::default();
    let density: Vec<f64> = g.values().iter().map(|d| sdf_to_density(*d, params)).collect();
    let field = HiResField::from_parts(n, density, vec![[0.3, 0.6, 0.9]; n * n * n], vec![true; n * n * n], params)?;
    let poses = make_camera_ring(2, 30.0, 3.0, 40.0, 8, 8)?;
    let cfg = RefineConfig {
        iterations: 3,
        samples: 8,
        ..RefineConfig::default()
    };
    let (out, _) = sds_refine(&field, &TrueNoise, &poses, &cfg, &mut ChaCha8Rng::seed_from_u64(6)).map_err(Error::from)?;
    Ok((out == field, "3 iterations with zero residual".into()))
}

fn io_round_trip() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 8;
    let chans: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..n * n * n).map(|_| rng.random::<f32>() as f64).collect())
        .collect();
    let g = GridFile::new(n, chans.clone())?;
    let back = GridFile::decode(&g.encode(), std::path::Path::new("selftest"))?;
    let poses = make_camera_ring(2, 30.0, 3.0, 40.0, 8, 8)?;
    let images = (0..2)
        .map(|_| ImageBuffer::from_data(8, 8, 4, (0..256).map(|_| rng.random::<f32>() as f64).collect()))
        .collect::<Result<Vec<_>>>()?;
    let views = MultiViewSet::new(poses, images)?;
    let views_back = decode_views(&encode_views(&views), std::path::Path::new("selftest"))?;
    Ok((back.channels == chans && views_back == views, "grid and view containers".into()))
}

fn sampler_determinism() -> Result<(bool, String)> {
    let mut cfg = RunConfig {
        resolution: 12,
        views: ViewConfig {
            count: 2,
            size: 12,
            ..ViewConfig::default()
        },
        render_samples: 12,
        ..RunConfig::default()
    };
    cfg.prior.coarse_resolution = 8;
    cfg.sampler.steps = 4;
    cfg.sampler.guidance_samples = 12;
    let setup = OracleSetup::build(&SceneSpec::sphere(0.5), &cfg)?;
    let a = run_sampler(&cfg.sampler, &setup.inputs())?;
    let b = run_sampler(&cfg.sampler, &setup.inputs())?;
    let same = bits(&a.f0) == bits(&b.f0) && a.v0 == b.v0;
    Ok((same, "two runs with one seed".into()))
}

fn bits(g: &SdfGrid) -> Vec<u64> {
    g.values().iter().map(|v| v.to_bits()).collect()
}
