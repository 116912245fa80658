use bidiff::distill::*;
use bidiff::geometry::{bake_colors, bake_grid, ColorGrid, SceneSpec, SdfGrid};
use bidiff::metrics::{metric_iou, metric_psnr};
use bidiff::render::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sphere(n: usize) -> (SdfGrid, ColorGrid) {
    let s = SceneSpec::sphere(0.5);
    (bake_grid(&s, n).unwrap(), bake_colors(&s, n).unwrap())
}

fn eval_cfg() -> RenderConfig {
    RenderConfig::default().with_samples(48)
}

fn mean_psnr(field: &HiResField, views: &MultiViewSet) -> f64 {
    let total: f64 = views
        .poses()
        .iter()
        .enumerate()
        .map(|(k, pose)| metric_psnr(&render_colors(field, pose, &eval_cfg(), 1).unwrap(), &views.rgb(k)).unwrap())
        .sum();
    total / views.len() as f64
}

fn distilled(n_h: usize, iterations: usize) -> (HiResField, MultiViewSet) {
    let p = SDensityParams::default();
    let (g, c) = sphere(16);
    let source = field_from_grid(&g, &c, p);
    let cfg = DistillConfig {
        resolution: n_h,
        iterations,
        ..Default::default()
    };
    let (field, _) = distill(&source, p, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let poses = make_camera_ring(8, 30.0, 3.0, 40.0, 24, 24).unwrap();
    (field, MultiViewSet::render(&source, &poses, &eval_cfg(), 1).unwrap())
}

fn perturbed(field: &HiResField, seed: u64) -> HiResField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = field.mask().to_vec();
    let density = field
        .density_values()
        .iter()
        .map(|d| d * rng.random_range(0.6..1.4))
        .collect();
    let colors = field
        .color_values()
        .iter()
        .map(|c| c.map(|v| (v + rng.random_range(-0.3..0.3)).clamp(0.0, 1.0)))
        .collect();
    HiResField::from_parts(field.resolution(), density, colors, mask, field.params()).unwrap()
}

#[test]
fn refinement_toward_views_raises_psnr() {
    let (field, views) = distilled(24, 60);
    let mut current = perturbed(&field, 7);
    let cfg = RefineConfig {
        iterations: 10,
        t_range: (0.02, 0.5),
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut history = vec![mean_psnr(&current, &views)];
    for _ in 0..20 {
        current = sds_refine(&current, &ViewOracle { views: &views }, views.poses(), &cfg, &mut rng).unwrap().0;
        history.push(mean_psnr(&current, &views));
    }
    let smoothed: Vec<f64> = history.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    assert!(smoothed.windows(2).all(|w| w[1] > w[0]), "{history:?}");
}

#[test]
fn narrow_noise_range_stays_closer_to_the_start() {
    let (field, views) = distilled(24, 60);
    let run = |hi: f64| {
        let cfg = RefineConfig {
            iterations: 100,
            t_range: (0.02, hi),
            ..Default::default()
        };
        let (_, report) =
            sds_refine(&field, &ViewOracle { views: &views }, views.poses(), &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        report.init_density_l1
    };
    let (narrow, wide) = (run(0.2), run(0.98));
    assert!(narrow < wide, "{narrow} vs {wide}");
}

#[test]
fn sphere_pipeline_keeps_geometry() {
    let p = SDensityParams::default();
    let (g, c) = sphere(32);
    let poses = make_camera_ring(8, 30.0, 3.0, 40.0, 32, 32).unwrap();
    let v0 = MultiViewSet::render(&field_from_grid(&g, &c, p), &poses, &eval_cfg(), 1).unwrap();
    let dcfg = DistillConfig {
        iterations: 120,
        ..Default::default()
    };
    let rcfg = RefineConfig {
        iterations: 100,
        ..Default::default()
    };
    let gt = bake_grid(&SceneSpec::sphere(0.5), 64).unwrap();
    let iou = |f: &HiResField| metric_iou(&density_to_sdf(f, 0.3), &gt, 0.0).unwrap();

    let skip = RefineConfig { iterations: 0, ..rcfg };
    let (only_distilled, report) = distill_then_refine(&g, &c, &v0, p, &dcfg, &skip, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (again, _) = distill(&field_from_grid(&g, &c, p), p, &dcfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(only_distilled, again);
    assert!(report.distill.seconds < 120.0, "{}", report.distill.seconds);

    let (refined, report) = distill_then_refine(&g, &c, &v0, p, &dcfg, &rcfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(report.refine.iterations, 100);
    let (d, r) = (iou(&only_distilled), iou(&refined));
    assert!(d >= 0.9, "{d}");
    assert!(r >= d - 0.01, "{r} vs {d}");
}
