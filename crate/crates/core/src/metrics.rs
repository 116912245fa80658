//! Geometry and image fidelity metrics.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::KeyValues;
use crate::geometry::{ColorGrid, SdfGrid, TriMesh};
use crate::render::{field_from_grid, ImageBuffer, MultiViewSet, RenderConfig, SDensityParams};
use crate::{Error, Result, Vec3};

/// Per-view PSNR ceiling used when averaging, so identical views stay finite.
pub const PSNR_CAP: f64 = 100.0;

/// |A ∩ B| / |A ∪ B| over nodes with value `< iso`; 1 when both are empty.
pub fn metric_iou(a: &SdfGrid, b: &SdfGrid, iso: f64) -> Result<f64> {
    if a.resolution() != b.resolution() {
        return Err(Error::shape(
            format!("resolution {}", a.resolution()),
            format!("resolution {}", b.resolution()),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.values().iter().zip(b.values()) {
        let (p, q) = (*x < iso, *y < iso);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Area-uniform random points on a mesh surface.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &TriMesh, count: usize, rng: &mut R) -> Result<Vec<Vec3>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let areas: Vec<f64> = mesh.triangles.iter().map(|t| mesh.triangle_area(t)).collect();
    let pick = WeightedIndex::new(&areas).map_err(|_| Error::EmptyMesh)?;
    Ok((0..count)
        .map(|_| {
            let [a, b, c] = mesh.triangles[pick.sample(rng)].map(|i| mesh.vertices[i]);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect())
}

fn mean_nearest(from: &[Vec3], to: &[Vec3]) -> f64 {
    let total: f64 = from
        .par_iter()
        .map(|p| to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / from.len() as f64
}

/// Symmetric mean nearest-neighbor distance between surface samples. Both
/// meshes are sampled from one seed drawn from `rng`, so swapping the
/// arguments gives the same value bit for bit.
pub fn metric_chamfer<R: Rng + ?Sized>(a: &TriMesh, b: &TriMesh, n_samples: usize, rng: &mut R) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidCount("chamfer needs at least one sample".into()));
    }
    let seed: u64 = rng.random();
    let pa = sample_surface(a, n_samples, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let pb = sample_surface(b, n_samples, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(0.5 * (mean_nearest(&pa, &pb) + mean_nearest(&pb, &pa)))
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.check_same_shape(b)?;
    if a.data.is_empty() {
        return Ok(0.0);
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// `10 log10(1 / MSE)`; identical images give `+inf`.
pub fn metric_psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consistency {
    /// RGB PSNR of each view against the field's render.
    pub per_view_psnr: Vec<f64>,
    pub per_view_mse: Vec<f64>,
    /// Mean of the capped per-view PSNRs.
    pub mean_psnr: f64,
    /// Mean per-view MSE: the reprojection inconsistency.
    pub reprojection_error: f64,
}

/// Compare each view with a render of the SDF field from the same pose.
pub fn metric_multiview_consistency(
    views: &MultiViewSet,
    sdf: &SdfGrid,
    colors: &ColorGrid,
    density: SDensityParams,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<Consistency> {
    let field = field_from_grid(sdf, colors, density);
    let renders = MultiViewSet::render(&field, views.poses(), cfg, seed)?;
    let mut per_view_psnr = Vec::with_capacity(views.len());
    let mut per_view_mse = Vec::with_capacity(views.len());
    for k in 0..views.len() {
        let m = mse(&views.rgb(k), &renders.rgb(k))?;
        per_view_mse.push(m);
        per_view_psnr.push(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() });
    }
    let k = views.len() as f64;
    Ok(Consistency {
        mean_psnr: per_view_psnr.iter().map(|p| p.min(PSNR_CAP)).sum::<f64>() / k,
        reprojection_error: per_view_mse.iter().sum::<f64>() / k,
        per_view_psnr,
        per_view_mse,
    })
}

/// Named scalar metrics plus per-view breakdowns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub scalars: BTreeMap<String, f64>,
    pub per_view: BTreeMap<String, Vec<f64>>,
    pub config_hash: String,
}

impl MetricReport {
    pub fn set(&mut self, name: &str, value: f64) {
        self.scalars.insert(name.to_string(), value);
    }

    pub fn is_finite(&self) -> bool {
        self.scalars.values().chain(self.per_view.values().flatten()).all(|v| v.is_finite())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("report.config_hash", &self.config_hash);
        for (k, v) in &self.scalars {
            kv.set(format!("metric.{k}"), v);
        }
        for (k, vs) in &self.per_view {
            let list: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
            kv.set(format!("per_view.{k}"), list.join(","));
        }
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{bake_colors, bake_grid, extract_mesh, AnalyticShape, SceneSpec};
    use crate::render::make_camera_ring;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn iou_cases() {
        let a = bake_grid(&SceneSpec::sphere(0.5), 64).unwrap();
        let b = bake_grid(&SceneSpec::sphere(0.4), 64).unwrap();
        assert_eq!(metric_iou(&a, &a, 0.0).unwrap(), 1.0);
        let expected = 0.512;
        let got = metric_iou(&a, &b, 0.0).unwrap();
        assert!((got - expected).abs() / expected < 0.05, "{got}");
        let left = SceneSpec::new("l", vec![AnalyticShape::sphere(0.2).translated(Vec3::new(-0.5, 0.0, 0.0))]).unwrap();
        let right = SceneSpec::new("r", vec![AnalyticShape::sphere(0.2).translated(Vec3::new(0.5, 0.0, 0.0))]).unwrap();
        let (l, r) = (bake_grid(&left, 32).unwrap(), bake_grid(&right, 32).unwrap());
        assert_eq!(metric_iou(&l, &r, 0.0).unwrap(), 0.0);
        assert!(metric_iou(&a, &l, 0.0).is_err());
    }

    #[test]
    fn chamfer_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mesh = |s: &SceneSpec| extract_mesh(&bake_grid(s, 48).unwrap(), 0.0);
        let a = mesh(&SceneSpec::sphere(0.5));
        let b = mesh(&SceneSpec::sphere(0.4));
        assert!(metric_chamfer(&a, &a, 2000, &mut rng).unwrap() < 2.0 / 47.0);
        let d = metric_chamfer(&a, &b, 2000, &mut rng).unwrap();
        assert!((d - 0.1).abs() < 0.01, "{d}");
        let delta = 0.05;
        let moved = SceneSpec::new("m", vec![AnalyticShape::sphere(0.5).translated(Vec3::new(delta, 0.0, 0.0))]).unwrap();
        let d = metric_chamfer(&a, &mesh(&moved), 4000, &mut rng).unwrap();
        // Mean |δ cos θ| over a sphere is δ/2.
        assert!((d - delta / 2.0).abs() < 0.15 * delta, "{d}");
        assert!(matches!(metric_chamfer(&a, &TriMesh::default(), 10, &mut rng), Err(Error::EmptyMesh)));
        let ab = metric_chamfer(&a, &b, 500, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let ba = metric_chamfer(&b, &a, 500, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn psnr_cases() {
        let a = ImageBuffer::filled(8, 8, &[0.0; 3]);
        let b = ImageBuffer::filled(8, 8, &[0.1; 3]);
        assert_eq!(metric_psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((metric_psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(metric_psnr(&a, &ImageBuffer::new(8, 4, 3)).is_err());
    }

    #[test]
    fn consistency_ceiling_and_discrimination() {
        let scene = SceneSpec::sphere(0.5);
        let (g, c) = (bake_grid(&scene, 32).unwrap(), bake_colors(&scene, 32).unwrap());
        let poses = make_camera_ring(8, 30.0, 3.0, 40.0, 64, 64).unwrap();
        let cfg = RenderConfig::default().with_samples(128);
        let d = SDensityParams::default();
        let views = MultiViewSet::render(&field_from_grid(&g, &c, d), &poses, &cfg, 7).unwrap();
        let own = metric_multiview_consistency(&views, &g, &c, d, &cfg, 8).unwrap();
        assert!(own.mean_psnr > 35.0, "{}", own.mean_psnr);
        let other = bake_grid(&SceneSpec::cube(0.4), 32).unwrap();
        let worse = metric_multiview_consistency(&views, &other, &c, d, &cfg, 8).unwrap();
        assert!(worse.mean_psnr < own.mean_psnr - 5.0);
        assert!(worse.reprojection_error > own.reprojection_error);
    }

    proptest! {
        #[test]
        fn psnr_matches_naive(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut img = || ImageBuffer::from_data(5, 4, 3, (0..60).map(|_| rng.random::<f64>()).collect()).unwrap();
            let (a, b) = (img(), img());
            let mut s = 0.0;
            for i in 0..60 {
                s += (a.data[i] - b.data[i]).powi(2);
            }
            let naive = 10.0 * (1.0 / (s / 60.0)).log10();
            prop_assert!((metric_psnr(&a, &b).unwrap() - naive).abs() < 1e-6);
            prop_assert_eq!(metric_psnr(&a, &b).unwrap(), metric_psnr(&b, &a).unwrap());
        }

        #[test]
        fn iou_is_symmetric(r1 in 0.1f64..0.8, r2 in 0.1f64..0.8, dx in -0.5f64..0.5) {
            let a = bake_grid(&SceneSpec::sphere(r1), 16).unwrap();
            let s = SceneSpec::new("b", vec![AnalyticShape::cube(r2 * 0.7).translated(Vec3::new(dx, 0.0, 0.0))]).unwrap();
            let b = bake_grid(&s, 16).unwrap();
            let ab = metric_iou(&a, &b, 0.0).unwrap();
            prop_assert_eq!(ab, metric_iou(&b, &a, 0.0).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
