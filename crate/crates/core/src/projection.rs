//! Moving information between the lattice and the views: point
//! projection, bilinear lookup, mean/variance aggregation over views,
//! positional encoding, and silhouette back-projection into a hull SDF.

use rayon::prelude::*;

use crate::geometry::{ColorGrid, SdfGrid};
use crate::lattice;
use crate::render::{CameraPose, ImageBuffer, MultiViewSet, Projection};
use crate::{Error, Result, Vec3};

pub fn project_point(p: &Vec3, cam: &CameraPose) -> Projection {
    cam.project_point(p)
}

/// Bilinear lookup at continuous pixel coordinates. Coordinates outside
/// `[-0.5, W - 0.5] x [-0.5, H - 0.5]` return zeros and `false`; inside
/// that window the border half-pixels are clamped to the edge pixels.
pub fn sample_image_bilinear(img: &ImageBuffer, u: f64, v: f64) -> (Vec<f64>, bool) {
    let mut out = vec![0.0; img.channels];
    let ok = sample_into(img, u, v, &mut out);
    (out, ok)
}

fn sample_into(img: &ImageBuffer, u: f64, v: f64, out: &mut [f64]) -> bool {
    let (w, h) = (img.width as f64, img.height as f64);
    if !(u >= -0.5 && u <= w - 0.5 && v >= -0.5 && v <= h - 0.5) {
        out.fill(0.0);
        return false;
    }
    let u = u.clamp(0.0, w - 1.0);
    let v = v.clamp(0.0, h - 1.0);
    let i0 = (u.floor() as usize).min(img.width - 2);
    let j0 = (v.floor() as usize).min(img.height - 2);
    let (fu, fv) = (u - i0 as f64, v - j0 as f64);
    let c = img.channels;
    let at = |i: usize, j: usize| (j * img.width + i) * c;
    let (a, b, d, e) = (at(i0, j0), at(i0 + 1, j0), at(i0, j0 + 1), at(i0 + 1, j0 + 1));
    for k in 0..c {
        let top = img.data[a + k] * (1.0 - fu) + img.data[b + k] * fu;
        let bot = img.data[d + k] * (1.0 - fu) + img.data[e + k] * fu;
        out[k] = top * (1.0 - fv) + bot * fv;
    }
    true
}

/// Per-point `[mean, variance]` of view features plus the number of views
/// that saw the point.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    n: usize,
    image_channels: usize,
    values: Vec<f64>,
    coverage: Vec<usize>,
}

impl FeatureVolume {
    pub fn resolution(&self) -> usize {
        self.n
    }

    /// Feature channels per point (mean block then variance block).
    pub fn channels(&self) -> usize {
        2 * self.image_channels
    }

    pub fn features(&self, idx: usize) -> &[f64] {
        let c = self.channels();
        &self.values[idx * c..(idx + 1) * c]
    }

    pub fn mean(&self, idx: usize) -> &[f64] {
        &self.features(idx)[..self.image_channels]
    }

    pub fn variance(&self, idx: usize) -> &[f64] {
        &self.features(idx)[self.image_channels..]
    }

    pub fn coverage(&self, idx: usize) -> usize {
        self.coverage[idx]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Features with the coverage count appended as a final channel.
    pub fn to_channels(&self) -> (usize, Vec<f64>) {
        let c = self.channels();
        let mut out = Vec::with_capacity(self.coverage.len() * (c + 1));
        for (k, cov) in self.coverage.iter().enumerate() {
            out.extend_from_slice(self.features(k));
            out.push(*cov as f64);
        }
        (c + 1, out)
    }
}

/// Mean and population variance over the views that see each lattice
/// point. Occlusion is not tested.
pub fn aggregate_mean_var(n: usize, views: &MultiViewSet) -> Result<FeatureVolume> {
    if views.is_empty() {
        return Err(Error::InvalidCount("aggregation needs at least one view".into()));
    }
    let c = views.channels();
    let frames: Vec<_> = views.poses().iter().map(|p| p.frame()).collect();
    let per_point: Vec<(Vec<f64>, usize)> = (0..n * n * n)
        .into_par_iter()
        .map(|idx| {
            let p = lattice::point_of_index(n, idx);
            let mut samples: Vec<Vec<f64>> = Vec::with_capacity(views.len());
            for (f, img) in frames.iter().zip(views.images()) {
                let pr = f.project(&p);
                if !pr.visible {
                    continue;
                }
                let mut s = vec![0.0; c];
                if sample_into(img, pr.u, pr.v, &mut s) {
                    samples.push(s);
                }
            }
            let mut feat = vec![0.0; 2 * c];
            let m = samples.len();
            if m > 0 {
                for s in &samples {
                    for k in 0..c {
                        feat[k] += s[k];
                    }
                }
                for k in 0..c {
                    feat[k] /= m as f64;
                }
                for s in &samples {
                    for k in 0..c {
                        let d = s[k] - feat[k];
                        feat[c + k] += d * d;
                    }
                }
                for k in 0..c {
                    feat[c + k] /= m as f64;
                }
            }
            (feat, m)
        })
        .collect();
    let mut values = Vec::with_capacity(n * n * n * 2 * c);
    let mut coverage = Vec::with_capacity(n * n * n);
    for (f, m) in per_point {
        values.extend(f);
        coverage.push(m);
    }
    Ok(FeatureVolume {
        n,
        image_channels: c,
        values,
        coverage,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosEncConfig {
    pub levels: usize,
    pub omega: f64,
}

impl Default for PosEncConfig {
    fn default() -> Self {
        PosEncConfig {
            levels: 6,
            omega: std::f64::consts::PI,
        }
    }
}

impl PosEncConfig {
    pub fn new(levels: usize, omega: f64) -> Result<Self> {
        if levels == 0 || !(omega > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "positional encoding needs L >= 1 and omega > 0, got L={levels}, omega={omega}"
            )));
        }
        Ok(PosEncConfig { levels, omega })
    }

    pub fn len(&self) -> usize {
        6 * self.levels
    }

    pub fn is_empty(&self) -> bool {
        self.levels == 0
    }
}

/// Octave `k` contributes `sin(2^k w p)` for x, y, z followed by
/// `cos(2^k w p)` for x, y, z.
pub fn positional_encoding(p: &Vec3, cfg: &PosEncConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.len());
    for k in 0..cfg.levels {
        let f = (1u64 << k) as f64 * cfg.omega;
        out.extend((0..3).map(|a| (f * p[a]).sin()));
        out.extend((0..3).map(|a| (f * p[a]).cos()));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HullConfig {
    /// Silhouette-channel value at or above which a point is covered.
    pub silhouette_threshold: f64,
    /// Evidence at or above which a voxel counts as inside the hull.
    pub evidence_threshold: f64,
}

impl Default for HullConfig {
    fn default() -> Self {
        HullConfig {
            silhouette_threshold: 0.5,
            evidence_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackProjection {
    pub colors: ColorGrid,
    /// Fraction of views whose silhouette covers each lattice point.
    pub coverage: Vec<f64>,
    /// Visual-hull indicator: 1 where every view's silhouette covers the
    /// point, 0 elsewhere.
    pub evidence: Vec<f64>,
}

/// Back-project posed RGB + silhouette views onto an `n`-lattice. Colors
/// are the silhouette-weighted mean over the views that see the point
/// (plain mean when no view covers it).
pub fn back_project_views(views: &MultiViewSet, n: usize, cfg: &HullConfig) -> Result<BackProjection> {
    if views.is_empty() {
        return Err(Error::InvalidCount("back-projection needs at least one view".into()));
    }
    if views.channels() < 4 {
        return Err(Error::shape("RGB + silhouette views", format!("{} channels", views.channels())));
    }
    let frames: Vec<_> = views.poses().iter().map(|p| p.frame()).collect();
    let per_point: Vec<([f64; 3], usize)> = (0..n * n * n)
        .into_par_iter()
        .map(|idx| {
            let p = lattice::point_of_index(n, idx);
            let mut covered = 0usize;
            let (mut wsum, mut csum) = (0.0, [0.0; 3]);
            let (mut seen, mut plain) = (0usize, [0.0; 3]);
            let mut s = [0.0; 4];
            for (f, img) in frames.iter().zip(views.images()) {
                let pr = f.project(&p);
                if !pr.visible || !sample_into(img, pr.u, pr.v, &mut s[..img.channels.min(4)]) {
                    continue;
                }
                let sil = s[3].clamp(0.0, 1.0);
                if sil >= cfg.silhouette_threshold {
                    covered += 1;
                }
                seen += 1;
                wsum += sil;
                for c in 0..3 {
                    csum[c] += sil * s[c];
                    plain[c] += s[c];
                }
            }
            let color = if wsum > 1e-9 {
                csum.map(|v| (v / wsum).clamp(0.0, 1.0))
            } else if seen > 0 {
                plain.map(|v| (v / seen as f64).clamp(0.0, 1.0))
            } else {
                [0.5; 3]
            };
            (color, covered)
        })
        .collect();
    let (rgb, covered): (Vec<_>, Vec<_>) = per_point.into_iter().unzip();
    Ok(BackProjection {
        colors: ColorGrid::from_values(n, rgb)?,
        coverage: covered.iter().map(|c| *c as f64 / views.len() as f64).collect(),
        evidence: covered.iter().map(|c| if *c == views.len() { 1.0 } else { 0.0 }).collect(),
    })
}

/// Neighbor offsets visited by the forward chamfer pass (those that
/// precede a voxel in raster order).
fn forward_offsets() -> Vec<(i64, i64, i64)> {
    let mut out = Vec::with_capacity(13);
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if (dz, dy, dx) < (0, 0, 0) {
                    out.push((dx, dy, dz));
                }
            }
        }
    }
    out
}

/// Chamfer distance (in lattice units) from every voxel to the nearest
/// voxel in `seed`; `f64::INFINITY` when `seed` is empty. Uses 3x3x3
/// weights (1, √2, √3), which overestimate Euclidean distance by at most
/// about 12.8%.
pub fn chamfer_distance(n: usize, seed: &[bool]) -> Vec<f64> {
    let mut d: Vec<f64> = seed.iter().map(|s| if *s { 0.0 } else { f64::INFINITY }).collect();
    let fwd: Vec<((i64, i64, i64), f64)> = forward_offsets()
        .into_iter()
        .map(|o| (o, ((o.0 * o.0 + o.1 * o.1 + o.2 * o.2) as f64).sqrt()))
        .collect();
    let ni = n as i64;
    let relax = |d: &mut Vec<f64>, x: i64, y: i64, z: i64, sign: i64| {
        let here = lattice::flat_index(n, x as usize, y as usize, z as usize);
        let mut best = d[here];
        for ((dx, dy, dz), w) in &fwd {
            let (a, b, c) = (x + sign * dx, y + sign * dy, z + sign * dz);
            if a < 0 || b < 0 || c < 0 || a >= ni || b >= ni || c >= ni {
                continue;
            }
            let v = d[lattice::flat_index(n, a as usize, b as usize, c as usize)] + w;
            if v < best {
                best = v;
            }
        }
        d[here] = best;
    };
    for z in 0..ni {
        for y in 0..ni {
            for x in 0..ni {
                relax(&mut d, x, y, z, 1);
            }
        }
    }
    for z in (0..ni).rev() {
        for y in (0..ni).rev() {
            for x in (0..ni).rev() {
                relax(&mut d, x, y, z, -1);
            }
        }
    }
    d
}

/// Signed distance from a binary inside mask: the surface is placed half a
/// voxel beyond the last inside voxel.
pub fn mask_to_sdf(n: usize, inside: &[bool]) -> SdfGrid {
    let h = lattice::spacing(n);
    let outside: Vec<bool> = inside.iter().map(|v| !v).collect();
    let to_inside = chamfer_distance(n, inside);
    let to_outside = chamfer_distance(n, &outside);
    let far = crate::geometry::scene::EMPTY_DISTANCE;
    let values = inside
        .iter()
        .enumerate()
        .map(|(k, is_in)| {
            if *is_in {
                let d = to_outside[k];
                if d.is_finite() {
                    -(d - 0.5) * h
                } else {
                    -far
                }
            } else {
                let d = to_inside[k];
                if d.is_finite() {
                    (d - 0.5) * h
                } else {
                    far
                }
            }
        })
        .collect();
    SdfGrid::from_values(n, values).expect("lattice-sized values")
}

pub fn hull_to_sdf(evidence: &[f64], n: usize, cfg: &HullConfig) -> SdfGrid {
    let inside: Vec<bool> = evidence.iter().map(|e| *e >= cfg.evidence_threshold).collect();
    mask_to_sdf(n, &inside)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{bake_grid, SceneSpec};
    use crate::render::{make_camera_ring, Ray};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_views(m: usize, size: usize, seed: u64) -> MultiViewSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poses = make_camera_ring(m, 30.0, 3.0, 40.0, size, size).unwrap();
        let images = (0..m)
            .map(|_| {
                let data = (0..size * size * 4).map(|_| rng.random::<f64>()).collect();
                ImageBuffer::from_data(size, size, 4, data).unwrap()
            })
            .collect();
        MultiViewSet::new(poses, images).unwrap()
    }

    fn ray_hits_sphere(ray: &Ray, r: f64) -> bool {
        let b = ray.origin.dot(&ray.dir);
        let c = ray.origin.norm_squared() - r * r;
        b * b - c >= 0.0 && -b > 0.0
    }

    /// Binary silhouettes of a centered sphere, computed analytically.
    fn sphere_silhouettes(poses: Vec<CameraPose>, r: f64) -> MultiViewSet {
        let images = poses
            .iter()
            .map(|p| {
                let mut img = ImageBuffer::filled(p.width, p.height, &[1.0, 1.0, 1.0, 0.0]);
                for (k, ray) in p.gen_rays().iter().enumerate() {
                    if ray_hits_sphere(ray, r) {
                        img.data[k * 4..k * 4 + 4].copy_from_slice(&[0.8, 0.2, 0.2, 1.0]);
                    }
                }
                img
            })
            .collect();
        MultiViewSet::new(poses, images).unwrap()
    }

    #[test]
    fn bilinear_lookup() {
        let mut img = ImageBuffer::new(10, 8, 2);
        for j in 0..8 {
            for i in 0..10 {
                let px = img.pixel_mut(i, j);
                px[0] = 0.3 * i as f64 - 0.7 * j as f64 + 2.0;
                px[1] = (i * 10 + j) as f64;
            }
        }
        let (v, ok) = sample_image_bilinear(&img, 3.0, 5.0);
        assert!(ok);
        assert_eq!(v, img.pixel(3, 5).to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (u, w) = (rng.random_range(0.0..9.0), rng.random_range(0.0..7.0));
            let (s, ok) = sample_image_bilinear(&img, u, w);
            assert!(ok);
            assert!((s[0] - (0.3 * u - 0.7 * w + 2.0)).abs() < 1e-6);
        }
        let flat = ImageBuffer::filled(9, 9, &[0.25]);
        assert_eq!(sample_image_bilinear(&flat, 4.3, 7.9).0, vec![0.25]);
        let (s, ok) = sample_image_bilinear(&img, -0.6, 2.0);
        assert!(!ok && s == vec![0.0, 0.0]);
        assert!(!sample_image_bilinear(&img, 2.0, 7.6).1);
    }

    #[test]
    fn aggregation_matches_naive_loop() {
        let n = 16;
        let views = random_views(8, 16, 5);
        let fv = aggregate_mean_var(n, &views).unwrap();
        assert_eq!(fv.channels(), 8);
        for idx in (0..n * n * n).step_by(37) {
            let p = lattice::point_of_index(n, idx);
            let mut seen: Vec<Vec<f64>> = Vec::new();
            for (pose, img) in views.poses().iter().zip(views.images()) {
                let pr = pose.project_point(&p);
                if pr.visible {
                    let (s, ok) = sample_image_bilinear(img, pr.u, pr.v);
                    if ok {
                        seen.push(s);
                    }
                }
            }
            assert_eq!(fv.coverage(idx), seen.len());
            for c in 0..4 {
                let cnt = seen.len().max(1) as f64;
                let mean: f64 = seen.iter().map(|s| s[c]).sum::<f64>() / cnt;
                let var: f64 = seen.iter().map(|s| (s[c] - mean).powi(2)).sum::<f64>() / cnt;
                assert!((fv.mean(idx)[c] - mean).abs() < 1e-6);
                assert!((fv.variance(idx)[c] - var).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn aggregation_degenerate_cases() {
        let poses = make_camera_ring(4, 30.0, 3.0, 40.0, 8, 8).unwrap();
        let same = MultiViewSet::new(poses, vec![ImageBuffer::filled(8, 8, &[0.2, 0.4, 0.6, 1.0]); 4]).unwrap();
        let fv = aggregate_mean_var(8, &same).unwrap();
        for idx in 0..512 {
            if fv.coverage(idx) > 0 {
                assert!(fv.variance(idx).iter().all(|v| v.abs() < 1e-15));
            }
        }
        let one = random_views(1, 8, 1);
        let fv = aggregate_mean_var(8, &one).unwrap();
        assert!(fv.values().chunks(8).all(|f| f[4..].iter().all(|v| *v == 0.0)));
        let (c, data) = fv.to_channels();
        assert_eq!(c, 9);
        assert_eq!(data.len(), 512 * 9);
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let views = random_views(5, 12, 9);
        let mut poses = views.poses().to_vec();
        let mut images = views.images().to_vec();
        poses.reverse();
        images.reverse();
        let shuffled = MultiViewSet::new(poses, images).unwrap();
        let a = aggregate_mean_var(12, &views).unwrap();
        let b = aggregate_mean_var(12, &shuffled).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(a.values().chunks(8).all(|f| f[4..].iter().all(|v| *v >= 0.0)));
    }

    #[test]
    fn positional_encoding_shape_and_origin() {
        let cfg = PosEncConfig::default();
        let e = positional_encoding(&Vec3::zeros(), &cfg);
        assert_eq!(e.len(), 36);
        for k in 0..6 {
            assert!(e[6 * k..6 * k + 3].iter().all(|v| *v == 0.0));
            assert!(e[6 * k + 3..6 * k + 6].iter().all(|v| *v == 1.0));
        }
        assert!(PosEncConfig::new(0, 1.0).is_err());
        assert!(PosEncConfig::new(3, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn positional_encoding_periodicity(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, k in 0usize..6) {
            let cfg = PosEncConfig::default();
            let period = 2.0 * std::f64::consts::PI / ((1u64 << k) as f64 * cfg.omega);
            let p = Vec3::new(x, y, z);
            let a = positional_encoding(&p, &cfg);
            let b = positional_encoding(&(p + Vec3::new(period, -period, 2.0 * period)), &cfg);
            for i in 6 * k..6 * k + 6 {
                prop_assert!((a[i] - b[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_views_have_no_evidence() {
        let poses = make_camera_ring(8, 30.0, 3.0, 40.0, 16, 16).unwrap();
        let views = MultiViewSet::new(poses, vec![ImageBuffer::filled(16, 16, &[1.0, 1.0, 1.0, 0.0]); 8]).unwrap();
        let bp = back_project_views(&views, 12, &HullConfig::default()).unwrap();
        assert!(bp.evidence.iter().all(|e| *e == 0.0));
        let sdf = hull_to_sdf(&bp.evidence, 12, &HullConfig::default());
        assert!(sdf.values().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn sphere_silhouettes_carve_the_sphere() {
        let r = 0.5;
        let n = 32;
        let views = sphere_silhouettes(make_camera_ring(8, 30.0, 3.0, 40.0, 64, 64).unwrap(), r);
        let bp = back_project_views(&views, n, &HullConfig::default()).unwrap();
        let mut worst_outside = 0.0f64;
        for idx in 0..n * n * n {
            let d = lattice::point_of_index(n, idx).norm();
            if d < 0.8 * r {
                assert!(bp.evidence[idx] >= 0.99, "inside at {d}");
            }
            if d > 1.3 * r {
                worst_outside = worst_outside.max(bp.evidence[idx]);
            }
        }
        assert!(worst_outside <= 0.01, "{worst_outside}");
        let sdf = hull_to_sdf(&bp.evidence, n, &HullConfig::default());
        for idx in 0..n * n * n {
            let d = lattice::point_of_index(n, idx).norm();
            if d > 1.3 * r {
                assert!(sdf.values()[idx] > 0.0);
            }
            if d < 0.8 * r {
                assert!(sdf.values()[idx] < 0.0);
            }
        }
        let c = bp.colors.values()[lattice::flat_index(n, 16, 16, 16)];
        assert!((c[0] - 0.8).abs() < 1e-9 && (c[1] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn single_view_evidence_is_constant_along_rays() {
        let pose = CameraPose::new(30.0, 20.0, 3.0, 40.0, 32, 32).unwrap();
        let views = sphere_silhouettes(vec![pose], 0.4);
        let n = 24;
        let bp = back_project_views(&views, n, &HullConfig::default()).unwrap();
        let sdf = SdfGrid::from_values(n, bp.evidence.clone()).unwrap();
        let f = pose.frame();
        for (i, j) in [(16, 16), (10, 20), (3, 5), (16, 9)] {
            let ray = f.ray(i as f64, j as f64);
            let (a, b) = ray.clip_to_cube().unwrap();
            // Nearest-lattice evidence along the ray equals the pixel's alpha.
            let alpha = views.images()[0].pixel(i, j)[3];
            for s in 1..20 {
                let p = ray.at(a + (b - a) * s as f64 / 20.0);
                let g = p.map(|c| ((c + 1.0) * 0.5 * (n - 1) as f64).round() as usize);
                let e = sdf.get(g.x, g.y, g.z);
                let pr = pose.project_point(&lattice::point(n, g.x, g.y, g.z));
                if (pr.u - i as f64).abs() < 0.01 && (pr.v - j as f64).abs() < 0.01 {
                    assert_eq!(e, alpha);
                }
            }
        }
        // Points on a common pixel ray share evidence exactly.
        let ray = f.ray(16.0, 16.0);
        let (a, b) = ray.clip_to_cube().unwrap();
        let (_, ok) = sample_image_bilinear(&views.images()[0], 16.0, 16.0);
        assert!(ok);
        let single = |p: &Vec3| {
            let pr = pose.project_point(p);
            sample_image_bilinear(&views.images()[0], pr.u, pr.v).0[3]
        };
        let first = single(&ray.at(a + 0.01));
        for s in 1..50 {
            assert!((single(&ray.at(a + (b - a) * s as f64 / 50.0)) - first).abs() < 1e-6);
        }
    }

    #[test]
    fn hull_contains_convex_shape() {
        let n = 24;
        let scene = SceneSpec::cube(0.4);
        let grid = bake_grid(&scene, n).unwrap();
        let poses = make_camera_ring(8, 30.0, 3.0, 40.0, 64, 64).unwrap();
        let images = poses
            .iter()
            .map(|p| {
                let mut img = ImageBuffer::filled(64, 64, &[1.0, 1.0, 1.0, 0.0]);
                for (k, ray) in p.gen_rays().iter().enumerate() {
                    let hit = (0..400).any(|s| scene.eval_sdf(&ray.at(1.5 + 3.0 * s as f64 / 400.0)) <= 0.0);
                    if hit {
                        img.data[k * 4 + 3] = 1.0;
                    }
                }
                img
            })
            .collect();
        let views = MultiViewSet::new(poses, images).unwrap();
        let bp = back_project_views(&views, n, &HullConfig::default()).unwrap();
        let strict: Vec<bool> = bp.coverage.iter().map(|e| *e >= 1.0).collect();
        assert!(bp.coverage.iter().zip(&bp.evidence).all(|(c, e)| (*c >= 1.0) == (*e == 1.0)));
        let hull = lattice::dilate26(n, &strict);
        for (k, v) in grid.values().iter().enumerate() {
            if *v < 0.0 {
                assert!(hull[k]);
            }
        }
    }

    #[test]
    fn chamfer_distance_is_close_to_euclidean() {
        let n = 21;
        let mut seed = vec![false; n * n * n];
        seed[lattice::flat_index(n, 10, 10, 10)] = true;
        let d = chamfer_distance(n, &seed);
        for idx in 0..n * n * n {
            let (x, y, z) = lattice::unflatten(n, idx);
            let e = ((x as f64 - 10.0).powi(2) + (y as f64 - 10.0).powi(2) + (z as f64 - 10.0).powi(2)).sqrt();
            assert!(d[idx] >= e - 1e-9 && d[idx] <= e * 1.129 + 1e-9, "{} vs {e}", d[idx]);
        }
        assert!(chamfer_distance(8, &vec![false; 512]).iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn mask_sdf_recovers_sphere_level_set() {
        let n = 32;
        let g = bake_grid(&SceneSpec::sphere(0.5), n).unwrap();
        let inside: Vec<bool> = g.values().iter().map(|v| *v < 0.0).collect();
        let s = mask_to_sdf(n, &inside);
        let h = g.spacing();
        for (a, b) in s.values().iter().zip(g.values()) {
            assert_eq!(*a < 0.0, *b < 0.0);
            if b.abs() < 0.3 {
                assert!((a - b).abs() < 1.5 * h, "{a} vs {b}");
            }
        }
    }
}
