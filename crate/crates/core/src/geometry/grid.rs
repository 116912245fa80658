use rayon::prelude::*;

use crate::geometry::scene::{SceneSpec, EMPTY_DISTANCE};
use crate::lattice::{self, Stencil};
use crate::{Error, Result, Vec3};

pub const MIN_RESOLUTION: usize = 8;

/// N^3 signed distances on the corner-inclusive lattice over `[-1, 1]^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    n: usize,
    values: Vec<f64>,
}

impl SdfGrid {
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidResolution(n, 2));
        }
        if values.len() != n * n * n {
            return Err(Error::shape(n * n * n, values.len()));
        }
        Ok(SdfGrid { n, values })
    }

    pub fn constant(n: usize, value: f64) -> Self {
        SdfGrid {
            n,
            values: vec![value; n * n * n],
        }
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn spacing(&self) -> f64 {
        lattice::spacing(self.n)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[lattice::flat_index(self.n, x, y, z)]
    }

    /// Trilinear lookup; points outside the cube clamp to its boundary.
    pub fn sample_trilinear(&self, p: &Vec3) -> f64 {
        Stencil::new(self.n, p).apply(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Clean grids satisfy |value| <= the cube diameter.
    pub fn is_clean(&self) -> bool {
        self.values.iter().all(|v| v.is_finite() && v.abs() <= EMPTY_DISTANCE + 1e-9)
    }

    pub fn inside_count(&self, iso: f64) -> usize {
        self.values.iter().filter(|v| **v < iso).count()
    }

    /// Resample onto another lattice resolution.
    pub fn resample(&self, n: usize) -> SdfGrid {
        let values = (0..n * n * n)
            .into_par_iter()
            .map(|i| self.sample_trilinear(&lattice::point_of_index(n, i)))
            .collect();
        SdfGrid { n, values }
    }
}

/// Evaluate the scene SDF on every lattice node.
pub fn bake_grid(scene: &SceneSpec, n: usize) -> Result<SdfGrid> {
    if n < MIN_RESOLUTION {
        return Err(Error::InvalidResolution(n, MIN_RESOLUTION));
    }
    let values = (0..n * n * n)
        .into_par_iter()
        .map(|i| scene.eval_sdf(&lattice::point_of_index(n, i)))
        .collect();
    Ok(SdfGrid { n, values })
}

/// View-independent RGB per lattice node.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorGrid {
    n: usize,
    rgb: Vec<[f64; 3]>,
}

impl ColorGrid {
    pub fn from_values(n: usize, rgb: Vec<[f64; 3]>) -> Result<Self> {
        if rgb.len() != n * n * n {
            return Err(Error::shape(n * n * n, rgb.len()));
        }
        Ok(ColorGrid { n, rgb })
    }

    pub fn uniform(n: usize, rgb: [f64; 3]) -> Self {
        ColorGrid {
            n,
            rgb: vec![rgb; n * n * n],
        }
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.rgb
    }

    pub fn values_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.rgb
    }

    pub fn sample(&self, p: &Vec3) -> [f64; 3] {
        Stencil::new(self.n, p).apply3(&self.rgb)
    }

    pub fn resample(&self, n: usize) -> ColorGrid {
        let rgb = (0..n * n * n)
            .into_par_iter()
            .map(|i| self.sample(&lattice::point_of_index(n, i)))
            .collect();
        ColorGrid { n, rgb }
    }
}

/// Palette colors by nearest-part assignment.
pub fn bake_colors(scene: &SceneSpec, n: usize) -> Result<ColorGrid> {
    if n < 2 {
        return Err(Error::InvalidResolution(n, 2));
    }
    let rgb = (0..n * n * n)
        .into_par_iter()
        .map(|i| scene.color_at(&lattice::point_of_index(n, i)))
        .collect();
    Ok(ColorGrid { n, rgb })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_small_resolution() {
        assert!(matches!(
            bake_grid(&SceneSpec::sphere(0.5), 7),
            Err(Error::InvalidResolution(7, 8))
        ));
    }

    #[test]
    fn odd_lattice_contains_origin() {
        let g = bake_grid(&SceneSpec::sphere(0.5), 33).unwrap();
        assert_eq!(g.get(16, 16, 16), -0.5);
        assert_eq!(g.values().len(), 33 * 33 * 33);
        assert!(g.is_clean());
    }

    #[test]
    fn resolution_128_bakes() {
        let g = bake_grid(&SceneSpec::sphere(0.5), 128).unwrap();
        assert_eq!(g.values().len(), 128 * 128 * 128);
    }

    #[test]
    fn negative_voxel_count_matches_ball_volume() {
        let g = bake_grid(&SceneSpec::sphere(0.5), 33).unwrap();
        let h = 2.0 / 32.0;
        let expected = 4.0 / 3.0 * std::f64::consts::PI * 0.125 / (h * h * h);
        let got = g.inside_count(0.0) as f64;
        assert!((got - expected).abs() / expected < 0.05, "{got} vs {expected}");
    }

    #[test]
    fn constant_and_ramp_interpolation() {
        let c = SdfGrid::constant(9, 0.7);
        assert!((c.sample_trilinear(&Vec3::new(0.123, -0.4, 0.9)) - 0.7).abs() < 1e-12);

        let n = 9;
        let ramp: Vec<f64> = (0..n * n * n)
            .map(|i| lattice::point_of_index(n, i).x * 3.0)
            .collect();
        let g = SdfGrid::from_values(n, ramp).unwrap();
        let a = lattice::point(n, 2, 3, 4);
        let b = lattice::point(n, 3, 3, 4);
        let mid = (a + b) * 0.5;
        assert!((g.sample_trilinear(&mid) - 0.5 * (g.get(2, 3, 4) + g.get(3, 3, 4))).abs() < 1e-12);
    }

    #[test]
    fn clamps_outside_points() {
        let g = bake_grid(&SceneSpec::sphere(0.5), 9).unwrap();
        let inside = g.sample_trilinear(&Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(g.sample_trilinear(&Vec3::new(3.0, 0.0, 0.0)), inside);
    }

    proptest! {
        #[test]
        fn lattice_lookup_reproduces_sdf(x in 0usize..17, y in 0usize..17, z in 0usize..17) {
            let scene = SceneSpec::cube(0.45);
            let g = bake_grid(&scene, 17).unwrap();
            let p = lattice::point(17, x, y, z);
            prop_assert!((g.sample_trilinear(&p) - scene.eval_sdf(&p)).abs() < 1e-12);
        }
    }
}
