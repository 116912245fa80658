//! Pinhole cameras on a look-at-origin orbit.
//!
//! Pixel coordinates are continuous with pixel `(i, j)` centered at
//! `(i, j)`; `v` grows downwards. The world is y-up.

use rand::Rng;

use crate::{Error, Result, Vec3};

pub const MIN_IMAGE_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, m: f64) -> Vec3 {
        self.origin + self.dir * m
    }

    /// Entry/exit distances through `[-1, 1]^3`, if the ray hits it.
    pub fn clip_to_cube(&self) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let o = self.origin[a];
            let d = self.dir[a];
            if d.abs() < 1e-15 {
                if !(-1.0..=1.0).contains(&o) {
                    return None;
                }
                continue;
            }
            let (mut ta, mut tb) = ((-1.0 - o) / d, (1.0 - o) / d);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        let t0 = t0.max(0.0);
        (t1 > t0).then_some((t0, t1))
    }
}

/// Camera frame: position plus orthonormal right/up/forward.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub position: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    tan_half: f64,
    aspect: f64,
    width: usize,
    height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub visible: bool,
}

impl CameraPose {
    pub fn new(azimuth: f64, elevation: f64, radius: f64, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let pose = CameraPose {
            azimuth,
            elevation,
            radius,
            fov_y,
            width,
            height,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::InvalidParameter(format!("camera radius {} must be > 0", self.radius)));
        }
        if !(self.fov_y > 0.0 && self.fov_y < 180.0) {
            return Err(Error::InvalidParameter(format!("fov_y {} outside (0, 180)", self.fov_y)));
        }
        if self.width < MIN_IMAGE_SIDE || self.height < MIN_IMAGE_SIDE {
            return Err(Error::InvalidParameter(format!(
                "image {}x{} smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}",
                self.width, self.height
            )));
        }
        if self.elevation.abs() >= 90.0 {
            return Err(Error::InvalidParameter(format!("elevation {} must be within (-90, 90)", self.elevation)));
        }
        Ok(())
    }

    pub fn with_size(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn position(&self) -> Vec3 {
        let (az, el) = (self.azimuth.to_radians(), self.elevation.to_radians());
        Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * self.radius
    }

    pub fn frame(&self) -> CameraFrame {
        let position = self.position();
        let forward = (-position).normalize();
        let right = forward.cross(&Vec3::y()).normalize();
        let up = right.cross(&forward);
        CameraFrame {
            position,
            right,
            up,
            forward,
            tan_half: (self.fov_y.to_radians() * 0.5).tan(),
            aspect: self.width as f64 / self.height as f64,
            width: self.width,
            height: self.height,
        }
    }

    pub fn project_point(&self, p: &Vec3) -> Projection {
        self.frame().project(p)
    }

    /// One ray per pixel center, row-major from the top-left pixel.
    pub fn gen_rays(&self) -> Vec<Ray> {
        let f = self.frame();
        (0..self.height)
            .flat_map(|j| (0..self.width).map(move |i| (i, j)))
            .map(|(i, j)| f.ray(i as f64, j as f64))
            .collect()
    }
}

impl CameraFrame {
    pub fn ray(&self, u: f64, v: f64) -> Ray {
        let x = (2.0 * (u + 0.5) / self.width as f64 - 1.0) * self.tan_half * self.aspect;
        let y = (1.0 - 2.0 * (v + 0.5) / self.height as f64) * self.tan_half;
        Ray {
            origin: self.position,
            dir: (self.forward + self.right * x + self.up * y).normalize(),
        }
    }

    pub fn project(&self, p: &Vec3) -> Projection {
        let d = p - self.position;
        let depth = d.dot(&self.forward);
        if depth <= 1e-12 {
            return Projection {
                u: f64::NAN,
                v: f64::NAN,
                depth,
                visible: false,
            };
        }
        let x = d.dot(&self.right) / depth;
        let y = d.dot(&self.up) / depth;
        let u = (x / (self.tan_half * self.aspect) + 1.0) * 0.5 * self.width as f64 - 0.5;
        let v = (1.0 - y / self.tan_half) * 0.5 * self.height as f64 - 0.5;
        let visible = (-0.5..=self.width as f64 - 0.5).contains(&u) && (-0.5..=self.height as f64 - 0.5).contains(&v);
        Projection { u, v, depth, visible }
    }
}

/// `count` poses at one elevation with azimuths `-180 + 360 k / count`.
pub fn make_camera_ring(
    count: usize,
    elevation: f64,
    radius: f64,
    fov_y: f64,
    width: usize,
    height: usize,
) -> Result<Vec<CameraPose>> {
    if count == 0 {
        return Err(Error::InvalidCount("camera ring needs at least one view".into()));
    }
    (0..count)
        .map(|k| {
            let az = -180.0 + 360.0 * k as f64 / count as f64;
            CameraPose::new(az, elevation, radius, fov_y, width, height)
        })
        .collect()
}

/// Uniform azimuth in [-180, 180), elevation in [0, 60].
pub fn random_pose<R: Rng + ?Sized>(rng: &mut R, template: &CameraPose) -> CameraPose {
    CameraPose {
        azimuth: rng.random_range(-180.0..180.0),
        elevation: rng.random_range(0.0..=60.0),
        ..*template
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring8() -> Vec<CameraPose> {
        make_camera_ring(8, 30.0, 3.0, 40.0, 64, 64).unwrap()
    }

    #[test]
    fn ring_azimuths() {
        let az: Vec<f64> = ring8().iter().map(|c| c.azimuth).collect();
        assert_eq!(az, vec![-180.0, -135.0, -90.0, -45.0, 0.0, 45.0, 90.0, 135.0]);
        assert!(ring8().iter().all(|c| c.elevation == 30.0));
        let one = make_camera_ring(1, 30.0, 3.0, 40.0, 64, 64).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].azimuth, -180.0);
        assert!(make_camera_ring(0, 30.0, 3.0, 40.0, 64, 64).is_err());
    }

    #[test]
    fn ring_of_four_rotates_by_quarter_turns() {
        let ring = make_camera_ring(4, 30.0, 3.0, 40.0, 16, 16).unwrap();
        for k in 0..4 {
            let a = ring[k].frame().forward;
            let b = ring[(k + 1) % 4].frame().forward;
            // Horizontal components are perpendicular, vertical equal.
            let ha = Vec3::new(a.x, 0.0, a.z);
            let hb = Vec3::new(b.x, 0.0, b.z);
            assert!(ha.dot(&hb).abs() < 1e-12);
            assert!((a.y - b.y).abs() < 1e-12);
            assert!((ha.norm() - hb.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_cameras_rejected() {
        assert!(CameraPose::new(0.0, 30.0, 0.0, 40.0, 64, 64).is_err());
        assert!(CameraPose::new(0.0, 30.0, 3.0, 180.0, 64, 64).is_err());
        assert!(CameraPose::new(0.0, 30.0, 3.0, 40.0, 4, 64).is_err());
    }

    #[test]
    fn principal_ray_and_symmetry() {
        let cam = CameraPose::new(20.0, 30.0, 3.0, 40.0, 65, 65).unwrap();
        let rays = cam.gen_rays();
        let center = rays[32 * 65 + 32];
        let look = (-cam.position()).normalize();
        assert!((center.dir - look).norm() < 1e-12);
        assert!(rays.iter().all(|r| (r.dir.norm() - 1.0).abs() < 1e-12));
        assert!(rays.iter().all(|r| r.origin == cam.position()));
        let tl = rays[0].dir.dot(&look);
        let br = rays[65 * 65 - 1].dir.dot(&look);
        let tr = rays[64].dir.dot(&look);
        assert!((tl - br).abs() < 1e-12 && (tl - tr).abs() < 1e-12);
    }

    #[test]
    fn edge_pixel_angle_matches_half_fov() {
        let cam = CameraPose::new(0.0, 30.0, 3.0, 40.0, 64, 64).unwrap();
        let f = cam.frame();
        // The image border (not the pixel center) sits at fov/2.
        let top = f.ray(31.5, -0.5);
        let angle = top.dir.dot(&f.forward).acos().to_degrees();
        let pixel_angle = 40.0 / 64.0;
        assert!((angle - 20.0).abs() < pixel_angle);
        let edge_center = f.ray(31.5, 0.0);
        let a2 = edge_center.dir.dot(&f.forward).acos().to_degrees();
        assert!((a2 - 20.0).abs() < pixel_angle);
    }

    #[test]
    fn origin_projects_to_center_and_behind_is_hidden() {
        for cam in ring8() {
            let p = cam.project_point(&Vec3::zeros());
            assert!(p.visible);
            assert!((p.u - 31.5).abs() < 0.5 && (p.v - 31.5).abs() < 0.5);
            let behind = cam.position() * 1.5;
            assert!(!cam.project_point(&behind).visible);
        }
    }

    #[test]
    fn rays_reproject_to_their_pixels() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cam = CameraPose::new(-135.0, 30.0, 3.0, 40.0, 48, 40).unwrap();
        let f = cam.frame();
        for _ in 0..200 {
            let (i, j) = (rng.random_range(0..48), rng.random_range(0..40));
            let r = f.ray(i as f64, j as f64);
            let m = rng.random_range(0.1..6.0);
            let p = f.project(&r.at(m));
            assert!((p.u - i as f64).abs() < 0.1 && (p.v - j as f64).abs() < 0.1);
            assert!(p.visible);
        }
    }

    #[test]
    fn cube_clipping() {
        let r = Ray {
            origin: Vec3::new(0.0, 0.0, 3.0),
            dir: Vec3::new(0.0, 0.0, -1.0),
        };
        assert_eq!(r.clip_to_cube(), Some((2.0, 4.0)));
        let miss = Ray {
            origin: Vec3::new(0.0, 2.0, 3.0),
            dir: Vec3::new(0.0, 0.0, -1.0),
        };
        assert_eq!(miss.clip_to_cube(), None);
    }
}
