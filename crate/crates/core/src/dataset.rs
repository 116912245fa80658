//! Per-scene training-style data: baked grids, fixed-ring and random-pose
//! renders, and a noised prior.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_flag, KeyValues};
use crate::geometry::{bake_colors, bake_grid, SceneSpec, MIN_RESOLUTION};
use crate::io::{ensure_dir, save_colors, save_prior, save_sdf, save_views, sha256_file, write_previews};
use crate::priors::{build_prior, PriorConfig};
use crate::render::camera::MIN_IMAGE_SIDE;
use crate::render::{field_from_grid, make_camera_ring, random_pose, MultiViewSet, RenderConfig, SDensityParams};
use crate::sampler::SamplerConfig;
use crate::{Error, Result};

/// Side length of `--hires` exports.
pub const HIRES_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub scenes: Vec<PathBuf>,
    pub resolution: usize,
    pub fixed_views: usize,
    pub random_views: usize,
    pub image_size: usize,
    pub samples: usize,
    pub elevation: f64,
    pub radius: f64,
    pub fov: f64,
    pub prior: PriorConfig,
    pub density: SDensityParams,
    pub seed: u64,
    /// Also export the fixed ring at [`HIRES_SIZE`].
    pub hires: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            scenes: Vec::new(),
            resolution: 32,
            fixed_views: 8,
            random_views: 16,
            image_size: 64,
            samples: 64,
            elevation: 30.0,
            radius: 3.0,
            fov: 40.0,
            prior: PriorConfig::default(),
            density: SDensityParams::default(),
            seed: 0,
            hires: false,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fixed_views == 0 {
            return Err(Error::InvalidCount("at least one fixed view is required".into()));
        }
        if self.resolution < MIN_RESOLUTION {
            return Err(Error::InvalidResolution(self.resolution, MIN_RESOLUTION));
        }
        if self.image_size < MIN_IMAGE_SIDE {
            return Err(Error::InvalidParameter(format!(
                "image size {} below {MIN_IMAGE_SIDE}",
                self.image_size
            )));
        }
        self.prior.validate()
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let scenes: Vec<String> = self.scenes.iter().map(|p| p.display().to_string()).collect();
        kv.set("dataset.scenes", scenes.join(","));
        kv.set("dataset.resolution", self.resolution);
        kv.set("dataset.fixed_views", self.fixed_views);
        kv.set("dataset.random_views", self.random_views);
        kv.set("dataset.image_size", self.image_size);
        kv.set("dataset.samples", self.samples);
        kv.set("dataset.elevation", self.elevation);
        kv.set("dataset.radius", self.radius);
        kv.set("dataset.fov", self.fov);
        kv.set("dataset.seed", self.seed);
        kv.set("dataset.hires", self.hires);
        kv.set("prior.t0", self.prior.t0);
        kv.set("prior.resolution", self.prior.coarse_resolution);
        kv.set("prior.drop_probability", self.prior.drop_probability);
        kv.set("render.s", self.density.s);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = DatasetSpec::default();
        let spec = DatasetSpec {
            scenes: kv
                .get_str("dataset.scenes")
                .unwrap_or("")
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(PathBuf::from)
                .collect(),
            resolution: kv.get_or("dataset.resolution", d.resolution)?,
            fixed_views: kv.get_or("dataset.fixed_views", d.fixed_views)?,
            random_views: kv.get_or("dataset.random_views", d.random_views)?,
            image_size: kv.get_or("dataset.image_size", d.image_size)?,
            samples: kv.get_or("dataset.samples", d.samples)?,
            elevation: kv.get_or("dataset.elevation", d.elevation)?,
            radius: kv.get_or("dataset.radius", d.radius)?,
            fov: kv.get_or("dataset.fov", d.fov)?,
            prior: PriorConfig {
                t0: kv.get_or("prior.t0", d.prior.t0)?,
                coarse_resolution: kv.get_or("prior.resolution", d.prior.coarse_resolution)?,
                drop_probability: kv.get_or("prior.drop_probability", d.prior.drop_probability)?,
            },
            density: SDensityParams::new(kv.get_or("render.s", d.density.s)?)?,
            seed: kv.get_or("dataset.seed", d.seed)?,
            hires: kv.get_str("dataset.hires").map(parse_flag).unwrap_or(Ok(d.hires))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Files written for one scene, relative to its directory.
pub const SCENE_FILES: &[&str] = &["sdf.sdfg", "colors.sdfg", "fixed.mvws", "random.mvws", "prior.sdfg"];

/// Write every scene of `spec` under `out/<scene name>/` and return the
/// dataset manifest, also saved as `out/manifest.txt`.
pub fn gen_dataset(spec: &DatasetSpec, out: &Path) -> Result<KeyValues> {
    spec.validate()?;
    ensure_dir(out)?;
    let mut manifest = KeyValues::new();
    manifest.set("stage", "gen-dataset");
    manifest.set_section("config", &spec.to_kv());
    let (sched, _) = SamplerConfig::default().schedules()?;
    manifest.set("prior.schedule", sched.descriptor());
    let render = RenderConfig::default().with_samples(spec.samples);
    for (i, path) in spec.scenes.iter().enumerate() {
        let scene = SceneSpec::load(path)?;
        let dir = out.join(&scene.name);
        ensure_dir(&dir)?;
        let grid = bake_grid(&scene, spec.resolution)?;
        let colors = bake_colors(&scene, spec.resolution)?;
        let field = field_from_grid(&grid, &colors, spec.density);
        let size = spec.image_size;
        let fixed = make_camera_ring(spec.fixed_views, spec.elevation, spec.radius, spec.fov, size, size)?;
        let seed = spec.seed.wrapping_add(i as u64);
        let fixed_views = MultiViewSet::render(&field, &fixed, &render, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let random: Vec<_> = (0..spec.random_views).map(|_| random_pose(&mut rng, &fixed[0])).collect();
        let mut scene_kv = KeyValues::new();
        scene_kv.set("scene.name", &scene.name);
        scene_kv.set("scene.path", path.display());
        scene_kv.set("scene.sha256", sha256_file(path)?);
        for (k, p) in random.iter().enumerate() {
            scene_kv.set(format!("random.{k:02}.azimuth"), p.azimuth);
            scene_kv.set(format!("random.{k:02}.elevation"), p.elevation);
        }
        save_sdf(&dir.join("sdf.sdfg"), &grid)?;
        save_colors(&dir.join("colors.sdfg"), &colors)?;
        save_views(&dir.join("fixed.mvws"), &fixed_views)?;
        write_previews(&dir, "fixed", &fixed_views)?;
        if spec.hires {
            let ring = make_camera_ring(spec.fixed_views, spec.elevation, spec.radius, spec.fov, HIRES_SIZE, HIRES_SIZE)?;
            let hires = MultiViewSet::render(&field, &ring, &render, seed)?;
            save_views(&dir.join("fixed_hires.mvws"), &hires)?;
            write_previews(&dir, "fixed_hires", &hires)?;
            scene_kv.set("output.fixed_hires.mvws.sha256", sha256_file(&dir.join("fixed_hires.mvws"))?);
        }
        if !random.is_empty() {
            save_views(&dir.join("random.mvws"), &MultiViewSet::render(&field, &random, &render, seed ^ 1)?)?;
        }
        let prior = build_prior(&scene, &spec.prior, &sched, seed)?;
        save_prior(&dir.join("prior.sdfg"), &prior)?;
        scene_kv.set("prior.signal", prior.signal());
        scene_kv.set("prior.seed", prior.provenance.seed);
        scene_kv.set("prior.t0", prior.provenance.t0);
        for f in SCENE_FILES {
            if dir.join(f).exists() {
                scene_kv.set(format!("output.{f}.sha256"), sha256_file(&dir.join(f))?);
            }
        }
        scene_kv.save(&dir.join("manifest.txt"))?;
        manifest.set(format!("scene.{i}.name"), &scene.name);
        manifest.set(format!("scene.{i}.path"), path.display());
        manifest.set(format!("scene.{i}.manifest_sha256"), sha256_file(&dir.join("manifest.txt"))?);
    }
    manifest.save(&out.join("manifest.txt"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::load_views;
    use crate::render::make_camera_ring;

    fn write_scene(dir: &Path) -> PathBuf {
        let path = dir.join("ball.scene");
        std::fs::write(&path, "name=ball\npart.0.kind=sphere\npart.0.radius=0.5\n").unwrap();
        path
    }

    #[test]
    fn dataset_is_reproducible_and_logged() {
        let tmp = tempfile::tempdir().unwrap();
        let scene = write_scene(tmp.path());
        let spec = DatasetSpec {
            scenes: vec![scene],
            resolution: 16,
            image_size: 16,
            samples: 16,
            random_views: 3,
            ..Default::default()
        };
        let a = gen_dataset(&spec, &tmp.path().join("a")).unwrap();
        let b = gen_dataset(&spec, &tmp.path().join("b")).unwrap();
        assert_eq!(a, b);
        for f in SCENE_FILES {
            let (x, y) = (tmp.path().join("a/ball").join(f), tmp.path().join("b/ball").join(f));
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{f}");
        }
        let fixed = load_views(&tmp.path().join("a/ball/fixed.mvws")).unwrap();
        assert_eq!(fixed.poses(), make_camera_ring(8, 30.0, 3.0, 40.0, 16, 16).unwrap().as_slice());
        let scene_kv = KeyValues::load(&tmp.path().join("a/ball/manifest.txt")).unwrap();
        assert!(scene_kv.contains("random.02.azimuth"));
        assert_eq!(DatasetSpec::from_kv(&a.section("config")).unwrap(), spec);
        assert!(DatasetSpec {
            fixed_views: 0,
            ..spec
        }
        .validate()
        .is_err());
    }
}
