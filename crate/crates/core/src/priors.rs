//! Coarse 3D priors: a latent code built from the scene's coarse occupancy,
//! noised at a fixed level t0 and decoded into a queryable voxel radiance
//! prior.

use rand::Rng;
use rayon::prelude::*;

use crate::geometry::{ColorGrid, SceneSpec, SdfGrid, MIN_RESOLUTION};
use crate::lattice::{self, Stencil};
use crate::projection::mask_to_sdf;
use crate::scheduler::{gaussian_vec, NoiseSchedule};
use crate::{Error, Result, Vec3};

/// Code value of a fully occupied coarse cell.
pub const CODE_AMPLITUDE: f64 = 4.0;
/// Gray of a decoded prior.
pub const PRIOR_GRAY: [f64; 3] = [0.5; 3];
const ENCODE_SUBSAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    pub t0: f64,
    pub coarse_resolution: usize,
    pub drop_probability: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            t0: 0.4,
            coarse_resolution: 16,
            drop_probability: 0.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0 < 1.0) {
            return Err(Error::InvalidParameter(format!("t0 must lie in (0, 1), got {}", self.t0)));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(Error::InvalidParameter(format!(
                "drop probability must lie in [0, 1], got {}",
                self.drop_probability
            )));
        }
        if self.coarse_resolution < MIN_RESOLUTION {
            return Err(Error::InvalidResolution(self.coarse_resolution, MIN_RESOLUTION));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub values: Vec<f64>,
}

impl LatentCode {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// N_c when the code length is a cube.
    pub fn coarse_resolution(&self) -> Option<usize> {
        let n = (self.values.len() as f64).cbrt().round() as usize;
        (n * n * n == self.values.len()).then_some(n)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Where a prior came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorProvenance {
    pub source: String,
    pub t0: f64,
    pub seed: u64,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiancePrior {
    n: usize,
    density: Vec<f64>,
    colors: ColorGrid,
    /// √ᾱ(t0): the scale of the clean code inside the noised one.
    signal: f64,
    pub provenance: PriorProvenance,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn squash(c: f64) -> f64 {
    (softplus(c) - std::f64::consts::LN_2).max(0.0)
}

/// Occupied fraction of each coarse node's cell, times [`CODE_AMPLITUDE`].
/// The code has D = n_c³ entries.
pub fn encode_prior(scene: &SceneSpec, n_c: usize) -> Result<LatentCode> {
    if n_c < MIN_RESOLUTION {
        return Err(Error::InvalidResolution(n_c, MIN_RESOLUTION));
    }
    if scene.is_empty() {
        return Ok(LatentCode {
            values: vec![0.0; n_c * n_c * n_c],
        });
    }
    let h = lattice::spacing(n_c);
    let s = ENCODE_SUBSAMPLES;
    let offsets: Vec<f64> = (0..s).map(|k| ((k as f64 + 0.5) / s as f64 - 0.5) * h).collect();
    let values = (0..n_c * n_c * n_c)
        .into_par_iter()
        .map(|idx| {
            let c = lattice::point_of_index(n_c, idx);
            let mut inside = 0usize;
            for dz in &offsets {
                for dy in &offsets {
                    for dx in &offsets {
                        if scene.eval_sdf(&(c + Vec3::new(*dx, *dy, *dz))) < 0.0 {
                            inside += 1;
                        }
                    }
                }
            }
            CODE_AMPLITUDE * inside as f64 / (s * s * s) as f64
        })
        .collect();
    Ok(LatentCode { values })
}

/// ᾱ of the 3D schedule at the fractional step t0·T.
pub fn latent_alpha_bar(t0: f64, sched: &NoiseSchedule) -> f64 {
    sched.alpha_bar_at(t0 * sched.steps() as f64)
}

/// `C_t0 = √ᾱ C + √(1-ᾱ) z`.
pub fn noise_latent<R: Rng + ?Sized>(code: &LatentCode, t0: f64, sched: &NoiseSchedule, rng: &mut R) -> Result<LatentCode> {
    if !(0.0..1.0).contains(&t0) {
        return Err(Error::InvalidParameter(format!("t0 must lie in [0, 1), got {t0}")));
    }
    let ab = latent_alpha_bar(t0, sched);
    let z = gaussian_vec(rng, code.dim());
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(LatentCode {
        values: code.values.iter().zip(&z).map(|(c, z)| a * c + b * z).collect(),
    })
}

/// Decode a (noised) code into a coarse density grid with neutral gray color.
pub fn decode_prior(code: &LatentCode, t0: f64, sched: &NoiseSchedule, provenance: PriorProvenance) -> Result<RadiancePrior> {
    let n = code
        .coarse_resolution()
        .ok_or_else(|| Error::shape("a cubic code length", code.dim()))?;
    if n < MIN_RESOLUTION {
        return Err(Error::InvalidResolution(n, MIN_RESOLUTION));
    }
    Ok(RadiancePrior {
        n,
        density: code.values.iter().map(|c| squash(*c)).collect(),
        colors: ColorGrid::uniform(n, PRIOR_GRAY),
        signal: latent_alpha_bar(t0, sched).sqrt(),
        provenance,
    })
}

/// Encode, noise at `cfg.t0` and decode in one go.
pub fn build_prior(scene: &SceneSpec, cfg: &PriorConfig, sched: &NoiseSchedule, rng_seed: u64) -> Result<RadiancePrior> {
    use rand::SeedableRng;
    cfg.validate()?;
    let code = encode_prior(scene, cfg.coarse_resolution)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    let noised = noise_latent(&code, cfg.t0, sched, &mut rng)?;
    decode_prior(
        &noised,
        cfg.t0,
        sched,
        PriorProvenance {
            source: scene.name.clone(),
            t0: cfg.t0,
            seed: rng_seed,
            dropped: false,
        },
    )
}

/// Zero-density, zero-color prior marked as dropped.
pub fn drop_prior(prior: &RadiancePrior) -> RadiancePrior {
    RadiancePrior {
        n: prior.n,
        density: vec![0.0; prior.density.len()],
        colors: ColorGrid::uniform(prior.n, [0.0; 3]),
        signal: prior.signal,
        provenance: PriorProvenance {
            dropped: true,
            ..prior.provenance.clone()
        },
    }
}

/// Drop with probability `p`.
pub fn maybe_drop<R: Rng + ?Sized>(prior: &RadiancePrior, p: f64, rng: &mut R) -> RadiancePrior {
    if rng.random::<f64>() < p {
        drop_prior(prior)
    } else {
        prior.clone()
    }
}

impl RadiancePrior {
    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn colors(&self) -> &ColorGrid {
        &self.colors
    }

    pub fn is_dropped(&self) -> bool {
        self.provenance.dropped
    }

    pub fn sample_density(&self, p: &Vec3) -> f64 {
        Stencil::new(self.n, p).apply(&self.density)
    }

    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum()
    }

    /// Density halfway between empty and a fully occupied clean cell at
    /// this prior's noise level.
    pub fn occupancy_level(&self) -> f64 {
        squash(0.5 * self.signal * CODE_AMPLITUDE)
    }

    /// Coarse occupancy on the prior's own lattice.
    pub fn occupancy(&self) -> Vec<bool> {
        let level = self.occupancy_level();
        self.density.iter().map(|d| *d > level).collect()
    }

    /// Signed distance to the prior's occupied region on an `n`-lattice.
    pub fn occupancy_sdf(&self, n: usize) -> SdfGrid {
        let level = self.occupancy_level();
        let mask: Vec<bool> = (0..n * n * n)
            .into_par_iter()
            .map(|i| !self.provenance.dropped && self.sample_density(&lattice::point_of_index(n, i)) > level)
            .collect();
        mask_to_sdf(n, &mask)
    }

    /// Rebuild from stored grids.
    pub fn from_parts(density: Vec<f64>, colors: ColorGrid, signal: f64, provenance: PriorProvenance) -> Result<Self> {
        let n = colors.resolution();
        if density.len() != n * n * n {
            return Err(Error::shape(n * n * n, density.len()));
        }
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidParameter("prior densities must be finite and nonnegative".into()));
        }
        Ok(RadiancePrior {
            n,
            density,
            colors,
            signal,
            provenance,
        })
    }

    pub fn signal(&self) -> f64 {
        self.signal
    }
}
