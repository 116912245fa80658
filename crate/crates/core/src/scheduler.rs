//! Noise schedules, forward noising, x0 recovery and the reverse step.

use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Minimum ᾱ accepted by [`predict_x0`].
pub const ALPHA_BAR_FLOOR: f64 = 1e-8;

/// Largest per-step β kept by the cosine schedule.
const COSINE_MAX_BETA: f64 = 0.99;
const COSINE_OFFSET: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    LinearBeta,
    Cosine,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::LinearBeta => "linear_beta",
            ScheduleKind::Cosine => "cosine",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_beta" | "linear" => Ok(ScheduleKind::LinearBeta),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::InvalidParameter(format!("unknown schedule kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    steps: usize,
    alpha_bar: Vec<f64>,
}

/// `cos^2` profile used by the cosine schedule, normalized so f(0) = 1.
pub fn cosine_alpha_bar(t: f64, steps: usize) -> f64 {
    let f = |x: f64| {
        let c = ((x / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos();
        c * c
    };
    f(t) / f(0.0)
}

pub fn make_schedule(kind: ScheduleKind, steps: usize) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::InvalidCount(format!("schedule needs at least 2 steps, got {steps}")));
    }
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    alpha_bar.push(1.0);
    match kind {
        ScheduleKind::LinearBeta => {
            // The usual 1e-4..0.02 ramp for 1000 steps, rescaled to `steps`.
            let scale = 1000.0 / steps as f64;
            let (lo, hi) = (1e-4 * scale, 0.02 * scale);
            let mut acc = 1.0;
            for t in 1..=steps {
                let frac = if steps == 1 { 0.0 } else { (t - 1) as f64 / (steps - 1) as f64 };
                let beta = (lo + (hi - lo) * frac).min(0.999);
                acc *= 1.0 - beta;
                alpha_bar.push(acc);
            }
        }
        ScheduleKind::Cosine => {
            for t in 1..=steps {
                let prev = alpha_bar[t - 1];
                let raw = cosine_alpha_bar(t as f64, steps);
                let beta = (1.0 - raw / prev).min(COSINE_MAX_BETA);
                alpha_bar.push(if beta < COSINE_MAX_BETA { raw } else { prev * (1.0 - beta) });
            }
        }
    }
    Ok(NoiseSchedule { kind, steps, alpha_bar })
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// ᾱ at a fractional step, linear between table entries.
    pub fn alpha_bar_at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.steps as f64);
        let lo = t.floor() as usize;
        if lo >= self.steps {
            return self.alpha_bar[self.steps];
        }
        let f = t - lo as f64;
        self.alpha_bar[lo] * (1.0 - f) + self.alpha_bar[lo + 1] * f
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar[t] / self.alpha_bar[t - 1]
    }

    /// Variance of the Gaussian posterior q(x_{t-1} | x_t, x_0).
    pub fn posterior_variance(&self, t: usize) -> f64 {
        let (ab, ab_prev) = (self.alpha_bar[t], self.alpha_bar[t - 1]);
        (1.0 - ab_prev) / (1.0 - ab) * self.beta(t)
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::InvalidParameter(format!("step {t} beyond schedule length {}", self.steps)));
        }
        Ok(())
    }

    pub fn descriptor(&self) -> String {
        format!("{}:{}", self.kind, self.steps)
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::shape(a, b))
    }
}

/// `sqrt(ab) x0 + sqrt(1 - ab) eps` with an explicit ᾱ.
pub fn forward_noise_with<T: Float>(x0: &[T], eps: &[T], alpha_bar: f64) -> Result<Vec<T>> {
    check_len(x0.len(), eps.len())?;
    let a = T::from(alpha_bar.sqrt()).unwrap();
    let b = T::from((1.0 - alpha_bar).sqrt()).unwrap();
    Ok(x0.iter().zip(eps).map(|(x, e)| a * *x + b * *e).collect())
}

pub fn forward_noise<T: Float>(x0: &[T], t: usize, eps: &[T], sched: &NoiseSchedule) -> Result<Vec<T>> {
    sched.check_step(t)?;
    forward_noise_with(x0, eps, sched.alpha_bar(t))
}

pub fn predict_x0_with<T: Float>(x_t: &[T], eps_pred: &[T], alpha_bar: f64) -> Result<Vec<T>> {
    check_len(x_t.len(), eps_pred.len())?;
    if alpha_bar < ALPHA_BAR_FLOOR {
        return Err(Error::Numerical(format!(
            "alpha_bar {alpha_bar:e} below {ALPHA_BAR_FLOOR:e}; x0 prediction is unstable"
        )));
    }
    let inv = T::from(1.0 / alpha_bar.sqrt()).unwrap();
    let b = T::from((1.0 - alpha_bar).sqrt()).unwrap();
    Ok(x_t.iter().zip(eps_pred).map(|(x, e)| (*x - b * *e) * inv).collect())
}

/// Invert the forward process given a noise estimate.
pub fn predict_x0<T: Float>(x_t: &[T], eps_pred: &[T], t: usize, sched: &NoiseSchedule) -> Result<Vec<T>> {
    if t == 0 {
        return Err(Error::InvalidParameter("x0 prediction needs t >= 1".into()));
    }
    sched.check_step(t)?;
    predict_x0_with(x_t, eps_pred, sched.alpha_bar(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepMode {
    /// Posterior mean plus posterior-variance noise.
    #[default]
    Ancestral,
    /// Noise-free (η = 0) update.
    Deterministic,
}

impl FromStr for StepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" | "ancestral" => Ok(StepMode::Ancestral),
            "ddim" | "deterministic" => Ok(StepMode::Deterministic),
            other => Err(Error::InvalidParameter(format!("unknown step mode '{other}'"))),
        }
    }
}

impl fmt::Display for StepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepMode::Ancestral => "ddpm",
            StepMode::Deterministic => "ddim",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOptions {
    pub mode: StepMode,
    /// Clamp range for the intermediate x0 estimate.
    pub clip: Option<(f64, f64)>,
}

/// One reverse step x_t -> x_{t-1}.
pub fn ddpm_step<R: Rng + ?Sized>(
    x_t: &[f64],
    eps_pred: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    opts: StepOptions,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::InvalidParameter("reverse step needs t >= 1".into()));
    }
    let mut x0 = predict_x0(x_t, eps_pred, t, sched)?;
    if let Some((lo, hi)) = opts.clip {
        for v in &mut x0 {
            *v = v.clamp(lo, hi);
        }
    }
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    match opts.mode {
        StepMode::Ancestral => {
            let beta = sched.beta(t);
            let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
            let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
            let sigma = if t > 1 { sched.posterior_variance(t).sqrt() } else { 0.0 };
            Ok(x0
                .iter()
                .zip(x_t)
                .map(|(x0, xt)| {
                    let mean = c0 * x0 + ct * xt;
                    if sigma > 0.0 {
                        mean + sigma * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        mean
                    }
                })
                .collect())
        }
        StepMode::Deterministic => {
            let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
            let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
            Ok(x0
                .iter()
                .zip(x_t)
                .map(|(x0, xt)| {
                    let eps = (xt - sa * x0) / sb;
                    pa * x0 + pb * eps
                })
                .collect())
        }
    }
}

/// Mean squared error between predicted and true noise.
pub fn simple_loss(eps_pred: &[f64], eps_true: &[f64]) -> Result<f64> {
    check_len(eps_pred.len(), eps_true.len())?;
    if eps_pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = eps_pred.iter().zip(eps_true).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / eps_pred.len() as f64)
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedules_are_well_formed() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::LinearBeta] {
            for steps in [2, 10, 50, 1000] {
                let s = make_schedule(kind, steps).unwrap();
                assert_eq!(s.alpha_bars().len(), steps + 1);
                assert_eq!(s.alpha_bar(0), 1.0);
                assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]), "{kind} {steps}");
                let last = s.alpha_bar(steps);
                assert!(last > 0.0 && last < 0.05, "{kind} {steps}: {last}");
            }
        }
        assert_eq!(make_schedule(ScheduleKind::LinearBeta, 50).unwrap().alpha_bars().len(), 51);
        assert!(make_schedule(ScheduleKind::Cosine, 1).is_err());
    }

    #[test]
    fn cosine_matches_closed_form() {
        let s = make_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let f = |t: f64| ((t / 1000.0 + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2).cos().powi(2);
        assert!((s.alpha_bar(500) - f(500.0) / f(0.0)).abs() < 1e-6);
    }

    #[test]
    fn forward_noise_examples() {
        let s = make_schedule(ScheduleKind::Cosine, 10).unwrap();
        let x0 = vec![0.3, -1.2];
        assert_eq!(forward_noise(&x0, 0, &[5.0, 5.0], &s).unwrap(), x0);
        let v = forward_noise_with(&[1.0], &[2.0], 0.25).unwrap();
        assert!((v[0] - (0.5 + 0.75f64.sqrt() * 2.0)).abs() < 1e-15);
        assert!(forward_noise(&x0, 1, &[1.0], &s).is_err());
    }

    #[test]
    fn forward_noise_variance_monte_carlo() {
        let s = make_schedule(ScheduleKind::LinearBeta, 100).unwrap();
        let t = 37;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eps = gaussian_vec(&mut rng, 1_000_000);
        let x = forward_noise(&vec![0.0; eps.len()], t, &eps, &s).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        let expected = 1.0 - s.alpha_bar(t);
        assert!((var - expected).abs() / expected < 0.01);
    }

    #[test]
    fn predict_x0_specializations_and_guard() {
        let s = make_schedule(ScheduleKind::Cosine, 20).unwrap();
        let x = vec![0.4, -0.8];
        let r = predict_x0(&x, &[0.0, 0.0], 5, &s).unwrap();
        let k = s.alpha_bar(5).sqrt();
        assert!((r[0] - 0.4 / k).abs() < 1e-15);
        assert!(predict_x0_with(&x, &[0.0, 0.0], 1e-9).is_err());
        assert!(predict_x0(&x, &[0.0, 0.0], 0, &s).is_err());
    }

    #[test]
    fn last_step_is_deterministic() {
        let s = make_schedule(ScheduleKind::LinearBeta, 10).unwrap();
        let x = vec![0.1, 0.2, 0.3];
        let e = vec![0.5, -0.5, 0.0];
        let a = ddpm_step(&x, &e, 1, &s, StepOptions::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = ddpm_step(&x, &e, 1, &s, StepOptions::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, predict_x0(&x, &e, 1, &s).unwrap());
    }

    #[test]
    fn same_seed_same_step() {
        let s = make_schedule(ScheduleKind::Cosine, 10).unwrap();
        let x = vec![0.1; 64];
        let e = vec![0.3; 64];
        let a = ddpm_step(&x, &e, 7, &s, StepOptions::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = ddpm_step(&x, &e, 7, &s, StepOptions::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_variance_matches_posterior() {
        let s = make_schedule(ScheduleKind::Cosine, 50).unwrap();
        let t = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| ddpm_step(&[0.7], &[0.2], t, &s, StepOptions::default(), &mut rng).unwrap()[0])
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let expected = s.posterior_variance(t);
        assert!((var - expected).abs() / expected < 0.02, "{var} vs {expected}");
    }

    #[test]
    fn deterministic_rollout_with_exact_noise_recovers_target() {
        let s = make_schedule(ScheduleKind::Cosine, 50).unwrap();
        let x0 = vec![0.25; 200];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = gaussian_vec(&mut rng, 200);
        let opts = StepOptions {
            mode: StepMode::Deterministic,
            clip: None,
        };
        let mut errs = Vec::new();
        for t in (1..=50).rev() {
            let ab = s.alpha_bar(t);
            let eps: Vec<f64> = x.iter().zip(&x0).map(|(xt, x0)| (xt - ab.sqrt() * x0) / (1.0 - ab).sqrt()).collect();
            let scaled: f64 = x.iter().zip(&x0).map(|(xt, x0)| (xt / ab.sqrt() - x0).powi(2)).sum::<f64>().sqrt();
            errs.push(scaled);
            x = ddpm_step(&x, &eps, t, &s, opts, &mut rng).unwrap();
        }
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let rms = (x.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 200.0).sqrt();
        assert!(rms < 1e-3);
    }

    #[test]
    fn simple_loss_examples() {
        let a = vec![0.3, -0.2, 1.5];
        assert_eq!(simple_loss(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        assert!((simple_loss(&b, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(simple_loss(&a, &b[..2]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = gaussian_vec(&mut rng, 1000);
        let q = gaussian_vec(&mut rng, 1000);
        let mut naive = 0.0;
        for i in 0..1000 {
            naive += (p[i] - q[i]) * (p[i] - q[i]);
        }
        assert!((simple_loss(&p, &q).unwrap() - naive / 1000.0).abs() < 1e-6);
    }

    #[test]
    fn single_precision_round_trip_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for kind in [ScheduleKind::Cosine, ScheduleKind::LinearBeta] {
            let s = make_schedule(kind, 50).unwrap();
            let mut worst = 0.0f32;
            for _ in 0..10_000 {
                let x0: f32 = rng.random_range(-1.0..1.0);
                let e = rng.sample::<f64, _>(StandardNormal) as f32;
                let t = rng.random_range(1..=50);
                let xt = forward_noise(&[x0], t, &[e], &s).unwrap();
                let back = predict_x0(&xt, &[e], t, &s).unwrap();
                let err = (back[0] - x0).abs();
                let ab = s.alpha_bar(t);
                // Rounding x_t to f32 is amplified by 1/sqrt(ab).
                let cond = 4.0 * f32::EPSILON * (xt[0].abs() + e.abs() + 1.0) / ab.sqrt() as f32;
                assert!(err <= cond.max(1e-5), "{kind} t={t}: {err} > {cond}");
                if ab >= 1e-3 {
                    worst = worst.max(err);
                }
            }
            assert!(worst < 1e-5, "{kind}: {worst}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_single_precision(x0 in -3.0f32..3.0, e in -4.0f32..4.0, t in 1usize..=50) {
            let s = make_schedule(ScheduleKind::Cosine, 50).unwrap();
            let xt = forward_noise(&[x0], t, &[e], &s).unwrap();
            let back = predict_x0(&xt, &[e], t, &s).unwrap();
            prop_assert!((back[0] - x0).abs() < 1e-3);
        }
    }
}
