//! DDPM over flattened ray bundles.
//!
//! Ray arrays are `[ox, oy, oz, dx, dy, dz]` per ray (see [`RayBundle::to_flat`]).
//! Steps are indexed `1..=T`; `ᾱ_0 = 1` by convention. Denoisers predict the
//! clean sample `x̂₀` directly.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::distortion::FlowMap;
use crate::error::{Error, Result};
use crate::ray_camera::RayBundle;
use crate::rng::{normal_vec, seeded};

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Values beyond `[-1, 1]` by at most this much are treated as roundoff in `arccos`.
const ACOS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Linear β schedule over `steps` steps.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::param("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::param(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::param("schedule needs at least one step"));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::param("every beta must lie in (0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Replaces the cumulative table without touching β. Used to inject faults.
    pub fn with_alpha_bars(mut self, alpha_bars: Vec<f64>) -> Result<Self> {
        if alpha_bars.len() != self.betas.len() {
            return Err(Error::param("alpha_bar table length must match the schedule"));
        }
        self.alpha_bars = alpha_bars;
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// β_t for `t ∈ 1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t for `t ∈ 0..=T`, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Posterior variance β̃_t = (1 - ᾱ_{t-1}) / (1 - ᾱ_t) · β_t.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::param(format!("step {t} outside 0..={}", self.steps())));
        }
        Ok(())
    }
}

/// `√ᾱ_t·x₀ + √(1 - ᾱ_t)·ε`.
pub fn forward_noise(clean: &[f64], schedule: &NoiseSchedule, t: usize, noise: &[f64]) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    if clean.len() != noise.len() {
        return Err(Error::param(format!(
            "noise length {} does not match sample length {}",
            noise.len(),
            clean.len()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(clean.iter().zip(noise).map(|(x, e)| s * x + n * e).collect())
}

/// Clean-sample predictor `M(x_t, t) → x̂₀`.
///
/// `conditioning` carries optional opaque latents (e.g. image or line-segment
/// features); implementations may ignore it.
pub trait Denoiser {
    fn predict_clean(&self, noisy: &[f64], t: usize, conditioning: Option<&[f64]>) -> Vec<f64>;
}

impl<F> Denoiser for F
where
    F: Fn(&[f64], usize) -> Vec<f64>,
{
    fn predict_clean(&self, noisy: &[f64], t: usize, _conditioning: Option<&[f64]>) -> Vec<f64> {
        self(noisy, t)
    }
}

/// Denoiser that always predicts a fixed target.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    target: Vec<f64>,
}

impl OracleDenoiser {
    pub fn new(target: Vec<f64>) -> Self {
        OracleDenoiser { target }
    }
}

impl Denoiser for OracleDenoiser {
    fn predict_clean(&self, _noisy: &[f64], _t: usize, _conditioning: Option<&[f64]>) -> Vec<f64> {
        self.target.clone()
    }
}

/// Whether ancestral sampling adds `σ_t·z` at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseInjection {
    Gaussian,
    Zero,
}

/// Per-step snapshot passed to a [`reverse_sample_with`] observer.
pub struct StepView<'a> {
    /// Step just completed; the sample is now `x_{step-1}`.
    pub step: usize,
    pub sample: &'a [f64],
    pub predicted_clean: &'a [f64],
}

/// Ancestral DDPM sampling of `rays` rays from a seeded `x_T ~ N(0, I)`.
pub fn reverse_sample(denoiser: &dyn Denoiser, schedule: &NoiseSchedule, rays: usize, seed: u64) -> Result<Vec<f64>> {
    reverse_sample_with(denoiser, schedule, rays, seed, NoiseInjection::Gaussian, None, |_| {})
}

/// [`reverse_sample`] with control over noise injection, conditioning and a
/// per-step observer. Each step maps `x̂₀` through the posterior mean
/// `μ_t = (√ᾱ_{t-1}β_t·x̂₀ + √α_t(1 - ᾱ_{t-1})·x_t) / (1 - ᾱ_t)` and adds
/// `σ_t·z` with `σ_t² = β̃_t` for `t > 1`. Directions are renormalized after the
/// last step only.
pub fn reverse_sample_with(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    rays: usize,
    seed: u64,
    injection: NoiseInjection,
    conditioning: Option<&[f64]>,
    mut observe: impl FnMut(StepView<'_>),
) -> Result<Vec<f64>> {
    if rays == 0 {
        return Err(Error::param("sample must contain at least one ray"));
    }
    let len = rays * 6;
    let mut rng = seeded(seed);
    let mut x = normal_vec(&mut rng, len);
    for t in (1..=schedule.steps()).rev() {
        let x0 = denoiser.predict_clean(&x, t, conditioning);
        if x0.len() != len {
            return Err(Error::Contract(format!(
                "denoiser returned {} values for a {len}-value sample at step {t}",
                x0.len()
            )));
        }
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(t - 1);
        let beta = schedule.beta(t);
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let sigma = if t > 1 {
            schedule.posterior_variance(t).sqrt()
        } else {
            0.0
        };
        let z = if t > 1 && injection == NoiseInjection::Gaussian {
            normal_vec(&mut rng, len)
        } else {
            vec![0.0; len]
        };
        for k in 0..len {
            x[k] = c0 * x0[k] + ct * x[k] + sigma * z[k];
        }
        observe(StepView {
            step: t,
            sample: &x,
            predicted_clean: &x0,
        });
    }
    normalize_directions(&mut x);
    Ok(x)
}

/// Rescales the direction half of every ray to unit length; zero directions are left alone.
pub fn normalize_directions(flat: &mut [f64]) {
    for ray in flat.chunks_exact_mut(6) {
        let n = (ray[3] * ray[3] + ray[4] * ray[4] + ray[5] * ray[5]).sqrt();
        if n > 0.0 {
            ray[3] /= n;
            ray[4] /= n;
            ray[5] /= n;
        }
    }
}

/// Direction halves of a flattened ray array.
pub fn directions_of(flat: &[f64]) -> Vec<Vector3<f64>> {
    flat.chunks_exact(6).map(|r| Vector3::new(r[3], r[4], r[5])).collect()
}

/// Mean squared error over all elements.
pub fn loss_denoise(predicted: &[f64], reference: &[f64]) -> Result<f64> {
    if predicted.len() != reference.len() || predicted.is_empty() {
        return Err(Error::param(format!(
            "loss_denoise needs equal non-empty arrays ({} vs {})",
            predicted.len(),
            reference.len()
        )));
    }
    let sum: f64 = predicted.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / predicted.len() as f64)
}

/// Angle between two directions in radians; inputs need not be unit length.
pub fn direction_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if !(na > 0.0 && nb > 0.0 && na.is_finite() && nb.is_finite()) {
        return Err(Error::param("direction with zero or non-finite norm"));
    }
    let c = a.dot(b) / (na * nb);
    if c.abs() > 1.0 + ACOS_SLACK {
        return Err(Error::param(format!("cosine {c} outside [-1, 1]")));
    }
    Ok(c.clamp(-1.0, 1.0).acos())
}

/// Mean angle between corresponding directions, in degrees.
pub fn loss_angular(predicted: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<f64> {
    if predicted.len() != reference.len() || predicted.is_empty() {
        return Err(Error::param(format!(
            "loss_angular needs equal non-empty direction sets ({} vs {})",
            predicted.len(),
            reference.len()
        )));
    }
    let mut sum = 0.0;
    for (a, b) in predicted.iter().zip(reference) {
        sum += direction_angle(a, b)?;
    }
    Ok((sum / predicted.len() as f64).to_degrees())
}

/// [`loss_angular`] on two bundles with matching grids.
pub fn loss_angular_bundles(predicted: &RayBundle, reference: &RayBundle) -> Result<f64> {
    if (predicted.rows(), predicted.cols()) != (reference.rows(), reference.cols()) {
        return Err(Error::param("bundle grids differ"));
    }
    loss_angular(predicted.directions(), reference.directions())
}

/// Mean squared flow-vector difference.
pub fn loss_distort(predicted: &FlowMap, reference: &FlowMap) -> Result<f64> {
    if (predicted.width(), predicted.height()) != (reference.width(), reference.height()) {
        return Err(Error::param(format!(
            "flow sizes differ ({}x{} vs {}x{})",
            predicted.width(),
            predicted.height(),
            reference.width(),
            reference.height()
        )));
    }
    let sum: f64 = predicted
        .vectors()
        .iter()
        .zip(reference.vectors())
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok(sum / predicted.vectors().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn schedule_bounds() {
        assert!(make_schedule(10, 0.02, 1e-4).is_err());
        assert!(make_schedule(0, 1e-4, 0.02).is_err());
        assert!(make_schedule(10, 0.0, 0.02).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn schedule_endpoints_and_telescoping() {
        let s = make_schedule(100, 1e-4, 0.02).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(100) - 0.02).abs() < 1e-15);
        for t in 1..=100 {
            assert_eq!(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t));
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn forward_noise_edges() {
        let s = make_schedule(10, 1e-3, 0.1).unwrap();
        let x = vec![0.5, -1.0, 2.0];
        assert_eq!(forward_noise(&x, &s, 0, &[9.0, 9.0, 9.0]).unwrap(), x);
        let out = forward_noise(&x, &s, 7, &[0.0; 3]).unwrap();
        let r = s.alpha_bar(7).sqrt();
        for (o, v) in out.iter().zip(&x) {
            assert_eq!(*o, r * v);
        }
        assert!(forward_noise(&x, &s, 3, &[0.0; 2]).is_err());
        assert!(forward_noise(&x, &s, 11, &[0.0; 3]).is_err());
    }

    #[test]
    fn single_step_perfect_recovery() {
        let s = make_schedule(1, 0.3, 0.3).unwrap();
        let target = vec![1.0, 2.0, 3.0, 0.0, 0.6, 0.8];
        let out = reverse_sample(&OracleDenoiser::new(target.clone()), &s, 1, 4).unwrap();
        for (a, b) in out.iter().zip(&target) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let s = make_schedule(20, 1e-4, 0.02).unwrap();
        let den = |x: &[f64], _t: usize| x.iter().map(|v| 0.9 * v).collect::<Vec<_>>();
        let a = reverse_sample(&den, &s, 3, 17).unwrap();
        let b = reverse_sample(&den, &s, 3, 17).unwrap();
        let c = reverse_sample(&den, &s, 3, 18).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn denoiser_shape_violation() {
        let s = make_schedule(5, 1e-4, 0.02).unwrap();
        let bad = |_: &[f64], _: usize| vec![0.0; 5];
        assert!(matches!(reverse_sample(&bad, &s, 2, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn loss_fixtures() {
        assert_eq!(loss_denoise(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_denoise(&[1.0, 2.0, -1.0], &[0.0, 1.0, -2.0]).unwrap(), 1.0);
        assert!(loss_denoise(&[1.0], &[1.0, 2.0]).is_err());

        let a = vec![Vector3::x(), Vector3::y()];
        assert_eq!(loss_angular(&a, &a).unwrap(), 0.0);
        let b = vec![Vector3::y(), Vector3::z()];
        assert!((loss_angular(&a, &b).unwrap() - 90.0).abs() < 1e-12);
        assert!(loss_angular(&a, &[Vector3::x(), Vector3::zeros()]).is_err());

        let p = FlowMap::constant(3, 2, Vector2::new(1.0, 1.0)).unwrap();
        let q = FlowMap::constant(3, 2, Vector2::new(4.0, 5.0)).unwrap();
        assert_eq!(loss_distort(&p, &p).unwrap(), 0.0);
        assert_eq!(loss_distort(&p, &q).unwrap(), 25.0);
        assert!(loss_distort(&p, &FlowMap::zeros(2, 3).unwrap()).is_err());
    }

    #[test]
    fn angle_is_scale_free() {
        let a = Vector3::new(3.0, 0.0, 0.0);
        let b = Vector3::new(0.0, 0.0, 0.5);
        assert!((direction_angle(&a, &b).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
