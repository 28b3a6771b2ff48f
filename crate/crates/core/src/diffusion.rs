//! Denoising diffusion with a cosine noise schedule.
//!
//! Steps are indexed `t = 1..=T`. The forward process has the closed form
//! `y_t = √ᾱ_t·y_0 + √(1 − ᾱ_t)·ε`; the network predicts `ε` and sampling runs
//! the ancestral update from `t = T` down to `t = 1`.

use crate::conditioning::TimeEmbedding;
use crate::error::{Error, Result};
use crate::generator::{self, FieldGenerator};
use crate::kernels;
use crate::pointnet::{FieldNetwork, ModelKind};
use crate::rng::SeededStream;
use crate::tensor::Tensor;
use std::f64::consts::FRAC_PI_2;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_OFFSET: f64 = 0.008;
/// Upper clip applied to every β.
pub const BETA_MAX: f64 = 0.999;

/// Per-step variances and their cumulative products. Index `t - 1` holds step `t`.
///
/// `alpha_bar` underflows to zero for late steps of long schedules;
/// `log_alpha_bar` keeps the exact ordering there.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    offset: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    log_alpha_bar: Vec<f64>,
}

/// The unclipped cosine-schedule value at (possibly fractional) step `t`:
/// `1 − cos²((t/T + r)/(1 + r)·π/2) / cos²(r/(1 + r)·π/2)`.
pub fn raw_beta(t: f64, steps: usize, offset: f64) -> f64 {
    let f = |s: f64| ((s + offset) / (1.0 + offset) * FRAC_PI_2).cos().powi(2);
    1.0 - f(t / steps as f64) / f(0.0)
}

impl NoiseSchedule {
    pub fn new(steps: usize, offset: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion needs at least one step".into()));
        }
        if !(offset > 0.0 && offset.is_finite()) {
            return Err(Error::Config(format!("schedule offset {offset} must be positive")));
        }
        let beta: Vec<f64> = (1..=steps)
            .map(|t| raw_beta(t as f64, steps, offset).clamp(0.0, BETA_MAX))
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut log_alpha_bar = Vec::with_capacity(steps);
        let (mut prod, mut log) = (1.0f64, 0.0f64);
        for &a in &alpha {
            prod *= a;
            log += a.ln();
            alpha_bar.push(prod);
            log_alpha_bar.push(log);
        }
        Ok(Self {
            steps,
            offset,
            beta,
            alpha,
            alpha_bar,
            log_alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn log_alpha_bars(&self) -> &[f64] {
        &self.log_alpha_bar
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps {
            return Err(Error::Domain(format!("diffusion step {t} outside 1..={}", self.steps)));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.index(t)?])
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(DEFAULT_STEPS, DEFAULT_OFFSET).expect("default schedule is valid")
    }
}

pub fn build_schedule(steps: usize, offset: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::new(steps, offset)
}

/// `√ᾱ·y_clean + √(1 − ᾱ)·eps`, evaluated in double precision.
pub fn noised(y_clean: &Tensor, eps: &Tensor, alpha_bar: f64) -> Result<Tensor> {
    if y_clean.shape() != eps.shape() {
        return Err(Error::Dimension(format!("clean {:?} vs noise {:?}", y_clean.shape(), eps.shape())));
    }
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(Tensor::from_fn(y_clean.shape(), |i| {
        (a * y_clean.data()[i] as f64 + s * eps.data()[i] as f64) as f32
    }))
}

/// Draws `eps` and returns `(y_t, eps)`.
pub fn forward_noise(
    y_clean: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut SeededStream,
) -> Result<(Tensor, Tensor)> {
    let alpha_bar = schedule.alpha_bar(t)?;
    let eps = rng.normal_tensor(y_clean.shape());
    Ok((noised(y_clean, &eps, alpha_bar)?, eps))
}

/// One training example: a uniformly drawn step and the noised fields.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSample {
    pub t: usize,
    pub y_t: Tensor,
    pub eps: Tensor,
}

pub fn make_training_sample(y_clean: &Tensor, schedule: &NoiseSchedule, rng: &mut SeededStream) -> Result<DiffusionSample> {
    let t = 1 + rng.below(schedule.steps());
    let (y_t, eps) = forward_noise(y_clean, t, schedule, rng)?;
    Ok(DiffusionSample { t, y_t, eps })
}

/// Mean squared error between predicted and true noise.
pub fn loss(pred_eps: &Tensor, eps: &Tensor) -> Result<f32> {
    kernels::mse(pred_eps, eps)
}

pub fn sample<N: FieldNetwork + ?Sized>(
    net: &N,
    coords: &Tensor,
    schedule: &NoiseSchedule,
    embedding: &TimeEmbedding,
    rng: &mut SeededStream,
) -> Result<Tensor> {
    let mut out = sample_many(net, coords, 1, schedule, embedding, rng)?;
    Ok(out.remove(0))
}

/// Noise-free part of one ancestral step at `t`:
/// `y ← (y − β_t/√(1 − ᾱ_t)·ε̂)/√α_t`.
pub fn denoise_step(schedule: &NoiseSchedule, t: usize, y: &mut [f64], eps_hat: &[f32]) -> Result<()> {
    if y.len() != eps_hat.len() {
        return Err(Error::Dimension(format!("{} state values vs {} noise predictions", y.len(), eps_hat.len())));
    }
    let (beta, alpha, alpha_bar) = (schedule.beta(t)?, schedule.alpha(t)?, schedule.alpha_bar(t)?);
    let coef = beta / (1.0 - alpha_bar).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    for (s, &e) in y.iter_mut().zip(eps_hat) {
        *s = (*s - coef * e as f64) * inv_sqrt_alpha;
    }
    Ok(())
}

/// Ancestral sampling of `n_samples` realizations. Per chunk, the initial
/// noise is drawn first, then one fresh noise field per step `t > 1`.
pub fn sample_many<N: FieldNetwork + ?Sized>(
    net: &N,
    coords: &Tensor,
    n_samples: usize,
    schedule: &NoiseSchedule,
    embedding: &TimeEmbedding,
    rng: &mut SeededStream,
) -> Result<Vec<Tensor>> {
    let fields = generator::sampler_field_dims(net, ModelKind::Diffusion, coords, embedding)?;
    let n = coords.shape()[0];
    let mut out = Vec::with_capacity(n_samples);
    for k in generator::chunk_sizes(n, n_samples) {
        let mut y = generator::normal_state(rng, k * n * fields);
        for t in (1..=schedule.steps()).rev() {
            let eps_hat = generator::predict_states(net, coords, &y, k, fields, t as f64, embedding)?;
            denoise_step(schedule, t, &mut y, eps_hat.data())?;
            if t > 1 {
                let sigma = schedule.beta[t - 1].sqrt();
                for s in y.iter_mut() {
                    *s += sigma * rng.normal();
                }
            }
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::SamplingDiverged { step: t });
            }
        }
        out.extend(generator::unstack_state(&y, n, fields)?);
    }
    Ok(out)
}

/// Diffusion surrogate bound to a trained network.
#[derive(Debug, Clone)]
pub struct DiffusionSampler<N> {
    pub network: N,
    pub schedule: NoiseSchedule,
    pub embedding: TimeEmbedding,
}

impl<N: FieldNetwork> FieldGenerator for DiffusionSampler<N> {
    fn is_deterministic(&self) -> bool {
        false
    }

    fn generate(&self, coords: &Tensor, n_samples: usize, rng: &mut SeededStream) -> Result<Vec<Tensor>> {
        sample_many(&self.network, coords, n_samples, &self.schedule, &self.embedding, rng)
    }
}
