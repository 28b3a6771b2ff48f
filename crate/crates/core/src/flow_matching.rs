//! Flow matching: the network learns the velocity `y_noisy − y_clean` of the
//! straight path `y_τ = (1 − τ)·y_clean + τ·y_noisy`, and sampling integrates
//! that velocity from τ = 1 (noise) back to τ = 0 with explicit Euler steps.

use crate::conditioning::TimeEmbedding;
use crate::error::{Error, Result};
use crate::generator::{self, FieldGenerator};
use crate::kernels;
use crate::pointnet::{FieldNetwork, ModelKind};
use crate::rng::SeededStream;
use crate::tensor::Tensor;

/// Default number of Euler steps.
pub const DEFAULT_STEPS: usize = 1000;

/// One training example of the flow-matching objective.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub tau: f64,
    pub y_clean: Tensor,
    pub y_noisy: Tensor,
    pub y_tau: Tensor,
    pub f_target: Tensor,
}

impl FlowSample {
    /// Builds the sample at a given `tau` from explicit clean and noise fields.
    pub fn at(y_clean: Tensor, y_noisy: Tensor, tau: f64) -> Result<Self> {
        if y_clean.shape() != y_noisy.shape() {
            return Err(Error::Dimension(format!(
                "clean {:?} vs noise {:?}",
                y_clean.shape(),
                y_noisy.shape()
            )));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Domain(format!("tau {tau} outside [0, 1]")));
        }
        let y_tau = Tensor::from_fn(y_clean.shape(), |i| {
            let (c, n) = (y_clean.data()[i] as f64, y_noisy.data()[i] as f64);
            ((1.0 - tau) * c + tau * n) as f32
        });
        let f_target = Tensor::from_fn(y_clean.shape(), |i| y_noisy.data()[i] - y_clean.data()[i]);
        Ok(Self {
            tau,
            y_clean,
            y_noisy,
            y_tau,
            f_target,
        })
    }
}

/// Draws τ ~ U[0, 1) and a standard normal noise field of the same shape.
pub fn make_training_sample(y_clean: &Tensor, rng: &mut SeededStream) -> Result<FlowSample> {
    if !y_clean.all_finite() {
        return Err(Error::NonFinite("clean fields".into()));
    }
    let tau = rng.uniform();
    let noise = rng.normal_tensor(y_clean.shape());
    FlowSample::at(y_clean.clone(), noise, tau)
}

/// Mean squared error between the predicted and target velocity.
pub fn loss(pred: &Tensor, sample: &FlowSample) -> Result<f32> {
    kernels::mse(pred, &sample.f_target)
}

/// Integrates one realization for the N×d normalized cloud `coords`.
pub fn sample<N: FieldNetwork + ?Sized>(
    net: &N,
    coords: &Tensor,
    n_steps: usize,
    embedding: &TimeEmbedding,
    rng: &mut SeededStream,
) -> Result<Tensor> {
    let mut out = sample_many(net, coords, 1, n_steps, embedding, rng)?;
    Ok(out.remove(0))
}

/// Integrates `n_samples` realizations, several per network call. The initial
/// noise of each chunk is drawn from `rng` before its integration starts.
pub fn sample_many<N: FieldNetwork + ?Sized>(
    net: &N,
    coords: &Tensor,
    n_samples: usize,
    n_steps: usize,
    embedding: &TimeEmbedding,
    rng: &mut SeededStream,
) -> Result<Vec<Tensor>> {
    if n_steps == 0 {
        return Err(Error::Config("flow-matching sampler needs at least one step".into()));
    }
    let fields = generator::sampler_field_dims(net, ModelKind::FlowMatching, coords, embedding)?;
    let n = coords.shape()[0];
    let dt = 1.0 / n_steps as f64;
    let mut out = Vec::with_capacity(n_samples);
    for k in generator::chunk_sizes(n, n_samples) {
        let mut y = generator::normal_state(rng, k * n * fields);
        for step in 0..n_steps {
            let tau = 1.0 - step as f64 * dt;
            let pred = generator::predict_states(net, coords, &y, k, fields, tau, embedding)?;
            for (s, &f) in y.iter_mut().zip(pred.data()) {
                *s -= dt * f as f64;
            }
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::SamplingDiverged { step });
            }
        }
        out.extend(generator::unstack_state(&y, n, fields)?);
    }
    Ok(out)
}

/// Flow-matching surrogate bound to a trained network.
#[derive(Debug, Clone)]
pub struct FlowMatchingSampler<N> {
    pub network: N,
    pub n_steps: usize,
    pub embedding: TimeEmbedding,
}

impl<N: FieldNetwork> FieldGenerator for FlowMatchingSampler<N> {
    fn is_deterministic(&self) -> bool {
        false
    }

    fn generate(&self, coords: &Tensor, n_samples: usize, rng: &mut SeededStream) -> Result<Vec<Tensor>> {
        sample_many(&self.network, coords, n_samples, self.n_steps, &self.embedding, rng)
    }
}
