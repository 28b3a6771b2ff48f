//! Sinusoidal time embeddings and assembly of the network input.
//!
//! Input channels are laid out `[coordinates | time embedding | field state]`.
//! The embedding interleaves sine/cosine pairs per frequency:
//! `[sin(ω₁t), cos(ω₁t), sin(ω₂t), cos(ω₂t), …]` with
//! `ω_k = 10^(-4·(k-1)/(d/2-1))`, so `ω₁ = 1` and the last frequency is `10⁻⁴`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default embedding width.
pub const DEFAULT_EMBED_DIMS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeEmbedding {
    dims: usize,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        Self { dims: DEFAULT_EMBED_DIMS }
    }
}

impl TimeEmbedding {
    /// Decimal exponent of the longest period (10⁴).
    const PERIOD_EXPONENT: f64 = 4.0;

    pub fn new(dims: usize) -> Result<Self> {
        if dims < 2 || dims % 2 != 0 {
            return Err(Error::Config(format!("time embedding size {dims} must be even and >= 2")));
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Angular frequencies `ω_1 … ω_{d/2}`, strictly decreasing from 1.
    pub fn frequencies(&self) -> Vec<f64> {
        let half = self.dims / 2;
        if half == 1 {
            return vec![1.0];
        }
        (0..half)
            .map(|k| 10f64.powf(-Self::PERIOD_EXPONENT * k as f64 / (half - 1) as f64))
            .collect()
    }

    pub fn embed(&self, t: f64) -> Vec<f32> {
        self.frequencies()
            .into_iter()
            .flat_map(|w| {
                let phase = w * t;
                [phase.sin() as f32, phase.cos() as f32]
            })
            .collect()
    }
}

/// Builds the N×(d + d_emb + n_fields) input of one cloud: coordinates, the
/// time embedding repeated on every row, and the current field state.
pub fn assemble_input(coords: &Tensor, state: &Tensor, t: f64, embedding: &TimeEmbedding) -> Result<Tensor> {
    let [n, d] = coords.shape()[..] else {
        return Err(Error::Dimension(format!("coordinates must be N×d, got {:?}", coords.shape())));
    };
    let [ns, f] = state.shape()[..] else {
        return Err(Error::Dimension(format!("field state must be N×n_fields, got {:?}", state.shape())));
    };
    if ns != n {
        return Err(Error::Dimension(format!("{n} coordinates vs {ns} field rows")));
    }
    let emb = embedding.embed(t);
    let width = d + emb.len() + f;
    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        data.extend_from_slice(&coords.data()[i * d..(i + 1) * d]);
        data.extend_from_slice(&emb);
        data.extend_from_slice(&state.data()[i * f..(i + 1) * f]);
    }
    Tensor::new(&[n, width], data)
}

/// Stacks per-cloud inputs sharing `coords` into a B×N×C batch, one
/// `(state, t)` pair per batch entry.
pub fn assemble_batch(coords: &Tensor, states: &[Tensor], times: &[f64], embedding: &TimeEmbedding) -> Result<Tensor> {
    if states.len() != times.len() {
        return Err(Error::Dimension("one time value per batch entry is required".into()));
    }
    let items = states
        .iter()
        .zip(times)
        .map(|(s, &t)| assemble_input(coords, s, t, embedding))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&items)
}
