//! Common interface of the three surrogates: given normalized coordinates,
//! produce normalized field realizations.

use crate::conditioning::{assemble_batch, TimeEmbedding};
use crate::error::{Error, Result};
use crate::pointnet::{FieldNetwork, ModelKind};
use crate::rng::SeededStream;
use crate::tensor::Tensor;

/// Upper bound on `samples × points` pushed through the network at once.
pub const MAX_BATCH_POINTS: usize = 8192;

pub trait FieldGenerator: Sync {
    /// `true` when every call returns the same fields regardless of the RNG.
    fn is_deterministic(&self) -> bool;

    /// Draws `n_samples` normalized N×n_fields realizations for one N×d cloud.
    fn generate(&self, coords: &Tensor, n_samples: usize, rng: &mut SeededStream) -> Result<Vec<Tensor>>;
}

/// Splits `n_samples` into consecutive chunks that respect [`MAX_BATCH_POINTS`].
pub(crate) fn chunk_sizes(n_points: usize, n_samples: usize) -> Vec<usize> {
    let per = (MAX_BATCH_POINTS / n_points.max(1)).max(1);
    let mut out = Vec::new();
    let mut left = n_samples;
    while left > 0 {
        let k = left.min(per);
        out.push(k);
        left -= k;
    }
    out
}

/// Checks that `net` is usable as a `kind` sampler on `coords` and returns the
/// number of field channels.
pub(crate) fn sampler_field_dims<N: FieldNetwork + ?Sized>(
    net: &N,
    kind: ModelKind,
    coords: &Tensor,
    embedding: &TimeEmbedding,
) -> Result<usize> {
    if let Some(k) = net.model_kind() {
        if k != kind {
            return Err(Error::Config(format!("a {k} network cannot drive the {kind} sampler")));
        }
    }
    let [_, d] = coords.shape()[..] else {
        return Err(Error::Dimension(format!("coordinates must be N×d, got {:?}", coords.shape())));
    };
    let used = d + embedding.dims();
    match net.input_channels().checked_sub(used) {
        Some(f) if f > 0 => Ok(f),
        _ => Err(Error::Dimension(format!(
            "network takes {} channels but coordinates and embedding already use {used}",
            net.input_channels()
        ))),
    }
}

/// Draws `len` standard normals rounded to single precision.
pub(crate) fn normal_state(rng: &mut SeededStream, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.normal() as f32 as f64).collect()
}

/// Evaluates `net` on `k` stacked states sharing `coords` and time `t`.
pub(crate) fn predict_states<N: FieldNetwork + ?Sized>(
    net: &N,
    coords: &Tensor,
    state: &[f64],
    k: usize,
    fields: usize,
    t: f64,
    embedding: &TimeEmbedding,
) -> Result<Tensor> {
    let n = coords.shape()[0];
    let states = state
        .chunks(n * fields)
        .map(|c| Tensor::new(&[n, fields], c.iter().map(|&v| v as f32).collect()))
        .collect::<Result<Vec<_>>>()?;
    let input = assemble_batch(coords, &states, &vec![t; k], embedding)?;
    let out = net.predict(&input)?;
    if out.shape() != [k, n, fields] {
        return Err(Error::Dimension(format!(
            "network returned {:?}, expected {:?}",
            out.shape(),
            [k, n, fields]
        )));
    }
    Ok(out)
}

/// Splits a flat `k × N × fields` state into single-precision tensors.
pub(crate) fn unstack_state(state: &[f64], n: usize, fields: usize) -> Result<Vec<Tensor>> {
    state
        .chunks(n * fields)
        .map(|c| Tensor::new(&[n, fields], c.iter().map(|&v| v as f32).collect()))
        .collect()
}
