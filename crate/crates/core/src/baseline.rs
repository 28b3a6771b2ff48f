//! Deterministic regression: coordinates in, normalized fields out through a
//! sigmoid head.

use crate::error::{Error, Result};
use crate::generator::FieldGenerator;
use crate::kernels;
use crate::pointnet::{ModelKind, ModelParams};
use crate::rng::SeededStream;
use crate::tensor::Tensor;

/// Mean squared error between predicted and true normalized fields.
pub fn loss(pred: &Tensor, truth: &Tensor) -> Result<f32> {
    kernels::mse(pred, truth)
}

/// Inference-mode prediction for one N×d cloud. Every output lies in (0, 1).
pub fn predict(params: &ModelParams, coords: &Tensor) -> Result<Tensor> {
    if params.kind != ModelKind::Baseline {
        return Err(Error::Config(format!("predict expects a baseline model, got {}", params.kind)));
    }
    params.infer_cloud(coords)
}

/// Baseline surrogate; every realization is the same deterministic prediction.
#[derive(Debug, Clone)]
pub struct BaselinePredictor<'a> {
    pub params: &'a ModelParams,
}

impl FieldGenerator for BaselinePredictor<'_> {
    fn is_deterministic(&self) -> bool {
        true
    }

    fn generate(&self, coords: &Tensor, n_samples: usize, _rng: &mut SeededStream) -> Result<Vec<Tensor>> {
        let y = predict(self.params, coords)?;
        Ok(vec![y; n_samples])
    }
}
