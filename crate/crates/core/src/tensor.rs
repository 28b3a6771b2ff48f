//! Dense row-major `f32` tensors of rank at most three.
//!
//! Rank-3 tensors are laid out batch × points × channels. Rank 0 is a scalar.

use crate::error::{dim_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub const MAX_RANK: usize = 3;

    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.len() > Self::MAX_RANK {
            return Err(dim_err(format!("rank {} exceeds {}", shape.len(), Self::MAX_RANK)));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(dim_err(format!(
                "shape {shape:?} holds {numel} entries but {} were given",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        assert!(shape.len() <= Self::MAX_RANK, "rank {} exceeds 3", shape.len());
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Value of a rank-0 (or single-entry) tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Size of the last axis.
    pub fn channels(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows once every axis but the last is flattened.
    pub fn rows(&self) -> usize {
        let c = self.channels();
        if c == 0 {
            self.shape[..self.shape.len().saturating_sub(1)].iter().product()
        } else {
            self.data.len() / c
        }
    }

    /// `(batch, points, channels)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [b, n, c] => Ok((b, n, c)),
            _ => Err(dim_err(format!("expected rank-3 tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Stacks equally-shaped `N×C` tensors into `B×N×C`.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| dim_err("cannot stack zero tensors"))?;
        if first.rank() != 2 {
            return Err(dim_err(format!("stack expects rank-2 items, got {:?}", first.shape)));
        }
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(dim_err(format!("stack: {:?} vs {:?}", t.shape, first.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        Tensor::new(&[items.len(), first.shape[0], first.shape[1]], data)
    }

    /// Item `b` of a `B×N×C` tensor as an `N×C` tensor.
    pub fn batch_item(&self, b: usize) -> Result<Tensor> {
        let (bs, n, c) = self.dims3()?;
        if b >= bs {
            return Err(dim_err(format!("batch index {b} out of range {bs}")));
        }
        Tensor::new(&[n, c], self.data[b * n * c..(b + 1) * n * c].to_vec())
    }

    /// Reorders the point axis of an `N×C` or `B×N×C` tensor: row `i` of the
    /// result is row `perm[i]` of `self`.
    pub fn permute_points(&self, perm: &[usize]) -> Result<Tensor> {
        let (b, n, c) = match self.shape[..] {
            [n, c] => (1, n, c),
            [b, n, c] => (b, n, c),
            _ => return Err(dim_err("permute_points expects rank 2 or 3")),
        };
        if perm.len() != n {
            return Err(dim_err(format!("permutation of length {} for {n} points", perm.len())));
        }
        let mut out = Vec::with_capacity(self.data.len());
        for bi in 0..b {
            let base = bi * n * c;
            for &p in perm {
                if p >= n {
                    return Err(dim_err(format!("permutation index {p} out of range")));
                }
                out.extend_from_slice(&self.data[base + p * c..base + (p + 1) * c]);
            }
        }
        Tensor::new(&self.shape, out)
    }
}
