//! Segmentation-branch PointNet shared by all three models.
//!
//! ```text
//! input ─ local MLP (128,128) ─┬─ global MLP (128,256,2048) ─ max-pool ─┐
//!                              └──────────── concat [local | global] ◄──┘   (N × 2176)
//!                                  ─ decoder MLP (1024,512,256,256) ─ head (n_fields)
//! ```
//!
//! Every hidden layer is `linear → ReLU → batch norm`; the head is linear,
//! followed by a sigmoid for the regression model only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, NormMode};
use crate::rng::SeededStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "fm")]
    FlowMatching,
    #[serde(rename = "ddpm")]
    Diffusion,
    #[serde(rename = "baseline")]
    Baseline,
}

impl ModelKind {
    pub fn is_generative(self) -> bool {
        !matches!(self, ModelKind::Baseline)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ModelKind::FlowMatching => "fm",
            ModelKind::Diffusion => "ddpm",
            ModelKind::Baseline => "baseline",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ModelKind::FlowMatching => 0,
            ModelKind::Diffusion => 1,
            ModelKind::Baseline => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::FlowMatching),
            1 => Some(ModelKind::Diffusion),
            2 => Some(ModelKind::Baseline),
            _ => None,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fm" | "flow_matching" => Ok(ModelKind::FlowMatching),
            "ddpm" | "diffusion" => Ok(ModelKind::Diffusion),
            "baseline" => Ok(ModelKind::Baseline),
            other => Err(Error::Config(format!("unknown model kind {other:?} (fm|ddpm|baseline)"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Hidden-layer widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Per-point layers whose last output is concatenated with the global feature.
    pub local: Vec<usize>,
    /// Per-point layers feeding the max-pool; the last width is the global feature size.
    pub global: Vec<usize>,
    /// Hidden layers after the concatenation.
    pub decoder: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            local: vec![128, 128],
            global: vec![128, 256, 2048],
            decoder: vec![1024, 512, 256, 256],
        }
    }
}

impl Architecture {
    /// Every hidden width divided by `divisor` (rounded up). Used to build
    /// small networks for gradient checks and quick experiments.
    pub fn with_width_divisor(&self, divisor: usize) -> Self {
        let scale = |v: &Vec<usize>| v.iter().map(|w| w.div_ceil(divisor).max(1)).collect();
        Self {
            local: scale(&self.local),
            global: scale(&self.global),
            decoder: scale(&self.decoder),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.local.is_empty() || self.global.is_empty() || self.decoder.is_empty() {
            return Err(Error::Config("every layer group needs at least one layer".into()));
        }
        if self.local.iter().chain(&self.global).chain(&self.decoder).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Width of the per-point representation after concatenation.
    pub fn concat_width(&self) -> usize {
        self.local.last().unwrap() + self.global.last().unwrap()
    }

    /// `(c_in, c_out, batch_norm)` per layer, in evaluation order.
    pub fn layer_shapes(&self, input_channels: usize, output_channels: usize) -> Vec<(usize, usize, bool)> {
        let mut shapes = Vec::new();
        let mut c = input_channels;
        for &w in self.local.iter().chain(&self.global) {
            shapes.push((c, w, true));
            c = w;
        }
        c = self.concat_width();
        for &w in &self.decoder {
            shapes.push((c, w, true));
            c = w;
        }
        shapes.push((c, output_channels, false));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlock {
    pub weight: Tensor,
    pub bias: Tensor,
    pub norm: Option<BatchNormParams>,
}

impl LayerBlock {
    pub fn in_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn trainable_count(&self) -> usize {
        let bn = self.norm.as_ref().map_or(0, |n| n.scale.numel() + n.shift.numel());
        self.weight.numel() + self.bias.numel() + bn
    }
}

/// Weights of one PointNet instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub coord_dims: usize,
    pub embed_dims: usize,
    pub field_dims: usize,
    pub arch: Architecture,
    pub blocks: Vec<LayerBlock>,
}

/// Channel count of the network input for a model kind.
pub fn input_channels(kind: ModelKind, coord_dims: usize, embed_dims: usize, field_dims: usize) -> usize {
    if kind.is_generative() {
        coord_dims + embed_dims + field_dims
    } else {
        coord_dims
    }
}

/// Builds the reference-width network.
pub fn build(kind: ModelKind, coord_dims: usize, embed_dims: usize, field_dims: usize, seed: u64) -> Result<ModelParams> {
    build_with(&Architecture::default(), kind, coord_dims, embed_dims, field_dims, seed)
}

pub fn build_with(
    arch: &Architecture,
    kind: ModelKind,
    coord_dims: usize,
    embed_dims: usize,
    field_dims: usize,
    seed: u64,
) -> Result<ModelParams> {
    arch.validate()?;
    if coord_dims == 0 || field_dims == 0 {
        return Err(Error::Config("coordinate and field dimensions must be positive".into()));
    }
    let embed_dims = if kind.is_generative() {
        if embed_dims < 2 || embed_dims % 2 != 0 {
            return Err(Error::Config(format!("time embedding size {embed_dims} must be even and >= 2")));
        }
        embed_dims
    } else {
        0
    };
    let mut rng = SeededStream::new(seed);
    let c_in = input_channels(kind, coord_dims, embed_dims, field_dims);
    let blocks = arch
        .layer_shapes(c_in, field_dims)
        .into_iter()
        .map(|(ci, co, bn)| {
            // Fan-in uniform init: U(-1/sqrt(c_in), 1/sqrt(c_in)).
            let bound = (1.0 / ci as f64).sqrt();
            let weight = Tensor::from_fn(&[ci, co], |_| (bound * (2.0 * rng.uniform() - 1.0)) as f32);
            LayerBlock {
                weight,
                bias: Tensor::zeros(&[co]),
                norm: bn.then(|| BatchNormParams {
                    scale: Tensor::full(&[co], 1.0),
                    shift: Tensor::zeros(&[co]),
                    running_mean: Tensor::zeros(&[co]),
                    running_var: Tensor::full(&[co], 1.0),
                }),
            }
        })
        .collect();
    Ok(ModelParams {
        kind,
        coord_dims,
        embed_dims,
        field_dims,
        arch: arch.clone(),
        blocks,
    })
}

/// Trainable parameter count: weights, biases and batch-norm scale/shift.
/// Running statistics are not trainable.
pub fn count_parameters(params: &ModelParams) -> usize {
    params.blocks.iter().map(LayerBlock::trainable_count).sum()
}

/// Output of a forward pass recorded on a tape.
pub struct TapeForward {
    pub output: Var,
    /// Leaves for every trainable tensor, in [`ModelParams::trainable`] order.
    pub params: Vec<Var>,
}

impl ModelParams {
    pub fn input_channels(&self) -> usize {
        input_channels(self.kind, self.coord_dims, self.embed_dims, self.field_dims)
    }

    /// Trainable tensors in a fixed order: per block weight, bias, then
    /// batch-norm scale and shift when present.
    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.weight);
            out.push(&b.bias);
            if let Some(n) = &b.norm {
                out.push(&n.scale);
                out.push(&n.shift);
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
            if let Some(n) = &mut b.norm {
                out.push(&mut n.scale);
                out.push(&mut n.shift);
            }
        }
        out
    }

    fn n_local(&self) -> usize {
        self.arch.local.len()
    }

    fn n_encoder(&self) -> usize {
        self.arch.local.len() + self.arch.global.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, n, c) = x.dims3()?;
        if c != self.input_channels() {
            return Err(Error::Dimension(format!(
                "{} model expects {} input channels, got {c}",
                self.kind,
                self.input_channels()
            )));
        }
        if n == 0 {
            return Err(Error::Dimension("point cloud with zero points".into()));
        }
        Ok(())
    }

    /// Inference-mode forward pass (batch norm uses running statistics).
    /// `x` is B×N×C_in; the result is B×N×n_fields.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let hidden = |block: &LayerBlock, h: Tensor| -> Result<Tensor> {
            let norm = block.norm.as_ref().expect("hidden layers carry batch norm");
            kernels::batch_norm_infer(&h, &norm.scale, &norm.shift, &norm.running_mean, &norm.running_var)
        };
        let mut h = x.clone();
        for block in &self.blocks[..self.n_local()] {
            let z = kernels::relu(&kernels::linear_shared(&h, &block.weight, &block.bias)?);
            h = hidden(block, z)?;
        }
        let local = h.clone();
        for block in &self.blocks[self.n_local()..self.n_encoder()] {
            let z = kernels::relu(&kernels::linear_shared(&h, &block.weight, &block.bias)?);
            h = hidden(block, z)?;
        }
        let (global, _) = kernels::max_pool_points(&h)?;
        let decoder = &self.blocks[self.n_encoder()..self.blocks.len() - 1];
        for (i, block) in decoder.iter().enumerate() {
            let z = if i == 0 {
                kernels::linear_local_global(&local, &global, &block.weight, &block.bias)?
            } else {
                kernels::linear_shared(&h, &block.weight, &block.bias)?
            };
            h = hidden(block, kernels::relu(&z))?;
        }
        let head = self.blocks.last().expect("head layer");
        let out = kernels::linear_shared(&h, &head.weight, &head.bias)?;
        Ok(match self.kind {
            ModelKind::Baseline => kernels::sigmoid(&out),
            _ => out,
        })
    }

    /// Inference for a single N×C_in cloud.
    pub fn infer_cloud(&self, x: &Tensor) -> Result<Tensor> {
        let [n, c] = x.shape()[..] else {
            return Err(Error::Dimension(format!("expected N×C cloud, got {:?}", x.shape())));
        };
        let out = self.infer(&x.reshape(&[1, n, c])?)?;
        out.reshape(&[n, self.field_dims])
    }

    /// Forward pass recorded on `tape`. Every trainable tensor is copied onto
    /// the tape as a leaf. In [`NormMode::Train`] batch statistics normalize
    /// the activations and the running statistics are updated in place.
    pub fn forward_on_tape(&mut self, tape: &mut Tape, x: Var, mode: NormMode) -> Result<TapeForward> {
        self.check_input(tape.value(x))?;
        let mut params = Vec::new();
        let n_local = self.n_local();
        let n_encoder = self.n_encoder();
        let n_blocks = self.blocks.len();
        let mut h = x;
        let mut local = x;
        let mut global = x;
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let w = tape.leaf(block.weight.clone());
            let b = tape.leaf(block.bias.clone());
            params.push(w);
            params.push(b);
            let z = if i == n_encoder {
                tape.linear_local_global(local, global, w, b)?
            } else {
                tape.linear_shared(h, w, b)?
            };
            h = match &mut block.norm {
                Some(norm) => {
                    let a = tape.relu(z)?;
                    let scale = tape.leaf(norm.scale.clone());
                    let shift = tape.leaf(norm.shift.clone());
                    params.push(scale);
                    params.push(shift);
                    match mode {
                        NormMode::Train => {
                            let (y, stats) = tape.batch_norm_train(a, scale, shift)?;
                            kernels::update_running_stats(
                                &mut norm.running_mean,
                                &mut norm.running_var,
                                &stats.mean,
                                &stats.var,
                            );
                            y
                        }
                        NormMode::Infer => {
                            tape.batch_norm_infer(a, scale, shift, &norm.running_mean, &norm.running_var)?
                        }
                    }
                }
                None => z,
            };
            if i + 1 == n_local {
                local = h;
            }
            if i + 1 == n_encoder {
                global = tape.max_pool_points(h)?;
            }
            if i + 1 == n_blocks && self.kind == ModelKind::Baseline {
                h = tape.sigmoid(h)?;
            }
        }
        Ok(TapeForward { output: h, params })
    }
}

/// A network mapping B×N×C_in inputs to B×N×n_fields outputs; implemented by
/// [`ModelParams`] and by analytic stand-ins in tests.
pub trait FieldNetwork: Sync {
    fn input_channels(&self) -> usize;
    fn predict(&self, input: &Tensor) -> Result<Tensor>;

    /// The process this network was trained for, when known.
    fn model_kind(&self) -> Option<ModelKind> {
        None
    }
}

impl<T: FieldNetwork + ?Sized> FieldNetwork for &T {
    fn input_channels(&self) -> usize {
        (**self).input_channels()
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        (**self).predict(input)
    }

    fn model_kind(&self) -> Option<ModelKind> {
        (**self).model_kind()
    }
}

impl FieldNetwork for ModelParams {
    fn input_channels(&self) -> usize {
        ModelParams::input_channels(self)
    }

    fn model_kind(&self) -> Option<ModelKind> {
        Some(self.kind)
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.infer(input)
    }
}
