//! Reverse-mode differentiation over a recorded tape.
//!
//! Every op appends a node holding its value and the ids of its inputs.
//! Inputs always precede outputs on the tape, so walking it backwards is a
//! topological order and each node is visited exactly once.

use crate::error::{dim_err, Error, Result};
use crate::kernels::{self, BatchNormCache};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Linear { input: Var, weight: Var, bias: Var },
    LocalGlobal { local: Var, global: Var, weight: Var, bias: Var },
    Relu(Var),
    Sigmoid(Var),
    BatchNormTrain { input: Var, scale: Var, shift: Var, cache: BatchNormCache },
    BatchNormInfer { input: Var, scale: Var, shift: Var, inv_std: Vec<f32>, normalized: Tensor },
    MaxPool { input: Var, argmax: Vec<u32> },
    RepeatPoints(Var),
    Concat { a: Var, b: Var, split: usize },
    Mul(Var, Var),
    Sum(Var),
    Mse { pred: Var, target: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear_shared",
            Op::LocalGlobal { .. } => "linear_local_global",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::BatchNormTrain { .. } | Op::BatchNormInfer { .. } => "batch_norm",
            Op::MaxPool { .. } => "max_pool_points",
            Op::RepeatPoints(_) => "repeat_points",
            Op::Concat { .. } => "concat_channels",
            Op::Mul(..) => "mul",
            Op::Sum(_) => "sum",
            Op::Mse { .. } => "mse",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Linear { input, weight, bias } => vec![input, weight, bias],
            Op::LocalGlobal { local, global, weight, bias } => vec![local, global, weight, bias],
            Op::Relu(a) | Op::Sigmoid(a) | Op::RepeatPoints(a) | Op::Sum(a) => vec![a],
            Op::BatchNormTrain { input, scale, shift, .. } | Op::BatchNormInfer { input, scale, shift, .. } => {
                vec![input, scale, shift]
            }
            Op::MaxPool { input, .. } => vec![input],
            Op::Concat { a, b, .. } | Op::Mul(a, b) => vec![a, b],
            Op::Mse { pred, target } => vec![pred, target],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch-norm node.
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node so the tape can record a fresh graph.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// A differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }

    pub fn linear_shared(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = kernels::linear_shared(self.value(input), self.value(weight), self.value(bias))?;
        self.push(out, Op::Linear { input, weight, bias })
    }

    /// Shared layer over `[local | global repeated over points]`; see
    /// [`kernels::linear_local_global`].
    pub fn linear_local_global(&mut self, local: Var, global: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = kernels::linear_local_global(
            self.value(local),
            self.value(global),
            self.value(weight),
            self.value(bias),
        )?;
        self.push(out, Op::LocalGlobal { local, global, weight, bias })
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = kernels::relu(self.value(input));
        self.push(out, Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let out = kernels::sigmoid(self.value(input));
        self.push(out, Op::Sigmoid(input))
    }

    /// Training-mode batch norm. The caller folds the returned batch
    /// statistics into its running averages.
    pub fn batch_norm_train(&mut self, input: Var, scale: Var, shift: Var) -> Result<(Var, BatchStats)> {
        let (out, cache) = kernels::batch_norm_train(self.value(input), self.value(scale), self.value(shift))?;
        let stats = BatchStats {
            mean: cache.batch_mean.clone(),
            var: cache.batch_var.clone(),
        };
        let v = self.push(out, Op::BatchNormTrain { input, scale, shift, cache })?;
        Ok((v, stats))
    }

    pub fn batch_norm_infer(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        running_mean: &Tensor,
        running_var: &Tensor,
    ) -> Result<Var> {
        let x = self.value(input);
        let out = kernels::batch_norm_infer(x, self.value(scale), self.value(shift), running_mean, running_var)?;
        let inv_std = kernels::running_inv_std(running_var);
        let c = x.channels();
        let normalized = Tensor::new(
            x.shape(),
            x.data()
                .iter()
                .enumerate()
                .map(|(i, &v)| (v - running_mean.data()[i % c]) * inv_std[i % c])
                .collect(),
        )?;
        self.push(out, Op::BatchNormInfer { input, scale, shift, inv_std, normalized })
    }

    pub fn max_pool_points(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = kernels::max_pool_points(self.value(input))?;
        self.push(out, Op::MaxPool { input, argmax })
    }

    pub fn repeat_points(&mut self, input: Var, n: usize) -> Result<Var> {
        let out = kernels::repeat_points(self.value(input), n)?;
        self.push(out, Op::RepeatPoints(input))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let split = self.value(a).channels();
        let out = kernels::concat_channels(self.value(a), self.value(b))?;
        self.push(out, Op::Concat { a, b, split })
    }

    /// Elementwise product of equally-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(dim_err(format!("mul: {:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.push(out, Op::Mul(a, b))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        self.push(Tensor::scalar(s as f32), Op::Sum(a))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let l = kernels::mse(self.value(pred), self.value(target))?;
        self.push(Tensor::scalar(l), Op::Mse { pred, target })
    }

    /// ReLU sign masks and max-pool winners of every recorded node. Two
    /// forward passes with equal patterns lie on the same smooth piece of
    /// the network function.
    pub fn activation_pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(input) => {
                    out.extend(self.nodes[input.0].value.data().iter().map(|&v| u32::from(v > 0.0)))
                }
                Op::MaxPool { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Propagates d(loss)/d(node) to every leaf created with [`Tape::leaf`].
    /// May be called once per recorded graph; call [`Tape::reset`] before
    /// recording another.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Autodiff("backward already ran on this tape; reset it first".into()));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.backward_done = true;
        let seed_shape = self.nodes[loss.0].value.shape().to_vec();
        self.grads[loss.0] = Some(Tensor::full(&seed_shape, 1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            if self.nodes[i].op.inputs().iter().any(|v| v.0 >= i) {
                return Err(Error::Autodiff(format!("node {i} consumes a later node")));
            }
            for (var, grad) in self.local_grads(i, &g)? {
                debug_assert_eq!(grad.shape(), self.nodes[var.0].value.shape());
                self.accumulate(var, grad);
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::Linear { input, weight, bias } => {
                let grads = kernels::linear_shared_backward(
                    self.value(input),
                    self.value(weight),
                    g,
                    self.needs(input),
                )?;
                if let Some(d) = grads.input {
                    out.push((input, d));
                }
                out.push((weight, grads.weight));
                out.push((bias, grads.bias));
            }
            &Op::LocalGlobal { local, global, weight, bias } => {
                let grads = kernels::linear_local_global_backward(
                    self.value(local),
                    self.value(global),
                    self.value(weight),
                    g,
                )?;
                out.push((local, grads.local));
                out.push((global, grads.global));
                out.push((weight, grads.weight));
                out.push((bias, grads.bias));
            }
            &Op::Relu(input) => out.push((input, kernels::relu_backward(self.value(input), g))),
            &Op::Sigmoid(input) => out.push((input, kernels::sigmoid_backward(&node.value, g))),
            Op::BatchNormTrain { input, scale, shift, cache } => {
                let grads = kernels::batch_norm_train_backward(cache, self.value(*scale), g)?;
                out.push((*input, grads.input));
                out.push((*scale, grads.scale));
                out.push((*shift, grads.shift));
            }
            Op::BatchNormInfer { input, scale, shift, inv_std, normalized } => {
                let c = inv_std.len();
                let sc = self.value(*scale).data();
                let mut d_scale = vec![0.0f64; c];
                let mut d_shift = vec![0.0f64; c];
                let mut d_in = Vec::with_capacity(g.numel());
                for (k, (&gv, &xh)) in g.data().iter().zip(normalized.data()).enumerate() {
                    let ch = k % c;
                    d_in.push(gv * sc[ch] * inv_std[ch]);
                    d_scale[ch] += (gv * xh) as f64;
                    d_shift[ch] += gv as f64;
                }
                let to32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<_>>();
                out.push((*input, Tensor::new(g.shape(), d_in)?));
                out.push((*scale, Tensor::new(&[c], to32(d_scale))?));
                out.push((*shift, Tensor::new(&[c], to32(d_shift))?));
            }
            Op::MaxPool { input, argmax } => {
                let d = kernels::max_pool_points_backward(self.value(*input).shape(), argmax, g)?;
                out.push((*input, d));
            }
            &Op::RepeatPoints(input) => out.push((input, kernels::repeat_points_backward(g)?)),
            &Op::Concat { a, b, split } => {
                let (ga, gb) = kernels::split_channels(g, split)?;
                out.push((a, ga));
                out.push((b, gb));
            }
            &Op::Mul(a, b) => {
                let (x, y) = (self.value(a), self.value(b));
                let ga = x.data().iter().zip(y.data()).zip(g.data()).map(|((_, q), d)| q * d).collect();
                let gb = x.data().iter().zip(y.data()).zip(g.data()).map(|((p, _), d)| p * d).collect();
                out.push((a, Tensor::new(x.shape(), ga)?));
                out.push((b, Tensor::new(y.shape(), gb)?));
            }
            &Op::Sum(a) => {
                let x = self.value(a);
                out.push((a, Tensor::full(x.shape(), g.item())));
            }
            &Op::Mse { pred, target } => {
                let (p, t) = (self.value(pred), self.value(target));
                let dp = kernels::mse_backward(p, t, g.item());
                if self.needs(target) {
                    let dt = Tensor::new(t.shape(), dp.data().iter().map(|v| -v).collect())?;
                    out.push((target, dt));
                }
                out.push((pred, dp));
            }
        }
        Ok(out.into_iter().filter(|(v, _)| self.needs(*v)).collect())
    }
}
