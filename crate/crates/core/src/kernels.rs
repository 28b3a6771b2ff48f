//! Forward and backward kernels for the PointNet op set.
//!
//! These are plain functions over [`Tensor`]s with no graph bookkeeping; the
//! [`crate::tape`] module records them for reverse-mode differentiation and
//! inference calls them directly. Reductions accumulate in `f64` in a fixed
//! sequential order, so results are reproducible bit for bit.

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Variance floor added inside batch normalization.
pub const BN_EPS: f32 = 1e-5;
/// Weight of the previous running statistic in the batch-norm update.
pub const BN_MOMENTUM_KEEP: f32 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize by batch statistics and update the running statistics.
    Train,
    /// Normalize by the stored running statistics.
    Infer,
}

/// `c = a·b + beta·c` for row-major `c` of shape `m×n`; `a` and `b` are
/// addressed through explicit row/column strides so transposes are free.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (usize, usize),
    b: &[f32],
    b_strides: (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| (rows - 1) * rs + (cols - 1) * cs;
    assert!(last(m, k, a_strides) < a.len(), "gemm: lhs out of bounds");
    assert!(last(k, n, b_strides) < b.len(), "gemm: rhs out of bounds");
    // SAFETY: the asserts above bound every element the strides can address,
    // and `c` is an exclusively borrowed contiguous m×n buffer.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn out_shape(input: &Tensor, channels: usize) -> Vec<usize> {
    let mut s = input.shape().to_vec();
    *s.last_mut().expect("rank >= 1") = channels;
    s
}

fn check_linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    if input.rank() < 2 {
        return Err(dim_err(format!("linear input must have rank 2 or 3, got {:?}", input.shape())));
    }
    let [c_in, c_out] = weight.shape()[..] else {
        return Err(dim_err(format!("linear weight must be C_in×C_out, got {:?}", weight.shape())));
    };
    if input.channels() != c_in {
        return Err(dim_err(format!(
            "linear expects {c_in} input channels, got {}",
            input.channels()
        )));
    }
    if bias.shape() != [c_out] {
        return Err(dim_err(format!("bias shape {:?} does not match {c_out} outputs", bias.shape())));
    }
    Ok((input.rows(), c_in, c_out))
}

/// Shared (point-wise) affine layer: `out[.., n, :] = input[.., n, :]·weight + bias`.
pub fn linear_shared(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (rows, c_in, c_out) = check_linear(input, weight, bias)?;
    let mut out = Vec::with_capacity(rows * c_out);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    gemm(rows, c_in, c_out, input.data(), (c_in, 1), weight.data(), (c_out, 1), 1.0, &mut out);
    Tensor::new(&out_shape(input, c_out), out)
}

pub struct LinearGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn linear_shared_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<LinearGrads> {
    let rows = input.rows();
    let c_in = input.channels();
    let c_out = weight.shape()[1];
    if grad_out.rows() != rows || grad_out.channels() != c_out {
        return Err(dim_err("linear backward: gradient shape mismatch"));
    }
    let mut d_weight = vec![0.0; c_in * c_out];
    gemm(c_in, rows, c_out, input.data(), (1, c_in), grad_out.data(), (c_out, 1), 0.0, &mut d_weight);
    let d_bias = column_sums(grad_out.data(), rows, c_out);
    let d_input = if want_input {
        let mut d = vec![0.0; rows * c_in];
        gemm(rows, c_out, c_in, grad_out.data(), (c_out, 1), weight.data(), (1, c_out), 0.0, &mut d);
        Some(Tensor::new(input.shape(), d)?)
    } else {
        None
    };
    Ok(LinearGrads {
        input: d_input,
        weight: Tensor::new(&[c_in, c_out], d_weight)?,
        bias: Tensor::new(&[c_out], d_bias)?,
    })
}

fn column_sums(data: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    debug_assert_eq!(data.len(), rows * cols);
    if cols == 0 {
        return Vec::new();
    }
    blocked_column_sums(data, cols, |v, _| v).into_iter().map(|v| v as f32).collect()
}

/// Shared affine layer applied to `concat_channels(local, repeat_points(global))`
/// without materializing the repeated global block: the global contribution
/// is computed once per cloud and added to every point.
///
/// `local`: B×N×C1, `global`: B×C2, `weight`: (C1+C2)×C_out.
pub fn linear_local_global(
    local: &Tensor,
    global: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    let (b, n, c1) = local.dims3()?;
    let [gb, c2] = global.shape()[..] else {
        return Err(dim_err(format!("global feature must be B×C, got {:?}", global.shape())));
    };
    if gb != b {
        return Err(dim_err(format!("global batch {gb} vs local batch {b}")));
    }
    let [w_in, c_out] = weight.shape()[..] else {
        return Err(dim_err("weight must be rank 2"));
    };
    if w_in != c1 + c2 || bias.shape() != [c_out] {
        return Err(dim_err(format!(
            "weight {:?} / bias {:?} incompatible with {c1}+{c2} input channels",
            weight.shape(),
            bias.shape()
        )));
    }
    let w = weight.data();
    let mut per_cloud = Vec::with_capacity(b * c_out);
    for _ in 0..b {
        per_cloud.extend_from_slice(bias.data());
    }
    gemm(b, c2, c_out, global.data(), (c2, 1), &w[c1 * c_out..], (c_out, 1), 1.0, &mut per_cloud);
    let mut out = Vec::with_capacity(b * n * c_out);
    for bi in 0..b {
        let row = &per_cloud[bi * c_out..(bi + 1) * c_out];
        for _ in 0..n {
            out.extend_from_slice(row);
        }
    }
    gemm(b * n, c1, c_out, local.data(), (c1, 1), &w[..c1 * c_out], (c_out, 1), 1.0, &mut out);
    Tensor::new(&[b, n, c_out], out)
}

pub struct LocalGlobalGrads {
    pub local: Tensor,
    pub global: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn linear_local_global_backward(
    local: &Tensor,
    global: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<LocalGlobalGrads> {
    let (b, n, c1) = local.dims3()?;
    let c2 = global.shape()[1];
    let c_out = weight.shape()[1];
    if grad_out.shape() != [b, n, c_out] {
        return Err(dim_err("local/global linear backward: gradient shape mismatch"));
    }
    let w = weight.data();
    let g = grad_out.data();

    // Per-cloud sums of the output gradient carry everything the global path needs.
    let mut g_sum = Vec::with_capacity(b * c_out);
    for bi in 0..b {
        g_sum.extend(column_sums(&g[bi * n * c_out..(bi + 1) * n * c_out], n, c_out));
    }

    let mut d_local = vec![0.0; b * n * c1];
    gemm(b * n, c_out, c1, g, (c_out, 1), &w[..c1 * c_out], (1, c_out), 0.0, &mut d_local);
    let mut d_global = vec![0.0; b * c2];
    gemm(b, c_out, c2, &g_sum, (c_out, 1), &w[c1 * c_out..], (1, c_out), 0.0, &mut d_global);

    let mut d_weight = vec![0.0; (c1 + c2) * c_out];
    let (d_w_local, d_w_global) = d_weight.split_at_mut(c1 * c_out);
    gemm(c1, b * n, c_out, local.data(), (1, c1), g, (c_out, 1), 0.0, d_w_local);
    gemm(c2, b, c_out, global.data(), (1, c2), &g_sum, (c_out, 1), 0.0, d_w_global);
    let d_bias = column_sums(&g_sum, b, c_out);

    Ok(LocalGlobalGrads {
        local: Tensor::new(local.shape(), d_local)?,
        global: Tensor::new(global.shape(), d_global)?,
        weight: Tensor::new(weight.shape(), d_weight)?,
        bias: Tensor::new(&[c_out], d_bias)?,
    })
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::new(input.shape(), data).expect("shape preserved")
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data).expect("shape preserved")
}

fn sigmoid_scalar(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::new(input.shape(), data).expect("shape preserved")
}

pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor::new(output.shape(), data).expect("shape preserved")
}

/// Rows summed in single precision before each flush into the f64 totals.
const SUM_BLOCK_ROWS: usize = 32;

/// Per-channel sums of `f(value, channel)` over the rows of a row-major
/// `rows × c` buffer, accumulated in short f32 blocks and then in f64.
fn blocked_column_sums(x: &[f32], c: usize, f: impl Fn(f32, usize) -> f32) -> Vec<f64> {
    let mut total = vec![0.0f64; c];
    let mut part = vec![0.0f32; c];
    for block in x.chunks(c * SUM_BLOCK_ROWS) {
        part.fill(0.0);
        for row in block.chunks_exact(c) {
            for (ch, (p, &v)) in part.iter_mut().zip(row).enumerate() {
                *p += f(v, ch);
            }
        }
        for (t, &p) in total.iter_mut().zip(&part) {
            *t += p as f64;
        }
    }
    total
}

/// Per-channel sums of `a · b`, blocked like [`blocked_column_sums`].
fn blocked_pair_sums(a: &[f32], b: &[f32], c: usize) -> Vec<f64> {
    let mut total = vec![0.0f64; c];
    let mut part = vec![0.0f32; c];
    for (ba, bb) in a.chunks(c * SUM_BLOCK_ROWS).zip(b.chunks(c * SUM_BLOCK_ROWS)) {
        part.fill(0.0);
        for (ra, rb) in ba.chunks_exact(c).zip(bb.chunks_exact(c)) {
            for ((p, &x), &y) in part.iter_mut().zip(ra).zip(rb) {
                *p += x * y;
            }
        }
        for (t, &p) in total.iter_mut().zip(&part) {
            *t += p as f64;
        }
    }
    total
}

/// Quantities kept from a training-mode batch-norm forward pass.
pub struct BatchNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f32>,
    pub batch_mean: Vec<f32>,
    pub batch_var: Vec<f32>,
}

fn check_bn(input: &Tensor, params: &[&Tensor]) -> Result<usize> {
    let c = input.channels();
    for p in params {
        if p.shape() != [c] {
            return Err(dim_err(format!(
                "batch-norm parameter of shape {:?} for {c} channels",
                p.shape()
            )));
        }
    }
    Ok(c)
}

/// Normalizes each channel by its population statistics over every
/// batch × point entry, then applies `scale` and `shift`.
pub fn batch_norm_train(input: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<(Tensor, BatchNormCache)> {
    let c = check_bn(input, &[scale, shift])?;
    let rows = input.rows();
    if rows == 0 {
        return Err(dim_err("batch norm over an empty batch"));
    }
    let x = input.data();
    let mean = blocked_column_sums(x, c, |v, _| v)
        .into_iter()
        .map(|s| s / rows as f64)
        .collect::<Vec<_>>();
    let mean32: Vec<f32> = mean.iter().map(|&m| m as f32).collect();
    let var: Vec<f64> = blocked_column_sums(x, c, |v, ch| {
        let d = v - mean32[ch];
        d * d
    })
    .into_iter()
    .map(|s| s / rows as f64)
    .collect();
    let inv_std: Vec<f32> = var.iter().map(|&v| (1.0 / (v + BN_EPS as f64).sqrt()) as f32).collect();
    let mut normalized = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    let (sc, sh) = (scale.data(), shift.data());
    for row in x.chunks_exact(c) {
        normalized.extend(row.iter().zip(&mean32).zip(&inv_std).map(|((&v, &m), &is)| (v - m) * is));
    }
    for row in normalized.chunks_exact(c) {
        out.extend(row.iter().zip(sc).zip(sh).map(|((&xh, &a), &b)| a * xh + b));
    }
    Ok((
        Tensor::new(input.shape(), out)?,
        BatchNormCache {
            normalized: Tensor::new(input.shape(), normalized)?,
            inv_std,
            batch_mean: mean32,
            batch_var: var.iter().map(|&v| v as f32).collect(),
        },
    ))
}

pub struct BatchNormGrads {
    pub input: Tensor,
    pub scale: Tensor,
    pub shift: Tensor,
}

pub fn batch_norm_train_backward(
    cache: &BatchNormCache,
    scale: &Tensor,
    grad_out: &Tensor,
) -> Result<BatchNormGrads> {
    let xh = cache.normalized.data();
    let g = grad_out.data();
    let c = scale.numel();
    let rows = grad_out.rows();
    if xh.len() != g.len() {
        return Err(dim_err("batch-norm backward: gradient shape mismatch"));
    }
    let d_shift = blocked_column_sums(g, c, |v, _| v);
    let d_scale = blocked_pair_sums(g, xh, c);
    let m = rows as f32;
    let sc = scale.data();
    let coef: Vec<f32> = (0..c).map(|ch| sc[ch] * cache.inv_std[ch] / m).collect();
    let d_shift32: Vec<f32> = d_shift.iter().map(|&v| v as f32).collect();
    let d_scale32: Vec<f32> = d_scale.iter().map(|&v| v as f32).collect();
    let mut d_in = Vec::with_capacity(g.len());
    for (gr, xr) in g.chunks_exact(c).zip(xh.chunks_exact(c)) {
        d_in.extend((0..c).map(|ch| coef[ch] * (m * gr[ch] - d_shift32[ch] - xr[ch] * d_scale32[ch])));
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape(), d_in)?,
        scale: Tensor::new(&[c], d_scale32)?,
        shift: Tensor::new(&[c], d_shift32)?,
    })
}

/// Per-channel `inv_std` for inference-mode normalization.
pub fn running_inv_std(running_var: &Tensor) -> Vec<f32> {
    running_var
        .data()
        .iter()
        .map(|&v| (1.0 / (v as f64 + BN_EPS as f64).sqrt()) as f32)
        .collect()
}

pub fn batch_norm_infer(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
) -> Result<Tensor> {
    let c = check_bn(input, &[scale, shift, running_mean, running_var])?;
    let inv_std = running_inv_std(running_var);
    let (sc, sh, rm) = (scale.data(), shift.data(), running_mean.data());
    let mut data = Vec::with_capacity(input.numel());
    for row in input.data().chunks_exact(c.max(1)) {
        data.extend((0..c).map(|ch| sc[ch] * ((row[ch] - rm[ch]) * inv_std[ch]) + sh[ch]));
    }
    Tensor::new(input.shape(), data)
}

/// Exponential running-statistics update with keep factor [`BN_MOMENTUM_KEEP`].
pub fn update_running_stats(
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    batch_mean: &[f32],
    batch_var: &[f32],
) {
    let keep = BN_MOMENTUM_KEEP;
    for (r, &b) in running_mean.data_mut().iter_mut().zip(batch_mean) {
        *r = keep * *r + (1.0 - keep) * b;
    }
    for (r, &b) in running_var.data_mut().iter_mut().zip(batch_var) {
        *r = keep * *r + (1.0 - keep) * b;
    }
}

/// Batch normalization in either mode; training mode also updates the
/// running statistics in place.
pub fn batch_norm(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    mode: NormMode,
) -> Result<Tensor> {
    if running_var.data().iter().any(|&v| v < 0.0) {
        return Err(dim_err("running variance must be non-negative"));
    }
    match mode {
        NormMode::Train => {
            check_bn(input, &[running_mean, running_var])?;
            let (out, cache) = batch_norm_train(input, scale, shift)?;
            update_running_stats(running_mean, running_var, &cache.batch_mean, &cache.batch_var);
            Ok(out)
        }
        NormMode::Infer => batch_norm_infer(input, scale, shift, running_mean, running_var),
    }
}

/// Channel-wise maximum over the point axis of a B×N×C tensor. The returned
/// index map holds, for each `(b, c)`, the winning point; ties go to the
/// lowest index.
pub fn max_pool_points(input: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let (b, n, c) = input.dims3()?;
    if n == 0 {
        return Err(dim_err("max pool over zero points"));
    }
    let x = input.data();
    let mut pooled = Vec::with_capacity(b * c);
    let mut argmax = Vec::with_capacity(b * c);
    for bi in 0..b {
        let base = bi * n * c;
        let mut best: Vec<f32> = x[base..base + c].to_vec();
        let mut idx = vec![0u32; c];
        for p in 1..n {
            let row = &x[base + p * c..base + (p + 1) * c];
            for ch in 0..c {
                if row[ch] > best[ch] {
                    best[ch] = row[ch];
                    idx[ch] = p as u32;
                }
            }
        }
        pooled.extend(best);
        argmax.extend(idx);
    }
    Ok((Tensor::new(&[b, c], pooled)?, argmax))
}

pub fn max_pool_points_backward(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Result<Tensor> {
    let [b, n, c] = input_shape[..] else {
        return Err(dim_err("max pool backward expects a rank-3 input shape"));
    };
    if grad_out.shape() != [b, c] || argmax.len() != b * c {
        return Err(dim_err("max pool backward: gradient shape mismatch"));
    }
    let mut d = vec![0.0; b * n * c];
    let g = grad_out.data();
    for bi in 0..b {
        for ch in 0..c {
            let p = argmax[bi * c + ch] as usize;
            d[bi * n * c + p * c + ch] += g[bi * c + ch];
        }
    }
    Tensor::new(input_shape, d)
}

/// Repeats a B×C tensor across `n` points: B×N×C.
pub fn repeat_points(input: &Tensor, n: usize) -> Result<Tensor> {
    let [b, c] = input.shape()[..] else {
        return Err(dim_err(format!("repeat_points expects B×C, got {:?}", input.shape())));
    };
    let mut out = Vec::with_capacity(b * n * c);
    for row in input.data().chunks_exact(c.max(1)).take(b) {
        for _ in 0..n {
            out.extend_from_slice(row);
        }
    }
    Tensor::new(&[b, n, c], out)
}

pub fn repeat_points_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (b, n, c) = grad_out.dims3()?;
    let mut out = Vec::with_capacity(b * c);
    for bi in 0..b {
        out.extend(column_sums(&grad_out.data()[bi * n * c..(bi + 1) * n * c], n, c));
    }
    Tensor::new(&[b, c], out)
}

/// Channels of `a` followed by channels of `b`; all leading extents must match.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
        return Err(dim_err(format!("cannot concatenate {sa:?} with {sb:?}")));
    }
    let (ca, cb) = (a.channels(), b.channels());
    let rows = a.rows();
    let mut out = Vec::with_capacity(rows * (ca + cb));
    for r in 0..rows {
        out.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
        out.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
    }
    Tensor::new(&out_shape(a, ca + cb), out)
}

/// Inverse of [`concat_channels`]: the first `c1` channels and the rest.
pub fn split_channels(t: &Tensor, c1: usize) -> Result<(Tensor, Tensor)> {
    let c = t.channels();
    if c1 > c {
        return Err(dim_err(format!("split at {c1} of {c} channels")));
    }
    let c2 = c - c1;
    let rows = t.rows();
    let mut a = Vec::with_capacity(rows * c1);
    let mut b = Vec::with_capacity(rows * c2);
    for r in 0..rows {
        let row = &t.data()[r * c..(r + 1) * c];
        a.extend_from_slice(&row[..c1]);
        b.extend_from_slice(&row[c1..]);
    }
    Ok((Tensor::new(&out_shape(t, c1), a)?, Tensor::new(&out_shape(t, c2), b)?))
}

/// Mean of squared differences over every entry.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f32> {
    if pred.shape() != target.shape() {
        return Err(dim_err(format!("mse: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    if pred.numel() == 0 {
        return Err(dim_err("mse of empty tensors"));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            d * d
        })
        .sum();
    Ok((sum / pred.numel() as f64) as f32)
}

pub fn mse_backward(pred: &Tensor, target: &Tensor, grad: f32) -> Tensor {
    let k = 2.0 * grad / pred.numel() as f32;
    let data = pred.data().iter().zip(target.data()).map(|(&p, &t)| k * (p - t)).collect();
    Tensor::new(pred.shape(), data).expect("shape preserved")
}
