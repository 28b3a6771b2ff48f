#![allow(dead_code)]

use pfgn::kernels::{NormMode, BN_EPS};
use pfgn::pointnet::{build_with, Architecture, FieldNetwork, ModelKind, ModelParams};
use pfgn::{Result, SeededStream, Tape, Tensor, Var};

/// Finite-difference step along a ±1 probe direction.
pub const FD_STEP: f64 = 1e-6;
/// Probes whose reference derivative is smaller than this fraction of the
/// gradient norm are ill-conditioned and get redrawn.
pub const CONDITION_FLOOR: f64 = 1e-2;
const MAX_REDRAWS: usize = 200;

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

pub fn random_tensor(rng: &mut SeededStream, shape: &[usize]) -> Tensor {
    rng.normal_tensor(shape)
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Default)]
pub struct ProbeReport {
    pub probes: usize,
    pub redraws: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl ProbeReport {
    pub fn merge(&mut self, other: &ProbeReport) {
        self.probes += other.probes;
        self.redraws += other.redraws;
        if other.max_rel > self.max_rel {
            self.max_rel = other.max_rel;
            self.worst = other.worst.clone();
        }
    }
}

/// Compares `analytic` (the gradient of `f` at `x0`) with central differences
/// of `f` along `count` random ±1 directions. `f` returns the loss and an
/// activation pattern; probes whose stencil changes the pattern are redrawn.
pub fn directional_probes(
    label: &str,
    x0: &[f64],
    analytic: &[f64],
    f: &dyn Fn(&[f64]) -> (f64, Vec<u32>),
    count: usize,
    rng: &mut SeededStream,
) -> ProbeReport {
    assert_eq!(x0.len(), analytic.len(), "{label}: gradient length");
    let (_, base_pattern) = f(x0);
    let gnorm = norm2(analytic);
    let mut report = ProbeReport::default();
    while report.probes < count {
        assert!(report.redraws < MAX_REDRAWS, "{label}: too many redrawn probes");
        let v: Vec<f64> = (0..x0.len()).map(|_| if rng.below(2) == 0 { -1.0 } else { 1.0 }).collect();
        let shifted = |s: f64| -> Vec<f64> { x0.iter().zip(&v).map(|(x, d)| x + s * d).collect() };
        let (lp, pp) = f(&shifted(FD_STEP));
        let (lm, pm) = f(&shifted(-FD_STEP));
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let an: f64 = analytic.iter().zip(&v).map(|(g, d)| g * d).sum();
        if pp != base_pattern || pm != base_pattern || fd.abs() < CONDITION_FLOOR * gnorm {
            report.redraws += 1;
            continue;
        }
        let rel = (an - fd).abs() / an.abs().max(fd.abs());
        report.probes += 1;
        if rel > report.max_rel || report.worst.is_empty() {
            report.max_rel = report.max_rel.max(rel);
            report.worst = format!("{label}: analytic {an:.9e} vs fd {fd:.9e}");
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Double-precision reference operations.

pub fn ref_linear(x: &[f64], rows: usize, cin: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let cout = b.len();
    let mut out = vec![0.0; rows * cout];
    for r in 0..rows {
        for o in 0..cout {
            let mut s = b[o];
            for i in 0..cin {
                s += x[r * cin + i] * w[i * cout + o];
            }
            out[r * cout + o] = s;
        }
    }
    out
}

pub fn ref_relu(x: &[f64], pattern: &mut Vec<u32>) -> Vec<f64> {
    pattern.extend(x.iter().map(|&v| u32::from(v > 0.0)));
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn ref_sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
}

fn column_moments(x: &[f64], c: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / c;
    let mut mean = vec![0.0; c];
    for r in 0..rows {
        for j in 0..c {
            mean[j] += x[r * c + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; c];
    for r in 0..rows {
        for j in 0..c {
            var[j] += (x[r * c + j] - mean[j]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= rows as f64);
    (mean, var)
}

pub fn ref_bn_with(x: &[f64], mean: &[f64], var: &[f64], scale: &[f64], shift: &[f64]) -> Vec<f64> {
    let c = scale.len();
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let j = i % c;
            (v - mean[j]) / (var[j] + BN_EPS as f64).sqrt() * scale[j] + shift[j]
        })
        .collect()
}

pub fn ref_bn_train(x: &[f64], scale: &[f64], shift: &[f64]) -> Vec<f64> {
    let (mean, var) = column_moments(x, scale.len());
    ref_bn_with(x, &mean, &var, scale, shift)
}

/// Channel-wise max over points; ties go to the lowest index.
pub fn ref_max_pool(x: &[f64], b: usize, n: usize, c: usize, pattern: &mut Vec<u32>) -> Vec<f64> {
    let mut out = Vec::with_capacity(b * c);
    for bi in 0..b {
        for ch in 0..c {
            let mut best = 0;
            for p in 1..n {
                if x[(bi * n + p) * c + ch] > x[(bi * n + best) * c + ch] {
                    best = p;
                }
            }
            pattern.push(best as u32);
            out.push(x[(bi * n + best) * c + ch]);
        }
    }
    out
}

pub fn ref_repeat(g: &[f64], b: usize, n: usize, c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(b * n * c);
    for bi in 0..b {
        for _ in 0..n {
            out.extend_from_slice(&g[bi * c..(bi + 1) * c]);
        }
    }
    out
}

pub fn ref_concat(a: &[f64], ca: usize, bv: &[f64], cb: usize) -> Vec<f64> {
    let rows = a.len() / ca;
    let mut out = Vec::with_capacity(rows * (ca + cb));
    for r in 0..rows {
        out.extend_from_slice(&a[r * ca..(r + 1) * ca]);
        out.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
    }
    out
}

pub fn ref_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

// ---------------------------------------------------------------------------
// Double-precision reference PointNet (batch norm in training mode).

#[derive(Debug, Clone)]
pub struct RefModel {
    /// Trainable tensors in the order of `ModelParams::trainable`.
    pub tensors: Vec<Vec<f64>>,
    shapes: Vec<(usize, usize, bool)>,
    n_local: usize,
    n_encoder: usize,
    sigmoid: bool,
}

impl RefModel {
    pub fn from_params(p: &ModelParams) -> Self {
        RefModel {
            tensors: p.trainable().into_iter().map(to_f64).collect(),
            shapes: p.blocks.iter().map(|b| (b.in_channels(), b.out_channels(), b.norm.is_some())).collect(),
            n_local: p.arch.local.len(),
            n_encoder: p.arch.local.len() + p.arch.global.len(),
            sigmoid: p.kind == ModelKind::Baseline,
        }
    }

    /// B×N×C_in input to B×N×C_out output plus the activation pattern.
    pub fn forward(&self, x: &[f64], b: usize, n: usize) -> (Vec<f64>, Vec<u32>) {
        let mut pattern = Vec::new();
        let mut t = 0;
        let mut h = x.to_vec();
        let mut local = Vec::new();
        let mut global = Vec::new();
        let rows = b * n;
        for (i, &(cin, cout, bn)) in self.shapes.iter().enumerate() {
            let (w, bias) = (&self.tensors[t], &self.tensors[t + 1]);
            t += 2;
            let z = if i == self.n_encoder {
                let c_local = self.shapes[self.n_local - 1].1;
                let c_global = cin - c_local;
                let cat = ref_concat(&local, c_local, &ref_repeat(&global, b, n, c_global), c_global);
                ref_linear(&cat, rows, cin, w, bias)
            } else {
                ref_linear(&h, rows, cin, w, bias)
            };
            h = if bn {
                let a = ref_relu(&z, &mut pattern);
                let y = ref_bn_train(&a, &self.tensors[t], &self.tensors[t + 1]);
                t += 2;
                y
            } else {
                z
            };
            if i + 1 == self.n_local {
                local = h.clone();
            }
            if i + 1 == self.n_encoder {
                global = ref_max_pool(&h, b, n, cout, &mut pattern);
            }
        }
        if self.sigmoid {
            h = ref_sigmoid(&h);
        }
        (h, pattern)
    }
}

/// Tiny PointNet used for gradient checks: every width divided by 16.
pub fn tiny_model(kind: ModelKind, seed: u64) -> ModelParams {
    let arch = Architecture::default().with_width_divisor(16);
    build_with(&arch, kind, 2, 32, 3, seed).expect("tiny architecture")
}

/// Gradient check of the MSE loss of a full tiny model with respect to every
/// trainable tensor and to the input.
pub fn check_full_model(kind: ModelKind, n: usize, b: usize, probes_per_tensor: usize, seed: u64) -> ProbeReport {
    let mut rng = SeededStream::new(seed);
    let params = tiny_model(kind, seed);
    let c_in = params.input_channels();
    let x = random_tensor(&mut rng, &[b, n, c_in]);
    let target = random_tensor(&mut rng, &[b, n, 3]);

    let mut tape = Tape::new();
    let mut working = params.clone();
    let xv = tape.leaf(x.clone());
    let fwd = working.forward_on_tape(&mut tape, xv, NormMode::Train).expect("forward");
    let tv = tape.constant(target.clone());
    let loss = tape.mse(fwd.output, tv).expect("mse");
    tape.backward(loss).expect("backward");
    let grad_of = |v: Var| to_f64(tape.grad(v).expect("gradient reaches every leaf"));

    let reference = RefModel::from_params(&params);
    let x64 = to_f64(&x);
    let t64 = to_f64(&target);
    let mut report = ProbeReport::default();
    for (k, &pv) in fwd.params.iter().enumerate() {
        let g = grad_of(pv);
        let f = |vals: &[f64]| {
            let mut m = reference.clone();
            m.tensors[k] = vals.to_vec();
            let (out, pat) = m.forward(&x64, b, n);
            (ref_mse(&out, &t64), pat)
        };
        let label = format!("{kind} tensor {k}");
        report.merge(&directional_probes(&label, &reference.tensors[k], &g, &f, probes_per_tensor, &mut rng));
    }
    let g = grad_of(xv);
    let f = |vals: &[f64]| {
        let (out, pat) = reference.forward(vals, b, n);
        (ref_mse(&out, &t64), pat)
    };
    report.merge(&directional_probes(&format!("{kind} input"), &x64, &g, &f, probes_per_tensor, &mut rng));
    report
}

// ---------------------------------------------------------------------------
// Per-operation gradient checks. Each op is wrapped as L = Σ R ⊙ op(inputs)
// with a fixed random weighting R.

type OpRef = dyn Fn(&[Vec<f64>], &mut Vec<u32>) -> Vec<f64>;
type OpTape = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

fn check_op(
    label: &str,
    inputs: Vec<Tensor>,
    tape_op: &OpTape,
    reference: &OpRef,
    probes: usize,
    rng: &mut SeededStream,
) -> ProbeReport {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = tape_op(&mut tape, &leaves).expect("op forward");
    let shape = tape.value(out).shape().to_vec();
    let scalar_out = shape.is_empty();
    let weights = random_tensor(rng, &shape);
    let loss = if scalar_out {
        out
    } else {
        let r = tape.constant(weights.clone());
        let prod = tape.mul(out, r).expect("mul");
        tape.sum(prod).expect("sum")
    };
    tape.backward(loss).expect("backward");
    let r64 = to_f64(&weights);
    let base: Vec<Vec<f64>> = inputs.iter().map(to_f64).collect();
    let mut report = ProbeReport::default();
    for (k, &leaf) in leaves.iter().enumerate() {
        let g = to_f64(tape.grad(leaf).expect("gradient reaches every input"));
        let f = |vals: &[f64]| {
            let mut args = base.clone();
            args[k] = vals.to_vec();
            let mut pattern = Vec::new();
            let y = reference(&args, &mut pattern);
            let l = if scalar_out { y[0] } else { y.iter().zip(&r64).map(|(a, b)| a * b).sum() };
            (l, pattern)
        };
        report.merge(&directional_probes(&format!("{label} input {k}"), &base[k], &g, &f, probes, rng));
    }
    report
}

/// Gradient checks of every differentiable tape operation. Returns one
/// report per operation.
pub fn check_all_ops(probes: usize, seed: u64) -> Vec<(&'static str, ProbeReport)> {
    let mut rng = SeededStream::new(seed);
    let (b, n) = (2, 5);
    let mut out = Vec::new();
    let mut t = |shape: &[usize]| random_tensor(&mut rng, shape);

    let linear_in = vec![t(&[b, n, 4]), t(&[4, 3]), t(&[3])];
    let lg_in = vec![t(&[b, n, 3]), t(&[b, 4]), t(&[7, 3]), t(&[3])];
    let relu_in = vec![t(&[b, n, 4])];
    let sigmoid_in = vec![t(&[b, n, 3])];
    let bn_in = vec![t(&[b, n, 4]), t(&[4]), t(&[4])];
    let bn_infer_in = vec![t(&[b, n, 4]), t(&[4]), t(&[4])];
    let run_mean = t(&[4]);
    let run_var = Tensor::from_fn(&[4], |i| 0.5 + i as f32 * 0.25);
    let pool_in = vec![t(&[b, n, 4])];
    let repeat_in = vec![t(&[b, 4])];
    let concat_in = vec![t(&[b, n, 3]), t(&[b, n, 2])];
    let mul_in = vec![t(&[b, n, 3]), t(&[b, n, 3])];
    let mse_in = vec![t(&[b, n, 3]), t(&[b, n, 3])];

    let cases: Vec<(&'static str, Vec<Tensor>, Box<OpTape>, Box<OpRef>)> = vec![
        (
            "linear_shared",
            linear_in,
            Box::new(|tp, v| tp.linear_shared(v[0], v[1], v[2])),
            Box::new(move |a, _| ref_linear(&a[0], b * n, 4, &a[1], &a[2])),
        ),
        (
            "linear_local_global",
            lg_in,
            Box::new(|tp, v| tp.linear_local_global(v[0], v[1], v[2], v[3])),
            Box::new(move |a, _| {
                let cat = ref_concat(&a[0], 3, &ref_repeat(&a[1], b, n, 4), 4);
                ref_linear(&cat, b * n, 7, &a[2], &a[3])
            }),
        ),
        ("relu", relu_in, Box::new(|tp, v| tp.relu(v[0])), Box::new(|a, p| ref_relu(&a[0], p))),
        ("sigmoid", sigmoid_in, Box::new(|tp, v| tp.sigmoid(v[0])), Box::new(|a, _| ref_sigmoid(&a[0]))),
        (
            "batch_norm_train",
            bn_in,
            Box::new(|tp, v| Ok(tp.batch_norm_train(v[0], v[1], v[2])?.0)),
            Box::new(|a, _| ref_bn_train(&a[0], &a[1], &a[2])),
        ),
        (
            "batch_norm_infer",
            bn_infer_in,
            {
                let (m, s) = (run_mean.clone(), run_var.clone());
                Box::new(move |tp, v| tp.batch_norm_infer(v[0], v[1], v[2], &m, &s))
            },
            {
                let (m, s) = (to_f64(&run_mean), to_f64(&run_var));
                Box::new(move |a, _| ref_bn_with(&a[0], &m, &s, &a[1], &a[2]))
            },
        ),
        (
            "max_pool_points",
            pool_in,
            Box::new(|tp, v| tp.max_pool_points(v[0])),
            Box::new(move |a, p| ref_max_pool(&a[0], b, n, 4, p)),
        ),
        (
            "repeat_points",
            repeat_in,
            Box::new(move |tp, v| tp.repeat_points(v[0], n)),
            Box::new(move |a, _| ref_repeat(&a[0], b, n, 4)),
        ),
        (
            "concat_channels",
            concat_in,
            Box::new(|tp, v| tp.concat_channels(v[0], v[1])),
            Box::new(|a, _| ref_concat(&a[0], 3, &a[1], 2)),
        ),
        (
            "mul",
            mul_in,
            Box::new(|tp, v| tp.mul(v[0], v[1])),
            Box::new(|a, _| a[0].iter().zip(&a[1]).map(|(x, y)| x * y).collect()),
        ),
        (
            "mse",
            mse_in,
            Box::new(|tp, v| tp.mse(v[0], v[1])),
            Box::new(|a, _| vec![ref_mse(&a[0], &a[1])]),
        ),
    ];
    for (name, inputs, tape_op, reference) in cases {
        out.push((name, check_op(name, inputs, tape_op.as_ref(), reference.as_ref(), probes, &mut rng)));
    }
    out
}

// ---------------------------------------------------------------------------
// Analytic stand-in networks for the samplers.

/// Reads the conditioning time back from the lowest-frequency embedding pair
/// (ω = 10⁻⁴ unless the embedding has a single pair).
fn embedded_time(row: &[f32], coord_dims: usize, embed_dims: usize, lowest: bool) -> f64 {
    let k = if lowest { embed_dims / 2 - 1 } else { 0 };
    let omega = if lowest && embed_dims > 2 { 1e-4 } else { 1.0 };
    let s = row[coord_dims + 2 * k] as f64;
    let c = row[coord_dims + 2 * k + 1] as f64;
    s.atan2(c) / omega
}

/// Returns the exact straight-path velocity `(y - clean)/τ` towards a known
/// clean field, i.e. the constant target `noise - clean` of the path that
/// passes through the current state.
pub struct FlowOracle {
    pub clean: Tensor,
    pub coord_dims: usize,
    pub embed_dims: usize,
}

impl FieldNetwork for FlowOracle {
    fn input_channels(&self) -> usize {
        self.coord_dims + self.embed_dims + self.clean.channels()
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let (b, n, c) = input.dims3()?;
        let f = self.clean.channels();
        let x = input.data();
        let tau = embedded_time(&x[..c], self.coord_dims, self.embed_dims, false);
        let mut out = Vec::with_capacity(b * n * f);
        for r in 0..b * n {
            for k in 0..f {
                let y = x[r * c + c - f + k] as f64;
                let clean = self.clean.data()[(r % n) * f + k] as f64;
                out.push(((y - clean) / tau) as f32);
            }
        }
        Tensor::new(&[b, n, f], out)
    }

    fn model_kind(&self) -> Option<ModelKind> {
        Some(ModelKind::FlowMatching)
    }
}

/// Returns the exact noise `(y_t - √ᾱ_t·clean)/√(1-ᾱ_t)` given the clean field
/// and the cumulative products of the schedule.
pub struct EpsOracle {
    pub clean: Tensor,
    pub alpha_bars: Vec<f64>,
    pub coord_dims: usize,
    pub embed_dims: usize,
}

impl FieldNetwork for EpsOracle {
    fn input_channels(&self) -> usize {
        self.coord_dims + self.embed_dims + self.clean.channels()
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let (b, n, c) = input.dims3()?;
        let f = self.clean.channels();
        let x = input.data();
        let t = embedded_time(&x[..c], self.coord_dims, self.embed_dims, true).round() as usize;
        let ab = self.alpha_bars[t - 1];
        let mut out = Vec::with_capacity(b * n * f);
        for r in 0..b * n {
            for k in 0..f {
                let y = x[r * c + c - f + k] as f64;
                let clean = self.clean.data()[(r % n) * f + k] as f64;
                out.push(((y - ab.sqrt() * clean) / (1.0 - ab).sqrt()) as f32);
            }
        }
        Tensor::new(&[b, n, f], out)
    }

    fn model_kind(&self) -> Option<ModelKind> {
        Some(ModelKind::Diffusion)
    }
}

/// Maximum absolute difference between two equally shaped tensors.
pub fn max_abs(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).abs()).fold(0.0, f64::max)
}
