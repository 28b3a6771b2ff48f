//! Adam and the training loops of the three processes.

use crate::conditioning::{assemble_input, TimeEmbedding};
use crate::data::{Dataset, Split};
use crate::diffusion::{self, NoiseSchedule};
use crate::error::{Error, Result};
use crate::flow_matching;
use crate::kernels::NormMode;
use crate::pointnet::{ModelKind, ModelParams};
use crate::rng::SeededStream;
use crate::tape::Tape;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::FlowMatching,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 1,
            max_steps: None,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        Ok(())
    }
}

/// Adam first and second moments, one pair per trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params.trainable().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update with a constant learning rate.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    adam: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params[i].shape() {
            return Err(Error::Dimension(format!("gradient {i} has shape {:?}", g.shape())));
        }
        if !g.all_finite() {
            return Err(Error::TrainingDiverged {
                step: state.step as usize,
                reason: format!("non-finite gradient in parameter tensor {i}"),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 / (1.0 - adam.beta1.powi(t));
    let c2 = 1.0 / (1.0 - adam.beta2.powi(t));
    let (b1, b2, eps) = (adam.beta1 as f32, adam.beta2 as f32, adam.eps);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let p = p.data_mut();
        let (m, v) = (m.data_mut(), v.data_mut());
        for j in 0..p.len() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] as f64 * c1;
            let v_hat = v[j] as f64 * c2;
            p[j] -= (lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        }
    }
    Ok(())
}

/// CSV log with columns `step,epoch,loss,wall_ms`.
pub struct TrainLog {
    out: BufWriter<File>,
    start: Instant,
}

impl TrainLog {
    pub const HEADER: &'static str = "step,epoch,loss,wall_ms";

    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", Self::HEADER)?;
        Ok(Self {
            out,
            start: Instant::now(),
        })
    }

    pub fn record(&mut self, step: usize, epoch: usize, loss: f32) -> Result<()> {
        let ms = self.start.elapsed().as_millis();
        writeln!(self.out, "{step},{epoch},{loss:.9e},{ms}")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub batches: usize,
    pub mean_loss: f64,
    pub losses: Vec<f32>,
}

/// Owns a model under training together with its optimizer and RNG stream.
pub struct Trainer {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    pub embedding: TimeEmbedding,
    pub schedule: NoiseSchedule,
    pub epoch: usize,
    rng: SeededStream,
    tape: Tape,
}

impl Trainer {
    pub fn new(params: ModelParams, config: TrainConfig, schedule: NoiseSchedule) -> Result<Self> {
        config.validate()?;
        if params.kind != config.model {
            return Err(Error::Config(format!(
                "configuration trains {} but the network is {}",
                config.model, params.kind
            )));
        }
        let embedding = if params.kind.is_generative() {
            TimeEmbedding::new(params.embed_dims)?
        } else {
            TimeEmbedding::default()
        };
        Ok(Self {
            optimizer: OptimizerState::new(&params),
            rng: SeededStream::new(config.seed),
            params,
            config,
            embedding,
            schedule,
            epoch: 0,
            tape: Tape::new(),
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.optimizer.step as usize
    }

    /// Builds the network input and regression target of one batch, drawing
    /// a fresh time value and noise field per cloud.
    pub fn prepare_batch(&mut self, coords: &[Tensor], fields: &[Tensor]) -> Result<(Tensor, Tensor)> {
        if coords.len() != fields.len() || coords.is_empty() {
            return Err(Error::Dimension(format!("{} coordinate sets vs {} field sets", coords.len(), fields.len())));
        }
        let mut inputs = Vec::with_capacity(coords.len());
        let mut targets = Vec::with_capacity(coords.len());
        for (x, y) in coords.iter().zip(fields) {
            match self.params.kind {
                ModelKind::FlowMatching => {
                    let s = flow_matching::make_training_sample(y, &mut self.rng)?;
                    inputs.push(assemble_input(x, &s.y_tau, s.tau, &self.embedding)?);
                    targets.push(s.f_target);
                }
                ModelKind::Diffusion => {
                    let s = diffusion::make_training_sample(y, &self.schedule, &mut self.rng)?;
                    inputs.push(assemble_input(x, &s.y_t, s.t as f64, &self.embedding)?);
                    targets.push(s.eps);
                }
                ModelKind::Baseline => {
                    inputs.push(x.clone());
                    targets.push(y.clone());
                }
            }
        }
        Ok((Tensor::stack(&inputs)?, Tensor::stack(&targets)?))
    }

    /// One optimizer step on a batch of normalized clouds; returns the loss
    /// before the update.
    pub fn train_step(&mut self, coords: &[Tensor], fields: &[Tensor]) -> Result<f32> {
        let step = self.steps_taken();
        let (input, target) = self.prepare_batch(coords, fields)?;
        let diverged = |e: Error| match e {
            Error::NonFinite(what) => Error::TrainingDiverged {
                step,
                reason: format!("non-finite value in {what}"),
            },
            other => other,
        };
        self.tape.reset();
        let x = self.tape.constant(input);
        let fwd = self.params.forward_on_tape(&mut self.tape, x, NormMode::Train).map_err(diverged)?;
        let t = self.tape.constant(target);
        let loss_var = self.tape.mse(fwd.output, t).map_err(diverged)?;
        let loss = self.tape.value(loss_var).item();
        self.tape.backward(loss_var).map_err(diverged)?;
        let grads = fwd
            .params
            .iter()
            .map(|&v| {
                self.tape
                    .take_grad(v)
                    .ok_or_else(|| Error::Autodiff("missing parameter gradient".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let lr = self.config.learning_rate;
        let adam = self.config.adam;
        adam_step(&mut self.params.trainable_mut(), &grads, &mut self.optimizer, lr, &adam)?;
        Ok(loss)
    }

    /// A shuffled pass over the training split. Stops early once
    /// `max_steps` optimizer steps have been taken.
    pub fn train_epoch(&mut self, ds: &Dataset, mut log: Option<&mut TrainLog>) -> Result<EpochStats> {
        let mut ids = ds.ids(Split::Train).to_vec();
        if ids.is_empty() {
            return Err(Error::Config("the training split is empty".into()));
        }
        self.rng.shuffle(&mut ids);
        let mut losses = Vec::new();
        for batch in ids.chunks(self.config.batch_size) {
            if self.config.max_steps.is_some_and(|m| self.steps_taken() >= m) {
                break;
            }
            let coords: Vec<Tensor> = batch.iter().map(|&i| ds.normalized_coords(i)).collect();
            let fields: Vec<Tensor> = batch.iter().map(|&i| ds.normalized_fields(i)).collect();
            let loss = self.train_step(&coords, &fields)?;
            if let Some(log) = log.as_deref_mut() {
                log.record(self.steps_taken(), self.epoch, loss)?;
            }
            losses.push(loss);
        }
        let mean_loss = if losses.is_empty() {
            0.0
        } else {
            losses.iter().map(|&l| l as f64).sum::<f64>() / losses.len() as f64
        };
        let stats = EpochStats {
            epoch: self.epoch,
            batches: losses.len(),
            mean_loss,
            losses,
        };
        self.epoch += 1;
        Ok(stats)
    }

    /// Runs `config.epochs` epochs (bounded by `max_steps`).
    pub fn fit(&mut self, ds: &Dataset, mut log: Option<&mut TrainLog>) -> Result<Vec<EpochStats>> {
        let mut out = Vec::new();
        for _ in 0..self.config.epochs {
            if self.config.max_steps.is_some_and(|m| self.steps_taken() >= m) {
                break;
            }
            out.push(self.train_epoch(ds, log.as_deref_mut())?);
        }
        Ok(out)
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }
}
