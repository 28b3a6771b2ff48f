use crate::config::RunConfig;
use pfgn::baseline::BaselinePredictor;
use pfgn::checkpoint::Checkpoint;
use pfgn::conditioning::TimeEmbedding;
use pfgn::data::{build_dataset, load_dataset, save_dataset, Dataset};
use pfgn::diffusion::{DiffusionSampler, NoiseSchedule};
use pfgn::evaluation::{
    evaluate_model, export_field_dump, export_forces, export_histogram, export_metrics, export_profile,
    export_robustness, export_summary, robustness_eval, surface_profile, FIELD_NAMES,
};
use pfgn::flow_matching::FlowMatchingSampler;
use pfgn::generator::FieldGenerator;
use pfgn::pointnet::{build_with, count_parameters, Architecture, ModelKind, ModelParams};
use pfgn::rng::derive_seed;
use pfgn::training::{TrainConfig, TrainLog, Trainer};
use pfgn::{Error, Result, SeededStream};
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const RUN_FILE: &str = "run.json";

const COORD_DIMS: usize = 2;
const FIELD_DIMS: usize = 3;
/// Substream of the master seed that initializes the network weights.
const INIT_STREAM: u64 = 1;

/// Sampler overrides taken from the command line.
pub struct SamplerOptions {
    pub expected: Option<ModelKind>,
    pub steps: Option<usize>,
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out)?;
    Ok(out)
}

fn write_run_record(out: &Path, command: &str, seed: u64, cfg: &RunConfig, result: Value) -> Result<()> {
    let record = json!({
        "command": command,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "result": result,
    });
    fs::write(out.join(RUN_FILE), serde_json::to_string_pretty(&record)? + "\n")?;
    Ok(())
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.paths.dataset {
        Some(dir) => load_dataset(dir),
        None => build_dataset(&cfg.dataset, cfg.data_seed),
    }
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let ds = build_dataset(&cfg.dataset, cfg.data_seed)?;
    let out = output_dir(cfg)?;
    save_dataset(&ds, &out)?;
    let result = json!({
        "geometries": ds.len(),
        "checksum": format!("{:08x}", ds.checksum()),
        "split_sizes": [ds.splits.train.len(), ds.splits.val.len(), ds.splits.test.len()],
    });
    write_run_record(&out, "gen-data", cfg.data_seed, cfg, result)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    let kind = cfg.train.model;
    let arch = Architecture::default().with_width_divisor(cfg.model.width_divisor);
    let params = build_with(&arch, kind, COORD_DIMS, cfg.sampler.embed_dims, FIELD_DIMS, derive_seed(cfg.seed, INIT_STREAM))?;
    let schedule = NoiseSchedule::new(cfg.sampler.diffusion_steps, cfg.sampler.offset)?;
    let config = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
    let mut trainer = Trainer::new(params, config, schedule)?;

    let out = output_dir(cfg)?;
    let mut log = TrainLog::create(&out.join(TRAIN_LOG_FILE))?;
    let epochs = trainer.fit(&ds, Some(&mut log))?;
    log.finish()?;
    let steps = trainer.steps_taken();

    let checkpoint = Checkpoint {
        params: trainer.into_params(),
        stats: ds.stats.clone(),
        diffusion_steps: cfg.sampler.diffusion_steps,
        diffusion_offset: cfg.sampler.offset,
    };
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    let result = json!({
        "model": kind.short_name(),
        "parameters": count_parameters(&checkpoint.params),
        "steps": steps,
        "epoch_mean_loss": epochs.iter().map(|e| e.mean_loss).collect::<Vec<_>>(),
        "dataset_checksum": format!("{:08x}", ds.checksum()),
    });
    write_run_record(&out, "train", cfg.seed, cfg, result)
}

/// Loads the checkpoint and the dataset it is evaluated on. The dataset is
/// normalized with the statistics the network was trained with.
fn load_model(cfg: &RunConfig, opts: &SamplerOptions) -> Result<(Checkpoint, Dataset)> {
    let path = cfg
        .paths
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("no checkpoint given (use --checkpoint or paths.checkpoint)".into()))?;
    let checkpoint = Checkpoint::load(path)?;
    if let Some(kind) = opts.expected {
        if kind != checkpoint.params.kind {
            return Err(Error::Config(format!(
                "{} holds a {} model, not {kind}",
                path.display(),
                checkpoint.params.kind
            )));
        }
    }
    let mut ds = dataset(cfg)?;
    ds.stats = checkpoint.stats.clone();
    Ok((checkpoint, ds))
}

fn generator<'a>(
    checkpoint: &'a Checkpoint,
    cfg: &RunConfig,
    opts: &SamplerOptions,
) -> Result<Box<dyn FieldGenerator + 'a>> {
    let params: &'a ModelParams = &checkpoint.params;
    Ok(match params.kind {
        ModelKind::FlowMatching => {
            let n_steps = opts.steps.unwrap_or(cfg.sampler.flow_steps);
            if n_steps == 0 {
                return Err(Error::Config("sampler steps must be positive".into()));
            }
            Box::new(FlowMatchingSampler { network: params, n_steps, embedding: TimeEmbedding::new(params.embed_dims)? })
        }
        ModelKind::Diffusion => {
            let schedule = NoiseSchedule::new(checkpoint.diffusion_steps, checkpoint.diffusion_offset)?;
            if let Some(n) = opts.steps.filter(|&n| n != schedule.steps()) {
                return Err(Error::Config(format!(
                    "the diffusion model was trained with T = {}; it cannot sample with {n} steps",
                    schedule.steps()
                )));
            }
            Box::new(DiffusionSampler { network: params, schedule, embedding: TimeEmbedding::new(params.embed_dims)? })
        }
        ModelKind::Baseline => Box::new(BaselinePredictor { params }),
    })
}

fn field_errors(values: &[f64; 3]) -> Value {
    FIELD_NAMES.iter().zip(values).map(|(n, v)| (n.to_string(), json!(v))).collect::<serde_json::Map<_, _>>().into()
}

pub fn sample(cfg: &RunConfig, opts: &SamplerOptions, geometry: &[usize]) -> Result<()> {
    let (checkpoint, ds) = load_model(cfg, opts)?;
    let ids: Vec<usize> = if geometry.is_empty() {
        let split = cfg.split()?;
        let first = ds.ids(split).first().copied();
        vec![first.ok_or_else(|| Error::Config(format!("split '{}' is empty", cfg.eval.split)))?]
    } else {
        geometry.to_vec()
    };
    if let Some(&bad) = ids.iter().find(|&&id| id >= ds.len()) {
        return Err(Error::Config(format!("geometry {bad} does not exist (dataset has {})", ds.len())));
    }
    let generator = generator(&checkpoint, cfg, opts)?;
    let out = output_dir(cfg)?;
    let mut files = Vec::new();
    for &id in &ids {
        let s = ds.sample(id);
        let mut rng = SeededStream::substream(cfg.seed, id as u64);
        let realizations = generator.generate(&ds.normalized_coords(id), cfg.eval.samples, &mut rng)?;
        for (k, fields) in realizations.iter().enumerate() {
            let pred = ds.stats.denormalize_fields(fields)?;
            let stem = format!("g{id:05}_s{k:03}");
            export_field_dump(&s.cloud, &pred, &s.fields, &out.join(format!("{stem}.csv")))?;
            export_profile(&surface_profile(&s.cloud, &pred)?, &out.join(format!("{stem}_surface.csv")))?;
            files.push(format!("{stem}.csv"));
        }
    }
    write_run_record(&out, "sample", cfg.seed, cfg, json!({ "geometries": ids, "files": files }))
}

pub fn eval(cfg: &RunConfig, opts: &SamplerOptions) -> Result<()> {
    let (checkpoint, ds) = load_model(cfg, opts)?;
    let generator = generator(&checkpoint, cfg, opts)?;
    let ids = ds.ids(cfg.split()?);
    let eval = evaluate_model(generator.as_ref(), &ds, ids, cfg.eval.samples, cfg.seed)?;
    let out = output_dir(cfg)?;
    export_metrics(&eval.metrics, &out.join("metrics.csv"))?;
    export_histogram(&eval.metrics, &out.join("histogram.csv"))?;
    export_forces(&eval.forces, &out.join("forces.csv"))?;
    export_summary(&eval, &out.join("summary.csv"))?;
    let result = json!({
        "model": checkpoint.params.kind.short_name(),
        "geometries": ids.len(),
        "samples": eval.metrics.n_samples,
        "mean_relative_l2": field_errors(&eval.metrics.aggregate.each_ref().map(|a| a.mean)),
        "mean_abs_error_drag": eval.forces.drag.mean,
        "mean_abs_error_lift": eval.forces.lift.mean,
    });
    write_run_record(&out, "eval", cfg.seed, cfg, result)
}

pub fn robust(cfg: &RunConfig, opts: &SamplerOptions) -> Result<()> {
    let (checkpoint, ds) = load_model(cfg, opts)?;
    let generator = generator(&checkpoint, cfg, opts)?;
    let ids = ds.ids(cfg.split()?);
    let rows = robustness_eval(generator.as_ref(), &ds, ids, &cfg.eval.fractions, cfg.eval.samples, cfg.seed)?;
    let out = output_dir(cfg)?;
    export_robustness(&rows, &out.join("robustness.csv"))?;
    let result: Vec<Value> = rows
        .iter()
        .map(|r| json!({ "fraction": r.fraction, "cloud_sizes": r.cloud_sizes, "mean_relative_l2": field_errors(&r.mean_error) }))
        .collect();
    write_run_record(&out, "robust", cfg.seed, cfg, Value::Array(result))
}
