//! Error metrics, pressure forces, robustness runs and CSV exports.
//!
//! All errors are measured in physical units after denormalization.

use crate::data::cloud::angle_deg;
use crate::data::{drop_points, Dataset, NormStats, PointCloud};
use crate::error::{Error, Result};
use crate::generator::FieldGenerator;
use crate::rng::{derive_seed, SeededStream};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const FIELD_NAMES: [&str; 3] = ["u", "v", "p"];

/// `‖pred − truth‖₂ / ‖truth‖₂`.
pub fn relative_l2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!("{} predictions vs {} truths", pred.len(), truth.len())));
    }
    let num: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::UndefinedMetric("relative error against a zero-norm field".into()));
    }
    Ok((num / den).sqrt())
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

/// Mean, max and min over geometries of per-geometry mean errors. The
/// extreme entries carry the sample spread of that geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub max: Stat,
    pub max_geometry: usize,
    pub min: Stat,
    pub min_geometry: usize,
}

fn aggregate(per_geometry: &[(usize, Stat)]) -> Aggregate {
    let mean = per_geometry.iter().map(|(_, s)| s.mean).sum::<f64>() / per_geometry.len() as f64;
    let mut hi = per_geometry[0];
    let mut lo = per_geometry[0];
    for &g in &per_geometry[1..] {
        if g.1.mean > hi.1.mean {
            hi = g;
        }
        if g.1.mean < lo.1.mean {
            lo = g;
        }
    }
    Aggregate {
        mean,
        max: hi.1,
        max_geometry: hi.0,
        min: lo.1,
        min_geometry: lo.0,
    }
}

/// Errors of one geometry across samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryMetrics {
    pub id: usize,
    pub n_points: usize,
    /// Relative L² errors of u, v, p, one row per sample.
    pub samples: Vec<[f64; 3]>,
    pub fields: [Stat; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub geometries: Vec<GeometryMetrics>,
    pub aggregate: [Aggregate; 3],
}

/// Pressure forces of one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryForces {
    pub id: usize,
    pub true_drag: f64,
    pub true_lift: f64,
    pub drag: Stat,
    pub lift: Stat,
    pub drag_abs_error: Stat,
    pub lift_abs_error: Stat,
}

/// Absolute force errors, in newtons per unit span.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceReport {
    pub geometries: Vec<GeometryForces>,
    pub drag: Aggregate,
    pub lift: Aggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub forces: ForceReport,
}

/// Force on a closed counterclockwise polygon, `−Σ pᵢ nᵢ Δsᵢ`, where
/// `nᵢ Δsᵢ` is half the sum of the outward normals (scaled by length) of the
/// two segments meeting at point `i`.
pub fn closed_curve_force(points: &[[f64; 2]], pressure: &[f64]) -> Result<[f64; 2]> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Config(format!("force integration needs at least 3 surface points, got {n}")));
    }
    if pressure.len() != n {
        return Err(Error::Dimension(format!("{} pressures for {n} surface points", pressure.len())));
    }
    let mut f = [0.0f64; 2];
    for i in 0..n {
        let next = points[(i + 1) % n];
        let prev = points[(i + n - 1) % n];
        let (dx, dy) = (next[0] - prev[0], next[1] - prev[1]);
        f[0] -= pressure[i] * 0.5 * dy;
        f[1] -= pressure[i] * 0.5 * -dx;
    }
    Ok(f)
}

/// `(drag, lift)` from pressure at the surface points of `cloud`, listed in
/// boundary order.
pub fn pressure_forces(cloud: &PointCloud, p_surface: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<[f64; 2]> = cloud.surface_indices().into_iter().map(|i| cloud.coords[i]).collect();
    let [fx, fy] = closed_curve_force(&pts, p_surface)?;
    Ok((fx, fy))
}

fn surface_pressure(cloud: &PointCloud, fields: &[[f64; 3]]) -> Vec<f64> {
    cloud.surface_indices().into_iter().map(|i| fields[i][2]).collect()
}

/// Result of evaluating one cloud.
struct CloudResult {
    metrics: GeometryMetrics,
    forces: GeometryForces,
}

fn evaluate_cloud(
    generator: &dyn FieldGenerator,
    stats: &NormStats,
    id: usize,
    cloud: &PointCloud,
    truth: &[[f64; 3]],
    n_samples: usize,
    rng: &mut SeededStream,
) -> Result<CloudResult> {
    let coords = stats.normalize_coords(&cloud.coords);
    let realizations = generator.generate(&coords, n_samples, rng)?;
    let truth_cols: [Vec<f64>; 3] = [0, 1, 2].map(|k| truth.iter().map(|f| f[k]).collect());
    let (true_drag, true_lift) = pressure_forces(cloud, &surface_pressure(cloud, truth))?;
    let mut errors = Vec::with_capacity(n_samples);
    let (mut drags, mut lifts) = (Vec::new(), Vec::new());
    for y in &realizations {
        let pred = stats.denormalize_fields(y)?;
        let mut e = [0.0; 3];
        for k in 0..3 {
            let col: Vec<f64> = pred.iter().map(|f| f[k]).collect();
            e[k] = relative_l2(&col, &truth_cols[k])?;
        }
        if !e.iter().all(|v| v.is_finite()) {
            return Err(Error::UndefinedMetric(format!("non-finite error on geometry {id}")));
        }
        errors.push(e);
        let (d, l) = pressure_forces(cloud, &surface_pressure(cloud, &pred))?;
        drags.push(d);
        lifts.push(l);
    }
    let fields = [0, 1, 2].map(|k| Stat::of(&errors.iter().map(|e| e[k]).collect::<Vec<_>>()));
    let abs = |v: &[f64], t: f64| v.iter().map(|x| (x - t).abs()).collect::<Vec<_>>();
    Ok(CloudResult {
        metrics: GeometryMetrics {
            id,
            n_points: cloud.len(),
            samples: errors,
            fields,
        },
        forces: GeometryForces {
            id,
            true_drag,
            true_lift,
            drag: Stat::of(&drags),
            lift: Stat::of(&lifts),
            drag_abs_error: Stat::of(&abs(&drags, true_drag)),
            lift_abs_error: Stat::of(&abs(&lifts, true_lift)),
        },
    })
}

/// A cloud to evaluate, with physical ground truth.
pub struct EvalItem<'a> {
    pub id: usize,
    pub cloud: &'a PointCloud,
    pub truth: &'a [[f64; 3]],
}

/// Evaluates `items` in parallel. Geometry `id` draws from the substream
/// `(seed, id)`, so results do not depend on order or thread count.
pub fn evaluate_items(
    generator: &dyn FieldGenerator,
    stats: &NormStats,
    items: &[EvalItem<'_>],
    n_samples: usize,
    seed: u64,
) -> Result<Evaluation> {
    if items.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    if n_samples == 0 {
        return Err(Error::Config("at least one sample per geometry is required".into()));
    }
    let n_samples = if generator.is_deterministic() { 1 } else { n_samples };
    let mut results = items
        .par_iter()
        .map(|it| {
            let mut rng = SeededStream::substream(seed, it.id as u64);
            evaluate_cloud(generator, stats, it.id, it.cloud, it.truth, n_samples, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|r| r.metrics.id);
    let per_field = |k: usize| -> Vec<(usize, Stat)> { results.iter().map(|r| (r.metrics.id, r.metrics.fields[k])).collect() };
    let aggregate_fields = [0, 1, 2].map(|k| aggregate(&per_field(k)));
    let drag: Vec<_> = results.iter().map(|r| (r.forces.id, r.forces.drag_abs_error)).collect();
    let lift: Vec<_> = results.iter().map(|r| (r.forces.id, r.forces.lift_abs_error)).collect();
    let (drag, lift) = (aggregate(&drag), aggregate(&lift));
    let (metrics, forces): (Vec<_>, Vec<_>) = results.into_iter().map(|r| (r.metrics, r.forces)).unzip();
    Ok(Evaluation {
        metrics: MetricsReport {
            n_samples,
            geometries: metrics,
            aggregate: aggregate_fields,
        },
        forces: ForceReport {
            geometries: forces,
            drag,
            lift,
        },
    })
}

/// Evaluates the geometries `ids` of `ds` with `n_samples` draws each.
pub fn evaluate_model(
    generator: &dyn FieldGenerator,
    ds: &Dataset,
    ids: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<Evaluation> {
    let items: Vec<EvalItem<'_>> = ids
        .iter()
        .map(|&id| {
            let s = ds.sample(id);
            EvalItem {
                id,
                cloud: &s.cloud,
                truth: &s.fields,
            }
        })
        .collect();
    evaluate_items(generator, &ds.stats, &items, n_samples, seed)
}

/// Substream family used to pick the removed points.
const DROP_STREAM: u64 = 0x64726f70;

/// Mean errors after removing a fraction of every cloud's points.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub fraction: f64,
    /// Distinct cloud sizes seen in the run.
    pub cloud_sizes: Vec<usize>,
    pub mean_error: [f64; 3],
    pub evaluation: Evaluation,
}

pub fn robustness_eval(
    generator: &dyn FieldGenerator,
    ds: &Dataset,
    ids: &[usize],
    fractions: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    let drop_seed = derive_seed(seed, DROP_STREAM);
    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let reduced = ids
            .iter()
            .map(|&id| {
                let s = ds.sample(id);
                let mut rng = SeededStream::substream(drop_seed, id as u64);
                let (cloud, truth) = drop_points(&s.cloud, &s.fields, fraction, &mut rng)?;
                Ok((id, cloud, truth))
            })
            .collect::<Result<Vec<_>>>()?;
        let items: Vec<EvalItem<'_>> = reduced
            .iter()
            .map(|(id, cloud, truth)| EvalItem {
                id: *id,
                cloud,
                truth,
            })
            .collect();
        let evaluation = evaluate_items(generator, &ds.stats, &items, n_samples, seed)?;
        let mut cloud_sizes: Vec<usize> = reduced.iter().map(|(_, c, _)| c.len()).collect();
        cloud_sizes.sort_unstable();
        cloud_sizes.dedup();
        rows.push(RobustnessRow {
            fraction,
            cloud_sizes,
            mean_error: evaluation.metrics.aggregate.map(|a| a.mean),
            evaluation,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileRow {
    pub angle_deg: f64,
    pub u: f64,
    pub v: f64,
    pub p: f64,
}

/// Surface values ordered by counterclockwise angle from +x about the body center.
pub fn surface_profile(cloud: &PointCloud, fields: &[[f64; 3]]) -> Result<Vec<ProfileRow>> {
    if fields.len() != cloud.len() {
        return Err(Error::Dimension(format!("{} field rows for {} points", fields.len(), cloud.len())));
    }
    let c = cloud.geometry.center;
    let mut rows: Vec<ProfileRow> = cloud
        .surface_indices()
        .into_iter()
        .map(|i| ProfileRow {
            angle_deg: angle_deg(c, cloud.coords[i]),
            u: fields[i][0],
            v: fields[i][1],
            p: fields[i][2],
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::Config("cloud has no surface points".into()));
    }
    rows.sort_by(|a, b| a.angle_deg.total_cmp(&b.angle_deg));
    Ok(rows)
}

/// Formats with nine significant digits.
pub fn fmt9(v: f64) -> String {
    format!("{v:.8e}")
}

fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut s = String::new();
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub const HISTOGRAM_HEADER: &str = "geometry_id,err_u,err_v,err_p";

/// Per-geometry mean errors, one row per geometry.
pub fn export_histogram(report: &MetricsReport, path: &Path) -> Result<()> {
    write_csv(
        path,
        HISTOGRAM_HEADER,
        report.geometries.iter().map(|g| {
            let mut r = vec![g.id.to_string()];
            r.extend(g.fields.iter().map(|s| fmt9(s.mean)));
            r
        }),
    )
}

/// Per-geometry mean and standard deviation of the errors.
pub fn export_metrics(report: &MetricsReport, path: &Path) -> Result<()> {
    write_csv(
        path,
        "geometry_id,n_points,n_samples,mean_u,std_u,mean_v,std_v,mean_p,std_p",
        report.geometries.iter().map(|g| {
            let mut r = vec![g.id.to_string(), g.n_points.to_string(), g.samples.len().to_string()];
            for s in &g.fields {
                r.push(fmt9(s.mean));
                r.push(fmt9(s.std));
            }
            r
        }),
    )
}

fn aggregate_row(name: &str, a: &Aggregate) -> Vec<String> {
    vec![
        name.to_string(),
        fmt9(a.mean),
        fmt9(a.max.mean),
        fmt9(a.max.std),
        a.max_geometry.to_string(),
        fmt9(a.min.mean),
        fmt9(a.min.std),
        a.min_geometry.to_string(),
    ]
}

const SUMMARY_HEADER: &str = "quantity,mean,max,max_std,max_geometry,min,min_std,min_geometry";

/// Aggregate table of the field errors and absolute force errors.
pub fn export_summary(eval: &Evaluation, path: &Path) -> Result<()> {
    let mut rows: Vec<Vec<String>> = FIELD_NAMES
        .iter()
        .zip(&eval.metrics.aggregate)
        .map(|(n, a)| aggregate_row(&format!("rel_l2_{n}"), a))
        .collect();
    rows.push(aggregate_row("abs_err_drag_n_per_m", &eval.forces.drag));
    rows.push(aggregate_row("abs_err_lift_n_per_m", &eval.forces.lift));
    write_csv(path, SUMMARY_HEADER, rows)
}

/// Per-geometry predicted and reference pressure forces (N per unit span).
pub fn export_forces(report: &ForceReport, path: &Path) -> Result<()> {
    write_csv(
        path,
        "geometry_id,true_drag,true_lift,drag_mean,drag_std,lift_mean,lift_std,abs_err_drag_mean,abs_err_drag_std,abs_err_lift_mean,abs_err_lift_std",
        report.geometries.iter().map(|g| {
            let mut r = vec![g.id.to_string(), fmt9(g.true_drag), fmt9(g.true_lift)];
            for s in [g.drag, g.lift, g.drag_abs_error, g.lift_abs_error] {
                r.push(fmt9(s.mean));
                r.push(fmt9(s.std));
            }
            r
        }),
    )
}

pub fn export_robustness(rows: &[RobustnessRow], path: &Path) -> Result<()> {
    write_csv(
        path,
        "fraction,n_points,err_u,err_v,err_p",
        rows.iter().map(|r| {
            let sizes = r.cloud_sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";");
            let mut out = vec![format!("{}", r.fraction), sizes];
            out.extend(r.mean_error.iter().map(|&e| fmt9(e)));
            out
        }),
    )
}

pub fn export_profile(rows: &[ProfileRow], path: &Path) -> Result<()> {
    write_csv(
        path,
        "angle_deg,u,v,p",
        rows.iter().map(|r| vec![fmt9(r.angle_deg), fmt9(r.u), fmt9(r.v), fmt9(r.p)]),
    )
}

/// Point-wise dump: coordinates, predicted fields and absolute errors.
pub fn export_field_dump(cloud: &PointCloud, pred: &[[f64; 3]], truth: &[[f64; 3]], path: &Path) -> Result<()> {
    if pred.len() != cloud.len() || truth.len() != cloud.len() {
        return Err(Error::Dimension("field dump rows must match the cloud".into()));
    }
    let mut s = String::from("x,y,on_surface,u,v,p,abs_err_u,abs_err_v,abs_err_p\n");
    for i in 0..cloud.len() {
        let [x, y] = cloud.coords[i];
        let _ = write!(s, "{},{},{}", fmt9(x), fmt9(y), cloud.on_surface[i] as u8);
        for k in 0..3 {
            let _ = write!(s, ",{}", fmt9(pred[i][k]));
        }
        for k in 0..3 {
            let _ = write!(s, ",{}", fmt9((pred[i][k] - truth[i][k]).abs()));
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}
