//! Randomized geometry collections with oracle fields, splits and
//! normalization statistics.

use super::cloud::{sample_cloud, PointCloud, Window};
use super::geometry::{Family, GeometrySpec, Shape, DEFAULT_CENTER};
use super::normalize::NormStats;
use super::oracle::{oracle_fields, FlowConfig};
use super::store;
use crate::error::{Error, Result};
use crate::rng::SeededStream;
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Knobs of the synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_geometries: usize,
    pub n_points: usize,
    pub n_surface: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub families: Vec<Family>,
    /// Range of the body-x scale `a` (m).
    pub scale_range: [f64; 2],
    /// Range of `b / a` for non-circular families.
    pub aspect_range: [f64; 2],
    pub superellipse_m: [f64; 2],
    pub polygon_sides: Vec<u32>,
    /// Range of the body orientation `θ` (rad) for non-circular families.
    pub orientation_range: [f64; 2],
    pub center: [f64; 2],
    pub window: Window,
    pub flow: FlowConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_geometries: 200,
            n_points: 1024,
            n_surface: 128,
            split: [0.79, 0.11, 0.10],
            families: Family::ALL.to_vec(),
            scale_range: [0.5, 1.5],
            aspect_range: [0.4, 1.0],
            superellipse_m: [1.5, 4.0],
            polygon_sides: vec![3, 4, 5, 6],
            orientation_range: [-PI / 12.0, PI / 12.0],
            center: DEFAULT_CENTER,
            window: Window::default(),
            flow: FlowConfig::default(),
        }
    }
}

fn check_range(name: &str, r: [f64; 2], lower: f64) -> Result<()> {
    if r[0] > lower && r[0] <= r[1] && r[1].is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} {r:?} must be an ordered range above {lower}")))
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_geometries == 0 {
            return Err(Error::Config("dataset needs at least one geometry".into()));
        }
        if self.n_surface < 3 || self.n_surface >= self.n_points {
            return Err(Error::Config(format!(
                "surface count {} must be at least 3 and below the point count {}",
                self.n_surface, self.n_points
            )));
        }
        if self.families.is_empty() {
            return Err(Error::Config("no shape families selected".into()));
        }
        check_range("scale_range", self.scale_range, 0.0)?;
        check_range("aspect_range", self.aspect_range, 0.0)?;
        check_range("superellipse_m", self.superellipse_m, 1.0)?;
        let [lo, hi] = self.orientation_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("orientation_range {:?} must be an ordered finite range", self.orientation_range)));
        }
        if self.families.contains(&Family::Polygon)
            && (self.polygon_sides.is_empty() || self.polygon_sides.iter().any(|k| !(3..=6).contains(k)))
        {
            return Err(Error::Config(format!("polygon sides {:?} must lie in 3..=6", self.polygon_sides)));
        }
        self.flow.validate()?;
        split_sizes(self.n_geometries, self.split)?;
        Ok(())
    }

    /// Draws the shape of one geometry.
    pub fn draw_geometry(&self, rng: &mut SeededStream) -> GeometrySpec {
        let lerp = |r: [f64; 2], u: f64| r[0] + u * (r[1] - r[0]);
        let family = self.families[rng.below(self.families.len())];
        let a = lerp(self.scale_range, rng.uniform());
        let aspect = lerp(self.aspect_range, rng.uniform());
        let theta = lerp(self.orientation_range, rng.uniform());
        let (shape, b, theta) = match family {
            Family::Circle => (Shape::Circle, a, 0.0),
            Family::Ellipse => (Shape::Ellipse, a * aspect, theta),
            Family::Superellipse => {
                let m = lerp(self.superellipse_m, rng.uniform());
                (Shape::Superellipse { m }, a * aspect, theta)
            }
            Family::Polygon => {
                let k = self.polygon_sides[rng.below(self.polygon_sides.len())];
                (Shape::Polygon { k }, a * aspect, theta)
            }
        };
        GeometrySpec {
            shape,
            a,
            b,
            theta,
            center: self.center,
        }
    }
}

/// Split sizes: `floor(f·n)` each, then the remainder handed out one at a
/// time starting with the training split.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let mut sizes = fractions.map(|f| (f * n as f64 + 1e-9).floor() as usize);
    let mut k = 0;
    while sizes.iter().sum::<usize>() < n {
        sizes[k % 3] += 1;
        k += 1;
    }
    Ok(sizes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split '{s}' (expected train, val or test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// One geometry with physical oracle fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub cloud: PointCloud,
    /// Physical `(u, v, p)` per point.
    pub fields: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub config: DatasetConfig,
    pub samples: Vec<Sample>,
    pub splits: Splits,
    pub stats: NormStats,
}

/// Substream index used to shuffle geometries into splits.
const SPLIT_STREAM: u64 = u64::MAX;

fn round_f32<const K: usize>(v: [f64; K]) -> [f64; K] {
    v.map(|x| x as f32 as f64)
}

/// Generates geometry `id` of a dataset.
pub fn generate_sample(config: &DatasetConfig, seed: u64, id: usize) -> Result<Sample> {
    let mut rng = SeededStream::substream(seed, id as u64);
    let geom = config.draw_geometry(&mut rng);
    let cloud = sample_cloud(&geom, config.n_points, config.n_surface, &config.window, &mut rng)?;
    let fields = oracle_fields(&geom, &config.flow, &cloud.coords)?;
    Ok(Sample {
        id,
        cloud: PointCloud {
            coords: cloud.coords.into_iter().map(round_f32).collect(),
            ..cloud
        },
        fields: fields.into_iter().map(round_f32).collect(),
    })
}

/// Assigns shuffled geometry ids to the three splits; each list is ascending.
pub fn assign_splits(n: usize, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let [n_train, n_val, _] = split_sizes(n, fractions)?;
    let mut ids: Vec<usize> = (0..n).collect();
    SeededStream::substream(seed, SPLIT_STREAM).shuffle(&mut ids);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(Splits {
        train: sorted(&ids[..n_train]),
        val: sorted(&ids[n_train..n_train + n_val]),
        test: sorted(&ids[n_train + n_val..]),
    })
}

/// Builds a dataset; geometries are generated in parallel from per-id
/// substreams, so the result does not depend on the thread count.
pub fn build_dataset(config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let samples = (0..config.n_geometries)
        .into_par_iter()
        .map(|id| generate_sample(config, seed, id))
        .collect::<Result<Vec<_>>>()?;
    let splits = assign_splits(config.n_geometries, config.split, seed)?;
    Dataset::assemble(seed, config.clone(), samples, splits)
}

impl Dataset {
    /// Wraps generated samples, computing statistics from the training split.
    pub fn assemble(seed: u64, config: DatasetConfig, samples: Vec<Sample>, splits: Splits) -> Result<Self> {
        if splits.train.is_empty() {
            return Err(Error::Config("the training split is empty".into()));
        }
        let stats = NormStats::from_samples(
            splits
                .train
                .iter()
                .map(|&i| (samples[i].cloud.coords.as_slice(), samples[i].fields.as_slice())),
        )?;
        Ok(Self {
            seed,
            config,
            samples,
            splits,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self, split: Split) -> &[usize] {
        self.splits.get(split)
    }

    pub fn sample(&self, id: usize) -> &Sample {
        &self.samples[id]
    }

    pub fn normalized_coords(&self, id: usize) -> Tensor {
        self.stats.normalize_coords(&self.samples[id].cloud.coords)
    }

    pub fn normalized_fields(&self, id: usize) -> Tensor {
        self.stats.normalize_fields(&self.samples[id].fields)
    }

    /// CRC32 over every binary record in id order.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for s in &self.samples {
            h.update(&store::encode_record(s));
        }
        h.finalize()
    }

    /// Reynolds number of every geometry, in id order.
    pub fn reynolds(&self) -> Vec<f64> {
        let f = &self.config.flow;
        self.samples
            .iter()
            .map(|s| s.cloud.geometry.reynolds(f.rho, f.u_inf, f.mu))
            .collect()
    }
}
