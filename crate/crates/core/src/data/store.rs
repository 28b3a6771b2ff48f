//! On-disk dataset layout: `manifest.json` plus one little-endian binary
//! record per geometry under `geometries/`.
//!
//! Record layout:
//!
//! | field | type |
//! |---|---|
//! | point count `N` | u32 |
//! | family code | u32 |
//! | shape parameter, a, b, theta, x_c, y_c | 6 × f64 |
//! | coordinates | N × 2 f32 |
//! | fields u, v, p (physical) | N × 3 f32 |
//! | surface flags | N × u8 |
//!
//! Surface points come first, in counterclockwise order.

use super::cloud::PointCloud;
use super::dataset::{Dataset, DatasetConfig, Sample, Splits};
use super::geometry::{GeometrySpec, Shape};
use super::normalize::NormStats;
use crate::error::{Error, Result};
use crate::rng::RNG_ALGORITHM;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORD_DIR: &str = "geometries";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_BYTES: usize = 4 + 4 + 6 * 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub rng_algorithm: String,
    pub config: DatasetConfig,
    pub stats: NormStats,
    pub splits: Splits,
    /// Reynolds number per geometry id.
    pub reynolds: Vec<f64>,
    pub checksum: u32,
}

pub fn record_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(RECORD_DIR).join(format!("g{id:05}.bin"))
}

pub fn encode_record(sample: &Sample) -> Vec<u8> {
    let cloud = &sample.cloud;
    let n = cloud.len();
    let g = &cloud.geometry;
    let (code, param) = g.shape.encode();
    let mut out = Vec::with_capacity(HEADER_BYTES + n * (5 * 4 + 1));
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&code.to_le_bytes());
    for v in [param, g.a, g.b, g.theta, g.center[0], g.center[1]] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in &cloud.coords {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    for f in &sample.fields {
        for v in f {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out.extend(cloud.on_surface.iter().map(|&s| s as u8));
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corrupt("record truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as f64)
    }
}

pub fn decode_record(id: usize, bytes: &[u8]) -> Result<Sample> {
    let mut r = Reader { bytes, pos: 0 };
    let n = r.u32()? as usize;
    let code = r.u32()?;
    let [param, a, b, theta, xc, yc] = [r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?];
    let geometry = GeometrySpec {
        shape: Shape::decode(code, param)?,
        a,
        b,
        theta,
        center: [xc, yc],
    };
    geometry
        .validate()
        .map_err(|e| Error::Corrupt(format!("record {id}: {e}")))?;
    let coords = (0..n).map(|_| Ok([r.f32()?, r.f32()?])).collect::<Result<Vec<_>>>()?;
    let fields = (0..n)
        .map(|_| Ok([r.f32()?, r.f32()?, r.f32()?]))
        .collect::<Result<Vec<_>>>()?;
    let flags = r.take(n)?;
    if flags.iter().any(|&f| f > 1) {
        return Err(Error::Corrupt(format!("record {id}: invalid surface flag")));
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!("record {id}: {} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Sample {
        id,
        cloud: PointCloud {
            coords,
            on_surface: flags.iter().map(|&f| f == 1).collect(),
            geometry,
        },
        fields,
    })
}

pub fn manifest(ds: &Dataset) -> Manifest {
    Manifest {
        format_version: FORMAT_VERSION,
        seed: ds.seed,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        config: ds.config.clone(),
        stats: ds.stats,
        splits: ds.splits.clone(),
        reynolds: ds.reynolds(),
        checksum: ds.checksum(),
    }
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join(RECORD_DIR))?;
    for s in &ds.samples {
        fs::write(record_path(dir, s.id), encode_record(s))?;
    }
    let json = serde_json::to_string_pretty(&manifest(ds))?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Corrupt(format!("unsupported dataset format version {}", m.format_version)));
    }
    Ok(m)
}

/// Loads a dataset and verifies its records against the manifest checksum.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = load_manifest(dir)?;
    let samples = (0..m.config.n_geometries)
        .map(|id| decode_record(id, &fs::read(record_path(dir, id))?))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        seed: m.seed,
        config: m.config,
        samples,
        splits: m.splits,
        stats: m.stats,
    };
    let sum = ds.checksum();
    if sum != m.checksum {
        return Err(Error::Corrupt(format!(
            "dataset checksum {sum:08x} does not match manifest {:08x}",
            m.checksum
        )));
    }
    Ok(ds)
}
