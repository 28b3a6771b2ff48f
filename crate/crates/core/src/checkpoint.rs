//! Binary model checkpoints.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! "PFGN1"                 5 bytes
//! version                 u32
//! model kind              u8   (0 fm, 1 ddpm, 2 baseline)
//! d, d_emb, n_fields      3 × u32
//! diffusion steps         u32
//! schedule offset         f64
//! normalization ranges    10 × f64 (x, y, u, v, p; min then max)
//! layer group sizes       3 × u32 (local, global, decoder)
//! block count             u32
//! per block               c_in u32, c_out u32, has_norm u8
//! payload length (bytes)  u64
//! payload                 f32 per value: weight, bias[, scale, shift, running mean, running var]
//! CRC32 of the payload    u32
//! ```

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::pointnet::{Architecture, BatchNormParams, LayerBlock, ModelKind, ModelParams};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 5] = b"PFGN1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub stats: NormStats,
    pub diffusion_steps: usize,
    pub diffusion_offset: f64,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit the checkpoint format")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn block_tensors(b: &LayerBlock) -> Vec<&Tensor> {
    let mut t = vec![&b.weight, &b.bias];
    if let Some(n) = &b.norm {
        t.extend([&n.scale, &n.shift, &n.running_mean, &n.running_var]);
    }
    t
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(p.kind.code());
        for v in [p.coord_dims, p.embed_dims, p.field_dims, self.diffusion_steps] {
            put_u32(&mut out, v)?;
        }
        out.extend_from_slice(&self.diffusion_offset.to_le_bytes());
        for v in self.stats.to_array() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [p.arch.local.len(), p.arch.global.len(), p.arch.decoder.len(), p.blocks.len()] {
            put_u32(&mut out, v)?;
        }
        for b in &p.blocks {
            put_u32(&mut out, b.in_channels())?;
            put_u32(&mut out, b.out_channels())?;
            out.push(b.norm.is_some() as u8);
        }
        let mut payload = Vec::new();
        for b in &p.blocks {
            for t in block_tensors(b) {
                for v in t.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        let crc = crc32fast::hash(&payload);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5)? != MAGIC {
            return Err(Error::Corrupt("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported checkpoint version {version}")));
        }
        let kind_code = r.take(1)?[0];
        let kind = ModelKind::from_code(kind_code)
            .ok_or_else(|| Error::Corrupt(format!("unknown model kind code {kind_code}")))?;
        let [d, d_emb, n_fields, steps] = [r.usize()?, r.usize()?, r.usize()?, r.usize()?];
        let offset = r.f64()?;
        let mut ranges = [0.0; 10];
        for v in &mut ranges {
            *v = r.f64()?;
        }
        let stats = NormStats::from_array(ranges).map_err(|e| Error::Corrupt(e.to_string()))?;
        let groups = [r.usize()?, r.usize()?, r.usize()?];
        let n_blocks = r.usize()?;
        if n_blocks != groups.iter().sum::<usize>() + 1 {
            return Err(Error::Corrupt(format!("{n_blocks} blocks do not match layer groups {groups:?}")));
        }
        let mut shapes = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let (ci, co) = (r.usize()?, r.usize()?);
            let bn = match r.take(1)?[0] {
                0 => false,
                1 => true,
                f => return Err(Error::Corrupt(format!("invalid norm flag {f}"))),
            };
            shapes.push((ci, co, bn));
        }
        let widths: Vec<usize> = shapes.iter().map(|s| s.1).collect();
        let arch = Architecture {
            local: widths[..groups[0]].to_vec(),
            global: widths[groups[0]..groups[0] + groups[1]].to_vec(),
            decoder: widths[groups[0] + groups[1]..n_blocks - 1].to_vec(),
        };
        let template = crate::pointnet::build_with(&arch, kind, d, d_emb, n_fields, 0)
            .map_err(|e| Error::Corrupt(format!("inconsistent model header: {e}")))?;
        let expected: Vec<_> = template
            .blocks
            .iter()
            .map(|b| (b.in_channels(), b.out_channels(), b.norm.is_some()))
            .collect();
        if expected != shapes {
            return Err(Error::Corrupt("declared layer shapes do not form a valid network".into()));
        }
        let payload_len = r.u64()? as usize;
        let declared: usize = template
            .blocks
            .iter()
            .map(|b| block_tensors(b).iter().map(|t| t.numel()).sum::<usize>())
            .sum::<usize>()
            * 4;
        if payload_len != declared {
            return Err(Error::Corrupt(format!("payload of {payload_len} bytes, shapes need {declared}")));
        }
        let payload = r.take(payload_len)?;
        let crc = r.u32()?;
        if r.pos != bytes.len() {
            return Err(Error::Corrupt("trailing bytes after checkpoint".into()));
        }
        if crc32fast::hash(payload) != crc {
            return Err(Error::Corrupt("checkpoint payload fails its CRC check".into()));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut read = |t: &Tensor| -> Tensor {
            let data: Vec<f32> = values.by_ref().take(t.numel()).collect();
            Tensor::new(t.shape(), data).expect("payload length already checked")
        };
        let blocks = template
            .blocks
            .iter()
            .map(|b| {
                let weight = read(&b.weight);
                let bias = read(&b.bias);
                let norm = b.norm.as_ref().map(|n| BatchNormParams {
                    scale: read(&n.scale),
                    shift: read(&n.shift),
                    running_mean: read(&n.running_mean),
                    running_var: read(&n.running_var),
                });
                LayerBlock { weight, bias, norm }
            })
            .collect();
        Ok(Checkpoint {
            params: ModelParams { blocks, ..template },
            stats,
            diffusion_steps: steps,
            diffusion_offset: offset,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
