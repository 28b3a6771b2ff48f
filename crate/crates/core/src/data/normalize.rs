//! Min/max scaling: coordinates to `[−1, 1]`, fields to `[0, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const EMPTY: Range = Range {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
    };

    pub fn include(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

/// Per-quantity ranges of the training split: `x, y` and `u, v, p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub coords: [Range; 2],
    pub fields: [Range; 3],
}

impl NormStats {
    /// Ranges over every point of every `(coords, fields)` pair.
    pub fn from_samples<'a, I>(samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [[f64; 2]], &'a [[f64; 3]])>,
    {
        let mut s = NormStats {
            coords: [Range::EMPTY; 2],
            fields: [Range::EMPTY; 3],
        };
        for (xs, fs) in samples {
            for p in xs {
                for k in 0..2 {
                    s.coords[k].include(p[k]);
                }
            }
            for f in fs {
                for k in 0..3 {
                    s.fields[k].include(f[k]);
                }
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for r in self.coords.iter().chain(&self.fields) {
            if !(r.max > r.min && r.span().is_finite()) {
                return Err(Error::Config(format!("degenerate normalization range {r:?}")));
            }
        }
        Ok(())
    }

    pub fn normalize_coord(&self, axis: usize, v: f64) -> f64 {
        let r = self.coords[axis];
        2.0 * (v - r.min) / r.span() - 1.0
    }

    pub fn denormalize_coord(&self, axis: usize, v: f64) -> f64 {
        let r = self.coords[axis];
        (v + 1.0) * 0.5 * r.span() + r.min
    }

    pub fn normalize_field(&self, k: usize, v: f64) -> f64 {
        let r = self.fields[k];
        (v - r.min) / r.span()
    }

    pub fn denormalize_field(&self, k: usize, v: f64) -> f64 {
        let r = self.fields[k];
        v * r.span() + r.min
    }

    /// N×2 single-precision tensor of normalized coordinates.
    pub fn normalize_coords(&self, coords: &[[f64; 2]]) -> Tensor {
        let data = coords
            .iter()
            .flat_map(|p| [self.normalize_coord(0, p[0]) as f32, self.normalize_coord(1, p[1]) as f32])
            .collect();
        Tensor::new(&[coords.len(), 2], data).expect("shape matches data")
    }

    pub fn denormalize_coords(&self, t: &Tensor) -> Result<Vec<[f64; 2]>> {
        if t.rank() != 2 || t.channels() != 2 {
            return Err(Error::Dimension(format!("expected N×2 coordinates, got {:?}", t.shape())));
        }
        Ok(t.data()
            .chunks(2)
            .map(|c| [self.denormalize_coord(0, c[0] as f64), self.denormalize_coord(1, c[1] as f64)])
            .collect())
    }

    /// N×3 single-precision tensor of normalized fields.
    pub fn normalize_fields(&self, fields: &[[f64; 3]]) -> Tensor {
        let data = fields
            .iter()
            .flat_map(|f| (0..3).map(move |k| self.normalize_field(k, f[k]) as f32))
            .collect();
        Tensor::new(&[fields.len(), 3], data).expect("shape matches data")
    }

    pub fn denormalize_fields(&self, t: &Tensor) -> Result<Vec<[f64; 3]>> {
        if t.rank() != 2 || t.channels() != 3 {
            return Err(Error::Dimension(format!("expected N×3 fields, got {:?}", t.shape())));
        }
        Ok(t.data()
            .chunks(3)
            .map(|c| [0, 1, 2].map(|k| self.denormalize_field(k, c[k] as f64)))
            .collect())
    }

    /// The ten range endpoints in a fixed order (x, y, u, v, p; min before max).
    pub fn to_array(&self) -> [f64; 10] {
        let mut out = [0.0; 10];
        for (i, r) in self.coords.iter().chain(&self.fields).enumerate() {
            out[2 * i] = r.min;
            out[2 * i + 1] = r.max;
        }
        out
    }

    pub fn from_array(a: [f64; 10]) -> Result<Self> {
        let r = |i: usize| Range {
            min: a[2 * i],
            max: a[2 * i + 1],
        };
        let s = NormStats {
            coords: [r(0), r(1)],
            fields: [r(2), r(3), r(4)],
        };
        s.validate()?;
        Ok(s)
    }
}
