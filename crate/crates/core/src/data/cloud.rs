//! Point clouds: boundary points of the body followed by flow-domain points.

use super::geometry::GeometrySpec;
use crate::error::{Error, Result};
use crate::rng::SeededStream;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Axis-aligned sampling window (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Default for Window {
    fn default() -> Self {
        Self {
            x: [2.0, 22.0],
            y: [8.0, 24.0],
        }
    }
}

impl Window {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.x[0]..=self.x[1]).contains(&p[0]) && (self.y[0]..=self.y[1]).contains(&p[1])
    }

    fn farthest_corner_distance(&self, c: [f64; 2]) -> f64 {
        let dx = (c[0] - self.x[0]).abs().max((c[0] - self.x[1]).abs());
        let dy = (c[1] - self.y[0]).abs().max((c[1] - self.y[1]).abs());
        dx.hypot(dy)
    }
}

/// A geometry sampled as points. Surface points come first, in
/// counterclockwise order along the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub coords: Vec<[f64; 2]>,
    pub on_surface: Vec<bool>,
    pub geometry: GeometrySpec,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Indices of surface points in boundary order.
    pub fn surface_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.on_surface[i]).collect()
    }

    /// Returns the cloud restricted to `keep` (which must be ascending).
    pub fn select(&self, keep: &[usize]) -> PointCloud {
        PointCloud {
            coords: keep.iter().map(|&i| self.coords[i]).collect(),
            on_surface: keep.iter().map(|&i| self.on_surface[i]).collect(),
            geometry: self.geometry,
        }
    }
}

/// Attempts allowed per requested interior point before giving up.
const MAX_TRIES_PER_POINT: usize = 1000;

/// Samples `n_surface` boundary points equispaced in the curve parameter and
/// `n_points − n_surface` points of the window outside the body, drawn with
/// density proportional to `1 / max(r, L)²` about the body center.
pub fn sample_cloud(
    geom: &GeometrySpec,
    n_points: usize,
    n_surface: usize,
    window: &Window,
    rng: &mut SeededStream,
) -> Result<PointCloud> {
    geom.validate()?;
    if n_surface >= n_points {
        return Err(Error::Config(format!(
            "surface count {n_surface} must be below the total point count {n_points}"
        )));
    }
    let mut coords = Vec::with_capacity(n_points);
    for i in 0..n_surface {
        let p = geom.boundary_point(i as f64 / n_surface as f64);
        coords.push(p);
    }
    let probe = 256;
    if !(0..probe).all(|i| window.contains(geom.boundary_point(i as f64 / probe as f64))) {
        return Err(Error::Config(format!("window {window:?} does not contain the body")));
    }
    let core = geom.char_length();
    let far = window.farthest_corner_distance(geom.center);
    let log_ratio = (far / core).ln().max(0.0);
    // Mass of the flat core disk versus the 1/r² annulus.
    let p_core = 1.0 / (1.0 + 2.0 * log_ratio);
    let needed = n_points - n_surface;
    let mut tries = 0usize;
    while coords.len() < n_points {
        tries += 1;
        if tries > MAX_TRIES_PER_POINT * needed {
            return Err(Error::Config(format!("window {window:?} leaves too little room around the body")));
        }
        let u = rng.uniform();
        let r = if rng.uniform() < p_core {
            core * u.sqrt()
        } else {
            core * (u * log_ratio).exp()
        };
        let phi = TAU * rng.uniform();
        let p = [geom.center[0] + r * phi.cos(), geom.center[1] + r * phi.sin()];
        if window.contains(p) && geom.level(p) > 0.0 {
            coords.push(p);
        }
    }
    let mut on_surface = vec![false; n_points];
    on_surface[..n_surface].fill(true);
    Ok(PointCloud {
        coords,
        on_surface,
        geometry: *geom,
    })
}

/// Counterclockwise angle of `p` about `center`, in degrees within `[0, 360)`.
pub fn angle_deg(center: [f64; 2], p: [f64; 2]) -> f64 {
    let a = (p[1] - center[1]).atan2(p[0] - center[0]).to_degrees();
    let a = if a < 0.0 { a + 360.0 } else { a };
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Number of points kept when removing a `fraction` of `n`.
pub fn kept_count(n: usize, fraction: f64) -> usize {
    ((1.0 - fraction) * n as f64 - 1e-9).ceil() as usize
}

/// Removes a uniformly random `fraction` of points (surface points included),
/// keeping per-point `values` aligned and the original relative order.
pub fn drop_points<T: Clone>(
    cloud: &PointCloud,
    values: &[T],
    fraction: f64,
    rng: &mut SeededStream,
) -> Result<(PointCloud, Vec<T>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("drop fraction {fraction} outside [0, 1)")));
    }
    if values.len() != cloud.len() {
        return Err(Error::Dimension(format!("{} values for {} points", values.len(), cloud.len())));
    }
    let n = cloud.len();
    let keep_n = kept_count(n, fraction);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..keep_n.min(n.saturating_sub(1)) {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    let mut keep = idx[..keep_n].to_vec();
    keep.sort_unstable();
    let vals = keep.iter().map(|&i| values[i].clone()).collect();
    Ok((cloud.select(&keep), vals))
}

/// Perimeter of the closed polygon through `pts`.
pub fn closed_perimeter(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (p, q) = (pts[i], pts[(i + 1) % n]);
            (q[0] - p[0]).hypot(q[1] - p[1])
        })
        .sum()
}
