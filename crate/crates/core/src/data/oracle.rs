//! Analytic flow fields: ideal flow past a circle, mapped onto each body by an
//! anisotropic scaling of its frame.

use super::geometry::GeometrySpec;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fluid properties and free-stream state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// Density (kg/m³).
    pub rho: f64,
    /// Dynamic viscosity (Pa·s).
    pub mu: f64,
    /// Free-stream speed (m/s).
    pub u_inf: f64,
    /// Reference pressure (Pa).
    pub p0: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            mu: 0.05,
            u_inf: 1.0,
            p0: 0.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho > 0.0 && self.mu > 0.0 && self.u_inf > 0.0 && self.p0.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("flow properties must be positive: {self:?}")))
        }
    }
}

/// `(u, v, p)` at one lab point outside the body.
pub fn oracle_point(geom: &GeometrySpec, flow: &FlowConfig, p: [f64; 2]) -> Result<[f64; 3]> {
    if geom.contains(p) {
        return Err(Error::Domain(format!("point {p:?} lies inside the body")));
    }
    let big_r = geom.equivalent_radius();
    let q = geom.to_body(p);
    let (mut x, mut y) = (q[0] * big_r / geom.a, q[1] * big_r / geom.b);
    let mut r2 = x * x + y * y;
    if r2 < big_r * big_r {
        let s = big_r / r2.sqrt();
        x *= s;
        y *= s;
        r2 = big_r * big_r;
    }
    let u_inf = flow.u_inf;
    let k = big_r * big_r / (r2 * r2);
    let ub = u_inf * (1.0 + k * (y * y - x * x));
    let vb = -2.0 * u_inf * k * x * y;
    let pressure = flow.p0 + 0.5 * flow.rho * (u_inf * u_inf - (ub * ub + vb * vb));
    let [u, v] = geom.rotate_to_lab([ub, vb]);
    Ok([u, v, pressure])
}

pub fn oracle_fields(geom: &GeometrySpec, flow: &FlowConfig, coords: &[[f64; 2]]) -> Result<Vec<[f64; 3]>> {
    coords.iter().map(|&p| oracle_point(geom, flow, p)).collect()
}
