//! Parametric cylinder cross-sections.
//!
//! Every shape is a unit reference curve scaled by `(a, b)` along its body
//! axes, rotated by `theta` and translated to `center`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Distance (in unit-curve coordinates) below which a point counts as lying
/// on the boundary rather than strictly inside.
pub const INSIDE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Shape {
    Circle,
    Ellipse,
    /// `|x|^m + |y|^m = 1`.
    Superellipse { m: f64 },
    /// Regular `k`-gon with unit circumradius; vertex `j` sits at angle `π/k + 2πj/k`.
    Polygon { k: u32 },
}

/// Family names accepted in dataset configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Circle,
    Ellipse,
    Superellipse,
    Polygon,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Circle, Family::Ellipse, Family::Superellipse, Family::Polygon];
}

impl Shape {
    pub fn family(&self) -> Family {
        match self {
            Shape::Circle => Family::Circle,
            Shape::Ellipse => Family::Ellipse,
            Shape::Superellipse { .. } => Family::Superellipse,
            Shape::Polygon { .. } => Family::Polygon,
        }
    }

    /// Family code and shape parameter used in binary records.
    pub fn encode(&self) -> (u32, f64) {
        match *self {
            Shape::Circle => (0, 0.0),
            Shape::Ellipse => (1, 0.0),
            Shape::Superellipse { m } => (2, m),
            Shape::Polygon { k } => (3, k as f64),
        }
    }

    pub fn decode(code: u32, param: f64) -> Result<Self> {
        Ok(match code {
            0 => Shape::Circle,
            1 => Shape::Ellipse,
            2 => Shape::Superellipse { m: param },
            3 if param.fract() == 0.0 && param >= 0.0 => Shape::Polygon { k: param as u32 },
            _ => return Err(Error::Corrupt(format!("unknown shape code {code} with parameter {param}"))),
        })
    }

    /// Point of the unit curve at parameter `s ∈ [0, 1)`, counterclockwise.
    fn unit_point(&self, s: f64) -> [f64; 2] {
        match *self {
            Shape::Circle | Shape::Ellipse => {
                let phi = TAU * s;
                [phi.cos(), phi.sin()]
            }
            Shape::Superellipse { m } => {
                let phi = TAU * s;
                let e = 2.0 / m;
                let (c, sn) = (phi.cos(), phi.sin());
                [c.signum() * c.abs().powf(e), sn.signum() * sn.abs().powf(e)]
            }
            Shape::Polygon { k } => {
                let pos = s * k as f64;
                let j = (pos.floor() as u32).min(k - 1);
                let u = pos - j as f64;
                let v0 = polygon_vertex(k, j);
                let v1 = polygon_vertex(k, j + 1);
                [v0[0] + u * (v1[0] - v0[0]), v0[1] + u * (v1[1] - v0[1])]
            }
        }
    }

    /// Signed level value of a unit-curve point: negative inside, zero on the
    /// boundary, positive outside.
    fn unit_level(&self, p: [f64; 2]) -> f64 {
        let [x, y] = p;
        match *self {
            Shape::Circle | Shape::Ellipse => x.hypot(y) - 1.0,
            Shape::Superellipse { m } => (x.abs().powf(m) + y.abs().powf(m)).powf(1.0 / m) - 1.0,
            Shape::Polygon { k } => {
                let apothem = (PI / k as f64).cos();
                let support = (0..k)
                    .map(|j| {
                        let a = TAU * j as f64 / k as f64;
                        x * a.cos() + y * a.sin()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                support / apothem - 1.0
            }
        }
    }

    /// Outward (unnormalized) normal of the unit curve at parameter `s`.
    fn unit_normal(&self, s: f64) -> [f64; 2] {
        match *self {
            Shape::Circle | Shape::Ellipse => self.unit_point(s),
            Shape::Superellipse { m } => {
                let [x, y] = self.unit_point(s);
                [x.signum() * x.abs().powf(m - 1.0), y.signum() * y.abs().powf(m - 1.0)]
            }
            Shape::Polygon { k } => {
                let pos = s * k as f64;
                let j = (pos.floor() as u32).min(k - 1);
                let edge = |j: u32| {
                    let a = TAU * (j + 1) as f64 / k as f64;
                    [a.cos(), a.sin()]
                };
                if pos - j as f64 == 0.0 {
                    let (e0, e1) = (edge(j + k - 1), edge(j));
                    [e0[0] + e1[0], e0[1] + e1[1]]
                } else {
                    edge(j)
                }
            }
        }
    }
}

fn polygon_vertex(k: u32, j: u32) -> [f64; 2] {
    let a = PI / k as f64 + TAU * (j % k) as f64 / k as f64;
    [a.cos(), a.sin()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub shape: Shape,
    /// Scale along the body x axis (m).
    pub a: f64,
    /// Scale along the body y axis (m).
    pub b: f64,
    /// Counterclockwise orientation (rad).
    pub theta: f64,
    pub center: [f64; 2],
}

pub const DEFAULT_CENTER: [f64; 2] = [8.0, 16.0];

impl GeometrySpec {
    pub fn circle(radius: f64) -> Self {
        Self {
            shape: Shape::Circle,
            a: radius,
            b: radius,
            theta: 0.0,
            center: DEFAULT_CENTER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.theta, self.center[0], self.center[1]]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.a <= 0.0 || self.b <= 0.0 {
            return Err(Error::Config(format!("geometry scales must be positive and finite: {self:?}")));
        }
        match self.shape {
            Shape::Circle if self.a != self.b => Err(Error::Config("circle needs a == b".into())),
            Shape::Superellipse { m } if !(m > 1.0 && m.is_finite()) => {
                Err(Error::Config(format!("superellipse exponent {m} must exceed 1")))
            }
            Shape::Polygon { k } if !(3..=6).contains(&k) => {
                Err(Error::Config(format!("polygon side count {k} outside 3..=6")))
            }
            _ => Ok(()),
        }
    }

    /// Characteristic length `max(a, b)`.
    pub fn char_length(&self) -> f64 {
        self.a.max(self.b)
    }

    /// Radius `√(ab)` of the circle the flow oracle maps the body onto.
    pub fn equivalent_radius(&self) -> f64 {
        (self.a * self.b).sqrt()
    }

    /// Lab point expressed in the body frame (translated and rotated by −θ).
    pub fn to_body(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn from_body(&self, q: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.center[0] + c * q[0] - s * q[1], self.center[1] + s * q[0] + c * q[1]]
    }

    /// Rotates a body-frame vector into the lab frame.
    pub fn rotate_to_lab(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    /// Signed level of a lab point: negative strictly inside the body.
    pub fn level(&self, p: [f64; 2]) -> f64 {
        let q = self.to_body(p);
        self.shape.unit_level([q[0] / self.a, q[1] / self.b])
    }

    /// `true` when `p` lies strictly inside the body (beyond rounding).
    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.level(p) < -INSIDE_TOLERANCE
    }

    /// Boundary point at parameter `s ∈ [0, 1)`; increasing `s` runs counterclockwise.
    pub fn boundary_point(&self, s: f64) -> [f64; 2] {
        let u = self.shape.unit_point(s);
        self.from_body([u[0] * self.a, u[1] * self.b])
    }

    /// Outward unit normal at boundary parameter `s`.
    pub fn outward_normal(&self, s: f64) -> [f64; 2] {
        let n = self.shape.unit_normal(s);
        let body = [n[0] / self.a, n[1] / self.b];
        let len = body[0].hypot(body[1]);
        self.rotate_to_lab([body[0] / len, body[1] / len])
    }

    /// Reynolds number `ρ·L·U/μ` based on the characteristic length.
    pub fn reynolds(&self, rho: f64, u_inf: f64, mu: f64) -> f64 {
        rho * self.char_length() * u_inf / mu
    }
}
