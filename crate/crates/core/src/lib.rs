//! Point-cloud surrogate models for per-point flow fields around bluff bodies.
//!
//! Three models share one segmentation-style PointNet trunk:
//!
//! * a flow-matching generator that integrates a learned velocity field from
//!   Gaussian noise to the fields with explicit Euler steps,
//! * a denoising-diffusion generator with a cosine noise schedule and
//!   ancestral sampling,
//! * a deterministic regression network with a sigmoid head.
//!
//! Training data come from an analytic ideal-flow oracle evaluated on
//! randomly shaped and oriented cylinder cross-sections.

pub mod baseline;
pub mod checkpoint;
pub mod conditioning;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod flow_matching;
pub mod generator;
pub mod kernels;
pub mod pointnet;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Category, Error, Result};
pub use rng::SeededStream;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
