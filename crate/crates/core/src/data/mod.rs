//! Synthetic flow data: parametric bodies, point-cloud sampling, analytic
//! fields, normalization, splits and persistence.

pub mod cloud;
pub mod dataset;
pub mod geometry;
pub mod normalize;
pub mod oracle;
pub mod store;

pub use cloud::{drop_points, kept_count, sample_cloud, PointCloud, Window};
pub use dataset::{build_dataset, split_sizes, Dataset, DatasetConfig, Sample, Split, Splits};
pub use geometry::{Family, GeometrySpec, Shape};
pub use normalize::{NormStats, Range};
pub use oracle::{oracle_fields, oracle_point, FlowConfig};
pub use store::{load_dataset, save_dataset};
