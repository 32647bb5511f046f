//! Simulated-respondent survey engine.
//!
//! Composes partisan-primed prompt batteries, samples completions through a
//! language-model gateway, scores them on anchor-phrase semantic axes, fits
//! per-wording priming regressions, and clusters "This is because"
//! justifications into themes with partisan-composition tests.
//!
//! The numeric modules ([`axis`], [`cluster`], [`stats::ols`]) are generic over
//! a [`Scalar`]; the aliases below fix them to `f64`, which is what the
//! pipeline uses end to end.

pub mod axis;
pub mod battery;
pub mod cluster;
pub mod error;
pub mod gateway;
pub mod justify;
pub mod pipeline;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Embedding vector with `f64` components.
pub type Embedding = gateway::EmbeddingVector<f64>;
/// Axis score with `f64` similarities.
pub type Score = axis::AxisScore<f64>;
/// Fitted k-means model over `f64` points.
pub type KMeansModel = cluster::ClusterModel<f64>;
/// Cluster quality row over `f64` points.
pub type Quality = cluster::ClusterQuality<f64>;
/// Two-group OLS fit in `f64`.
pub type Regression = stats::RegressionResult<f64>;

/// Single-precision variants, mostly useful for large embedding sets.
pub mod f32 {
    pub type Embedding = crate::gateway::EmbeddingVector<f32>;
    pub type KMeansModel = crate::cluster::ClusterModel<f32>;
    pub type Quality = crate::cluster::ClusterQuality<f32>;
}
