//! Hopkins clustering-tendency statistic, a differentiable Hopkins loss for
//! shaping feature-space topology, and the small numerical stack needed to
//! train MLP classifiers and bottleneck autoencoders with it.

pub mod error;
pub mod gradcheck;
pub mod hopkins;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use hopkins::{hopkins_loss, hopkins_statistic, HopkinsConfig, HopkinsWitness};
pub use matrix::Matrix;
pub use metrics::DistanceMetric;
pub use rng::Rng;
pub use tape::{Gradients, Mode, NodeId, Tape};
