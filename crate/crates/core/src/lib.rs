//! Spiking recurrent winner-take-all policies: mean-field and spiking inference,
//! exact and local policy gradients, reward-modulated STDP, and the training
//! loops, environments and baselines around them.
//!
//! Numeric types are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod data;
pub mod envs;
pub mod error;
pub mod gradient;
pub mod inference;
pub mod linalg;
pub mod mlp;
pub mod noise;
pub mod rl;
pub mod scalar;
pub mod spikesim;
pub mod stdp;
pub mod topology;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use topology::{NetworkShape, RwtaParams, Topology};

pub type RwtaParams64 = topology::RwtaParams<f64>;
pub type RwtaParams32 = topology::RwtaParams<f32>;
pub type FiringState64 = inference::FiringState<f64>;
pub type FiringState32 = inference::FiringState<f32>;
pub type PolicyGradient64 = gradient::PolicyGradient<f64>;
pub type PolicyGradient32 = gradient::PolicyGradient<f32>;
pub type DenseNet64 = mlp::DenseNet<f64>;
pub type DenseNet32 = mlp::DenseNet<f32>;
pub type Policy64 = rl::Policy<f64>;
pub type Policy32 = rl::Policy<f32>;
