//! Adaptive informative path planning in unknown 3D orchards.
pub mod config;
pub mod dyngraph;
pub mod gp;
pub mod mission;
pub mod nnpolicy;
pub mod planners;
pub mod ppo;
pub mod reward;
pub mod scalar;
pub mod seed;
pub mod world;

pub use scalar::Scalar;

pub type GpModel64 = gp::GpModel<f64>;
pub type GpModel32 = gp::GpModel<f32>;
pub type DynGraph64 = dyngraph::DynGraph<f64>;
pub type DynGraph32 = dyngraph::DynGraph<f32>;
pub type Tensor64 = nnpolicy::Tensor<f64>;
pub type Tensor32 = nnpolicy::Tensor<f32>;
pub type PolicyParams64 = nnpolicy::PolicyParams<f64>;
pub type PolicyParams32 = nnpolicy::PolicyParams<f32>;
