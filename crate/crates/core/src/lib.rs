//! Coulomb loss for crowded pedestrian box regression, anchor location
//! selecting, and the synthetic simulator and evaluation tools used to
//! exercise them without a network.
//!
//! Everything is generic over the scalar type (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod anchors;
pub mod baselines;
pub mod couloss;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod gradcheck;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use geometry::{BBox, Point};
pub use scalar::Scalar;

pub type BBox64 = geometry::BBox<f64>;
pub type BBox32 = geometry::BBox<f32>;
pub type Point64 = geometry::Point<f64>;
pub type CouLossConfig64 = couloss::CouLossConfig<f64>;
pub type CompositeConfig64 = baselines::CompositeConfig<f64>;
pub type Scene64 = simulator::Scene<f64>;
pub type ProbabilityMap64 = anchors::ProbabilityMap<f64>;
pub type Detection64 = evalkit::Detection<f64>;
