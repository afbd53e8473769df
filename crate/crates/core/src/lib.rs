//! Trust-region graphical Stein variational inference.
//!
//! Particle-based posterior approximation that combines local (Markov-blanket)
//! kernels, block Hessians of the second variation, and two trust-region step
//! controllers. The crate also ships the first- and second-order baselines,
//! the synthetic problem generators (layered Bayes nets, sensor network
//! localization), and an MMD evaluation harness.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod kernels;
pub mod model;
pub mod parallel;
pub mod samples;
pub mod stein;
pub mod trace;
pub mod trustregion;

pub use error::{Error, Result};
pub use kernels::{LocalKernelFamily, Rbf};
pub use model::{FactorLayout, TargetModel};
pub use samples::SampleMatrix;
pub use stein::{ParticleHessian, ParticleSet, SteinGradientField};
