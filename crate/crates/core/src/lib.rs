//! Episodic Q-learning for continuous control where every episode refits a
//! two-layer ReLU Q-network by solving a constrained convex program.
//!
//! The numerical modules are generic over [`Real`] (`f32`/`f64`); the
//! aliases below fix the common `f64` instantiations.

pub mod dp;
pub mod env;
pub mod error;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod patterns;
pub mod qnet;
pub mod rng;
pub mod rollout;
pub mod scalar;
pub mod solver;
pub mod theorem;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type ConvexWeights = solver::ConvexWeights<f64>;
pub type ConvexWeights32 = solver::ConvexWeights<f32>;
pub type ConvexProblem = solver::ConvexProblem<f64>;
pub type ConvexProblem32 = solver::ConvexProblem<f32>;
pub type QNetwork = qnet::QNetwork<f64>;
pub type QNetwork32 = qnet::QNetwork<f32>;
pub type BuiltinPlant = env::BuiltinPlant<f64>;
pub type BuiltinPlant32 = env::BuiltinPlant<f32>;
pub type RolloutBatch = rollout::RolloutBatch<f64>;
pub type Trajectory = rollout::Trajectory<f64>;
pub type DpSolution = dp::DpSolution<f64>;
