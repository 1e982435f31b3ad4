//! Offline policy iteration for glycemic targets.
//!
//! The pipeline turns hourly ICU patient series into a finite MDP and compares
//! the clinicians' observed policy with the optimal one:
//!
//! 1. [`cohort`]: parse, filter, impute, normalize and split patients.
//! 2. [`encoder`]: optional sparse-autoencoder representation of each hour.
//! 3. [`cluster`]: k-means over state vectors gives the discrete states.
//! 4. [`mdp`]: glucose bins as actions, empirical transitions, ±100 rewards.
//! 5. [`solver`]: policy evaluation / policy iteration.
//! 6. [`calib`]: mortality-versus-return curve and the policy comparison.
//!
//! [`synthgen`] generates cohorts with a known ground-truth MDP and
//! [`pipeline`] chains every stage behind one config file.

pub mod calib;
pub mod cluster;
pub mod cohort;
pub mod config;
pub mod encoder;
pub mod error;
pub mod mdp;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod solver;
pub mod synthgen;
pub mod table;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type EncoderParams = encoder::EncoderParams<f64>;
pub type EncoderParams32 = encoder::EncoderParams<f32>;
pub type ClusterModel = cluster::ClusterModel<f64>;
pub type ClusterModel32 = cluster::ClusterModel<f32>;
pub type MdpModel = mdp::MdpModel<f64>;
pub type TabularMdp = solver::TabularMdp<f64>;
pub type PolicySolution = solver::PolicySolution<f64>;
pub type CalibrationCurve = calib::CalibrationCurve<f64>;
