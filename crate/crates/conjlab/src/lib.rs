//! Constructive linearization toolkit for nonautonomous semilinear
//! difference equations and discrete random dynamical systems.
//!
//! The library builds the conjugacies between a semilinear system and its
//! linear part by contraction iteration, certifies the constants the
//! construction needs, and verifies every conclusion (conjugation identity,
//! near-identity, Lipschitz bounds, smoothness) numerically on a finite
//! window.

pub mod error;
pub mod omega;
pub mod window;
pub mod norms;
pub mod system;
pub mod families;
pub mod hypotheses;
pub mod conjugacy;
pub mod smooth;
pub mod rds;
pub mod localization;
pub mod config;
pub mod report;
pub mod cache;
pub mod harness;

pub use error::{Error, Result};
