//! Random dynamical systems: cocycles over shift bases, Lyapunov spectrum
//! and Oseledets subspaces, the adapted random norm, and linearization of
//! randomly perturbed contractions.

pub mod adapted;
pub mod cocycle;
pub mod linearize;

pub use adapted::{adapted_random_norm, RandomNorm};
pub use cocycle::{
    cocycle_products, integrability_check, lyapunov_spectrum, splitting_bases, Cocycle,
    SpectrumReport,
};
pub use linearize::{rds_from_system, rds_linearize, RdsHandle, RdsLinearization, RdsOptions};
