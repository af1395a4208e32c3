//! Modelling, simulation and brightness optimization of CHSH experiments
//! with multi-pair entangled photon sources over lossy channels.

// `!(x > 0.0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod fock;
pub mod model;
pub mod montecarlo;
pub mod optimizer;
pub mod oracle;

pub use error::{Error, Result};

/// Library version, embedded in CLI artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
