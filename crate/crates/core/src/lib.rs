//! Omitted-variable-bias sensitivity analysis for LATE, LATT and the
//! partially linear IV model, estimated by cross-fitted double machine
//! learning.

pub mod cli;
pub mod config;
pub mod crossfit;
pub mod error;
pub mod identify;
pub mod inference;
pub mod learners;
pub mod model;
pub mod scores;
pub mod sensitivity;
pub mod simdgp;

pub use error::{Error, Result};
pub use model::{Dataset, Estimand, SensitivityConfig, ShortEstimates};
