//! Offline reinforcement learning with function-valued actions.
//!
//! Fitted-Q evaluation and fitted-Q iteration over a tensor-product Gaussian
//! RKHS, penalized cubic B-spline functional linear policies, and the
//! log-quantile-density pipeline used to turn daily step samples into
//! functional actions.

pub mod bspline;
pub mod density;
pub mod env;
pub mod error;
pub mod fqe;
pub mod fqi;
pub mod ingest;
pub mod io;
pub mod kernel;
pub mod model;
pub mod report;
pub mod reward;
pub mod svg;
pub mod util;

pub use error::{Error, Result};
pub use model::{Dataset, Grid, GridFunction, RunConfig, ScalingRecord, State, Transition};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
