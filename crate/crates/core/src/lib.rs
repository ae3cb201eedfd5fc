//! Constrained nonparametric M-estimation over first-order epi-splines.

pub mod constraints;
pub mod epispline;
pub mod error;
pub mod estimate;
pub mod experiments;
pub mod geometry;
pub mod hypodist;
pub mod linalg;
pub mod losses;
pub mod plugins;
pub mod solver;

pub use error::{Error, Result};
