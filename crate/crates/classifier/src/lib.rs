//! Miniature CNN classifiers for slice-wise artifact detection: a small
//! autodiff graph, three backbone families, Adam training with early
//! stopping, checkpoints and Grad-CAM explanations.

pub mod arch;
pub mod checkpoint;
mod error;
pub mod explain;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod model;
pub mod optim;
pub mod real;
pub mod train;

pub use error::{Error, Result};
