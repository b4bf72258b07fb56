//! Command-line pipeline and review service for breast DWI quality assessment.

pub mod agreement;
pub mod cli;
pub mod manifest;
pub mod pipeline;
pub mod server;
