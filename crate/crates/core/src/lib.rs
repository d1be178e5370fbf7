//! Multi-modal dependence measures and the objectives that train encoders on them.

pub mod analytic;
pub mod data;
pub mod encoders;
pub mod error;
pub mod experiments;
pub mod gram;
pub mod linalg;
pub mod objectives;
pub mod training;

pub use error::{Error, Result};
