//! Age-period-cohort models with penalized smoothing splines for data in
//! equal and unequal intervals.

pub mod basis;
pub mod data_io;
pub mod dataset;
pub mod design;
pub mod effects;
pub mod error;
pub mod family;
pub mod grid;
pub mod linalg;
pub mod parallel;
pub mod pirls;
pub mod reparam;
pub mod sim;
pub mod smoothing;

pub use error::{ApcError, Result};
