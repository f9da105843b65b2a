//! Nonasymptotic tests of whether the mean of a high-dimensional sample (or
//! the difference of two sample means) lies within a radius `η`, with
//! unknown covariance.

pub mod error;
pub mod kme;
pub mod model;
pub mod parallel;
pub mod quantiles;
pub mod simulate;
pub mod statistics;
pub mod testing;

pub use error::{Error, Result};
