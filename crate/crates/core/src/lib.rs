//! Unified negative pair generation for hypersphere embedding losses.
//!
//! Pairs are generated from two views of a labeled batch: the metric view
//! (sample against sample) and the classification view (sample against class
//! weight). Their scores feed one log-sum-exp loss, optionally enriched with
//! metric-view negatives after a box-and-whisker noise filter.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod loss;
pub mod margins;
pub mod pairgen;
pub mod run;
pub mod sphere;
pub mod trainer;

pub use error::{Error, Result};
