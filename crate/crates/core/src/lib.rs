// Negated comparisons such as `!(x > 0.0)` are used on purpose so NaN fails
// the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod mediation;
pub mod null_estimators;
pub mod regression;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
