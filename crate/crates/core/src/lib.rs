// Index loops mirror the matrix formulas; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cobyla;
pub mod config;
pub mod criterion;
pub mod design;
pub mod error;
pub mod lsq;
pub mod models;
pub mod moments;
pub mod nelder_mead;
pub mod optimizer;
pub mod presets;
pub mod projection;
pub mod simulate;
pub mod types;

pub use error::{Error, Result};
