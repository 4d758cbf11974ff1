// NaN-rejecting checks read as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cof;
pub mod error;
pub mod facet;
pub mod fixture;
pub mod ica;
pub mod ingest;
pub mod report;
pub mod similarity;

pub use error::{Error, Result};
