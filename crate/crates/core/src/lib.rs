// Negated float comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod error;
pub mod kernel;

pub use error::{Error, Result};
pub mod polytope;
pub mod relu_pwa;
pub mod error_bounds;
pub mod plants;
pub mod mi_encoding;
pub mod miqp;
pub mod controllers;
pub mod sim;
pub mod scenario;
