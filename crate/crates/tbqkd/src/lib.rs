//! Time-bin continuous-variable QKD with photon-number tagging.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the sums they implement; `is_multiple_of` is newer than the MSRV.
#![allow(clippy::needless_range_loop, clippy::manual_is_multiple_of)]

pub mod channel;
pub mod decoy;
pub mod error;
pub mod finite;
pub mod keyrate;
pub mod optimizer;
pub mod sim;
pub mod simplex;
pub mod specfun;
pub mod tomo;
pub mod yields;

pub use error::{Error, Result};
