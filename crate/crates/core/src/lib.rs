//! Critical-threshold classification for radial pressureless Euler-Poisson
//! flows: the characteristic ODEs, the q-s orbit geometry, the envelope
//! thresholds and a direct-integration oracle to check them against.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod model;
pub mod numerics;
pub mod ode;
pub mod qs;
pub mod threshold;
pub mod verify;

pub use error::{EpError, Result};
