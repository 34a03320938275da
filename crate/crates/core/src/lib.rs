//! Non-autonomous parabolic problems `u′ + A(t)u = f(t, u)` with nonlocal
//! initial conditions `u(0) = g(u)`, reduced to finite spectral Galerkin
//! spaces and integrated with Cayley propagators.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod evolution;
pub mod galerkin;
pub mod models;
pub mod nonlinearity;
pub mod nonlocal;
pub mod sampling;

pub use error::{Error, Result};
