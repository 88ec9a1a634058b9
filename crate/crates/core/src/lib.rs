//! Numerical toolkit for singular integral operators on curves in
//! finite-dimensional normed spaces and on finite metric measure spaces.
//!
//! Modules, bottom up:
//! - [`space`]: metric spaces, norms, discrete measures, doubling and regularity constants.
//! - [`curve`]: sampled curves, derivatives, Hölder and bilipschitz metadata, big pieces.
//! - [`kernel`]: CZ kernels, certification probes, bump functions, line integrals.
//! - [`sio`]: truncated and maximal singular integrals, maximal function, tail bounds.
//! - [`whitney`]: Christ cubes and Whitney decompositions with certificates.
//! - [`goodlambda`]: level sets, the good-lambda inequality and the L^p chain.
//! - [`harness`]: configuration, report emission and the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curve;
pub mod error;
pub mod goodlambda;
pub mod harness;
pub mod kernel;
pub mod rng;
pub mod sio;
pub mod space;
pub mod whitney;

pub use error::{Error, Result};
