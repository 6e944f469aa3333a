//! Recovery of complete dictionaries from `Y = A0 X0` with sparse `X0`.
//!
//! The pipeline minimizes a log-cosh smoothed l1 objective over the unit
//! sphere with a second-order Riemannian trust-region method, exactifies each
//! near-solution with an l1 linear program, and deflates to recover every row
//! of `X0`. Around it sit generators for synthetic instances, an empirical
//! landscape laboratory and the phase-transition benchmark.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod model;
pub mod objective;
pub mod par;
pub mod recovery;
pub mod rng;
pub mod trm;

pub use error::{Result, SdctError};
pub use model::{
    CoefficientMatrix, CoefficientMode, DataMatrix, DictionaryKind, DictionaryMatrix, Provenance,
};
pub use objective::{ProjectedPoint, SmoothingParams, SpherePoint};
pub use par::Execution;
pub use trm::{minimize, Termination, TrmConfig, TrmResult};
