//! I-vector speaker verification with propagation of feature uncertainty
//! through Baum-Welch statistics.
//!
//! Pipeline: features ([`frontend`]) → UBM ([`ubm`]) → Baum-Welch statistics
//! in four variants ([`stats`]) → i-vectors ([`ivector`]) → whitening, LDA
//! and PLDA ([`backend`]) → EER and reports ([`eval`]). [`synth`] builds
//! seeded synthetic corpora and [`experiment`] runs the full comparison.

pub mod backend;
mod binio;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod frontend;
pub mod ivector;
pub mod linalg;
pub mod matrix;
pub mod stats;
pub mod synth;
pub mod ubm;

pub use error::{Error, Result};
pub use matrix::RowMatrix;

/// Lower bound on every UBM variance.
pub const VAR_FLOOR: f64 = 1e-4;
