//! Co-occurring object discovery over region-feature embeddings.
//!
//! The crate is organised along the pipeline:
//!
//! - [`corpus`]: caption parsing, lexicon-based concept extraction and the
//!   concept-group index.
//! - [`scenario`]: oracle-labelled synthetic worlds of region features plus
//!   the binary/TSV feature containers.
//! - [`discovery`]: text-guided similarity, the prototype head, alignment
//!   losses and the baseline assignment strategies.
//! - [`training`]: the differentiable caption-branch objective, SGD, the
//!   training loop, checkpoints and finite-difference checks.
//! - [`eval`]: cover rate, strategy comparison and ablations.

pub mod corpus;
pub mod discovery;
mod error;
pub mod eval;
pub mod math;
pub mod scenario;
pub mod seeds;
pub mod training;

pub use error::{Error, Result};
