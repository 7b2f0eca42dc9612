//! Skip-gram word embeddings with cross-domain regularized transfer.
//!
//! The pipeline: build a [`corpus::Vocabulary`] per domain, train source
//! embeddings with plain skip-gram negative sampling, compute per-word
//! transfer weights from the two vocabularies, then train target embeddings
//! with a regularizer pulling shared words toward their frozen source
//! vectors.

pub mod adapt;
pub mod corpus;
pub mod embio;
pub mod error;
pub mod eval;
mod hogwild;
pub mod sgns;
pub mod trainer;
pub mod transfer;

pub use error::{Error, Result};
