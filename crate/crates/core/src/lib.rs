//! Gated fusion of frozen expert embeddings for binary sentiment
//! classification, with training, evaluation and review-text preprocessing.

pub mod checkpoint;
pub mod error;
pub mod experts;
pub mod fusion;
pub mod numeric;
pub mod preprocess;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
