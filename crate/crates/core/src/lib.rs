//! Fine-grained authorship detection: a projection head trained with a
//! multi-level contrastive objective, and fuzzy-kNN attribution over a vector
//! index that absorbs newly labeled data without retraining.

mod binio;
pub mod classifier;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod loss;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeDoctests;
