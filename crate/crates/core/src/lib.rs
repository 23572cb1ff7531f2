//! Entity span-copy summarization.
//!
//! A sequence-to-sequence summarizer whose output space is the vocabulary
//! concatenated with the named entities of the source document, so a whole
//! entity mention can be emitted in a single decoding step. The crate also
//! carries the tooling around the model: a rule-based entity extractor,
//! corpus ingestion and filtering, a small reverse-mode differentiation
//! engine with a finite-difference checker, decoding, and the saliency and
//! entity-consistency metrics.

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod decode;
pub mod entity;
mod error;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
