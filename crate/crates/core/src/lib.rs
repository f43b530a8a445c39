//! Prototype-driven semantic approximation: a fixed space of
//! (image prototype, text prototype) pairs built from a partially paired
//! corpus, queried with image embeddings to produce text-side embeddings.
//!
//! The core is generic over the scalar type; the aliases below fix it to
//! `f64`, which is what the command-line tool uses.

pub mod bench;
pub mod cli;
pub mod cluster;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod query;
pub mod relevance;
pub mod scalar;
pub mod space;
pub mod synth;

pub use error::{FormatError, PsaError, Result};
pub use model::{PsaConfig, TokenScore};
pub use scalar::Scalar;

pub type Embedding = model::EmbeddingVector<f64>;
pub type Sample = model::PairedSample<f64>;
pub type Corpus = model::Corpus<f64>;
pub type Prototype = space::Prototype<f64>;
pub type Space = space::PrototypeSpace<f64>;
pub type Response = query::QueryResponse<f64>;
