//! Open-ended question answering by reasoning over a graph of
//! predicate-argument structures extracted from a fact corpus.

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod harness;
pub mod knowledge;
pub mod reasoner;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
