//! Dialogue state tracking with retrieved in-context examples.
//!
//! The pipeline: parse a corpus and ontology, split it, build a bank of
//! single-turn examples from the training dialogues, retrieve the most
//! relevant examples for each (turn, slot) query, assemble prompts, generate
//! slot values and score the predicted states with joint goal accuracy.

pub mod bank;
pub mod cli;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod generation;
pub mod http;
pub mod io;
pub mod pipeline;
pub mod prompting;
pub mod retriever;
pub mod text;

pub use error::{Error, ErrorKind, Result};
