//! IO, LLM pipeline, annotation service and reports built on `lamp-core`.

pub mod cli;
pub mod corpus_io;
pub mod error;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod service;
pub mod tagged;

pub use error::{Error, Result};
