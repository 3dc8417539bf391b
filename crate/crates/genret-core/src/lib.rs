//! Core of a generative retrieval toolkit: corpus handling, document
//! identifiers, a small seq2seq transformer, training tasks, constrained
//! decoding and retrieval metrics.
//!
//! `no_std` + `alloc`. The `std` feature only turns on `std` in dependencies.
#![no_std]

extern crate alloc;

pub mod corpus;
pub mod decode;
pub mod docid;
pub mod error;
pub mod eval;
pub mod model;
pub mod seed;
pub mod tasks;
pub mod tokenizer;

pub use error::{Error, Result};
