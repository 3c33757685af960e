//! Dynamic graph embeddings for recommendation: incremental truncated SVD of
//! a decayed, degree-normalised interaction graph with attribute paths,
//! restart policies driven by an embedding-shift monitor, and a
//! long/short-term preference predictor.

pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod evalkit;
pub mod graphmat;
pub mod linalg;
pub mod predictor;

pub use error::{Error, Result};
