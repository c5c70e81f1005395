//! Social embeddings for groups of a bipartite membership network, and a
//! small masked language model that conditions on them.
//!
//! The crate is `no_std` + `alloc`. The default `std` feature adds rayon
//! parallelism for the pairwise intersection and similarity passes and for
//! walk generation.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod embed;
pub mod error;
pub mod graph;
pub mod lm;
pub mod similarity;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
