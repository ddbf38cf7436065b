//! Region representation learning with automated graph contrastive views.
//!
//! The pipeline: raw region data ([`data`]) is turned into POI-aware region
//! embeddings ([`poi`]), a heterogeneous multi-relation region graph
//! ([`graph`]) is encoded by a relation-aware message-passing network
//! ([`encoder`]), and the encoder is trained contrastively on views produced
//! by two learnable variational samplers ([`views`], [`losses`],
//! [`trainer`]). [`eval`] measures the embeddings with linear probes.

pub mod checks;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod nn;
pub mod numcore;
pub mod poi;
pub mod rng;
pub mod trainer;
pub mod views;

pub use error::{Error, Result};
pub use numcore::{Tape, Tensor, Var};
