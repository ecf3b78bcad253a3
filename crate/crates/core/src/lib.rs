//! Similarity maps, blind quality networks and their evaluation.
//!
//! The pipeline computes full-reference similarity maps from
//! distorted/reference pairs, trains a U-Net generator to predict those maps
//! from the distorted image alone, and trains a pooling network that turns
//! predicted maps into quality scores.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod kv;
pub mod maps;
pub mod models;

pub use error::{Error, Result};
