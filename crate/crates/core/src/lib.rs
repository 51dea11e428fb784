//! A desk-scale, fully deterministic laboratory for studying how contrastive
//! training against hierarchically composed label prototypes shapes embedding
//! geometry.
//!
//! The pipeline: generate synthetic taxonomic data with known latent structure
//! ([`synth`]), train a small two-tower encoder with a symmetric InfoNCE loss
//! ([`model`], [`train`]), then measure where intra-species variation ends up
//! relative to the span of species prototypes ([`geometry`]) and how the
//! representation performs under standard transfer protocols ([`eval`]).
//! Everything runs on an owned numeric kernel ([`numeric`]) so that a seed
//! pins every byte of every output.

pub mod error;
pub mod numeric;
pub mod taxa;

pub mod synth;

pub mod model;
pub mod train;

pub mod geometry;

pub mod eval;

pub mod verify;

pub mod cli;

pub use error::{Error, Result};
