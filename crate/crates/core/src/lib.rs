//! Seed-to-seed comparison of sparse autoencoders.
//!
//! Train SAEs on the same activations with different seeds, match their
//! latents with a maximum-weight bijection on encoder and decoder cosine
//! similarity, and measure how many latents have a counterpart.

pub mod align;
pub mod error;
pub mod io;
pub mod lap;
pub mod linalg;
pub mod multiseed;
pub mod sae;

pub use error::{Error, FormatError, Result};
