//! Multi-discriminator CycleGAN for unsupervised, non-parallel adaptation
//! of magnitude spectrograms between two domains.
//!
//! Each domain's spectrogram is split into contiguous frequency bands and
//! every band gets its own discriminator. The generators are U-Nets trained
//! against the sum of the per-band adversarial terms plus an ℓ₁ cycle
//! penalty.

pub mod audio;
pub mod bands;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod eval;
mod error;
pub mod fsutil;
pub mod losses;
pub mod models;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};
