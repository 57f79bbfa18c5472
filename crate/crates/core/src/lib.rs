//! Adversarial robustness testbed for radio modulation classifiers.
//!
//! The crate is organised bottom-up:
//!
//! - [`sigkit`] synthesizes labelled 2×128 IQ frames for eleven modulation
//!   schemes over an SNR sweep and persists them in a checksummed binary format.
//! - [`tensor`] is a small define-by-run reverse-mode autodiff engine with the
//!   layers the classifiers need, optimizers, and a named-tensor checkpoint archive.
//! - [`models`] builds, trains and evaluates the CNN and LSTM victims and the
//!   fully connected surrogate.
//! - [`attacks`] crafts adversarial examples with FGSM and the Carlini–Wagner L2 attack.
//! - [`blackbox`] runs the query → substitute → surrogate → craft → transfer campaign.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.
//! Both paths produce bit-identical results.

pub mod attacks;
pub mod blackbox;
pub mod exec;
pub mod models;
pub mod numfmt;
pub mod sigkit;
pub mod tensor;

mod binio;
mod seeds;

pub use sigkit::{Dataset, Frame, LabeledFrame, ModulationScheme};

/// Number of modulation classes; the label space is `0..NUM_CLASSES`.
pub const NUM_CLASSES: usize = 11;
/// Number of IQ rows in a frame (in-phase, quadrature).
pub const FRAME_ROWS: usize = 2;
/// Samples per row in a frame.
pub const FRAME_LEN: usize = 128;
/// Total scalar entries in a frame.
pub const FRAME_SIZE: usize = FRAME_ROWS * FRAME_LEN;
