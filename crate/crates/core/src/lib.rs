//! Transposition-invariant audio features for audio-to-score alignment.
//!
//! The crate is `no_std` (with `alloc`) and contains every numeric piece of the
//! pipeline:
//!
//! * [`signal`]: resampling, constant-Q spectrogram, contrast normalization and
//!   the circular bin shift used for transposition.
//! * [`gae`]: the gated autoencoder, its losses, analytic gradients and
//!   regularizers.
//! * [`train`]: the SGD loop with per-batch random transposition.
//! * [`features`]: mapping-code and chroma feature sequences, frame distances.
//! * [`align`]: exact DTW, FastDTW and path to time-map conversion.
//! * [`eval`]: error statistics and the transposition / tempo experiments.
//! * [`synth`]: a deterministic additive synthesizer and corpus generator that
//!   provides score/performance pairs with exact ground truth.
//!
//! File formats, threading and the command-line tool live in the companion
//! `tia` crate.
#![no_std]

extern crate alloc;

pub mod align;
pub mod error;
pub mod eval;
pub mod features;
pub mod gae;
pub mod parallel;
pub mod real;
pub mod signal;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
