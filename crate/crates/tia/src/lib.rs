//! Standard-library side of the toolkit: audio and MIDI input, binary and CSV
//! file formats, configuration, worker threads, and the pipeline used by the
//! `tia` command.

pub mod audio;
pub mod config;
pub mod error;
pub mod formats;
pub mod midi;
pub mod pipeline;
pub mod threads;

pub use error::{Result, TiaError};
