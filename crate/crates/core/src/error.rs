use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty audio")]
    EmptyAudio,
    #[error("invalid samples")]
    InvalidSamples,
    #[error("invalid sample rate {0}")]
    InvalidSampleRate(u32),
    #[error("audio too short: {len} samples, longest analysis window is {window}")]
    AudioTooShort { len: usize, window: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("spectrogram shorter than context: {frames} frames, context {n}")]
    SpectrogramShorterThanContext { frames: usize, n: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("empty input sequence")]
    EmptySequence,
    #[error("exact DTW of {0} cells exceeds the full-matrix limit; use fast_dtw")]
    AlignmentTooLarge(usize),
    #[error("empty reference points")]
    EmptyReferences,
    #[error("reference points not strictly increasing in score time at {0}")]
    UnorderedReferences(usize),
    #[error("pitch {0} out of range 21..=108")]
    PitchOutOfRange(i32),
    #[error("invalid note: {0}")]
    InvalidNote(&'static str),
    #[error("invalid tempo curve: {0}")]
    InvalidTempoCurve(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("divergence: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
}
