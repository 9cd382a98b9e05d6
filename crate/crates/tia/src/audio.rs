//! WAV input and output.

use std::path::Path;

use tia_core::signal::{resample, AudioBuffer, SAMPLE_RATE};

use crate::error::{Result, TiaError};

fn wav_err(path: &Path) -> impl Fn(hound::Error) -> TiaError + '_ {
    move |source| TiaError::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Decodes any PCM or float WAV and averages its channels.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut reader = hound::WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err(path))?
        }
    };
    Ok(AudioBuffer::from_interleaved(
        &samples,
        spec.channels as usize,
        spec.sample_rate,
    )?)
}

/// Mono audio at the analysis rate.
pub fn read_wav_for_analysis(path: &Path) -> Result<AudioBuffer> {
    Ok(resample(&read_wav(path)?, SAMPLE_RATE)?)
}

/// Writes mono 32-bit float samples.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err(path))?;
    for &s in audio.samples() {
        w.write_sample(s).map_err(wav_err(path))?;
    }
    w.finalize().map_err(wav_err(path))
}
