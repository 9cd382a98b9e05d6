//! Signal frontend: mono audio, band-limited resampling, constant-Q
//! spectrogram, per-frame contrast normalization and circular bin shifts.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::parallel::{ParallelMap, Sequential};
use crate::{Error, Result};

/// Analysis rate of the whole pipeline.
pub const SAMPLE_RATE: u32 = 22050;
/// Number of constant-Q bins per frame.
pub const NUM_BINS: usize = 120;
pub const BINS_PER_OCTAVE: u32 = 24;
pub const FMIN: f64 = 65.4;
pub const HOP: usize = 448;

/// Variance below which a frame is treated as constant.
pub const VARIANCE_EPS: f64 = 1e-8;

/// Mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidSampleRate(sample_rate));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidSamples);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Averages interleaved channels down to mono.
    pub fn from_interleaved(samples: &[f32], channels: usize, sample_rate: u32) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidConfig("zero channels"));
        }
        if channels == 1 {
            return Self::new(samples.to_vec(), sample_rate);
        }
        let scale = 1.0 / channels as f32;
        let mono = samples
            .chunks_exact(channels)
            .map(|c| c.iter().sum::<f32>() * scale)
            .collect();
        Self::new(mono, sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

/// Zero crossings of the sinc kernel on each side of the center.
const SINC_ZEROS: f64 = 16.0;
/// Fraction of the lower Nyquist frequency kept by the anti-alias filter.
const SINC_ROLLOFF: f64 = 0.95;

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    let t = (x + 1.0) * 0.5;
    0.42 - 0.5 * libm::cos(2.0 * PI * t) + 0.08 * libm::cos(4.0 * PI * t)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        libm::sin(PI * x) / (PI * x)
    }
}

/// Blackman-windowed sinc interpolation.
///
/// The cutoff sits at 95% of the lower of the two Nyquist frequencies and the
/// kernel spans 16 zero crossings per side. Output length is
/// `round(len * target / source)`. Equal rates return the input unchanged.
pub fn resample(audio: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if audio.is_empty() {
        return Err(Error::EmptyAudio);
    }
    if target_rate == 0 {
        return Err(Error::InvalidSampleRate(target_rate));
    }
    if audio.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidSamples);
    }
    let src = audio.sample_rate;
    if src == target_rate {
        return Ok(audio.clone());
    }
    let len = audio.len();
    let out_len = ((len as u64 * target_rate as u64 + src as u64 / 2) / src as u64) as usize;
    let ratio = target_rate as f64 / src as f64;
    // cutoff in cycles per source sample
    let fc = 0.5 * ratio.min(1.0) * SINC_ROLLOFF;
    let half = SINC_ZEROS / (2.0 * fc);
    let x = &audio.samples;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let t = (i as u64 * src as u64) as f64 / target_rate as f64;
        let lo = libm::ceil(t - half).max(0.0) as usize;
        let hi = (libm::floor(t + half) as usize).min(len - 1);
        let mut acc = 0.0f64;
        for (n, &s) in x.iter().enumerate().take(hi + 1).skip(lo) {
            let d = t - n as f64;
            acc += s as f64 * 2.0 * fc * sinc(2.0 * fc * d) * blackman(d / half);
        }
        out.push(acc as f32);
    }
    AudioBuffer::new(out, target_rate)
}

/// Constant-Q analysis parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqtConfig {
    pub sample_rate: u32,
    pub fmin: f64,
    pub bins_per_octave: u32,
    pub num_bins: usize,
    pub hop: usize,
}

impl Default for CqtConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            fmin: FMIN,
            bins_per_octave: BINS_PER_OCTAVE,
            num_bins: NUM_BINS,
            hop: HOP,
        }
    }
}

impl CqtConfig {
    /// `Q = 1 / (2^(1/b) - 1)`.
    pub fn quality(&self) -> f64 {
        1.0 / (libm::pow(2.0, 1.0 / self.bins_per_octave as f64) - 1.0)
    }

    pub fn center_frequency(&self, bin: usize) -> f64 {
        self.fmin * libm::pow(2.0, bin as f64 / self.bins_per_octave as f64)
    }

    /// Hann window length of a bin: `N_k = ceil(Q * sr / f_k)`.
    pub fn window_length(&self, bin: usize) -> usize {
        libm::ceil(self.quality() * self.sample_rate as f64 / self.center_frequency(bin)) as usize
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    /// Frames are centered at `t * hop` for every center inside the signal.
    pub fn frame_count(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else {
            (len - 1) / self.hop + 1
        }
    }

    /// Bin closest to a frequency (may fall outside the analysed range).
    pub fn bin_for_frequency(&self, freq: f64) -> f64 {
        self.bins_per_octave as f64 * libm::log2(freq / self.fmin)
    }
}

/// Precomputed complex kernels of a constant-Q transform.
///
/// Bin `k` correlates a Hann window of length `N_k` with a complex exponential
/// at `f_k`, scaled by `1 / N_k`, so a unit-amplitude sinusoid centred on a bin
/// yields a magnitude of about 0.25 regardless of the bin.
#[derive(Debug, Clone)]
pub struct Cqt {
    config: CqtConfig,
    re: Vec<Vec<f32>>,
    im: Vec<Vec<f32>>,
    longest: usize,
}

impl Cqt {
    pub fn new(config: CqtConfig) -> Result<Self> {
        if config.sample_rate == 0 || config.hop == 0 || config.num_bins == 0 {
            return Err(Error::InvalidConfig("cqt parameters must be positive"));
        }
        if config.center_frequency(config.num_bins - 1) >= config.sample_rate as f64 / 2.0 {
            return Err(Error::InvalidConfig("highest cqt bin above Nyquist"));
        }
        let mut re = Vec::with_capacity(config.num_bins);
        let mut im = Vec::with_capacity(config.num_bins);
        for k in 0..config.num_bins {
            let n = config.window_length(k);
            let w = config.center_frequency(k) / config.sample_rate as f64;
            let (mut kr, mut ki) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for i in 0..n {
                let hann = 0.5 - 0.5 * libm::cos(2.0 * PI * (i as f64 + 0.5) / n as f64);
                let phase = -2.0 * PI * w * (i as f64 - n as f64 / 2.0);
                kr.push((hann * libm::cos(phase) / n as f64) as f32);
                ki.push((hann * libm::sin(phase) / n as f64) as f32);
            }
            re.push(kr);
            im.push(ki);
        }
        let longest = config.window_length(0);
        Ok(Self {
            config,
            re,
            im,
            longest,
        })
    }

    pub fn config(&self) -> &CqtConfig {
        &self.config
    }

    pub fn longest_window(&self) -> usize {
        self.longest
    }

    pub fn transform(&self, audio: &AudioBuffer) -> Result<Spectrogram> {
        self.transform_with(audio, &Sequential)
    }

    /// Magnitude spectrogram (not normalized). The signal is zero-padded by
    /// half the longest window on both sides so frame `t` is centred on sample
    /// `t * hop`.
    pub fn transform_with<P: ParallelMap>(
        &self,
        audio: &AudioBuffer,
        exec: &P,
    ) -> Result<Spectrogram> {
        if audio.sample_rate() != self.config.sample_rate {
            return Err(Error::InvalidSampleRate(audio.sample_rate()));
        }
        if audio.len() < self.longest {
            return Err(Error::AudioTooShort {
                len: audio.len(),
                window: self.longest,
            });
        }
        let pad = self.longest / 2 + 1;
        let mut padded = vec![0.0f32; audio.len() + 2 * pad];
        padded[pad..pad + audio.len()].copy_from_slice(audio.samples());
        let frames = self.config.frame_count(audio.len());
        let m = self.config.num_bins;
        let rows = exec.map(frames, |t| {
            let center = pad + t * self.config.hop;
            let mut row = Vec::with_capacity(m);
            for k in 0..m {
                let n = self.re[k].len();
                let start = center - n / 2;
                let seg = &padded[start..start + n];
                let r = crate::real::dot(seg, &self.re[k]);
                let i = crate::real::dot(seg, &self.im[k]);
                row.push(libm::sqrtf(r * r + i * i));
            }
            row
        });
        let mut data = Vec::with_capacity(frames * m);
        for row in rows {
            data.extend_from_slice(&row);
        }
        Ok(Spectrogram::from_parts(
            data,
            m,
            self.config.hop_seconds(),
            self.config.fmin,
            self.config.bins_per_octave,
        ))
    }
}

/// Frame-major matrix of constant-Q magnitudes (raw or contrast-normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<f32>,
    num_bins: usize,
    hop_seconds: f64,
    fmin: f64,
    bins_per_octave: u32,
}

impl Spectrogram {
    /// `data.len()` must be a multiple of `num_bins`.
    pub fn from_parts(
        data: Vec<f32>,
        num_bins: usize,
        hop_seconds: f64,
        fmin: f64,
        bins_per_octave: u32,
    ) -> Self {
        assert!(num_bins > 0 && data.len().is_multiple_of(num_bins));
        Self {
            data,
            num_bins,
            hop_seconds,
            fmin,
            bins_per_octave,
        }
    }

    /// Spectrogram with the default frontend geometry.
    pub fn from_frames(data: Vec<f32>, num_bins: usize) -> Self {
        Self::from_parts(
            data,
            num_bins,
            HOP as f64 / SAMPLE_RATE as f64,
            FMIN,
            BINS_PER_OCTAVE,
        )
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / self.num_bins
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_seconds
    }

    pub fn fmin(&self) -> f64 {
        self.fmin
    }

    pub fn bins_per_octave(&self) -> u32 {
        self.bins_per_octave
    }

    pub fn duration_seconds(&self) -> f64 {
        self.num_frames() as f64 * self.hop_seconds
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.num_bins..(t + 1) * self.num_bins]
    }

    pub fn frames(&self) -> core::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.num_bins)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Contiguous frames `start..start + n + 1` as an n-gram window.
    pub fn window(&self, start: usize, n: usize) -> NGramWindow<'_, f32> {
        let m = self.num_bins;
        NGramWindow::new(&self.data[start * m..(start + n + 1) * m], n, m)
    }

    /// Copy with every frame contrast-normalized.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for frame in out.data.chunks_exact_mut(self.num_bins) {
            contrast_normalize_in_place(frame);
        }
        out
    }

    /// Copy with every frame circularly shifted by `delta` bins.
    pub fn shifted(&self, delta: i64) -> Self {
        let mut out = self.clone();
        for (dst, src) in out
            .data
            .chunks_exact_mut(self.num_bins)
            .zip(self.data.chunks_exact(self.num_bins))
        {
            shift_into(src, delta, dst);
        }
        out
    }

    /// Shifts the frames in `range` by `delta` bins in place.
    pub fn shift_range(&mut self, range: core::ops::Range<usize>, delta: i64) {
        let m = self.num_bins;
        let mut tmp = vec![0.0f32; m];
        for t in range {
            let frame = &mut self.data[t * m..(t + 1) * m];
            shift_into(frame, delta, &mut tmp);
            frame.copy_from_slice(&tmp);
        }
    }
}

/// Sum in ascending value order so the result depends only on the multiset of
/// values. This makes normalization commute bit-exactly with [`shift`].
fn order_free_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    values.iter().sum()
}

/// Zero mean, unit (population) variance. Frames with variance below
/// [`VARIANCE_EPS`] become all-zero.
pub fn contrast_normalize(frame: &[f32]) -> Vec<f32> {
    let mut out = frame.to_vec();
    contrast_normalize_in_place(&mut out);
    out
}

pub fn contrast_normalize_in_place(frame: &mut [f32]) {
    let m = frame.len();
    if m == 0 {
        return;
    }
    let mut buf: Vec<f64> = frame.iter().map(|&x| x as f64).collect();
    let mean = order_free_sum(&mut buf) / m as f64;
    for (b, &x) in buf.iter_mut().zip(frame.iter()) {
        let d = x as f64 - mean;
        *b = d * d;
    }
    let var = order_free_sum(&mut buf) / m as f64;
    if var < VARIANCE_EPS {
        frame.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let inv = 1.0 / libm::sqrt(var);
    for x in frame.iter_mut() {
        *x = ((*x as f64 - mean) * inv) as f32;
    }
}

/// Circular bin shift: output index `i` holds input index `(i + delta) mod M`.
pub fn shift<T: Copy + Default>(frame: &[T], delta: i64) -> Vec<T> {
    let mut out = vec![T::default(); frame.len()];
    shift_into(frame, delta, &mut out);
    out
}

pub fn shift_into<T: Copy>(src: &[T], delta: i64, dst: &mut [T]) {
    let m = src.len();
    assert_eq!(m, dst.len());
    if m == 0 {
        return;
    }
    let d = delta.rem_euclid(m as i64) as usize;
    dst[..m - d].copy_from_slice(&src[d..]);
    dst[m - d..].copy_from_slice(&src[..d]);
}

/// `n` context frames followed by one target frame, stored contiguously.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NGramWindow<'a, T> {
    frames: &'a [T],
    n: usize,
    m: usize,
}

impl<'a, T: Copy + Default> NGramWindow<'a, T> {
    pub fn new(frames: &'a [T], n: usize, m: usize) -> Self {
        assert_eq!(frames.len(), (n + 1) * m, "window must hold n + 1 frames");
        Self { frames, n, m }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_bins(&self) -> usize {
        self.m
    }

    /// Linearized context, oldest frame first.
    pub fn context(&self) -> &'a [T] {
        &self.frames[..self.n * self.m]
    }

    pub fn target(&self) -> &'a [T] {
        &self.frames[self.n * self.m..]
    }

    pub fn as_slice(&self) -> &'a [T] {
        self.frames
    }

    /// Every frame (context and target) shifted independently.
    pub fn shifted(&self, delta: i64) -> Vec<T> {
        shift_frames(self.frames, self.m, delta)
    }
}

/// Applies [`shift`] to each `m`-sized frame of a linearized sequence.
pub fn shift_frames<T: Copy + Default>(frames: &[T], m: usize, delta: i64) -> Vec<T> {
    let mut out = vec![T::default(); frames.len()];
    for (dst, src) in out.chunks_exact_mut(m).zip(frames.chunks_exact(m)) {
        shift_into(src, delta, dst);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, seconds: f64, rate: u32) -> AudioBuffer {
        let n = (seconds * rate as f64) as usize;
        let s = (0..n)
            .map(|i| (0.5 * libm::sin(2.0 * PI * freq * i as f64 / rate as f64)) as f32)
            .collect();
        AudioBuffer::new(s, rate).unwrap()
    }

    /// Peak of a naive DFT evaluated on a 0.5 Hz grid around the expected
    /// frequency range.
    fn dft_peak(x: &[f32], rate: u32, lo: f64, hi: f64) -> f64 {
        let mut best = (0.0, 0.0);
        let mut f = lo;
        while f <= hi {
            let (mut r, mut i) = (0.0, 0.0);
            for (n, &s) in x.iter().enumerate() {
                let ph = 2.0 * PI * f * n as f64 / rate as f64;
                r += s as f64 * libm::cos(ph);
                i += s as f64 * libm::sin(ph);
            }
            let mag = r * r + i * i;
            if mag > best.1 {
                best = (f, mag);
            }
            f += 0.5;
        }
        best.0
    }

    #[test]
    fn resample_identity_is_bit_exact() {
        let a = tone(440.0, 0.1, 22050);
        assert_eq!(resample(&a, 22050).unwrap(), a);
    }

    #[test]
    fn resample_silence() {
        let a = AudioBuffer::new(vec![0.0; 44100], 44100).unwrap();
        let b = resample(&a, 22050).unwrap();
        assert_eq!(b.len(), 22050);
        assert!(b.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn resample_sine_keeps_frequency() {
        let a = tone(440.0, 1.0, 44100);
        let b = resample(&a, 22050).unwrap();
        assert_eq!(b.sample_rate(), 22050);
        assert_eq!(b.len(), 22050);
        let peak = dft_peak(b.samples(), 22050, 400.0, 480.0);
        assert!((peak - 440.0).abs() <= 1.0, "peak {peak}");
    }

    #[test]
    fn resample_errors() {
        let e = AudioBuffer::new(vec![], 44100).unwrap();
        assert_eq!(resample(&e, 22050), Err(Error::EmptyAudio));
        assert_eq!(
            AudioBuffer::new(vec![f32::NAN], 44100),
            Err(Error::InvalidSamples)
        );
    }

    #[test]
    fn upsample_preserves_duration() {
        let a = tone(300.0, 0.25, 16000);
        let b = resample(&a, 22050).unwrap();
        let expected = a.duration_seconds();
        assert!((b.duration_seconds() - expected).abs() <= 1.0 / 22050.0);
    }

    fn argmax(x: &[f32]) -> usize {
        let mut best = 0;
        for (i, &v) in x.iter().enumerate() {
            if v > x[best] {
                best = i;
            }
        }
        best
    }

    fn interior_argmax_fraction(freq: f64, bin: usize) -> f64 {
        let cqt = Cqt::new(CqtConfig::default()).unwrap();
        let spec = cqt.transform(&tone(freq, 2.0, SAMPLE_RATE)).unwrap();
        let t = spec.num_frames();
        let interior: Vec<usize> = (t / 4..3 * t / 4).collect();
        let hits = interior
            .iter()
            .filter(|&&i| argmax(spec.frame(i)) == bin)
            .count();
        hits as f64 / interior.len() as f64
    }

    #[test]
    fn cqt_tone_lands_on_its_bin() {
        assert!(interior_argmax_fraction(65.4, 0) >= 0.9);
        assert!(interior_argmax_fraction(130.8, 24) >= 0.9);
    }

    #[test]
    fn cqt_center_frequencies_and_windows() {
        let c = CqtConfig::default();
        assert!((c.center_frequency(24) - 130.8).abs() < 1e-9);
        assert!((c.bin_for_frequency(440.0).round() - 66.0).abs() < 1e-12);
        let q = 1.0 / (libm::pow(2.0, 1.0 / 24.0) - 1.0);
        assert_eq!(c.window_length(0), libm::ceil(q * 22050.0 / 65.4) as usize);
        assert!(c.window_length(119) < c.window_length(0));
    }

    #[test]
    fn cqt_silence_and_frame_count() {
        let cqt = Cqt::new(CqtConfig::default()).unwrap();
        let len = cqt.longest_window() + 1000;
        let spec = cqt
            .transform(&AudioBuffer::new(vec![0.0; len], SAMPLE_RATE).unwrap())
            .unwrap();
        assert!(spec.data().iter().all(|&x| x == 0.0));
        assert_eq!(spec.num_frames(), (len - 1) / HOP + 1);
        assert!(spec.num_frames().abs_diff(len / HOP) <= 1);
        assert_eq!(spec.num_bins(), NUM_BINS);
    }

    #[test]
    fn cqt_too_short() {
        let cqt = Cqt::new(CqtConfig::default()).unwrap();
        let a = AudioBuffer::new(vec![0.0; 100], SAMPLE_RATE).unwrap();
        assert!(matches!(
            cqt.transform(&a),
            Err(Error::AudioTooShort { .. })
        ));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(contrast_normalize(&[1.0; 8]), vec![0.0; 8]);
        assert_eq!(contrast_normalize(&[0.0, 2.0]), vec![-1.0, 1.0]);
    }

    #[test]
    fn shift_examples() {
        let x = [1.0f32, 2.0, 3.0, 4.0];
        assert_eq!(shift(&x, 1), vec![2.0, 3.0, 4.0, 1.0]);
        assert_eq!(shift(&x, 0), x.to_vec());
        assert_eq!(shift(&x, 4), x.to_vec());
        assert_eq!(shift(&x, -1), vec![4.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn window_shift_is_per_frame() {
        let data: Vec<f32> = (0..9).map(|x| x as f32).collect();
        let w = NGramWindow::new(&data, 2, 3);
        assert_eq!(w.context(), &data[..6]);
        assert_eq!(w.target(), &data[6..]);
        assert_eq!(
            w.shifted(1),
            vec![1.0, 2.0, 0.0, 4.0, 5.0, 3.0, 7.0, 8.0, 6.0]
        );
    }
}
