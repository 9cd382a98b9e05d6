//! Feature sequences for alignment: gated-autoencoder mapping codes and a
//! 12-bin chroma baseline.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::gae::GaeParams;
use crate::parallel::{ParallelMap, Sequential};
use crate::signal::Spectrogram;
use crate::{Error, Result};

/// Frame-distance measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
    Cityblock,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
            Metric::Cityblock => "cityblock",
        }
    }

    /// Distance between equal-length vectors. The cosine distance of a zero
    /// vector to anything is 1.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => {
                libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
            }
            Metric::Cityblock => a.iter().zip(b).map(|(x, y)| libm::fabs(x - y)).sum(),
            Metric::Cosine => {
                if a == b && a.iter().any(|&x| x != 0.0) {
                    return 0.0;
                }
                let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    ab += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                if aa == 0.0 || bb == 0.0 {
                    return 1.0;
                }
                (1.0 - ab / (libm::sqrt(aa) * libm::sqrt(bb))).clamp(0.0, 2.0)
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            "cityblock" => Ok(Metric::Cityblock),
            _ => Err(Error::InvalidConfig(
                "metric must be euclidean, cosine or cityblock",
            )),
        }
    }
}

/// Checked distance between two feature vectors.
pub fn distance(a: &[f32], b: &[f32], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(a.len(), b.len()));
    }
    let a: Vec<f64> = a.iter().map(|&x| x as f64).collect();
    let b: Vec<f64> = b.iter().map(|&x| x as f64).collect();
    Ok(metric.eval(&a, &b))
}

/// Vectors of equal dimension on a regular time grid. Vector `i` belongs to
/// time `(i + t0_offset_frames) * hop_seconds`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f32>,
    dim: usize,
    hop_seconds: f64,
    t0_offset_frames: usize,
}

impl FeatureSequence {
    pub fn new(
        data: Vec<f32>,
        dim: usize,
        hop_seconds: f64,
        t0_offset_frames: usize,
    ) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(
                "feature data is not a multiple of dim",
            ));
        }
        Ok(Self {
            data,
            dim,
            hop_seconds,
            t0_offset_frames,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_seconds
    }

    pub fn t0_offset_frames(&self) -> usize {
        self.t0_offset_frames
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> core::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn time_of(&self, i: usize) -> f64 {
        (i + self.t0_offset_frames) as f64 * self.hop_seconds
    }
}

/// Mapping codes of every window of a contrast-normalized spectrogram.
/// Vector `i` comes from the window whose target is frame `i + n`.
pub fn extract_gae(params: &GaeParams<f32>, spec: &Spectrogram) -> Result<FeatureSequence> {
    extract_gae_with(params, spec, &Sequential)
}

pub fn extract_gae_with<P: ParallelMap>(
    params: &GaeParams<f32>,
    spec: &Spectrogram,
    exec: &P,
) -> Result<FeatureSequence> {
    let n = params.shape().n;
    if spec.num_bins() != params.shape().num_bins {
        return Err(Error::ShapeMismatch("spectrogram bins do not match model"));
    }
    let frames = spec.num_frames();
    if frames <= n {
        return Err(Error::SpectrogramShorterThanContext { frames, n });
    }
    let codes = exec.map(frames - n, |i| params.infer_mapping(&spec.window(i, n)));
    let dim = params.shape().hidden2;
    let mut data = Vec::with_capacity((frames - n) * dim);
    for c in codes {
        data.extend_from_slice(&c?);
    }
    FeatureSequence::new(data, dim, spec.hop_seconds(), n)
}

/// Folds one raw CQT frame into 12 pitch classes: bin `k` goes to class
/// `(k / 2) mod 12`, so bin 0 (65.4 Hz) is C. No normalization.
pub fn chroma_fold(frame: &[f32]) -> [f64; 12] {
    let mut c = [0.0f64; 12];
    for (k, &x) in frame.iter().enumerate() {
        c[(k / 2) % 12] += x as f64;
    }
    c
}

/// Chroma of a raw (not contrast-normalized) spectrogram, each frame scaled to
/// unit maximum. Silent frames stay zero.
pub fn extract_chroma(spec: &Spectrogram) -> FeatureSequence {
    let mut data = Vec::with_capacity(spec.num_frames() * 12);
    for frame in spec.frames() {
        let c = chroma_fold(frame);
        let max = c.iter().fold(0.0f64, |m, &x| m.max(libm::fabs(x)));
        data.extend(
            c.iter()
                .map(|&x| if max > 0.0 { (x / max) as f32 } else { 0.0 }),
        );
    }
    FeatureSequence::new(data, 12, spec.hop_seconds(), 0).expect("12 values per frame")
}

/// Turns a raw CQT spectrogram into a feature sequence.
pub trait FeatureExtractor: Sync {
    fn name(&self) -> &str;
    fn extract(&self, raw: &Spectrogram) -> Result<FeatureSequence>;
}

/// Chroma baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct ChromaFeatures;

impl FeatureExtractor for ChromaFeatures {
    fn name(&self) -> &str {
        "chroma"
    }

    fn extract(&self, raw: &Spectrogram) -> Result<FeatureSequence> {
        Ok(extract_chroma(raw))
    }
}

/// Mapping codes; contrast-normalizes the raw spectrogram first.
#[derive(Debug, Clone, Copy)]
pub struct GaeFeatures<'a> {
    pub params: &'a GaeParams<f32>,
}

impl FeatureExtractor for GaeFeatures<'_> {
    fn name(&self) -> &str {
        "gae"
    }

    fn extract(&self, raw: &Spectrogram) -> Result<FeatureSequence> {
        extract_gae(self.params, &raw.normalized())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gae::ModelShape;
    use alloc::vec;

    #[test]
    fn distance_examples() {
        let a = [0.3f32, -1.0, 2.0];
        for m in [Metric::Euclidean, Metric::Cosine, Metric::Cityblock] {
            assert_eq!(distance(&a, &a, m).unwrap(), 0.0);
        }
        assert_eq!(
            distance(&[0.0, 0.0], &[3.0, 4.0], Metric::Euclidean).unwrap(),
            5.0
        );
        assert_eq!(
            distance(&[1.0, 0.0], &[0.0, 1.0], Metric::Cosine).unwrap(),
            1.0
        );
        assert_eq!(
            distance(&[1.0, 0.0], &[0.0, 1.0], Metric::Cityblock).unwrap(),
            2.0
        );
        assert_eq!(
            distance(&[0.0, 0.0], &[0.0, 1.0], Metric::Cosine).unwrap(),
            1.0
        );
        assert_eq!(
            distance(&[0.0, 0.0], &[0.0, 0.0], Metric::Cosine).unwrap(),
            1.0
        );
        assert_eq!(
            distance(&[1.0], &[1.0, 2.0], Metric::Cosine),
            Err(Error::DimMismatch(1, 2))
        );
    }

    #[test]
    fn metric_parse() {
        assert_eq!("cosine".parse::<Metric>().unwrap(), Metric::Cosine);
        assert!("manhattan".parse::<Metric>().is_err());
    }

    #[test]
    fn chroma_octave_folding() {
        let mut f = vec![0.0f32; 120];
        f[0] = 2.0;
        let s = Spectrogram::from_frames(f.clone(), 120);
        let c = extract_chroma(&s);
        assert_eq!(c.vector(0)[0], 1.0);
        assert!(c.vector(0)[1..].iter().all(|&x| x == 0.0));
        f[0] = 0.0;
        f[24] = 0.5;
        let c = extract_chroma(&Spectrogram::from_frames(f, 120));
        assert_eq!(c.vector(0)[0], 1.0);
        let silent = extract_chroma(&Spectrogram::from_frames(vec![0.0; 120], 120));
        assert!(silent.vector(0).iter().all(|&x| x == 0.0));
        assert_eq!(silent.t0_offset_frames(), 0);
    }

    #[test]
    fn gae_feature_shapes() {
        let p = GaeParams::<f32>::init(ModelShape::for_context(8), 1).unwrap();
        let s = Spectrogram::from_frames(vec![0.1; 9 * 120], 120).normalized();
        assert_eq!(extract_gae(&p, &s).unwrap().len(), 1);
        let data: Vec<f32> = (0..100 * 120).map(|i| ((i * 37) % 101) as f32).collect();
        let s = Spectrogram::from_frames(data, 120).normalized();
        let f = extract_gae(&p, &s).unwrap();
        assert_eq!((f.len(), f.dim(), f.t0_offset_frames()), (92, 64, 8));
        assert!(f.data().iter().all(|x| x.abs() < 1.0));
        let short = Spectrogram::from_frames(vec![0.0; 8 * 120], 120);
        assert_eq!(
            extract_gae(&p, &short),
            Err(Error::SpectrogramShorterThanContext { frames: 8, n: 8 })
        );
    }
}
