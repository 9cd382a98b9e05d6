//! Alignment error statistics and the experiment harnesses built on them.
//!
//! Quartiles use linear interpolation between order statistics with position
//! `q * (n - 1)` on the sorted errors (the "inclusive" convention).

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::{fast_dtw, timemap_for, TimeMap, DEFAULT_RADIUS};
use crate::features::{FeatureExtractor, Metric};
use crate::parallel::ParallelMap;
use crate::signal::{Cqt, Spectrogram};
use crate::synth::{synthesize, NoteEvent, SynthConfig};
use crate::{Error, Result};

/// Ground-truth `(score_seconds, performance_seconds)` pairs, strictly
/// increasing in score time.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoints {
    pairs: Vec<(f64, f64)>,
}

impl ReferencePoints {
    /// Sorts by score time. Repeated score times are rejected with the index
    /// of the offending pair in sorted order.
    pub fn new(mut pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.iter().any(|(s, p)| !s.is_finite() || !p.is_finite()) {
            return Err(Error::InvalidConfig("reference times must be finite"));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(k) = pairs.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(Error::UnorderedReferences(k + 1));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Score times divided by `factor`, performance times unchanged.
    pub fn with_score_tempo(&self, factor: f64) -> Result<Self> {
        check_factor(factor)?;
        Ok(Self {
            pairs: self.pairs.iter().map(|&(s, p)| (s / factor, p)).collect(),
        })
    }
}

/// Error quartiles in milliseconds and the fractions of errors within 50 ms
/// and 250 ms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub q1_ms: f64,
    pub median_ms: f64,
    pub q3_ms: f64,
    pub frac_le_50ms: f64,
    pub frac_le_250ms: f64,
    pub n_points: usize,
}

impl EvalReport {
    /// Row labels of the printed table, in field order.
    pub const ROW_LABELS: [&'static str; 5] = [
        "1st Quartile",
        "Median",
        "3rd Quartile",
        "Error \u{2264} 50 ms",
        "Error \u{2264} 250 ms",
    ];

    /// Values in [`Self::ROW_LABELS`] order.
    pub fn rows(&self) -> [f64; 5] {
        [
            self.q1_ms,
            self.median_ms,
            self.q3_ms,
            self.frac_le_50ms,
            self.frac_le_250ms,
        ]
    }

    pub fn is_consistent(&self) -> bool {
        self.q1_ms <= self.median_ms
            && self.median_ms <= self.q3_ms
            && self.frac_le_50ms <= self.frac_le_250ms
            && (0.0..=1.0).contains(&self.frac_le_50ms)
            && (0.0..=1.0).contains(&self.frac_le_250ms)
    }

    /// Statistics over absolute errors given in seconds.
    pub fn from_errors(errors_seconds: &[f64]) -> Result<Self> {
        if errors_seconds.is_empty() {
            return Err(Error::EmptyReferences);
        }
        let mut ms: Vec<f64> = errors_seconds
            .iter()
            .map(|e| libm::fabs(*e) * 1000.0)
            .collect();
        ms.sort_by(f64::total_cmp);
        let n = ms.len() as f64;
        // slack for rounding in the seconds-to-ms conversion
        let within = |limit: f64| ms.iter().filter(|&&e| e <= limit + 1e-9).count() as f64 / n;
        Ok(Self {
            q1_ms: quantile(&ms, 0.25),
            median_ms: quantile(&ms, 0.5),
            q3_ms: quantile(&ms, 0.75),
            frac_le_50ms: within(50.0),
            frac_le_250ms: within(250.0),
            n_points: ms.len(),
        })
    }
}

/// Linear-interpolation quantile of sorted, non-empty data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// `|map(s_k) - p_k|` in seconds for every reference point.
pub fn alignment_errors(map: &TimeMap, refs: &ReferencePoints) -> Vec<f64> {
    refs.pairs()
        .iter()
        .map(|&(s, p)| libm::fabs(map.lookup(s) - p))
        .collect()
}

pub fn evaluate(map: &TimeMap, refs: &ReferencePoints) -> Result<EvalReport> {
    if refs.is_empty() {
        return Err(Error::EmptyReferences);
    }
    EvalReport::from_errors(&alignment_errors(map, refs))
}

/// Transposition by `semitones` as a circular bin shift: content moves up by
/// two bins per semitone.
pub fn transpose_spectrogram(spec: &Spectrogram, semitones: i32) -> Spectrogram {
    spec.shifted(-2 * semitones as i64)
}

/// One contiguous block of a spliced spectrogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpliceBlock {
    pub start_frame: usize,
    pub end_frame: usize,
    pub start_seconds: f64,
    pub end_seconds: f64,
    pub semitones: i32,
}

/// Cuts `spec` into consecutive blocks of `period_seconds` (the last one may be
/// shorter) and transposes each by a semitone offset drawn uniformly from
/// `semitone_set`. Block `k` starts at frame `round(k * period / hop)`.
pub fn random_transposition_splice(
    spec: &Spectrogram,
    period_seconds: f64,
    semitone_set: &[i32],
    seed: u64,
) -> Result<(Spectrogram, Vec<SpliceBlock>)> {
    if period_seconds <= 0.0 || !period_seconds.is_finite() {
        return Err(Error::InvalidConfig("splice period must be positive"));
    }
    if semitone_set.is_empty() {
        return Err(Error::InvalidConfig("semitone set is empty"));
    }
    let hop = spec.hop_seconds();
    let frames = spec.num_frames();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = spec.clone();
    let mut log = Vec::new();
    let mut k = 0usize;
    loop {
        let start = libm::round(k as f64 * period_seconds / hop) as usize;
        if start >= frames && k > 0 {
            break;
        }
        let end = (libm::round((k + 1) as f64 * period_seconds / hop) as usize).min(frames);
        let s = semitone_set[rng.gen_range(0..semitone_set.len())];
        out.shift_range(start..end, -2 * s as i64);
        log.push(SpliceBlock {
            start_frame: start,
            end_frame: end,
            start_seconds: start as f64 * hop,
            end_seconds: end as f64 * hop,
            semitones: s,
        });
        k += 1;
        if end >= frames {
            break;
        }
    }
    Ok((out, log))
}

fn check_factor(factor: f64) -> Result<()> {
    if factor > 0.0 && factor.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig("tempo factor must be positive"))
    }
}

/// Plays `notes` at `factor` times the tempo: onsets and durations are divided
/// by `factor`.
pub fn tempo_scale(notes: &[NoteEvent], factor: f64) -> Result<Vec<NoteEvent>> {
    check_factor(factor)?;
    Ok(notes
        .iter()
        .map(|n| NoteEvent {
            onset: n.onset / factor,
            duration: n.duration / factor,
            ..*n
        })
        .collect())
}

/// Alignment settings shared by every condition of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignSettings {
    pub metric: Metric,
    pub radius: usize,
}

impl Default for AlignSettings {
    fn default() -> Self {
        Self {
            metric: Metric::Euclidean,
            radius: DEFAULT_RADIUS,
        }
    }
}

/// Score and performance as raw CQT spectrograms plus ground truth.
#[derive(Debug, Clone)]
pub struct PreparedPiece {
    pub score: Spectrogram,
    pub performance: Spectrogram,
    pub refs: ReferencePoints,
}

/// Extracts features from both raw spectrograms, aligns score to performance
/// and returns the score-to-performance time map.
pub fn align_spectrograms(
    extractor: &dyn FeatureExtractor,
    score: &Spectrogram,
    performance: &Spectrogram,
    settings: &AlignSettings,
) -> Result<TimeMap> {
    let a = extractor.extract(score)?;
    let b = extractor.extract(performance)?;
    let path = fast_dtw(&a, &b, settings.metric, settings.radius)?;
    Ok(timemap_for(&path, &a, &b))
}

fn piece_errors(
    extractor: &dyn FeatureExtractor,
    score: &Spectrogram,
    performance: &Spectrogram,
    refs: &ReferencePoints,
    settings: &AlignSettings,
) -> Result<Vec<f64>> {
    let map = align_spectrograms(extractor, score, performance, settings)?;
    Ok(alignment_errors(&map, refs))
}

fn pooled<T>(results: Vec<Result<Vec<f64>>>, label: T) -> Result<(T, EvalReport)> {
    let mut errors = Vec::new();
    for r in results {
        errors.extend(r?);
    }
    Ok((label, EvalReport::from_errors(&errors)?))
}

/// For every `s` in `semitones`, transposes each score by `s` semitones,
/// aligns, and reports errors pooled over all pieces.
pub fn transpose_spectrogram_experiment<P: ParallelMap>(
    extractor: &dyn FeatureExtractor,
    pieces: &[PreparedPiece],
    semitones: &[i32],
    settings: &AlignSettings,
    exec: &P,
) -> Result<Vec<(i32, EvalReport)>> {
    let n = pieces.len();
    let errors = exec.map(semitones.len() * n, |k| {
        let (s, p) = (semitones[k / n], &pieces[k % n]);
        piece_errors(
            extractor,
            &transpose_spectrogram(&p.score, s),
            &p.performance,
            &p.refs,
            settings,
        )
    });
    let mut it = errors.into_iter();
    semitones
        .iter()
        .map(|&s| pooled(it.by_ref().take(n).collect(), s))
        .collect()
}

/// Outcome of the random-transposition experiment.
#[derive(Debug, Clone)]
pub struct SpliceOutcome {
    pub report: EvalReport,
    /// Splice log per piece, in piece order.
    pub logs: Vec<Vec<SpliceBlock>>,
}

/// Splices each score with random transpositions (piece `i` uses seed
/// `seed + i`), aligns, and pools errors.
pub fn random_transposition_experiment<P: ParallelMap>(
    extractor: &dyn FeatureExtractor,
    pieces: &[PreparedPiece],
    period_seconds: f64,
    semitone_set: &[i32],
    seed: u64,
    settings: &AlignSettings,
    exec: &P,
) -> Result<SpliceOutcome> {
    let results = exec.map(pieces.len(), |i| {
        let p = &pieces[i];
        let (spliced, log) = random_transposition_splice(
            &p.score,
            period_seconds,
            semitone_set,
            seed.wrapping_add(i as u64),
        )?;
        let errs = piece_errors(extractor, &spliced, &p.performance, &p.refs, settings)?;
        Ok((errs, log))
    });
    let mut errors = Vec::new();
    let mut logs = Vec::new();
    for r in results {
        let (e, l) = r?;
        errors.extend(e);
        logs.push(l);
    }
    Ok(SpliceOutcome {
        report: EvalReport::from_errors(&errors)?,
        logs,
    })
}

/// A symbolic score with a rendered performance and its ground truth.
#[derive(Debug, Clone)]
pub struct SymbolicPiece {
    pub score_notes: Vec<NoteEvent>,
    pub performance: Spectrogram,
    pub refs: ReferencePoints,
}

/// Re-synthesizes each score at every tempo factor (the performance is left
/// as is), aligns, and reports errors pooled over all pieces.
pub fn tempo_experiment<P: ParallelMap>(
    extractor: &dyn FeatureExtractor,
    pieces: &[SymbolicPiece],
    factors: &[f64],
    cqt: &Cqt,
    synth: &SynthConfig,
    settings: &AlignSettings,
    exec: &P,
) -> Result<Vec<(f64, EvalReport)>> {
    let n = pieces.len();
    let errors = exec.map(factors.len() * n, |k| {
        let (f, p) = (factors[k / n], &pieces[k % n]);
        let notes = tempo_scale(&p.score_notes, f)?;
        let score = cqt.transform(&synthesize(&notes, synth))?;
        let refs = p.refs.with_score_tempo(f)?;
        piece_errors(extractor, &score, &p.performance, &refs, settings)
    });
    let mut it = errors.into_iter();
    factors
        .iter()
        .map(|&f| pooled(it.by_ref().take(n).collect(), f))
        .collect()
}
