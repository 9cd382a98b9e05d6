//! File-level glue between the core algorithms and the command line.

use std::path::{Path, PathBuf};

use tia_core::align::{fast_dtw, timemap_for, AlignmentPath, TimeMap};
use tia_core::eval::{
    random_transposition_experiment, tempo_experiment, transpose_spectrogram_experiment,
    AlignSettings, EvalReport, PreparedPiece, SpliceBlock, SymbolicPiece,
};
use tia_core::features::{ChromaFeatures, FeatureExtractor, FeatureSequence, GaeFeatures};
use tia_core::gae::GaeParams;
use tia_core::parallel::ParallelMap;
use tia_core::signal::{AudioBuffer, Cqt, Spectrogram};
use tia_core::synth::{
    apply_performance, generate_piece, random_tempo_curve, synthesize, NoteEvent, SynthConfig,
};
use tia_core::train::{build_dataset, train_with, Clock, EpochObserver, TrainingLog};

use crate::audio::read_wav_for_analysis;
use crate::config::{FeatureKind, RunConfig};
use crate::error::{Result, TiaError};
use crate::formats::{ensure_compatible, load_checkpoint, load_notes};
use crate::midi::read_midi;

/// Input kinds recognised by extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Wav,
    Midi,
    Notes,
}

pub fn input_kind(path: &Path) -> Option<InputKind> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    match ext.as_str() {
        "wav" => Some(InputKind::Wav),
        "mid" | "midi" => Some(InputKind::Midi),
        "csv" => Some(InputKind::Notes),
        _ => None,
    }
}

/// Loads a symbolic score from a note CSV or MIDI file.
pub fn load_score_notes(path: &Path) -> Result<Vec<NoteEvent>> {
    match input_kind(path) {
        Some(InputKind::Notes) => load_notes(path),
        Some(InputKind::Midi) => read_midi(path),
        _ => Err(TiaError::Usage(format!(
            "{}: expected a .csv note list or a MIDI file",
            path.display()
        ))),
    }
}

/// Mono audio at the analysis rate; symbolic inputs are synthesized.
pub fn load_audio(path: &Path, synth: &SynthConfig) -> Result<AudioBuffer> {
    if !path.exists() {
        return Err(TiaError::Usage(format!("{}: no such file", path.display())));
    }
    match input_kind(path) {
        Some(InputKind::Wav) => read_wav_for_analysis(path),
        Some(_) => Ok(synthesize(&load_score_notes(path)?, synth)),
        None => Err(TiaError::Usage(format!(
            "{}: unsupported input (use .wav, .mid or .csv)",
            path.display()
        ))),
    }
}

/// Expands directories (non-recursively, sorted by name) into the supported
/// files they contain.
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| TiaError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.is_file() && input_kind(e).is_some())
                .collect();
            entries.sort();
            out.extend(entries);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(TiaError::Usage(format!(
                "{}: no such file or directory",
                p.display()
            )));
        }
    }
    Ok(out)
}

pub fn spectrogram<P: ParallelMap>(
    cqt: &Cqt,
    audio: &AudioBuffer,
    exec: &P,
) -> Result<Spectrogram> {
    Ok(cqt.transform_with(audio, exec)?)
}

/// Seed of synthetic corpus piece `i`.
pub fn corpus_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

/// Contrast-normalized spectrograms of every training input plus the
/// configured synthetic corpus.
pub fn training_spectrograms<P: ParallelMap>(
    cfg: &RunConfig,
    exec: &P,
) -> Result<Vec<Spectrogram>> {
    let cqt = Cqt::new(cfg.cqt())?;
    let synth = SynthConfig::default();
    let mut specs = Vec::new();
    for path in collect_inputs(&cfg.train.inputs)? {
        log::info!("analysing {}", path.display());
        specs.push(spectrogram(&cqt, &load_audio(&path, &synth)?, exec)?.normalized());
    }
    for i in 0..cfg.train.corpus_pieces {
        let notes = generate_piece(corpus_seed(cfg.seed, i), cfg.train.corpus_seconds);
        specs.push(spectrogram(&cqt, &synthesize(&notes, &synth), exec)?.normalized());
    }
    if specs.is_empty() {
        return Err(TiaError::Config(
            "train: no inputs (set `inputs` or `corpus_pieces`)".into(),
        ));
    }
    Ok(specs)
}

pub fn train<P: ParallelMap, C: Clock, O: EpochObserver>(
    cfg: &RunConfig,
    exec: &P,
    clock: &C,
    observer: &mut O,
) -> Result<(GaeParams<f32>, TrainingLog)> {
    let tc = cfg.training();
    tc.validate()
        .map_err(|e| TiaError::Config(format!("train: {e}")))?;
    let specs = training_spectrograms(cfg, exec)?;
    let dataset = build_dataset(&specs, tc.n)?;
    for &i in dataset.skipped() {
        log::warn!(
            "input {i} has too few frames for n={} and was skipped",
            tc.n
        );
    }
    log::info!(
        "{} training windows from {} inputs",
        dataset.len(),
        specs.len()
    );
    Ok(train_with(&tc, &dataset, exec, clock, observer)?)
}

/// Loads and checks a model for use with the given frontend.
pub fn load_model(path: &Path, cfg: &RunConfig) -> Result<GaeParams<f32>> {
    let p = load_checkpoint(path)?;
    ensure_compatible(&p, cfg.train.n, cfg.frontend.num_bins)?;
    Ok(p)
}

/// Feature extractor for `kind`; GAE features need a model.
pub fn extractor<'a>(
    kind: FeatureKind,
    model: Option<&'a GaeParams<f32>>,
) -> Result<Box<dyn FeatureExtractor + 'a>> {
    match (kind, model) {
        (FeatureKind::Chroma, _) => Ok(Box::new(ChromaFeatures)),
        (FeatureKind::Gae, Some(params)) => Ok(Box::new(GaeFeatures { params })),
        (FeatureKind::Gae, None) => Err(TiaError::Usage(
            "gae features need a model (--model)".into(),
        )),
    }
}

pub struct Alignment {
    pub score: FeatureSequence,
    pub performance: FeatureSequence,
    pub path: AlignmentPath,
    pub map: TimeMap,
}

pub fn align_audio<P: ParallelMap>(
    cqt: &Cqt,
    extractor: &dyn FeatureExtractor,
    score: &AudioBuffer,
    performance: &AudioBuffer,
    settings: &AlignSettings,
    exec: &P,
) -> Result<Alignment> {
    let sa = extractor.extract(&spectrogram(cqt, score, exec)?)?;
    let pa = extractor.extract(&spectrogram(cqt, performance, exec)?)?;
    let path = fast_dtw(&sa, &pa, settings.metric, settings.radius)?;
    let map = timemap_for(&path, &sa, &pa);
    Ok(Alignment {
        score: sa,
        performance: pa,
        path,
        map,
    })
}

/// Seeds of the evaluation pieces; disjoint from the training corpus seeds.
pub fn evaluation_seed(seed: u64, i: usize) -> u64 {
    corpus_seed(seed, i) ^ 0x5eed_0000_0000_0000
}

/// Synthetic evaluation set: seeded scores, performances rendered through a
/// random tempo curve, and onset reference points.
pub fn evaluation_pieces<P: ParallelMap>(
    cqt: &Cqt,
    seed: u64,
    count: usize,
    seconds: f64,
    exec: &P,
) -> Result<Vec<SymbolicPiece>> {
    let synth = SynthConfig::default();
    let pieces = exec.map(count, |i| {
        let s = evaluation_seed(seed, i);
        let notes = generate_piece(s, seconds);
        let (perf_notes, refs) = apply_performance(&notes, &random_tempo_curve(s, seconds))?;
        let performance = cqt.transform(&synthesize(&perf_notes, &synth))?;
        Ok(SymbolicPiece {
            score_notes: notes,
            performance,
            refs,
        })
    });
    pieces
        .into_iter()
        .collect::<tia_core::Result<_>>()
        .map_err(Into::into)
}

pub fn prepare<P: ParallelMap>(
    cqt: &Cqt,
    pieces: &[SymbolicPiece],
    exec: &P,
) -> Result<Vec<PreparedPiece>> {
    let synth = SynthConfig::default();
    let out = exec.map(pieces.len(), |i| {
        let p = &pieces[i];
        Ok(PreparedPiece {
            score: cqt.transform(&synthesize(&p.score_notes, &synth))?,
            performance: p.performance.clone(),
            refs: p.refs.clone(),
        })
    });
    out.into_iter()
        .collect::<tia_core::Result<_>>()
        .map_err(Into::into)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Transposition,
    RandomTransposition,
    Tempo,
}

impl std::str::FromStr for Experiment {
    type Err = TiaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transposition" => Ok(Experiment::Transposition),
            "random-transposition" => Ok(Experiment::RandomTransposition),
            "tempo" => Ok(Experiment::Tempo),
            _ => Err(TiaError::Usage(format!(
                "unknown experiment `{s}` (transposition, random-transposition, tempo)"
            ))),
        }
    }
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Transposition => "transposition",
            Experiment::RandomTransposition => "random-transposition",
            Experiment::Tempo => "tempo",
        }
    }
}

/// Reports of one experiment for one feature type, in condition order.
#[derive(Debug, Clone)]
pub struct FeatureResults {
    pub feature: FeatureKind,
    pub columns: Vec<(String, EvalReport)>,
    pub splice_logs: Vec<Vec<SpliceBlock>>,
}

pub fn semitone_label(s: i32) -> String {
    s.to_string()
}

pub const RANDOM_TRANSPOSITION_LABEL: &str = "Rand. Transp.";

pub fn run_experiment<P: ParallelMap>(
    which: Experiment,
    cfg: &RunConfig,
    model: Option<&GaeParams<f32>>,
    exec: &P,
) -> Result<Vec<FeatureResults>> {
    let cqt = Cqt::new(cfg.cqt())?;
    let ex = &cfg.experiment;
    let settings = AlignSettings {
        metric: cfg.align.metric(),
        radius: cfg.align.radius,
    };
    let pieces = evaluation_pieces(&cqt, cfg.seed, ex.pieces, ex.piece_seconds, exec)?;
    let prepared = match which {
        Experiment::Tempo => Vec::new(),
        _ => prepare(&cqt, &pieces, exec)?,
    };
    let mut out = Vec::new();
    for &feature in &ex.features {
        let fx = extractor(feature, model)?;
        let (columns, splice_logs) = match which {
            Experiment::Transposition => (
                transpose_spectrogram_experiment(
                    fx.as_ref(),
                    &prepared,
                    &ex.semitones,
                    &settings,
                    exec,
                )?
                .into_iter()
                .map(|(s, r)| (semitone_label(s), r))
                .collect(),
                Vec::new(),
            ),
            Experiment::RandomTransposition => {
                let o = random_transposition_experiment(
                    fx.as_ref(),
                    &prepared,
                    ex.period_seconds,
                    &ex.splice_semitones,
                    cfg.seed,
                    &settings,
                    exec,
                )?;
                (
                    vec![(RANDOM_TRANSPOSITION_LABEL.to_string(), o.report)],
                    o.logs,
                )
            }
            Experiment::Tempo => {
                let factors = ex
                    .tempo_factors
                    .iter()
                    .map(|f| f.value())
                    .collect::<Result<Vec<f64>>>()?;
                let reports = tempo_experiment(
                    fx.as_ref(),
                    &pieces,
                    &factors,
                    &cqt,
                    &SynthConfig::default(),
                    &settings,
                    exec,
                )?;
                (
                    ex.tempo_factors
                        .iter()
                        .zip(reports)
                        .map(|(f, (_, r))| (f.label(), r))
                        .collect(),
                    Vec::new(),
                )
            }
        };
        out.push(FeatureResults {
            feature,
            columns,
            splice_logs,
        });
    }
    Ok(out)
}
