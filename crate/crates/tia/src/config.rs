//! Run configuration read from a TOML file.
//!
//! ```toml
//! seed = 7
//!
//! [frontend]            # constant-Q analysis
//! fmin = 65.4
//! bins_per_octave = 24
//! num_bins = 120
//! hop = 448
//!
//! [train]
//! n = 8
//! epochs = 300
//! lr0 = 1e-3
//! batch_size = 128
//! delta_min = -60
//! delta_max = 60
//! dropout_rate = 0.5
//! l2 = 1e-4
//! sparsity = 1e-4
//! norm_deviation = 1e-4
//! max_norm = 2.0
//! output = "identity"   # or "tanh"
//! inputs = ["audio/", "score.csv"]  # WAV, MIDI, note CSV or directories of them
//! corpus_pieces = 0     # seeded synthetic pieces added to the inputs
//! corpus_seconds = 30.0
//! checkpoint = "model.gaem"
//! log = "train_log.csv"
//!
//! [align]
//! feature = "gae"       # or "chroma"
//! metric = "euclidean"  # "cosine", "cityblock"
//! radius = 50
//! model = "model.gaem"
//!
//! [experiment]
//! features = ["gae", "chroma"]
//! pieces = 4
//! piece_seconds = 40.0
//! semitones = [-3, -2, -1, 0, 1, 2, 3]
//! period_seconds = 30.0
//! splice_semitones = [-3, -2, -1, 1, 2, 3]
//! tempo_factors = ["2/3", "1", "4/3"]
//! output_dir = "results"
//! ```
//!
//! Every key is optional. Relative paths are resolved against the directory
//! holding the config file. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use tia_core::features::Metric;
use tia_core::gae::{OutputActivation, Regularization};
use tia_core::signal::CqtConfig;
use tia_core::train::TrainingConfig;

use crate::error::{Result, TiaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    #[default]
    Gae,
    Chroma,
}

impl FeatureKind {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::Gae => "gae",
            FeatureKind::Chroma => "chroma",
        }
    }
}

impl FromStr for FeatureKind {
    type Err = TiaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gae" => Ok(FeatureKind::Gae),
            "chroma" => Ok(FeatureKind::Chroma),
            _ => Err(TiaError::Usage(format!(
                "unknown feature `{s}` (gae or chroma)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OutputName {
    #[default]
    Identity,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MetricName {
    #[default]
    Euclidean,
    Cosine,
    Cityblock,
}

/// A tempo factor written as a number or a fraction such as `"4/3"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Factor {
    Number(f64),
    Text(String),
}

impl Factor {
    pub fn value(&self) -> Result<f64> {
        let v = match self {
            Factor::Number(x) => Some(*x),
            Factor::Text(s) => match s.split_once('/') {
                Some((a, b)) => match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
                    (Ok(a), Ok(b)) if b != 0.0 => Some(a / b),
                    _ => None,
                },
                None => s.trim().parse().ok(),
            },
        };
        v.filter(|x| *x > 0.0 && x.is_finite())
            .ok_or_else(|| TiaError::Config(format!("invalid tempo factor {self:?}")))
    }

    /// Column head: "Base Tempo" for 1, otherwise "<factor> Tempo".
    pub fn label(&self) -> String {
        match self.value() {
            Ok(1.0) => "Base Tempo".into(),
            _ => match self {
                Factor::Number(x) => format!("{x} Tempo"),
                Factor::Text(s) => format!("{} Tempo", s.trim()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendSection {
    pub fmin: f64,
    pub bins_per_octave: u32,
    pub num_bins: usize,
    pub hop: usize,
}

impl Default for FrontendSection {
    fn default() -> Self {
        let c = CqtConfig::default();
        Self {
            fmin: c.fmin,
            bins_per_octave: c.bins_per_octave,
            num_bins: c.num_bins,
            hop: c.hop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub n: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub batch_size: usize,
    pub delta_min: i64,
    pub delta_max: i64,
    pub dropout_rate: f64,
    pub l2: f64,
    pub sparsity: f64,
    pub norm_deviation: f64,
    pub max_norm: f64,
    output: OutputName,
    pub inputs: Vec<PathBuf>,
    pub corpus_pieces: usize,
    pub corpus_seconds: f64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            n: t.n,
            epochs: t.epochs,
            lr0: t.lr0,
            batch_size: t.batch_size,
            delta_min: t.delta_range.0,
            delta_max: t.delta_range.1,
            dropout_rate: t.dropout_rate,
            l2: t.reg.l2,
            sparsity: t.reg.sparsity,
            norm_deviation: t.reg.norm_deviation,
            max_norm: t.reg.max_norm,
            output: OutputName::Identity,
            inputs: Vec::new(),
            corpus_pieces: 0,
            corpus_seconds: 30.0,
            checkpoint: "model.gaem".into(),
            log: "train_log.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignSection {
    pub feature: FeatureKind,
    metric: MetricName,
    pub radius: usize,
    pub model: Option<PathBuf>,
}

impl Default for AlignSection {
    fn default() -> Self {
        Self {
            feature: FeatureKind::Gae,
            metric: MetricName::Euclidean,
            radius: tia_core::align::DEFAULT_RADIUS,
            model: None,
        }
    }
}

impl AlignSection {
    pub fn metric(&self) -> Metric {
        match self.metric {
            MetricName::Euclidean => Metric::Euclidean,
            MetricName::Cosine => Metric::Cosine,
            MetricName::Cityblock => Metric::Cityblock,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub features: Vec<FeatureKind>,
    pub pieces: usize,
    pub piece_seconds: f64,
    pub semitones: Vec<i32>,
    pub period_seconds: f64,
    pub splice_semitones: Vec<i32>,
    pub tempo_factors: Vec<Factor>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            features: vec![FeatureKind::Gae, FeatureKind::Chroma],
            pieces: 4,
            piece_seconds: 40.0,
            semitones: vec![-3, -2, -1, 0, 1, 2, 3],
            period_seconds: 30.0,
            splice_semitones: vec![-3, -2, -1, 1, 2, 3],
            tempo_factors: ["2/3", "1", "4/3"]
                .iter()
                .map(|s| Factor::Text(s.to_string()))
                .collect(),
            output_dir: "results".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub frontend: FrontendSection,
    pub train: TrainSection,
    pub align: AlignSection,
    pub experiment: ExperimentSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| TiaError::Config(e.to_string()))
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TiaError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.train.inputs.iter_mut().for_each(fix);
        fix(&mut self.train.checkpoint);
        fix(&mut self.train.log);
        if let Some(m) = self.align.model.as_mut() {
            fix(m);
        }
        fix(&mut self.experiment.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        tia_core::signal::Cqt::new(self.cqt())
            .map(|_| ())
            .map_err(|e| TiaError::Config(format!("frontend: {e}")))?;
        self.training()
            .validate()
            .map_err(|e| TiaError::Config(format!("train: {e}")))?;
        for f in &self.experiment.tempo_factors {
            f.value()?;
        }
        if self.experiment.period_seconds <= 0.0 {
            return Err(TiaError::Config(
                "experiment: period_seconds must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn cqt(&self) -> CqtConfig {
        CqtConfig {
            fmin: self.frontend.fmin,
            bins_per_octave: self.frontend.bins_per_octave,
            num_bins: self.frontend.num_bins,
            hop: self.frontend.hop,
            ..CqtConfig::default()
        }
    }

    pub fn training(&self) -> TrainingConfig {
        let t = &self.train;
        TrainingConfig {
            n: t.n,
            epochs: t.epochs,
            lr0: t.lr0,
            batch_size: t.batch_size,
            delta_range: (t.delta_min, t.delta_max),
            seed: self.seed,
            reg: Regularization {
                l2: t.l2,
                sparsity: t.sparsity,
                norm_deviation: t.norm_deviation,
                max_norm: t.max_norm,
            },
            dropout_rate: t.dropout_rate,
            output: match t.output {
                OutputName::Identity => OutputActivation::Identity,
                OutputName::Tanh => OutputActivation::Tanh,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse("seed = 3\n[train]\nepochs = 5\noutput = \"tanh\"\n").unwrap();
        assert_eq!(c.seed, 3);
        let t = c.training();
        assert_eq!((t.epochs, t.seed, t.lr0), (5, 3, 1e-3));
        assert_eq!(t.output, OutputActivation::Tanh);
        assert_eq!(c.cqt(), CqtConfig::default());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::parse("[train]\nepoch = 5\n").is_err());
        assert!(RunConfig::parse("[align]\nmetric = \"manhattan\"\n").is_err());
        let c = RunConfig::parse("[train]\nepochs = 0\n").unwrap();
        assert!(matches!(c.validate(), Err(TiaError::Config(_))));
    }

    #[test]
    fn tempo_factor_labels() {
        let f = |s: &str| Factor::Text(s.into());
        assert_eq!(f("4/3").value().unwrap(), 4.0 / 3.0);
        assert_eq!(f("2/3").label(), "2/3 Tempo");
        assert_eq!(f("1").label(), "Base Tempo");
        assert_eq!(Factor::Number(1.0).label(), "Base Tempo");
        assert!(f("0/3").value().is_err());
    }
}
