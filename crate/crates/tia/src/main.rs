use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use tia_core::eval::{evaluate, tempo_scale, AlignSettings};
use tia_core::features::Metric;
use tia_core::gae::GaeParams;
use tia_core::signal::Cqt;
use tia_core::synth::{
    apply_performance, generate_piece, random_tempo_curve, synthesize, SynthConfig,
};
use tia_core::train::{Clock, EpochObserver, EpochRecord};

use tia::audio::write_wav;
use tia::config::{FeatureKind, RunConfig};
use tia::error::{Result, TiaError};
use tia::formats;
use tia::pipeline::{self, Experiment};
use tia::threads::ThreadPool;

/// Transposition-invariant audio features and audio-to-score alignment.
///
/// Worker threads are capped by the TIA_THREADS environment variable; results
/// do not depend on it.
#[derive(Parser)]
#[command(name = "tia", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a gated autoencoder and write a checkpoint and a loss log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides `train.log`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compute a feature file (and optionally the spectrogram) for one input.
    Extract {
        input: PathBuf,
        #[command(flatten)]
        features: FeatureArgs,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the raw constant-Q spectrogram.
        #[arg(long)]
        spectrogram: Option<PathBuf>,
        /// Also write the features as CSV.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Align a score (audio, MIDI or note CSV) to a performance recording.
    Align {
        score: PathBuf,
        performance: PathBuf,
        #[command(flatten)]
        features: FeatureArgs,
        #[arg(long)]
        metric: Option<Metric>,
        #[arg(long)]
        radius: Option<usize>,
        /// Time map CSV to write.
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the frame-level path as CSV.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Compare a time map against reference points.
    Evaluate {
        timemap: PathBuf,
        references: PathBuf,
        /// Report CSV to write.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the transposition, random-transposition or tempo experiment on the
    /// synthetic evaluation set.
    Experiment {
        name: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Overrides `experiment.output_dir`.
        #[arg(short, long)]
        output_dir: Option<PathBuf>,
    },
    /// Render notes to audio, optionally with a performance and ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct FeatureArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    feature: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Note list (CSV or MIDI) to render.
    #[arg(long, conflicts_with = "piece", required_unless_present = "piece")]
    notes: Option<PathBuf>,
    /// Generate a pseudo-random piece from this seed instead.
    #[arg(long)]
    piece: Option<u64>,
    #[arg(long, default_value_t = 30.0)]
    seconds: f64,
    /// Tempo factor applied to the score before rendering.
    #[arg(long, default_value_t = 1.0)]
    tempo: f64,
    /// Score audio to write.
    #[arg(short, long)]
    output: PathBuf,
    /// Write the score note list.
    #[arg(long)]
    notes_out: Option<PathBuf>,
    /// Render a performance through a random tempo curve seeded with this value.
    #[arg(long, requires = "performance_out")]
    perform: Option<u64>,
    #[arg(long, requires = "perform")]
    performance_out: Option<PathBuf>,
    /// Reference points of the performance.
    #[arg(long, requires = "perform")]
    refs_out: Option<PathBuf>,
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

struct LogEpochs;

impl EpochObserver for LogEpochs {
    fn epoch_done(&mut self, r: &EpochRecord, _: &GaeParams<f32>) {
        log::info!(
            "epoch {:>4}  loss {:.6}  mse {:.6}  lr {:.3e}  {:.1}s",
            r.epoch,
            r.loss_total,
            r.loss_mse,
            r.lr,
            r.seconds
        );
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            if !p.exists() {
                return Err(TiaError::Usage(format!(
                    "{}: no such config file",
                    p.display()
                )));
            }
            RunConfig::load(p)
        }
        None => Ok(RunConfig::default()),
    }
}

/// Config plus command-line overrides for feature choice and model.
fn feature_setup(args: &FeatureArgs) -> Result<(RunConfig, FeatureKind, Option<GaeParams<f32>>)> {
    let cfg = load_config(args.config.as_deref())?;
    let kind = match &args.feature {
        Some(f) => f.parse()?,
        None => cfg.align.feature,
    };
    let model_path = args.model.clone().or_else(|| cfg.align.model.clone());
    let model = match (kind, model_path) {
        (FeatureKind::Gae, Some(p)) => Some(pipeline::load_model(&p, &cfg)?),
        (FeatureKind::Gae, None) => {
            return Err(TiaError::Usage("--feature gae needs --model".into()));
        }
        (FeatureKind::Chroma, Some(_)) => {
            log::warn!("chroma features ignore the model");
            None
        }
        (FeatureKind::Chroma, None) => None,
    };
    Ok((cfg, kind, model))
}

fn cmd_train(config: &Path, checkpoint: Option<PathBuf>, log_path: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(Some(config))?;
    if let Some(c) = checkpoint {
        cfg.train.checkpoint = c;
    }
    if let Some(l) = log_path {
        cfg.train.log = l;
    }
    let exec = ThreadPool::from_env();
    let (params, log) = pipeline::train(&cfg, &exec, &WallClock(Instant::now()), &mut LogEpochs)?;
    formats::save_checkpoint(&cfg.train.checkpoint, &params)?;
    formats::save_training_log(&cfg.train.log, &log)?;
    let last = log.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs, final loss {:.6}, checkpoint {}",
        log.epochs.len(),
        last.loss_total,
        cfg.train.checkpoint.display()
    );
    Ok(())
}

fn features_csv(f: &tia_core::features::FeatureSequence) -> String {
    let mut s = String::from("seconds");
    for k in 0..f.dim() {
        write!(s, ",f{k}").unwrap();
    }
    s.push('\n');
    for (i, v) in f.vectors().enumerate() {
        write!(s, "{:.6}", f.time_of(i)).unwrap();
        for x in v {
            write!(s, ",{x}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn cmd_extract(
    input: &Path,
    args: &FeatureArgs,
    output: &Path,
    spec_out: Option<&Path>,
    dump: Option<&Path>,
) -> Result<()> {
    let (cfg, kind, model) = feature_setup(args)?;
    let exec = ThreadPool::from_env();
    let cqt = Cqt::new(cfg.cqt())?;
    let audio = pipeline::load_audio(input, &SynthConfig::default())?;
    let spec = pipeline::spectrogram(&cqt, &audio, &exec)?;
    if let Some(p) = spec_out {
        formats::save_spectrogram(p, &spec)?;
    }
    let feats = pipeline::extractor(kind, model.as_ref())?.extract(&spec)?;
    formats::save_features(output, &feats)?;
    if let Some(p) = dump {
        formats::save_text(p, &features_csv(&feats))?;
    }
    println!(
        "{} {} vectors of dimension {}",
        kind.name(),
        feats.len(),
        feats.dim()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_align(
    score: &Path,
    performance: &Path,
    args: &FeatureArgs,
    metric: Option<Metric>,
    radius: Option<usize>,
    output: &Path,
    dump: Option<&Path>,
) -> Result<()> {
    let (cfg, kind, model) = feature_setup(args)?;
    let exec = ThreadPool::from_env();
    let cqt = Cqt::new(cfg.cqt())?;
    let synth = SynthConfig::default();
    let settings = AlignSettings {
        metric: metric.unwrap_or(cfg.align.metric()),
        radius: radius.unwrap_or(cfg.align.radius),
    };
    let fx = pipeline::extractor(kind, model.as_ref())?;
    let a = pipeline::align_audio(
        &cqt,
        fx.as_ref(),
        &pipeline::load_audio(score, &synth)?,
        &pipeline::load_audio(performance, &synth)?,
        &settings,
        &exec,
    )?;
    formats::save_timemap(output, &a.map)?;
    if let Some(p) = dump {
        let mut s = String::from("score_frame,performance_frame\n");
        for (i, j) in a.path.pairs() {
            writeln!(s, "{i},{j}").unwrap();
        }
        formats::save_text(p, &s)?;
    }
    println!(
        "path length {}, cost {:.6}, {} anchors",
        a.path.len(),
        a.path.total_cost(),
        a.map.anchors().len()
    );
    Ok(())
}

fn cmd_evaluate(timemap: &Path, refs: &Path, output: Option<&Path>) -> Result<()> {
    let map = formats::load_timemap(timemap)?;
    let refs = formats::load_references(refs)?;
    let report = evaluate(&map, &refs)?;
    let cols = vec![("Result".to_string(), report)];
    print!("{}", formats::report_table(&cols));
    if let Some(p) = output {
        formats::save_report(p, &cols)?;
    }
    Ok(())
}

fn cmd_experiment(
    name: &str,
    config: Option<&Path>,
    model: Option<PathBuf>,
    output_dir: Option<PathBuf>,
) -> Result<()> {
    let which: Experiment = name.parse()?;
    let mut cfg = load_config(config)?;
    if let Some(d) = output_dir {
        cfg.experiment.output_dir = d;
    }
    let needs_model = cfg.experiment.features.contains(&FeatureKind::Gae);
    let model = match model.or_else(|| cfg.align.model.clone()) {
        Some(p) if needs_model => Some(pipeline::load_model(&p, &cfg)?),
        None if needs_model => {
            return Err(TiaError::Usage(
                "gae conditions need a model (--model)".into(),
            ));
        }
        _ => None,
    };
    let exec = ThreadPool::from_env();
    let results = pipeline::run_experiment(which, &cfg, model.as_ref(), &exec)?;
    let dir = &cfg.experiment.output_dir;
    let mut combined = Vec::new();
    for r in &results {
        println!("{} features", r.feature.name());
        print!("{}", formats::report_table(&r.columns));
        println!();
        formats::save_report(
            &dir.join(format!("{}_{}.csv", which.name(), r.feature.name())),
            &r.columns,
        )?;
        if !r.splice_logs.is_empty() {
            formats::save_text(
                &dir.join(format!("{}_{}_splices.csv", which.name(), r.feature.name())),
                &formats::splice_log_csv(&r.splice_logs),
            )?;
        }
        combined.extend(
            r.columns
                .iter()
                .map(|(c, rep)| (format!("{} {}", r.feature.name(), c), *rep)),
        );
    }
    formats::save_report(&dir.join(format!("{}.csv", which.name())), &combined)?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let notes = match (&a.notes, a.piece) {
        (Some(p), _) => pipeline::load_score_notes(p)?,
        (None, Some(seed)) => generate_piece(seed, a.seconds),
        (None, None) => unreachable!("clap requires one of --notes and --piece"),
    };
    let notes = tempo_scale(&notes, a.tempo)?;
    let cfg = SynthConfig::default();
    write_wav(&a.output, &synthesize(&notes, &cfg))?;
    if let Some(p) = &a.notes_out {
        formats::save_notes(p, &notes)?;
    }
    if let (Some(seed), Some(out)) = (a.perform, &a.performance_out) {
        let end = notes.iter().map(|n| n.end()).fold(0.0, f64::max);
        let (perf, refs) = apply_performance(&notes, &random_tempo_curve(seed, end))?;
        write_wav(out, &synthesize(&perf, &cfg))?;
        if let Some(r) = &a.refs_out {
            formats::save_references(r, &refs)?;
        }
    }
    println!("{} notes rendered", notes.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            checkpoint,
            log,
        } => cmd_train(&config, checkpoint, log),
        Command::Extract {
            input,
            features,
            output,
            spectrogram,
            dump,
        } => cmd_extract(
            &input,
            &features,
            &output,
            spectrogram.as_deref(),
            dump.as_deref(),
        ),
        Command::Align {
            score,
            performance,
            features,
            metric,
            radius,
            output,
            dump,
        } => cmd_align(
            &score,
            &performance,
            &features,
            metric,
            radius,
            &output,
            dump.as_deref(),
        ),
        Command::Evaluate {
            timemap,
            references,
            output,
        } => cmd_evaluate(&timemap, &references, output.as_deref()),
        Command::Experiment {
            name,
            config,
            model,
            output_dir,
        } => cmd_experiment(&name, config.as_deref(), model, output_dir),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
