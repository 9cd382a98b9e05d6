use tia_core::gae::{GaeParams, ModelShape};
use tia_core::signal::{Cqt, CqtConfig, Spectrogram};
use tia_core::synth::{generate_piece, synthesize, SynthConfig};
use tia_core::train::{build_dataset, train, TrainingConfig};

fn corpus(seconds: f64) -> Vec<Spectrogram> {
    let cqt = Cqt::new(CqtConfig::default()).unwrap();
    [31, 32]
        .iter()
        .map(|&s| {
            let audio = synthesize(&generate_piece(s, seconds), &SynthConfig::default());
            cqt.transform(&audio).unwrap().normalized()
        })
        .collect()
}

fn bits(p: &GaeParams<f32>) -> Vec<u32> {
    p.u()
        .iter()
        .chain(p.v())
        .chain(p.w0())
        .chain(p.w1())
        .map(|x| x.to_bits())
        .collect()
}

#[test]
fn same_seed_same_model() {
    let specs = corpus(1.5);
    let ds = build_dataset(&specs, 8).unwrap();
    let cfg = TrainingConfig {
        epochs: 3,
        batch_size: 20,
        lr0: 0.05,
        seed: 5,
        ..Default::default()
    };
    let (a, log_a) = train(&cfg, &ds).unwrap();
    let (b, log_b) = train(&cfg, &ds).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(log_a, log_b);
    let (c, _) = train(&TrainingConfig { seed: 6, ..cfg }, &ds).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn zero_shift_training_starts_from_the_plain_loss() {
    let specs = corpus(1.0);
    let ds = build_dataset(&specs, 8).unwrap();
    let cfg = TrainingConfig {
        epochs: 2,
        batch_size: ds.len(),
        delta_range: (0, 0),
        dropout_rate: 0.0,
        lr0: 0.01,
        seed: 9,
        ..Default::default()
    };
    let (_, log) = train(&cfg, &ds).unwrap();
    let init = GaeParams::<f32>::init(ModelShape::for_context(8), cfg.seed).unwrap();
    let loss_cfg = cfg.loss_config();
    let plain: f64 = (0..ds.len())
        .map(|i| init.loss_plain(&ds.window(i), &loss_cfg).unwrap().total)
        .sum::<f64>()
        / ds.len() as f64;
    let logged = log.epochs[0].loss_total;
    assert!(
        (logged - plain).abs() <= 1e-5 * plain,
        "{logged} vs {plain}"
    );
}

#[test]
fn loss_decreases_on_a_small_corpus() {
    let specs = corpus(1.5);
    let ds = build_dataset(&specs, 8).unwrap();
    assert!(ds.len() >= 200, "{}", ds.len());
    let cfg = TrainingConfig {
        epochs: 50,
        batch_size: 16,
        lr0: 0.05,
        seed: 1,
        ..Default::default()
    };
    let (_, log) = train(&cfg, &ds).unwrap();
    let first = log.epochs[0].loss_mse;
    let last = log.epochs.last().unwrap().loss_mse;
    assert_eq!(log.epochs.len(), 50);
    assert!(last < 0.8 * first, "{first} -> {last}");
    assert!(log.epochs.windows(2).all(|w| w[1].lr <= w[0].lr));
}
