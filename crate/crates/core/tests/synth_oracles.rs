//! Synthesizer output checked with a naive DFT and the CQT bin formula.

use std::f64::consts::PI;

use tia_core::eval::{align_spectrograms, evaluate, AlignSettings};
use tia_core::features::ChromaFeatures;
use tia_core::signal::{Cqt, CqtConfig};
use tia_core::synth::{
    apply_performance, generate_piece, synthesize, NoteEvent, SynthConfig, TempoCurve,
};

/// Magnitude of the DFT of `x` at frequency `f`.
fn dft_magnitude(x: &[f32], rate: f64, f: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (n, &s) in x.iter().enumerate() {
        let w = 2.0 * PI * f * n as f64 / rate;
        re += s as f64 * w.cos();
        im -= s as f64 * w.sin();
    }
    (re * re + im * im).sqrt()
}

#[test]
fn a4_lands_on_bin_66() {
    let expected = (24.0 * (440.0f64 / 65.4).log2()).round() as usize;
    assert_eq!(expected, 66);
    let audio = synthesize(
        &[NoteEvent::new(0.0, 1.5, 69, 0.8).unwrap()],
        &SynthConfig::default(),
    );
    let spec = Cqt::new(CqtConfig::default())
        .unwrap()
        .transform(&audio)
        .unwrap();
    let interior = 10..spec.num_frames() - 10;
    let hits = interior
        .clone()
        .filter(|&t| {
            let f = spec.frame(t);
            (0..f.len()).max_by(|&a, &b| f[a].total_cmp(&f[b])) == Some(expected)
        })
        .count();
    assert!(
        hits * 10 >= interior.len() * 9,
        "{hits} of {}",
        interior.len()
    );
}

#[test]
fn octave_pair_peaks_at_both_fundamentals() {
    let notes = [
        NoteEvent::new(0.0, 0.5, 57, 0.8).unwrap(),
        NoteEvent::new(0.0, 0.5, 69, 0.8).unwrap(),
    ];
    let cfg = SynthConfig::default();
    let audio = synthesize(&notes, &cfg);
    let x = &audio.samples()[..4096];
    let rate = cfg.sample_rate as f64;
    let at = |f: f64| dft_magnitude(x, rate, f);
    for f0 in [220.0, 440.0] {
        let peak = at(f0);
        // well above the spectrum between partials
        for off in [-60.0, -35.0, 35.0, 60.0] {
            assert!(peak > 5.0 * at(f0 + off), "{f0} Hz vs {} Hz", f0 + off);
        }
    }
    assert!(at(220.0) > 10.0 * at(330.0 + 55.0));
}

#[test]
fn piecewise_curve_interpolates_by_hand() {
    let curve = TempoCurve::new(vec![(0.0, 0.0), (10.0, 12.0), (20.0, 28.0)]).unwrap();
    let note = NoteEvent::new(15.0, 1.0, 60, 0.5).unwrap();
    let (warped, refs) = apply_performance(&[note], &curve).unwrap();
    assert!((warped[0].onset - 20.0).abs() < 1e-12);
    assert!((warped[0].duration - 1.6).abs() < 1e-12);
    assert_eq!(refs.pairs(), &[(15.0, warped[0].onset)]);
}

#[test]
fn uniform_slowdown_doubles_onsets() {
    let notes = generate_piece(8, 6.0);
    let (warped, _) = apply_performance(&notes, &TempoCurve::uniform(2.0).unwrap()).unwrap();
    for (a, b) in notes.iter().zip(&warped) {
        assert!((b.onset - 2.0 * a.onset).abs() < 1e-12);
    }
    let (same, refs) = apply_performance(&notes, &TempoCurve::identity()).unwrap();
    for (a, b) in notes.iter().zip(&same) {
        assert_eq!((a.onset, a.pitch), (b.onset, b.pitch));
        assert!((a.duration - b.duration).abs() < 1e-12);
    }
    assert!(refs.pairs().iter().all(|(s, p)| s == p));
}

#[test]
fn chroma_self_alignment_is_within_a_hop() {
    let cqt = Cqt::new(CqtConfig::default()).unwrap();
    let notes = generate_piece(21, 12.0);
    let spec = cqt
        .transform(&synthesize(&notes, &SynthConfig::default()))
        .unwrap();
    let (_, refs) = apply_performance(&notes, &TempoCurve::identity()).unwrap();
    let map = align_spectrograms(&ChromaFeatures, &spec, &spec, &AlignSettings::default()).unwrap();
    let report = evaluate(&map, &refs).unwrap();
    assert!(
        report.median_ms <= spec.hop_seconds() * 1000.0,
        "{report:?}"
    );
}
