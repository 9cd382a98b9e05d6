use std::fs;

use tempfile::TempDir;
use tia::error::TiaError;
use tia::formats::*;
use tia_core::align::TimeMap;
use tia_core::eval::ReferencePoints;
use tia_core::features::FeatureSequence;
use tia_core::gae::{GaeParams, ModelShape};
use tia_core::signal::Spectrogram;
use tia_core::synth::generate_piece;

#[test]
fn binary_files_round_trip() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();

    let spec = Spectrogram::from_frames((0..120 * 5).map(|i| i as f32 * 0.5).collect(), 120);
    save_spectrogram(&d.join("s.cqt"), &spec).unwrap();
    assert_eq!(load_spectrogram(&d.join("s.cqt")).unwrap(), spec);

    let feats = FeatureSequence::new(vec![0.25, -0.5, 1.0, 2.0, -3.0, 0.0], 3, 0.02, 8).unwrap();
    save_features(&d.join("f.feat"), &feats).unwrap();
    assert_eq!(load_features(&d.join("f.feat")).unwrap(), feats);

    let p = GaeParams::<f32>::init(ModelShape::for_context(8), 12).unwrap();
    save_checkpoint(&d.join("m.gaem"), &p).unwrap();
    let back = load_checkpoint(&d.join("m.gaem")).unwrap();
    assert_eq!(encode_checkpoint(&back), encode_checkpoint(&p));
    assert!(ensure_compatible(&back, 8, 120).is_ok());
    assert!(matches!(
        ensure_compatible(&back, 16, 120),
        Err(TiaError::IncompatibleModel(_))
    ));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let p = GaeParams::<f32>::init(ModelShape::for_context(2), 1).unwrap();
    let bytes = encode_checkpoint(&p);
    for cut in [0, 4, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(
                decode_checkpoint(&bytes[..cut]),
                Err(TiaError::CorruptCheckpoint(_))
            ),
            "cut {cut}"
        );
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x10;
    assert!(matches!(
        decode_checkpoint(&flipped),
        Err(TiaError::CorruptCheckpoint(_))
    ));
    let mut magic = bytes;
    magic[0] = b'X';
    assert!(decode_checkpoint(&magic).is_err());
}

#[test]
fn csv_files_round_trip() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();

    let map = TimeMap::new(vec![(0.0, 0.0), (1.5, 2.0), (3.0, 2.5)]).unwrap();
    save_timemap(&d.join("map.csv"), &map).unwrap();
    assert_eq!(load_timemap(&d.join("map.csv")).unwrap(), map);

    let refs = ReferencePoints::new(vec![(0.25, 0.5), (1.0, 1.125)]).unwrap();
    save_references(&d.join("refs.csv"), &refs).unwrap();
    assert_eq!(load_references(&d.join("refs.csv")).unwrap(), refs);

    let notes = generate_piece(4, 5.0);
    save_notes(&d.join("notes.csv"), &notes).unwrap();
    let back = load_notes(&d.join("notes.csv")).unwrap();
    assert_eq!(back.len(), notes.len());
    for (a, b) in notes.iter().zip(&back) {
        assert_eq!(a.pitch, b.pitch);
        assert!((a.onset - b.onset).abs() < 1e-6 && (a.duration - b.duration).abs() < 1e-6);
    }
}

#[test]
fn csv_errors_name_the_line() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path().join("notes.csv");
    fs::write(
        &p,
        "onset_seconds,duration_seconds,midi_pitch,velocity\n0,1,60,0.5\n0.5,-1,62,0.5\n",
    )
    .unwrap();
    let err = load_notes(&p).unwrap_err().to_string();
    assert!(err.contains("notes.csv:3"), "{err}");
    fs::write(&p, "score_seconds,performance_seconds\n1,1\n0.5\n").unwrap();
    let err = load_timemap(&p).unwrap_err().to_string();
    assert!(err.contains(":3"), "{err}");
}
