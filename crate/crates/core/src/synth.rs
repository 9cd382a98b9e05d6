//! Deterministic additive synthesis of note lists, performance warping and a
//! seeded generator of short pseudo-random pieces.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::ReferencePoints;
use crate::signal::{AudioBuffer, SAMPLE_RATE};
use crate::{Error, Result};

pub const MIN_PITCH: i32 = 21;
pub const MAX_PITCH: i32 = 108;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteEvent {
    /// Seconds.
    pub onset: f64,
    /// Seconds, strictly positive.
    pub duration: f64,
    /// MIDI note number in `21..=108`.
    pub pitch: u8,
    /// Loudness in `[0, 1]`.
    pub velocity: f32,
}

impl NoteEvent {
    pub fn new(onset: f64, duration: f64, pitch: i32, velocity: f32) -> Result<Self> {
        if !(MIN_PITCH..=MAX_PITCH).contains(&pitch) {
            return Err(Error::PitchOutOfRange(pitch));
        }
        if !(onset.is_finite() && onset >= 0.0) {
            return Err(Error::InvalidNote("onset must be finite and non-negative"));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::InvalidNote("duration must be positive"));
        }
        if !(0.0..=1.0).contains(&velocity) {
            return Err(Error::InvalidNote("velocity must lie in [0, 1]"));
        }
        Ok(Self {
            onset,
            duration,
            pitch: pitch as u8,
            velocity,
        })
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    pub fn frequency(&self) -> f64 {
        midi_to_hz(self.pitch as f64)
    }
}

pub fn midi_to_hz(pitch: f64) -> f64 {
    440.0 * libm::pow(2.0, (pitch - 69.0) / 12.0)
}

/// Timbre and output parameters of the synthesizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub sample_rate: u32,
    /// Partials per note; partial `h` has amplitude `1 / h²`.
    pub harmonics: usize,
    /// Time constant of the exponential decay.
    pub decay_seconds: f64,
    /// Linear fade-in.
    pub attack_seconds: f64,
    /// Linear fade-out at the end of the note.
    pub release_seconds: f64,
    /// Absolute peak of the rendered buffer.
    pub peak: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            harmonics: 6,
            decay_seconds: 0.5,
            attack_seconds: 0.01,
            release_seconds: 0.01,
            peak: 0.9,
        }
    }
}

/// Renders notes to a mono buffer whose length is the latest note end.
/// An empty list gives an empty buffer.
pub fn synthesize(notes: &[NoteEvent], cfg: &SynthConfig) -> AudioBuffer {
    let sr = cfg.sample_rate as f64;
    let end = notes.iter().map(NoteEvent::end).fold(0.0, f64::max);
    let len = libm::ceil(end * sr) as usize;
    let mut out = vec![0.0f64; len];
    let nyquist = sr / 2.0;
    for note in notes {
        let start = libm::round(note.onset * sr) as usize;
        let n = (libm::round(note.duration * sr) as usize).min(len.saturating_sub(start));
        let f0 = note.frequency();
        let partials: Vec<(f64, f64)> = (1..=cfg.harmonics)
            .map(|h| (h as f64 * f0, 1.0 / (h * h) as f64))
            .filter(|(f, _)| *f < nyquist)
            .collect();
        let vel = note.velocity as f64;
        for i in 0..n {
            let t = i as f64 / sr;
            let attack = if cfg.attack_seconds > 0.0 {
                (t / cfg.attack_seconds).min(1.0)
            } else {
                1.0
            };
            let release = if cfg.release_seconds > 0.0 {
                ((note.duration - t) / cfg.release_seconds).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let env = vel * attack * release * libm::exp(-t / cfg.decay_seconds);
            let mut s = 0.0;
            for &(f, a) in &partials {
                s += a * libm::sin(2.0 * PI * f * t);
            }
            out[start + i] += env * s;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gain = if peak > 0.0 {
        cfg.peak as f64 / peak
    } else {
        0.0
    };
    let samples = out.into_iter().map(|x| (x * gain) as f32).collect();
    AudioBuffer::new(samples, cfg.sample_rate).expect("synthesized samples are finite")
}

/// Piecewise-linear map from score seconds to performance seconds, strictly
/// increasing in both coordinates. Outside the anchors the first or last
/// segment is extended.
#[derive(Debug, Clone, PartialEq)]
pub struct TempoCurve {
    anchors: Vec<(f64, f64)>,
}

impl TempoCurve {
    pub fn new(anchors: Vec<(f64, f64)>) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::InvalidTempoCurve("need at least two anchors"));
        }
        if anchors
            .iter()
            .any(|(a, b)| !a.is_finite() || !b.is_finite())
        {
            return Err(Error::InvalidTempoCurve("non-finite anchor"));
        }
        if anchors
            .windows(2)
            .any(|w| w[1].0 <= w[0].0 || w[1].1 <= w[0].1)
        {
            return Err(Error::InvalidTempoCurve("anchors must strictly increase"));
        }
        Ok(Self { anchors })
    }

    pub fn identity() -> Self {
        Self {
            anchors: vec![(0.0, 0.0), (1.0, 1.0)],
        }
    }

    /// Constant tempo change: performance time = `stretch` × score time.
    pub fn uniform(stretch: f64) -> Result<Self> {
        Self::new(vec![(0.0, 0.0), (1.0, stretch)])
    }

    pub fn anchors(&self) -> &[(f64, f64)] {
        &self.anchors
    }

    pub fn warp(&self, t: f64) -> f64 {
        let a = &self.anchors;
        let seg = match a.iter().position(|&(s, _)| s > t) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => a.len() - 2,
        };
        let (s0, p0) = a[seg];
        let (s1, p1) = a[seg + 1];
        p0 + (t - s0) * (p1 - p0) / (s1 - s0)
    }
}

/// A note list together with the tempo curve of its performance.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceScript {
    pub notes: Vec<NoteEvent>,
    pub tempo_curve: TempoCurve,
}

impl PerformanceScript {
    pub fn render(&self) -> Result<(Vec<NoteEvent>, ReferencePoints)> {
        apply_performance(&self.notes, &self.tempo_curve)
    }
}

/// Warps onsets and note ends through the tempo curve. Reference points pair
/// each distinct score onset with its warped onset.
pub fn apply_performance(
    notes: &[NoteEvent],
    curve: &TempoCurve,
) -> Result<(Vec<NoteEvent>, ReferencePoints)> {
    let warped: Vec<NoteEvent> = notes
        .iter()
        .map(|n| {
            let on = curve.warp(n.onset);
            let off = curve.warp(n.end());
            NoteEvent {
                onset: on.max(0.0),
                duration: off - on,
                ..*n
            }
        })
        .collect();
    let mut onsets: Vec<(f64, f64)> = notes
        .iter()
        .zip(&warped)
        .map(|(s, p)| (s.onset, p.onset))
        .collect();
    onsets.sort_by(|a, b| a.0.total_cmp(&b.0));
    onsets.dedup_by(|a, b| a.0 == b.0);
    Ok((warped, ReferencePoints::new(onsets)?))
}

pub fn transpose_notes(notes: &[NoteEvent], semitones: i32) -> Result<Vec<NoteEvent>> {
    notes
        .iter()
        .map(|n| {
            let p = n.pitch as i32 + semitones;
            if !(MIN_PITCH..=MAX_PITCH).contains(&p) {
                return Err(Error::PitchOutOfRange(p));
            }
            Ok(NoteEvent {
                pitch: p as u8,
                ..*n
            })
        })
        .collect()
}

const MAJOR: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR: [i32; 7] = [0, 2, 3, 5, 7, 8, 10];

/// Pitch of a scale degree (may be negative or exceed an octave).
fn degree_pitch(tonic: i32, scale: &[i32; 7], degree: i32) -> i32 {
    let oct = degree.div_euclid(7);
    tonic + 12 * oct + scale[degree.rem_euclid(7) as usize]
}

/// Seeded pseudo-random piece of roughly `seconds` length: sections of scale
/// runs, arpeggios and block chords over a bass line, with 2 to 4 voices.
pub fn generate_piece(seed: u64, seconds: f64) -> Vec<NoteEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beat = rng.gen_range(0.3..0.55);
    let tonic = 48 + rng.gen_range(0..12);
    let scale = if rng.gen_bool(0.5) { &MAJOR } else { &MINOR };
    let voices = rng.gen_range(2..=4);
    let progression = [0, 3, 4, 5, 1, 0, 4, 3];
    let mut notes = Vec::new();
    let mut t = 0.0;
    let mut melody_degree = 7 + rng.gen_range(0..7);
    let push = |notes: &mut Vec<NoteEvent>, onset: f64, dur: f64, pitch: i32, vel: f32| {
        if onset < seconds {
            let p = pitch.clamp(MIN_PITCH + 12, MAX_PITCH - 12);
            notes.push(NoteEvent::new(onset, dur, p, vel).expect("generated note is valid"));
        }
    };
    while t < seconds {
        let root = progression[rng.gen_range(0..progression.len())];
        let beats = rng.gen_range(2..=4) * 2;
        let pattern = rng.gen_range(0..3);
        let chord = [root, root + 2, root + 4];
        // bass
        let bass_step = if rng.gen_bool(0.5) { 1 } else { 2 };
        for b in (0..beats).step_by(bass_step) {
            let p = degree_pitch(tonic - 12, scale, root);
            let v = rng.gen_range(0.55..0.8);
            push(
                &mut notes,
                t + b as f64 * beat,
                bass_step as f64 * beat * 0.95,
                p,
                v,
            );
        }
        match pattern {
            // stepwise melody in eighths
            0 => {
                let dir = if rng.gen_bool(0.5) { 1 } else { -1 };
                for e in 0..beats * 2 {
                    if rng.gen_bool(0.15) {
                        continue;
                    }
                    melody_degree += if rng.gen_bool(0.8) { dir } else { -dir };
                    melody_degree = melody_degree.clamp(3, 16);
                    let p = degree_pitch(tonic, scale, melody_degree);
                    let v = rng.gen_range(0.6..1.0);
                    push(&mut notes, t + e as f64 * beat / 2.0, beat * 0.48, p, v);
                }
            }
            // broken chord over two octaves
            1 => {
                let up = rng.gen_bool(0.5);
                for e in 0..beats * 2 {
                    let k = e % 6;
                    let k = if up { k } else { 5 - k };
                    let deg = chord[(k % 3) as usize] + 7 * (k / 3) + 7;
                    let p = degree_pitch(tonic, scale, deg);
                    let v = rng.gen_range(0.55..0.95);
                    push(&mut notes, t + e as f64 * beat / 2.0, beat * 0.9, p, v);
                }
            }
            // block chords on every beat
            _ => {
                for b in 0..beats {
                    let v = rng.gen_range(0.55..0.9);
                    for &deg in &chord {
                        let p = degree_pitch(tonic, scale, deg + 7);
                        push(&mut notes, t + b as f64 * beat, beat * 0.9, p, v);
                    }
                }
            }
        }
        if voices >= 3 {
            // sustained upper tone
            let deg = chord[rng.gen_range(0..3)] + 14;
            let p = degree_pitch(tonic, scale, deg);
            push(
                &mut notes,
                t,
                beats as f64 * beat * 0.95,
                p,
                rng.gen_range(0.4..0.6),
            );
        }
        if voices >= 4 {
            // inner voice in half notes
            for b in (0..beats).step_by(2) {
                let deg = chord[rng.gen_range(0..3)] + 7;
                let p = degree_pitch(tonic, scale, deg) - 12;
                push(
                    &mut notes,
                    t + b as f64 * beat,
                    2.0 * beat * 0.9,
                    p,
                    rng.gen_range(0.45..0.7),
                );
            }
        }
        t += beats as f64 * beat;
    }
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
    notes
}

/// Seeded tempo curve with a new local tempo (0.85 to 1.18 times the score
/// tempo) every 4 to 8 score seconds.
pub fn random_tempo_curve(seed: u64, seconds: f64) -> TempoCurve {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7465_6d70_6f00_0000);
    let mut anchors = vec![(0.0, 0.0)];
    let (mut s, mut p) = (0.0, 0.0);
    while s < seconds {
        let span = rng.gen_range(4.0..8.0);
        let stretch = rng.gen_range(0.85..1.18);
        s += span;
        p += span * stretch;
        anchors.push((s, p));
    }
    TempoCurve::new(anchors).expect("generated anchors increase")
}
