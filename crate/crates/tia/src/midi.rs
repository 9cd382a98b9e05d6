//! Standard MIDI file ingest: note on/off pairs timed through the tempo map.

use std::collections::HashMap;
use std::path::Path;

use midly::{MetaMessage, MidiMessage, Smf, Timing, TrackEventKind};
use tia_core::synth::{NoteEvent, MAX_PITCH, MIN_PITCH};

use crate::error::{Result, TiaError};

const DEFAULT_TEMPO_US: u32 = 500_000;

enum Raw {
    On { ch: u8, key: u8, vel: u8 },
    Off { ch: u8, key: u8 },
    Tempo(u32),
}

/// Notes of a format 0 or 1 file, sorted by onset then pitch. Notes outside
/// the piano range are dropped with a warning.
pub fn read_midi(path: &Path) -> Result<Vec<NoteEvent>> {
    let bytes = std::fs::read(path).map_err(|e| TiaError::io(path, e))?;
    parse_midi(&bytes).map_err(|msg| TiaError::Midi {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn parse_midi(bytes: &[u8]) -> std::result::Result<Vec<NoteEvent>, String> {
    let smf = Smf::parse(bytes).map_err(|e| e.to_string())?;
    let mut events: Vec<(u64, usize, Raw)> = Vec::new();
    let mut seq = 0usize;
    for track in &smf.tracks {
        let mut tick = 0u64;
        for ev in track {
            tick += ev.delta.as_int() as u64;
            let raw = match ev.kind {
                TrackEventKind::Midi { channel, message } => match message {
                    MidiMessage::NoteOn { key, vel } if vel.as_int() > 0 => Raw::On {
                        ch: channel.as_int(),
                        key: key.as_int(),
                        vel: vel.as_int(),
                    },
                    MidiMessage::NoteOn { key, .. } | MidiMessage::NoteOff { key, .. } => {
                        Raw::Off {
                            ch: channel.as_int(),
                            key: key.as_int(),
                        }
                    }
                    _ => continue,
                },
                TrackEventKind::Meta(MetaMessage::Tempo(t)) => Raw::Tempo(t.as_int()),
                _ => continue,
            };
            events.push((tick, seq, raw));
            seq += 1;
        }
    }
    // at equal ticks: tempo changes first, then note-offs, then note-ons
    let rank = |r: &Raw| match r {
        Raw::Tempo(_) => 0,
        Raw::Off { .. } => 1,
        Raw::On { .. } => 2,
    };
    events.sort_by_key(|(t, s, r)| (*t, rank(r), *s));

    let seconds_per_tick: Box<dyn Fn(u32) -> f64> = match smf.header.timing {
        Timing::Metrical(tpb) => {
            let tpb = tpb.as_int().max(1) as f64;
            Box::new(move |tempo| tempo as f64 * 1e-6 / tpb)
        }
        Timing::Timecode(fps, sub) => {
            let s = 1.0 / (fps.as_f32() as f64 * sub as f64);
            Box::new(move |_| s)
        }
    };
    let mut tempo = DEFAULT_TEMPO_US;
    let (mut last_tick, mut now) = (0u64, 0.0f64);
    let mut open: HashMap<(u8, u8), Vec<(f64, u8)>> = HashMap::new();
    let mut notes = Vec::new();
    for (tick, _, raw) in events {
        now += (tick - last_tick) as f64 * seconds_per_tick(tempo);
        last_tick = tick;
        match raw {
            Raw::Tempo(t) => tempo = t,
            Raw::On { ch, key, vel } => open.entry((ch, key)).or_default().push((now, vel)),
            Raw::Off { ch, key } => {
                let Some(stack) = open.get_mut(&(ch, key)) else {
                    continue;
                };
                if stack.is_empty() {
                    continue;
                }
                let (onset, vel) = stack.remove(0);
                let pitch = key as i32;
                if !(MIN_PITCH..=MAX_PITCH).contains(&pitch) {
                    log::warn!(
                        "dropping note with pitch {pitch} outside {MIN_PITCH}..={MAX_PITCH}"
                    );
                    continue;
                }
                if now > onset {
                    notes.push(
                        NoteEvent::new(onset, now - onset, pitch, vel as f32 / 127.0)
                            .map_err(|e| e.to_string())?,
                    );
                }
            }
        }
    }
    notes.sort_by(|a: &NoteEvent, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
    Ok(notes)
}
