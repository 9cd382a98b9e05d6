//! On-disk formats.
//!
//! Binary files are little-endian and start with a four-byte magic and a
//! `u32` version:
//!
//! | file        | magic  | header after version                                   | payload                      |
//! |-------------|--------|--------------------------------------------------------|------------------------------|
//! | spectrogram | `CQTS` | `u32` bins, `u32` frames, `f64` hop, `f64` fmin, `u32` bins/octave | `f32` frame-major            |
//! | features    | `FEAT` | `u32` dim, `u32` count, `f64` hop, `u32` t0 offset     | `f32` vector-major           |
//! | checkpoint  | `GAEM` | `u32` n, M, F, H1, H2, `u64` seed                      | `f32` U, V, W0, W1 row-major, then `u32` CRC-32 of all preceding bytes |
//!
//! CSV files carry a header row and use `.` as decimal separator.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use tia_core::align::TimeMap;
use tia_core::eval::{EvalReport, ReferencePoints, SpliceBlock};
use tia_core::features::FeatureSequence;
use tia_core::gae::{GaeParams, ModelShape};
use tia_core::signal::Spectrogram;
use tia_core::synth::NoteEvent;
use tia_core::train::TrainingLog;

use crate::error::{Result, TiaError};

pub const VERSION: u32 = 1;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| TiaError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| TiaError::io(path, e))?;
    f.write_all(bytes).map_err(|e| TiaError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| TiaError::io(path, e))
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.0.reserve(v.len() * 4);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

/// Cursor over a byte slice; running past the end yields `None`.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f64(&mut self) -> Option<f64> {
        self.take(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let b = self.take(n.checked_mul(4)?)?;
        Some(
            b.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }
    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn header(r: &mut Reader<'_>, magic: &[u8; 4], path: &Path) -> Result<()> {
    let bad = |msg: &str| TiaError::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if r.take(4) != Some(&magic[..]) {
        return Err(bad(&format!(
            "expected {} magic",
            String::from_utf8_lossy(magic)
        )));
    }
    match r.u32() {
        Some(VERSION) => Ok(()),
        Some(v) => Err(bad(&format!("unsupported version {v}"))),
        None => Err(bad("truncated header")),
    }
}

pub fn encode_spectrogram(s: &Spectrogram) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(b"CQTS");
    w.u32(VERSION);
    w.u32(s.num_bins() as u32);
    w.u32(s.num_frames() as u32);
    w.f64(s.hop_seconds());
    w.f64(s.fmin());
    w.u32(s.bins_per_octave());
    w.f32s(s.data());
    w.0
}

pub fn save_spectrogram(path: &Path, s: &Spectrogram) -> Result<()> {
    write_file(path, &encode_spectrogram(s))
}

pub fn load_spectrogram(path: &Path) -> Result<Spectrogram> {
    let buf = read_file(path)?;
    let mut r = Reader::new(&buf);
    header(&mut r, b"CQTS", path)?;
    let parsed = (|| {
        let bins = r.u32()? as usize;
        let frames = r.u32()? as usize;
        let hop = r.f64()?;
        let fmin = r.f64()?;
        let bpo = r.u32()?;
        let data = r.f32s(bins.checked_mul(frames)?)?;
        (r.at_end() && bins > 0).then(|| Spectrogram::from_parts(data, bins, hop, fmin, bpo))
    })();
    parsed.ok_or_else(|| TiaError::Format {
        path: path.to_path_buf(),
        msg: "truncated or oversized spectrogram".into(),
    })
}

pub fn encode_features(f: &FeatureSequence) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(b"FEAT");
    w.u32(VERSION);
    w.u32(f.dim() as u32);
    w.u32(f.len() as u32);
    w.f64(f.hop_seconds());
    w.u32(f.t0_offset_frames() as u32);
    w.f32s(f.data());
    w.0
}

pub fn save_features(path: &Path, f: &FeatureSequence) -> Result<()> {
    write_file(path, &encode_features(f))
}

pub fn load_features(path: &Path) -> Result<FeatureSequence> {
    let buf = read_file(path)?;
    let mut r = Reader::new(&buf);
    header(&mut r, b"FEAT", path)?;
    let parsed = (|| {
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let hop = r.f64()?;
        let t0 = r.u32()? as usize;
        let data = r.f32s(dim.checked_mul(count)?)?;
        r.at_end().then_some(())?;
        FeatureSequence::new(data, dim, hop, t0).ok()
    })();
    parsed.ok_or_else(|| TiaError::Format {
        path: path.to_path_buf(),
        msg: "truncated or malformed feature file".into(),
    })
}

pub fn encode_checkpoint(p: &GaeParams<f32>) -> Vec<u8> {
    let s = p.shape();
    let mut w = Writer::default();
    w.0.extend_from_slice(b"GAEM");
    w.u32(VERSION);
    for v in [s.n, s.num_bins, s.factors, s.hidden1, s.hidden2] {
        w.u32(v as u32);
    }
    w.u64(p.seed());
    for m in [p.u(), p.v(), p.w0(), p.w1()] {
        w.f32s(m);
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<GaeParams<f32>> {
    let corrupt = |msg: &str| TiaError::CorruptCheckpoint(msg.to_string());
    if buf.len() < 8 || &buf[..4] != b"GAEM" {
        return Err(corrupt("missing GAEM header"));
    }
    let (body, tail) = buf.split_at(buf.len().saturating_sub(4).max(8));
    let mut r = Reader::new(body);
    r.take(4);
    if r.u32() != Some(VERSION) {
        return Err(corrupt("unsupported version"));
    }
    let dims: Option<Vec<usize>> = (0..5).map(|_| r.u32().map(|v| v as usize)).collect();
    let (dims, seed) = match (dims, r.u64()) {
        (Some(d), Some(s)) => (d, s),
        _ => return Err(corrupt("truncated header")),
    };
    let shape = ModelShape {
        n: dims[0],
        num_bins: dims[1],
        factors: dims[2],
        hidden1: dims[3],
        hidden2: dims[4],
    };
    if dims.iter().any(|&d| d > 1 << 16) {
        return Err(corrupt("implausible layer sizes"));
    }
    shape
        .validate()
        .map_err(|_| corrupt("invalid layer sizes"))?;
    let sizes = [
        shape.factors * shape.input_dim(),
        shape.factors * shape.num_bins,
        shape.hidden1 * shape.factors,
        shape.hidden2 * shape.hidden1,
    ];
    let mut mats = Vec::with_capacity(4);
    for n in sizes {
        mats.push(r.f32s(n).ok_or_else(|| corrupt("truncated weights"))?);
    }
    if !r.at_end() || tail.len() != 4 {
        return Err(corrupt("unexpected file length"));
    }
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(corrupt("CRC mismatch"));
    }
    let w1 = mats.pop().unwrap();
    let w0 = mats.pop().unwrap();
    let v = mats.pop().unwrap();
    let u = mats.pop().unwrap();
    Ok(GaeParams::from_parts(shape, seed, u, v, w0, w1)?)
}

pub fn save_checkpoint(path: &Path, p: &GaeParams<f32>) -> Result<()> {
    write_file(path, &encode_checkpoint(p))
}

pub fn load_checkpoint(path: &Path) -> Result<GaeParams<f32>> {
    decode_checkpoint(&read_file(path)?)
}

/// Fails unless the model was trained for context length `n` on
/// `num_bins`-bin spectrograms.
pub fn ensure_compatible(p: &GaeParams<f32>, n: usize, num_bins: usize) -> Result<()> {
    let s = p.shape();
    if s.n != n || s.num_bins != num_bins {
        return Err(TiaError::IncompatibleModel(format!(
            "checkpoint has n={} and {} bins, expected n={n} and {num_bins} bins",
            s.n, s.num_bins
        )));
    }
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| TiaError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(f))
}

fn csv_error(path: &Path, e: csv::Error) -> TiaError {
    let line = e.position().map_or(0, |p| p.line());
    TiaError::Csv {
        path: path.to_path_buf(),
        line,
        msg: e.to_string(),
    }
}

/// Reads every row of a CSV with the given header as numbers.
fn read_numeric_csv(path: &Path, expected: &[&str]) -> Result<Vec<(u64, Vec<f64>)>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(TiaError::Csv {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| TiaError::Csv {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if rec.len() != expected.len() {
            return Err(bad(format!(
                "expected {} fields, found {}",
                expected.len(),
                rec.len()
            )));
        }
        let vals = rec
            .iter()
            .zip(expected)
            .map(|(v, name)| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| bad(format!("{name}: `{v}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, vals));
    }
    Ok(rows)
}

const PAIR_HEADER: [&str; 2] = ["score_seconds", "performance_seconds"];

fn pairs_csv(pairs: &[(f64, f64)]) -> String {
    let mut s = PAIR_HEADER.join(",") + "\n";
    for (a, b) in pairs {
        writeln!(s, "{a:.6},{b:.6}").unwrap();
    }
    s
}

pub fn save_timemap(path: &Path, map: &TimeMap) -> Result<()> {
    write_file(path, pairs_csv(map.anchors()).as_bytes())
}

pub fn load_timemap(path: &Path) -> Result<TimeMap> {
    let rows = read_numeric_csv(path, &PAIR_HEADER)?;
    let last = rows.last().map_or(1, |r| r.0);
    let anchors = rows.into_iter().map(|(_, v)| (v[0], v[1])).collect();
    TimeMap::new(anchors).map_err(|e| TiaError::Csv {
        path: path.to_path_buf(),
        line: last,
        msg: e.to_string(),
    })
}

pub fn save_references(path: &Path, refs: &ReferencePoints) -> Result<()> {
    write_file(path, pairs_csv(refs.pairs()).as_bytes())
}

pub fn load_references(path: &Path) -> Result<ReferencePoints> {
    let rows = read_numeric_csv(path, &PAIR_HEADER)?;
    let lines: Vec<u64> = rows.iter().map(|r| r.0).collect();
    let pairs = rows.into_iter().map(|(_, v)| (v[0], v[1])).collect();
    ReferencePoints::new(pairs).map_err(|e| TiaError::Csv {
        path: path.to_path_buf(),
        line: match e {
            tia_core::Error::UnorderedReferences(k) => lines.get(k).copied().unwrap_or(0),
            _ => 0,
        },
        msg: format!("{e} (score times must be distinct)"),
    })
}

const NOTE_HEADER: [&str; 4] = [
    "onset_seconds",
    "duration_seconds",
    "midi_pitch",
    "velocity",
];

pub fn save_notes(path: &Path, notes: &[NoteEvent]) -> Result<()> {
    let mut s = NOTE_HEADER.join(",") + "\n";
    for n in notes {
        writeln!(
            s,
            "{:.6},{:.6},{},{:.4}",
            n.onset, n.duration, n.pitch, n.velocity
        )
        .unwrap();
    }
    write_file(path, s.as_bytes())
}

pub fn load_notes(path: &Path) -> Result<Vec<NoteEvent>> {
    read_numeric_csv(path, &NOTE_HEADER)?
        .into_iter()
        .map(|(line, v)| {
            let bad = |msg: String| TiaError::Csv {
                path: path.to_path_buf(),
                line,
                msg,
            };
            if v[2].fract() != 0.0 {
                return Err(bad(format!("midi_pitch `{}` is not an integer", v[2])));
            }
            NoteEvent::new(v[0], v[1], v[2] as i32, v[3] as f32).map_err(|e| bad(e.to_string()))
        })
        .collect()
}

pub fn training_log_csv(log: &TrainingLog) -> String {
    let mut s = String::from("epoch,loss_total,loss_mse,lr,seconds\n");
    for r in &log.epochs {
        writeln!(
            s,
            "{},{:.9},{:.9},{:.9e},{:.3}",
            r.epoch, r.loss_total, r.loss_mse, r.lr, r.seconds
        )
        .unwrap();
    }
    s
}

pub fn save_training_log(path: &Path, log: &TrainingLog) -> Result<()> {
    write_file(path, training_log_csv(log).as_bytes())
}

/// Report CSV with one column per condition and one row per statistic.
pub fn report_csv(columns: &[(String, EvalReport)]) -> String {
    let mut s = String::from("metric");
    for (name, _) in columns {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    let ms = [
        "q1_ms",
        "median_ms",
        "q3_ms",
        "frac_le_50ms",
        "frac_le_250ms",
    ];
    for (row, key) in ms.iter().enumerate() {
        s.push_str(key);
        for (_, r) in columns {
            write!(s, ",{:.6}", r.rows()[row]).unwrap();
        }
        s.push('\n');
    }
    s.push_str("n_points");
    for (_, r) in columns {
        write!(s, ",{}", r.n_points).unwrap();
    }
    s.push('\n');
    s
}

pub fn save_report(path: &Path, columns: &[(String, EvalReport)]) -> Result<()> {
    write_file(path, report_csv(columns).as_bytes())
}

/// Human-readable table: quartiles in milliseconds, fractions in percent.
pub fn report_table(columns: &[(String, EvalReport)]) -> String {
    let label_w = EvalReport::ROW_LABELS
        .iter()
        .map(|l| l.chars().count())
        .max()
        .unwrap_or(0);
    let col_w = columns
        .iter()
        .map(|(n, _)| n.chars().count())
        .max()
        .unwrap_or(0)
        .max(10);
    let mut s = format!("{:label_w$}", "");
    for (name, _) in columns {
        write!(s, "  {name:>col_w$}").unwrap();
    }
    s.push('\n');
    for (row, label) in EvalReport::ROW_LABELS.iter().enumerate() {
        let pad = label_w - label.chars().count();
        write!(s, "{label}{:pad$}", "").unwrap();
        for (_, r) in columns {
            let v = r.rows()[row];
            let cell = if row < 3 {
                format!("{v:.0} ms")
            } else {
                format!("{:.1}%", v * 100.0)
            };
            write!(s, "  {cell:>col_w$}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn splice_log_csv(logs: &[Vec<SpliceBlock>]) -> String {
    let mut s = String::from("piece,block,start_seconds,end_seconds,semitones\n");
    for (p, blocks) in logs.iter().enumerate() {
        for (k, b) in blocks.iter().enumerate() {
            writeln!(
                s,
                "{p},{k},{:.6},{:.6},{}",
                b.start_seconds, b.end_seconds, b.semitones
            )
            .unwrap();
        }
    }
    s
}

pub fn save_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}
