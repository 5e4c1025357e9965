//! Plain-text session and corpus files.
//!
//! A corpus directory holds `corpus.toml`, optional vocabularies
//! `vocab_words.tsv` / `vocab_pos.tsv` (`id<TAB>token`) and one directory per
//! session. A session directory holds `session.toml` plus tab-separated
//! tables per speaker `s0` / `s1`, each with a header line:
//!
//! | file               | columns                               |
//! |--------------------|---------------------------------------|
//! | `sN.va.tsv`        | `start_s end_s` speech intervals      |
//! | `sN.words.tsv`     | `end_time_s id`                       |
//! | `sN.pos.tsv`       | `end_time_s id`                       |
//! | `sN.acoustic.tsv`  | the 21 named acoustic columns         |
//! | `sN.bnf.tsv`       | `bnf_0 .. bnf_63`, 10 ms rows         |
//!
//! The full grammar is documented in `docs/session-format.md`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    average_10ms_to_50ms, rasterize_intervals, va_to_intervals, DialogSession, SpeakerTrack,
    TokenEvent, ACOUSTIC_COLUMNS, BNF_DIM, SUBFRAMES,
};
use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const FORMAT_VERSION: u32 = 1;
pub const SESSION_MANIFEST: &str = "session.toml";
pub const CORPUS_MANIFEST: &str = "corpus.toml";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionManifest {
    format_version: u32,
    session_id: String,
    n_frames: usize,
    /// 10 or 50; absent when the session has no acoustic tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    acoustic_cadence_ms: Option<u32>,
    #[serde(default)]
    has_bnf: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusManifest {
    format_version: u32,
    sessions: Vec<String>,
}

/// A session together with the non-fatal issues found while loading it.
#[derive(Debug, Clone)]
pub struct LoadedSession {
    pub session: DialogSession,
    pub warnings: Vec<String>,
}

/// Id <-> token mapping; id 0 is reserved and never listed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    pub tokens: BTreeMap<u32, String>,
}

impl Vocabulary {
    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.tokens.iter().find(|(_, t)| *t == token).map(|(&i, _)| i)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(&id).map(String::as_str)
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub sessions: Vec<DialogSession>,
    pub words: Option<Vocabulary>,
    pub pos: Option<Vocabulary>,
}

impl Corpus {
    pub fn get(&self, id: &str) -> Option<&DialogSession> {
        self.sessions.iter().find(|s| s.session_id == id)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

fn tsv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

fn write_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::data(format!("{}: {e}", path.display()))
}

struct Table {
    header: Vec<String>,
    rows: Vec<(u64, Vec<f64>)>,
}

/// Reads a numeric table; `what` names the track in error messages.
fn read_table(path: &Path, speaker: usize, what: &str) -> Result<Table> {
    let mut rdr = tsv_reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::data(format!("{} (speaker {speaker}, {what}): {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            Error::data(format!("{} (speaker {speaker}, {what}): {e}", path.display()))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| {
                Error::data(format!(
                    "{} (speaker {speaker}, {what}) line {line}: {e}",
                    path.display()
                ))
            })?;
        rows.push((line, vals));
    }
    Ok(Table { header, rows })
}

fn read_events(path: &Path, speaker: usize, what: &str, max_id: u32) -> Result<Vec<TokenEvent>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let t = read_table(path, speaker, what)?;
    let mut events: Vec<TokenEvent> = Vec::with_capacity(t.rows.len());
    for (line, row) in t.rows {
        let ctx = || format!("{} (speaker {speaker}, {what}) line {line}", path.display());
        if row.len() != 2 {
            return Err(Error::data(format!("{}: expected 2 fields", ctx())));
        }
        let (time, id) = (row[0], row[1]);
        if id.fract() != 0.0 || id < 1.0 || id > f64::from(max_id) {
            return Err(Error::data(format!(
                "{}: id {id} outside [1, {max_id}]",
                ctx()
            )));
        }
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::data(format!("{}: invalid end time {time}", ctx())));
        }
        if let Some(prev) = events.last() {
            if time < prev.end_time_s {
                return Err(Error::data(format!(
                    "{}: end time {time} precedes previous event",
                    ctx()
                )));
            }
        }
        events.push(TokenEvent {
            end_time_s: time,
            id: id as u32,
        });
    }
    Ok(events)
}

fn fit_rows(
    m: Matrix,
    n_rows: usize,
    path: &Path,
    speaker: usize,
    what: &str,
    warnings: &mut Vec<String>,
) -> Result<Matrix> {
    if m.rows() < n_rows {
        return Err(Error::data(format!(
            "{} (speaker {speaker}): {what} track has {} rows, expected {n_rows}",
            path.display(),
            m.rows()
        )));
    }
    if m.rows() > n_rows {
        let msg = format!(
            "{} (speaker {speaker}): {what} track truncated from {} to {n_rows} rows",
            path.display(),
            m.rows()
        );
        log::warn!("{msg}");
        warnings.push(msg);
        let cols = m.cols();
        let mut data = m.into_vec();
        data.truncate(n_rows * cols);
        return Ok(Matrix::from_vec(n_rows, cols, data));
    }
    Ok(m)
}

fn table_matrix(t: &Table, path: &Path, speaker: usize, what: &str) -> Result<Matrix> {
    let cols = t.header.len();
    let mut data = Vec::with_capacity(t.rows.len() * cols);
    for (line, row) in &t.rows {
        if row.len() != cols {
            return Err(Error::data(format!(
                "{} (speaker {speaker}, {what}) line {line}: {} fields, expected {cols}",
                path.display(),
                row.len()
            )));
        }
        data.extend_from_slice(row);
    }
    Ok(Matrix::from_vec(t.rows.len(), cols, data))
}

fn read_acoustic(
    path: &Path,
    speaker: usize,
    cadence_ms: u32,
    n_frames: usize,
    warnings: &mut Vec<String>,
) -> Result<Matrix> {
    let t = read_table(path, speaker, "acoustic")?;
    let mut order = Vec::with_capacity(ACOUSTIC_COLUMNS.len());
    for name in ACOUSTIC_COLUMNS {
        let idx = t.header.iter().position(|h| h == name).ok_or_else(|| {
            Error::data(format!(
                "{} (speaker {speaker}, acoustic): missing column {name}",
                path.display()
            ))
        })?;
        order.push(idx);
    }
    if let Some(extra) = t
        .header
        .iter()
        .find(|h| !ACOUSTIC_COLUMNS.contains(&h.as_str()))
    {
        return Err(Error::data(format!(
            "{} (speaker {speaker}, acoustic): unknown column {extra}",
            path.display()
        )));
    }
    let raw = table_matrix(&t, path, speaker, "acoustic")?;
    let mut canon = Matrix::zeros(raw.rows(), ACOUSTIC_COLUMNS.len());
    for r in 0..raw.rows() {
        for (c, &src) in order.iter().enumerate() {
            canon.set(r, c, raw.get(r, src));
        }
    }
    let at_50 = match cadence_ms {
        50 => canon,
        10 => {
            if canon.rows() == 0 {
                return Err(Error::data(format!(
                    "{} (speaker {speaker}): acoustic track is empty",
                    path.display()
                )));
            }
            let avg = average_10ms_to_50ms(&canon)?;
            if avg.padded_rows > 0 {
                warnings.push(format!(
                    "{} (speaker {speaker}): acoustic padded by {} rows",
                    path.display(),
                    avg.padded_rows
                ));
            }
            avg.track
        }
        other => {
            return Err(Error::data(format!(
                "acoustic cadence {other} ms unsupported (use 10 or 50)"
            )))
        }
    };
    fit_rows(at_50, n_frames, path, speaker, "acoustic", warnings)
}

fn read_bnf(
    path: &Path,
    speaker: usize,
    n_frames: usize,
    warnings: &mut Vec<String>,
) -> Result<Matrix> {
    let t = read_table(path, speaker, "bnf")?;
    if t.header.len() != BNF_DIM {
        return Err(Error::data(format!(
            "{} (speaker {speaker}, bnf): {} columns, expected {BNF_DIM}",
            path.display(),
            t.header.len()
        )));
    }
    let raw = table_matrix(&t, path, speaker, "bnf")?;
    let want = SUBFRAMES * n_frames;
    if raw.rows() < want && raw.rows().div_ceil(SUBFRAMES) == n_frames && raw.rows() > 0 {
        // complete the last 50 ms window by repeating the final row
        let pad = want - raw.rows();
        let msg = format!(
            "{} (speaker {speaker}): bnf padded by {pad} rows",
            path.display()
        );
        log::warn!("{msg}");
        warnings.push(msg);
        let last = raw.row(raw.rows() - 1).to_vec();
        let mut data = raw.into_vec();
        for _ in 0..pad {
            data.extend_from_slice(&last);
        }
        return Ok(Matrix::from_vec(want, BNF_DIM, data));
    }
    fit_rows(raw, want, path, speaker, "bnf", warnings)
}

/// Loads one session directory, reporting non-fatal issues.
pub fn load_session_report(dir: &Path) -> Result<LoadedSession> {
    let mpath = dir.join(SESSION_MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: SessionManifest = toml::from_str(&text)
        .map_err(|e| Error::data(format!("{}: {e}", mpath.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "{}: unsupported format_version {}",
            mpath.display(),
            manifest.format_version
        )));
    }
    let n = manifest.n_frames;
    let mut warnings = Vec::new();
    let mut speakers: [SpeakerTrack; 2] = Default::default();
    for (s, track) in speakers.iter_mut().enumerate() {
        let va_path = dir.join(format!("s{s}.va.tsv"));
        let t = read_table(&va_path, s, "va")?;
        let mut intervals = Vec::with_capacity(t.rows.len());
        for (line, row) in &t.rows {
            if row.len() != 2 || !(row[0] >= 0.0 && row[1] >= row[0]) {
                return Err(Error::data(format!(
                    "{} (speaker {s}, va) line {line}: invalid interval",
                    va_path.display()
                )));
            }
            if row[1] > super::frame_time(n) + 1e-9 {
                let msg = format!(
                    "{} (speaker {s}, va) line {line}: interval past end of session truncated",
                    va_path.display()
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            intervals.push((row[0], row[1]));
        }
        track.va = rasterize_intervals(&intervals, n);
        track.words = read_events(
            &dir.join(format!("s{s}.words.tsv")),
            s,
            "words",
            super::MAX_WORD_ID,
        )?;
        track.pos = read_events(&dir.join(format!("s{s}.pos.tsv")), s, "pos", super::MAX_POS_ID)?;
        if let Some(cadence) = manifest.acoustic_cadence_ms {
            track.acoustic = Some(read_acoustic(
                &dir.join(format!("s{s}.acoustic.tsv")),
                s,
                cadence,
                n,
                &mut warnings,
            )?);
        }
        if manifest.has_bnf {
            track.bnf_10ms = Some(read_bnf(
                &dir.join(format!("s{s}.bnf.tsv")),
                s,
                n,
                &mut warnings,
            )?);
        }
    }
    let session = DialogSession {
        session_id: manifest.session_id,
        n_frames: n,
        speakers,
    };
    session.validate()?;
    Ok(LoadedSession { session, warnings })
}

/// Loads one session directory.
pub fn load_session(dir: &Path) -> Result<DialogSession> {
    load_session_report(dir).map(|l| l.session)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_matrix(path: &Path, header: &[String], m: &Matrix) -> Result<()> {
    let mut w = tsv_writer(path)?;
    w.write_record(header).map_err(write_err(path))?;
    for r in 0..m.rows() {
        w.write_record(m.row(r).iter().map(|&v| fmt(v)))
            .map_err(write_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_events(path: &Path, events: &[TokenEvent]) -> Result<()> {
    let mut w = tsv_writer(path)?;
    w.write_record(["end_time_s", "id"]).map_err(write_err(path))?;
    for e in events {
        w.write_record([fmt(e.end_time_s), e.id.to_string()])
            .map_err(write_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `session` into directory `dir` (created if needed). Acoustic
/// tables are written at 50 ms cadence, BNF tables at 10 ms.
pub fn write_session(dir: &Path, session: &DialogSession) -> Result<()> {
    session.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let has_acoustic = session.speakers.iter().all(|s| s.acoustic.is_some());
    let has_bnf = session.speakers.iter().all(|s| s.bnf_10ms.is_some());
    let manifest = SessionManifest {
        format_version: FORMAT_VERSION,
        session_id: session.session_id.clone(),
        n_frames: session.n_frames,
        acoustic_cadence_ms: has_acoustic.then_some(50),
        has_bnf,
    };
    let mpath = dir.join(SESSION_MANIFEST);
    let text = toml::to_string(&manifest).expect("manifest serializes");
    fs::write(&mpath, text).map_err(io_err(&mpath))?;
    for (s, tr) in session.speakers.iter().enumerate() {
        let va_path = dir.join(format!("s{s}.va.tsv"));
        let mut w = tsv_writer(&va_path)?;
        w.write_record(["start_s", "end_s"]).map_err(write_err(&va_path))?;
        for (a, b) in va_to_intervals(&tr.va) {
            w.write_record([fmt(a), fmt(b)]).map_err(write_err(&va_path))?;
        }
        w.flush().map_err(io_err(&va_path))?;
        write_events(&dir.join(format!("s{s}.words.tsv")), &tr.words)?;
        write_events(&dir.join(format!("s{s}.pos.tsv")), &tr.pos)?;
        if has_acoustic {
            let header: Vec<String> = ACOUSTIC_COLUMNS.iter().map(|c| c.to_string()).collect();
            write_matrix(
                &dir.join(format!("s{s}.acoustic.tsv")),
                &header,
                tr.acoustic.as_ref().expect("checked"),
            )?;
        }
        if has_bnf {
            let header: Vec<String> = (0..BNF_DIM).map(|k| format!("bnf_{k}")).collect();
            write_matrix(
                &dir.join(format!("s{s}.bnf.tsv")),
                &header,
                tr.bnf_10ms.as_ref().expect("checked"),
            )?;
        }
    }
    Ok(())
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let mut rdr = tsv_reader(path)?;
    let mut tokens = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id: u32 = rec
            .get(0)
            .and_then(|v| v.parse().ok())
            .filter(|&i| i > 0)
            .ok_or_else(|| Error::data(format!("{} line {line}: bad id", path.display())))?;
        let token = rec.get(1).unwrap_or_default().to_string();
        if tokens.insert(id, token).is_some() {
            return Err(Error::data(format!(
                "{} line {line}: duplicate id {id}",
                path.display()
            )));
        }
    }
    Ok(Vocabulary { tokens })
}

pub fn write_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut w = tsv_writer(path)?;
    w.write_record(["id", "token"]).map_err(write_err(path))?;
    for (id, tok) in &vocab.tokens {
        w.write_record([id.to_string(), tok.clone()])
            .map_err(write_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn session_dir(root: &Path, id: &str) -> PathBuf {
    root.join(id)
}

/// Loads every session listed in `corpus.toml` plus any vocabularies.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let mpath = dir.join(CORPUS_MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: CorpusManifest = toml::from_str(&text)
        .map_err(|e| Error::data(format!("{}: {e}", mpath.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "{}: unsupported format_version {}",
            mpath.display(),
            manifest.format_version
        )));
    }
    let sessions = manifest
        .sessions
        .iter()
        .map(|id| {
            let s = load_session(&session_dir(dir, id))?;
            if &s.session_id != id {
                return Err(Error::data(format!(
                    "directory {id} holds session {}",
                    s.session_id
                )));
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let vocab = |name: &str| {
        let p = dir.join(name);
        p.exists().then(|| read_vocabulary(&p)).transpose()
    };
    Ok(Corpus {
        sessions,
        words: vocab("vocab_words.tsv")?,
        pos: vocab("vocab_pos.tsv")?,
    })
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = CorpusManifest {
        format_version: FORMAT_VERSION,
        sessions: corpus.sessions.iter().map(|s| s.session_id.clone()).collect(),
    };
    let mpath = dir.join(CORPUS_MANIFEST);
    fs::write(&mpath, toml::to_string(&manifest).expect("manifest serializes"))
        .map_err(io_err(&mpath))?;
    for s in &corpus.sessions {
        write_session(&session_dir(dir, &s.session_id), s)?;
    }
    if let Some(v) = &corpus.words {
        write_vocabulary(&dir.join("vocab_words.tsv"), v)?;
    }
    if let Some(v) = &corpus.pos {
        write_vocabulary(&dir.join("vocab_pos.tsv"), v)?;
    }
    Ok(())
}
