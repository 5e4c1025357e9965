//! Per-frame model inputs assembled from a feature plan.
//!
//! For a target speaker the input row at frame `f` is
//! `[target block, interlocutor block]`, each block ordered as
//! acoustic columns (canonical order, per-file z-scores), word id, POS id,
//! 64 BNF values, voice activity. Token ids stay integers until the model's
//! embedding layer.

mod frame;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use frame::{FrameFeatureMatrix, InputLayout, Segment, TokenStream};

use crate::corpus::{
    acoustic_index, average_10ms_to_50ms, micros, DialogSession, TokenEvent, ACOUSTIC_COLUMNS,
    BNF_DIM,
};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Availability delay of a word or POS token after the word ends.
pub const LINGUISTIC_DELAY_S: f64 = 0.100;
/// BNF delay in 10 ms rows (60 ms).
pub const BNF_DELAY_ROWS: usize = 6;

/// Which streams feed the model.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturePlan {
    /// Acoustic column names; `["all"]` selects all 21.
    #[serde(default)]
    pub acoustic: Vec<String>,
    #[serde(default)]
    pub words: bool,
    #[serde(default)]
    pub pos: bool,
    #[serde(default)]
    pub bnf: bool,
    #[serde(default)]
    pub va: bool,
}

impl FeaturePlan {
    pub fn va_only() -> Self {
        FeaturePlan {
            va: true,
            ..Default::default()
        }
    }

    pub fn all_acoustic() -> Self {
        FeaturePlan {
            acoustic: ACOUSTIC_COLUMNS.iter().map(|c| c.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn with_acoustic<S: AsRef<str>>(names: &[S]) -> Self {
        FeaturePlan {
            acoustic: names.iter().map(|s| s.as_ref().to_string()).collect(),
            ..Default::default()
        }
    }

    /// Canonical indices of the selected acoustic columns, sorted.
    pub fn acoustic_indices(&self) -> Result<Vec<usize>> {
        if self.acoustic.len() == 1 && self.acoustic[0] == "all" {
            return Ok((0..ACOUSTIC_COLUMNS.len()).collect());
        }
        let mut idx = Vec::with_capacity(self.acoustic.len());
        for name in &self.acoustic {
            let i = acoustic_index(name)
                .ok_or_else(|| Error::config(format!("unknown acoustic column {name}")))?;
            if idx.contains(&i) {
                return Err(Error::config(format!("acoustic column {name} listed twice")));
            }
            idx.push(i);
        }
        idx.sort_unstable();
        Ok(idx)
    }

    pub fn validate(&self) -> Result<()> {
        let n_acoustic = self.acoustic_indices()?.len();
        if n_acoustic == 0 && !self.words && !self.pos && !self.bnf && !self.va {
            return Err(Error::config("feature plan enables no stream"));
        }
        Ok(())
    }

    /// Same plan with the acoustic list in canonical order.
    pub fn normalized(&self) -> Result<FeaturePlan> {
        let idx = self.acoustic_indices()?;
        Ok(FeaturePlan {
            acoustic: idx.iter().map(|&i| ACOUSTIC_COLUMNS[i].to_string()).collect(),
            ..self.clone()
        })
    }

    /// Model input width: `2 * (|acoustic| + 64 words + 64 pos + 64 bnf + va)`.
    pub fn input_dim(&self) -> Result<usize> {
        Ok(self.layout()?.input_dim())
    }

    pub fn layout(&self) -> Result<InputLayout> {
        self.validate()?;
        let n_acoustic = self.acoustic_indices()?.len();
        let mut block = Vec::new();
        if n_acoustic > 0 {
            block.push(Segment::Dense { width: n_acoustic });
        }
        if self.words {
            block.push(Segment::Token {
                stream: TokenStream::Words,
            });
        }
        if self.pos {
            block.push(Segment::Token {
                stream: TokenStream::Pos,
            });
        }
        if self.bnf {
            block.push(Segment::Dense { width: BNF_DIM });
        }
        if self.va {
            block.push(Segment::Dense { width: 1 });
        }
        let mut segments = block.clone();
        segments.extend(block);
        Ok(InputLayout::new(segments))
    }

    /// Stable short hash of the normalized plan.
    pub fn fingerprint(&self) -> Result<String> {
        let n = self.normalized()?;
        let canon = format!(
            "acoustic={};words={};pos={};bnf={};va={}",
            n.acoustic.join(","),
            n.words,
            n.pos,
            n.bnf,
            n.va
        );
        Ok(short_hash(canon.as_bytes()))
    }
}

pub(crate) fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-column z-scores of a whole file.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScored {
    pub track: Matrix,
    /// Columns with zero variance, mapped to all zeros.
    pub constant_columns: Vec<usize>,
}

/// Mean and population standard deviation of each column of a file.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    pub fn compute(track: &Matrix) -> Result<ColumnStats> {
        let n = track.rows();
        if n < 2 {
            return Err(Error::data(format!(
                "z-scores need at least 2 frames, got {n}"
            )));
        }
        let cols = track.cols();
        let mut mean = vec![0.0; cols];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(track.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; cols];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(track.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(ColumnStats { mean, std })
    }

    /// Applies the statistics; zero-variance columns become zeros.
    pub fn apply(&self, track: &Matrix) -> ZScored {
        let mut out = Matrix::zeros(track.rows(), track.cols());
        let constant_columns: Vec<usize> =
            (0..track.cols()).filter(|&c| self.std[c] == 0.0).collect();
        for r in 0..track.rows() {
            let dst = out.row_mut(r);
            for (c, (d, v)) in dst.iter_mut().zip(track.row(r)).enumerate() {
                *d = if self.std[c] == 0.0 {
                    0.0
                } else {
                    (v - self.mean[c]) / self.std[c]
                };
            }
        }
        ZScored {
            track: out,
            constant_columns,
        }
    }
}

/// Z-scores the given columns of `track` using statistics of the whole file.
pub fn zscore_per_file(track: &Matrix, columns: &[usize]) -> Result<ZScored> {
    let mut sel = Matrix::zeros(track.rows(), columns.len());
    for r in 0..track.rows() {
        for (k, &c) in columns.iter().enumerate() {
            sel.set(r, k, track.get(r, c));
        }
    }
    let z = ColumnStats::compute(&sel)?.apply(&sel);
    for &c in &z.constant_columns {
        log::warn!("acoustic column {c} has zero variance; z-scores set to 0");
    }
    Ok(z)
}

/// Token ids per frame for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticStream {
    pub ids: Vec<u32>,
    /// Frames where a later token replaced an earlier one.
    pub collisions: Vec<usize>,
    /// Tokens whose delayed time fell past the end of the session.
    pub dropped: usize,
}

/// Places each token at the frame containing `end_time + 100 ms`; all other
/// frames carry 0. A later token landing on an occupied frame wins.
pub fn linguistic_frame_stream(events: &[TokenEvent], n_frames: usize) -> LinguisticStream {
    let mut ids = vec![0u32; n_frames];
    let mut collisions = Vec::new();
    let mut dropped = 0;
    let delay = micros(LINGUISTIC_DELAY_S);
    for e in events {
        let f = (micros(e.end_time_s) + delay).div_euclid(50_000);
        if f < 0 || f as usize >= n_frames {
            dropped += 1;
            continue;
        }
        let f = f as usize;
        if ids[f] != 0 {
            collisions.push(f);
        }
        ids[f] = e.id;
    }
    LinguisticStream {
        ids,
        collisions,
        dropped,
    }
}

/// Shifts a 10 ms track down by six rows (60 ms), zero-filling the top.
pub fn delay_bnf(track: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(track.rows(), track.cols());
    for r in BNF_DELAY_ROWS..track.rows() {
        out.row_mut(r).copy_from_slice(track.row(r - BNF_DELAY_ROWS));
    }
    out
}

/// Aligned 50 ms streams for one speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerStreams {
    /// `n x 21`, z-scored per file.
    pub acoustic: Option<Matrix>,
    pub words: Vec<u32>,
    pub pos: Vec<u32>,
    /// `n x 64`, delayed then averaged.
    pub bnf: Option<Matrix>,
    pub va: Vec<u8>,
}

/// A session with every available stream aligned, ready for any plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSession {
    pub session_id: String,
    pub n_frames: usize,
    pub speakers: [SpeakerStreams; 2],
}

/// Normalization statistics per speaker (acoustic columns).
pub type FileStats = [Option<ColumnStats>; 2];

pub fn file_stats(session: &DialogSession) -> Result<FileStats> {
    let stats = |s: usize| {
        session.speakers[s]
            .acoustic
            .as_ref()
            .map(ColumnStats::compute)
            .transpose()
    };
    Ok([stats(0)?, stats(1)?])
}

/// Aligns every stream of `session`, z-scoring acoustic columns with
/// statistics of the whole file.
pub fn prepare(session: &DialogSession) -> Result<PreparedSession> {
    let stats = file_stats(session)?;
    prepare_with_stats(session, &stats)
}

/// As [`prepare`] with externally supplied normalization statistics.
pub fn prepare_with_stats(session: &DialogSession, stats: &FileStats) -> Result<PreparedSession> {
    let n = session.n_frames;
    let mut speakers: [SpeakerStreams; 2] = [0, 1].map(|_| SpeakerStreams {
        acoustic: None,
        words: Vec::new(),
        pos: Vec::new(),
        bnf: None,
        va: Vec::new(),
    });
    for (s, out) in speakers.iter_mut().enumerate() {
        let tr = &session.speakers[s];
        out.acoustic = match (&tr.acoustic, &stats[s]) {
            (Some(a), Some(st)) => {
                let z = st.apply(a);
                for c in &z.constant_columns {
                    log::warn!(
                        "{} speaker {s}: acoustic column {} is constant",
                        session.session_id,
                        ACOUSTIC_COLUMNS[*c]
                    );
                }
                Some(z.track)
            }
            (Some(_), None) => {
                return Err(Error::config("missing normalization statistics"));
            }
            (None, _) => None,
        };
        for (name, events, dest) in [("words", &tr.words, &mut out.words), ("pos", &tr.pos, &mut out.pos)] {
            let stream = linguistic_frame_stream(events, n);
            if !stream.collisions.is_empty() {
                log::warn!(
                    "{} speaker {s}: {} {name} tokens share a frame with a later token and were replaced",
                    session.session_id,
                    stream.collisions.len()
                );
            }
            if stream.dropped > 0 {
                log::warn!(
                    "{} speaker {s}: {} {name} tokens delayed past the end of the session were dropped",
                    session.session_id,
                    stream.dropped
                );
            }
            *dest = stream.ids;
        }
        out.bnf = tr
            .bnf_10ms
            .as_ref()
            .map(|b| average_10ms_to_50ms(&delay_bnf(b)).map(|a| a.track))
            .transpose()?;
        out.va = tr.va.clone();
    }
    Ok(PreparedSession {
        session_id: session.session_id.clone(),
        n_frames: n,
        speakers,
    })
}

impl PreparedSession {
    fn check_plan(&self, plan: &FeaturePlan) -> Result<()> {
        let need_acoustic = !plan.acoustic_indices()?.is_empty();
        for (s, sp) in self.speakers.iter().enumerate() {
            if need_acoustic && sp.acoustic.is_none() {
                return Err(Error::config(format!(
                    "plan uses acoustic features but session {} speaker {s} has none",
                    self.session_id
                )));
            }
            if plan.bnf && sp.bnf.is_none() {
                return Err(Error::config(format!(
                    "plan uses BNF features but session {} speaker {s} has none",
                    self.session_id
                )));
            }
        }
        Ok(())
    }

    /// Input matrices indexed by target speaker.
    pub fn assemble(&self, plan: &FeaturePlan) -> Result<[FrameFeatureMatrix; 2]> {
        self.check_plan(plan)?;
        let layout = plan.layout()?;
        let cols = plan.acoustic_indices()?;
        let n = self.n_frames;
        let build = |target: usize| -> Result<FrameFeatureMatrix> {
            let order = [target, 1 - target];
            let mut dense = Vec::with_capacity(n * layout.dense_width());
            let mut tokens = Vec::with_capacity(n * layout.token_columns());
            for f in 0..n {
                for &s in &order {
                    let sp = &self.speakers[s];
                    if let Some(a) = sp.acoustic.as_ref().filter(|_| !cols.is_empty()) {
                        let row = a.row(f);
                        dense.extend(cols.iter().map(|&c| row[c]));
                    }
                    if plan.words {
                        tokens.push(sp.words[f]);
                    }
                    if plan.pos {
                        tokens.push(sp.pos[f]);
                    }
                    if plan.bnf {
                        dense.extend_from_slice(sp.bnf.as_ref().expect("checked").row(f));
                    }
                    if plan.va {
                        dense.push(f64::from(sp.va[f]));
                    }
                }
            }
            FrameFeatureMatrix::new(layout.clone(), n, dense, tokens)
        };
        Ok([build(0)?, build(1)?])
    }
}

/// Input matrices for target speaker 0 and target speaker 1.
pub fn assemble(session: &DialogSession, plan: &FeaturePlan) -> Result<[FrameFeatureMatrix; 2]> {
    plan.validate()?;
    prepare(session)?.assemble(plan)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SpeakerTrack;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zscore_analytic_column() {
        let m = Matrix::from_vec(3, 1, vec![2.0, 4.0, 6.0]);
        let z = zscore_per_file(&m, &[0]).unwrap();
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (g, e) in z.track.as_slice().iter().zip(expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_constant_column_and_short_track() {
        let m = Matrix::from_vec(3, 2, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let z = zscore_per_file(&m, &[0, 1]).unwrap();
        assert_eq!(z.constant_columns, vec![1]);
        assert!((0..3).all(|r| z.track.get(r, 1) == 0.0));
        assert!(zscore_per_file(&Matrix::zeros(1, 2), &[0]).is_err());
    }

    #[test]
    fn zscore_moments_recomputed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Matrix::from_vec(100, 3, (0..300).map(|_| rng.random_range(-5.0..20.0)).collect());
        let z = zscore_per_file(&m, &[0, 1, 2]).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = (0..100).map(|r| z.track.get(r, c)).collect();
            let mu = col.iter().sum::<f64>() / 100.0;
            let sd = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 100.0).sqrt();
            assert!(mu.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linguistic_delay_and_collisions() {
        let s = linguistic_frame_stream(&[TokenEvent { end_time_s: 0.2, id: 9 }], 10);
        let mut expect = vec![0; 10];
        expect[6] = 9;
        assert_eq!(s.ids, expect);
        assert_eq!(linguistic_frame_stream(&[], 4).ids, vec![0; 4]);

        let s = linguistic_frame_stream(
            &[
                TokenEvent { end_time_s: 0.21, id: 3 },
                TokenEvent { end_time_s: 0.23, id: 4 },
            ],
            10,
        );
        assert_eq!(s.ids[6], 4);
        assert_eq!(s.collisions, vec![6]);

        let s = linguistic_frame_stream(&[TokenEvent { end_time_s: 0.45, id: 2 }], 10);
        assert_eq!(s.dropped, 1);
        assert!(s.ids.iter().all(|&i| i == 0));
    }

    #[test]
    fn bnf_delay_is_six_rows() {
        let mut m = Matrix::zeros(10, 2);
        m.set(0, 1, 1.0);
        let d = delay_bnf(&m);
        assert_eq!(d.get(6, 1), 1.0);
        assert_eq!(d.as_slice().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(delay_bnf(&Matrix::zeros(8, 3)), Matrix::zeros(8, 3));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = Matrix::from_vec(20, 4, (0..80).map(|_| rng.random()).collect());
        let d = delay_bnf(&r);
        for row in 6..20 {
            assert_eq!(d.row(row), r.row(row - 6));
        }
        assert!(d.as_slice()[..24].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plan_dimensions() {
        assert_eq!(FeaturePlan::va_only().input_dim().unwrap(), 2);
        assert_eq!(FeaturePlan::all_acoustic().input_dim().unwrap(), 42);
        let full = FeaturePlan {
            acoustic: vec!["all".into()],
            words: true,
            pos: true,
            bnf: true,
            va: true,
        };
        assert_eq!(full.input_dim().unwrap(), 2 * (21 + 64 * 3 + 1));
        assert!(FeaturePlan::default().validate().is_err());
        assert!(FeaturePlan::with_acoustic(&["nope"]).validate().is_err());
    }

    #[test]
    fn fingerprint_ignores_listing_order() {
        let a = FeaturePlan::with_acoustic(&["Loudness_sma3", "mfcc1_sma3"]);
        let b = FeaturePlan::with_acoustic(&["mfcc1_sma3", "Loudness_sma3"]);
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        assert_ne!(a.fingerprint().unwrap(), FeaturePlan::va_only().fingerprint().unwrap());
    }

    fn session_va(a: Vec<u8>, b: Vec<u8>) -> DialogSession {
        DialogSession {
            session_id: "t".into(),
            n_frames: a.len(),
            speakers: [
                SpeakerTrack { va: a, ..Default::default() },
                SpeakerTrack { va: b, ..Default::default() },
            ],
        }
    }

    #[test]
    fn va_plan_columns_and_role_swap() {
        let s = session_va(vec![1, 1, 0, 0], vec![0, 1, 1, 0]);
        let [m0, m1] = assemble(&s, &FeaturePlan::va_only()).unwrap();
        assert_eq!(m0.layout().input_dim(), 2);
        let rows0: Vec<&[f64]> = (0..4).map(|f| m0.dense_row(f)).collect();
        assert_eq!(rows0, vec![&[1.0, 0.0][..], &[1.0, 1.0], &[0.0, 1.0], &[0.0, 0.0]]);
        for f in 0..4 {
            let (a, b) = (m0.dense_row(f), m1.dense_row(f));
            assert_eq!((a[0], a[1]), (b[1], b[0]));
        }
    }

    #[test]
    fn missing_stream_is_config_error() {
        let s = session_va(vec![0; 4], vec![0; 4]);
        let plan = FeaturePlan { bnf: true, ..Default::default() };
        assert!(matches!(assemble(&s, &plan), Err(Error::Config(_))));
        assert!(matches!(
            assemble(&s, &FeaturePlan::all_acoustic()),
            Err(Error::Config(_))
        ));
    }
}
