//! Synthetic two-party dialogs with controllable turn-taking cues.
//!
//! Floors alternate between speakers. A turn is a run of inter-pausal units
//! (IPUs) separated by short within-turn pauses; it ends in a switch after a
//! gap or, with some probability, a brief overlap. Listeners occasionally
//! produce short backchannels inside long IPUs.
//!
//! Two acoustic columns (F0 and loudness stand-ins) carry the signal: they
//! sit `voicing_offset` higher while the speaker talks, and over the final
//! 10 frames of every turn that ends in a switch they ramp down by
//! `kappa * cue_amplitude`. The turn-final word and POS tag of such turns are
//! the designated id 1 with probability `kappa`. Every other column, and the
//! bottleneck features, are unit-variance noise.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    frame_index, Corpus, DialogSession, SpeakerTrack, TokenEvent, Vocabulary, ACOUSTIC_COLUMNS, BNF_DIM,
    MAX_POS_ID, MAX_WORD_ID, SUBFRAMES,
};
use crate::error::{Error, Result};
use crate::features::LINGUISTIC_DELAY_S;
use crate::nn::Matrix;
use crate::{derive_seed, FRAME_SECONDS};

/// Acoustic columns that carry the turn-switch cue.
pub const INFORMATIVE_COLUMNS: [usize; 2] = [0, 6];
/// Word and POS id emitted at the end of a switching turn.
pub const TURN_FINAL_ID: u32 = 1;
/// Frames before a switch over which the cue ramps in.
pub const CUE_FRAMES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_sessions: usize,
    pub session_length_frames: usize,
    /// Log-normal IPU length (frames), given by mean and coefficient of variation.
    pub ipu_mean_frames: f64,
    pub ipu_cv: f64,
    /// Probability that a turn continues with another IPU after a pause.
    pub hold_prob: f64,
    pub intra_pause_mean_frames: f64,
    pub intra_pause_cv: f64,
    /// Silent gap before a switch.
    pub gap_mean_frames: f64,
    pub gap_cv: f64,
    /// Probability that a switch overlaps instead of leaving a gap.
    pub overlap_prob: f64,
    pub max_overlap_frames: usize,
    /// Probability that the listener backchannels during an IPU.
    pub backchannel_prob: f64,
    pub backchannel_max_frames: usize,
    /// Cue strength in [0, 1].
    pub kappa: f64,
    pub cue_amplitude: f64,
    pub voicing_offset: f64,
    pub with_bnf: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_sessions: 100,
            session_length_frames: 600,
            ipu_mean_frames: 40.0,
            ipu_cv: 0.6,
            hold_prob: 0.45,
            intra_pause_mean_frames: 6.0,
            intra_pause_cv: 0.8,
            gap_mean_frames: 4.0,
            gap_cv: 1.5,
            overlap_prob: 0.2,
            max_overlap_frames: 6,
            backchannel_prob: 0.3,
            backchannel_max_frames: 12,
            kappa: 1.0,
            cue_amplitude: 3.0,
            voicing_offset: 2.0,
            with_bnf: false,
        }
    }
}

const MIN_IPU: usize = 3;
const MIN_BACKCHANNEL: usize = 2;
/// Backchannels start at least this far into an IPU and end this far before it.
const BACKCHANNEL_LEAD: usize = 30;
const BACKCHANNEL_TRAIL: usize = 15;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ipu_mean_frames", self.ipu_mean_frames),
            ("ipu_cv", self.ipu_cv),
            ("intra_pause_mean_frames", self.intra_pause_mean_frames),
            ("intra_pause_cv", self.intra_pause_cv),
            ("gap_mean_frames", self.gap_mean_frames),
            ("gap_cv", self.gap_cv),
            ("cue_amplitude", self.cue_amplitude),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("synth.{name} must be positive, got {v}")));
            }
        }
        let probs = [
            ("hold_prob", self.hold_prob),
            ("overlap_prob", self.overlap_prob),
            ("backchannel_prob", self.backchannel_prob),
            ("kappa", self.kappa),
        ];
        for (name, v) in probs {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("synth.{name} must lie in [0, 1], got {v}")));
            }
        }
        if !self.voicing_offset.is_finite() || self.voicing_offset < 0.0 {
            return Err(Error::config("synth.voicing_offset must be non-negative"));
        }
        if !(MIN_BACKCHANNEL..=20).contains(&self.backchannel_max_frames) {
            return Err(Error::config(format!(
                "synth.backchannel_max_frames must be in [{MIN_BACKCHANNEL}, 20]"
            )));
        }
        if self.max_overlap_frames < 2 {
            return Err(Error::config("synth.max_overlap_frames must be at least 2"));
        }
        if self.n_sessions == 0 || self.session_length_frames == 0 {
            return Err(Error::config("synth.n_sessions and session_length_frames must be positive"));
        }
        Ok(())
    }
}

struct Dists {
    ipu: LogNormal<f64>,
    intra: LogNormal<f64>,
    gap: LogNormal<f64>,
}

fn lognormal(mean: f64, cv: f64) -> LogNormal<f64> {
    LogNormal::from_mean_cv(mean, cv).expect("validated parameters")
}

fn frames(d: &LogNormal<f64>, rng: &mut ChaCha8Rng, min: usize) -> usize {
    (d.sample(rng).round() as usize).max(min)
}

/// Per-speaker state while a session is being laid out.
struct Draft {
    va: Vec<u8>,
    cue: Vec<f64>,
    words: Vec<TokenEvent>,
    pos: Vec<TokenEvent>,
}

impl Draft {
    fn new(n: usize) -> Self {
        Draft {
            va: vec![0; n],
            cue: vec![0.0; n],
            words: Vec::new(),
            pos: Vec::new(),
        }
    }

    /// Marks `[start, end)` as speech and emits words ending inside it.
    fn speak(&mut self, start: usize, end: usize, rng: &mut ChaCha8Rng) {
        let end = end.min(self.va.len());
        if start >= end {
            return;
        }
        self.va[start..end].fill(1);
        let mut cursor = start;
        while cursor < end {
            let w_end = (cursor + rng.random_range(3..=8)).min(end);
            let t = w_end as f64 * FRAME_SECONDS - 0.02;
            self.words.push(TokenEvent {
                end_time_s: t,
                id: rng.random_range(TURN_FINAL_ID + 1..=MAX_WORD_ID),
            });
            self.pos.push(TokenEvent {
                end_time_s: t,
                id: rng.random_range(TURN_FINAL_ID + 1..=MAX_POS_ID),
            });
            cursor = w_end;
        }
    }
}

/// Generates one session from its own seed.
pub fn generate_session(config: &SynthConfig, session_id: &str, seed: u64) -> Result<DialogSession> {
    config.validate()?;
    let n = config.session_length_frames;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Dists {
        ipu: lognormal(config.ipu_mean_frames, config.ipu_cv),
        intra: lognormal(config.intra_pause_mean_frames, config.intra_pause_cv),
        gap: lognormal(config.gap_mean_frames, config.gap_cv),
    };
    let mut drafts = [Draft::new(n), Draft::new(n)];
    let mut cur = rng.random_range(0..2usize);
    let mut t = rng.random_range(5..30usize);
    let mut min_first_ipu = MIN_IPU;

    while t < n {
        // one turn of `cur`
        let mut ipu_start;
        loop {
            let len = frames(&d.ipu, &mut rng, min_first_ipu);
            min_first_ipu = MIN_IPU;
            ipu_start = t;
            let end = t + len;
            drafts[cur].speak(t, end, &mut rng);
            if rng.random_bool(config.backchannel_prob) {
                let bc_len = rng.random_range(MIN_BACKCHANNEL..=config.backchannel_max_frames);
                let lo = t + BACKCHANNEL_LEAD;
                if lo + bc_len + BACKCHANNEL_TRAIL <= end {
                    let s = rng.random_range(lo..=end - BACKCHANNEL_TRAIL - bc_len);
                    drafts[1 - cur].speak(s, s + bc_len, &mut rng);
                }
            }
            t = end;
            if t >= n || !rng.random_bool(config.hold_prob) {
                break;
            }
            t += frames(&d.intra, &mut rng, 1);
        }
        if t >= n {
            break;
        }
        // the turn ends at `t` and the floor switches
        let draft = &mut drafts[cur];
        let cue_start = t.saturating_sub(CUE_FRAMES).max(ipu_start);
        for f in cue_start..t {
            draft.cue[f] = (f + CUE_FRAMES + 1 - t) as f64 / CUE_FRAMES as f64;
        }
        if rng.random_bool(config.kappa) {
            if let (Some(w), Some(p)) = (draft.words.last_mut(), draft.pos.last_mut()) {
                w.id = TURN_FINAL_ID;
                p.id = TURN_FINAL_ID;
            }
        }
        let ipu_len = t - ipu_start;
        if rng.random_bool(config.overlap_prob) && ipu_len > 2 {
            let ov = rng
                .random_range(2..=config.max_overlap_frames)
                .min(ipu_len - 1);
            t -= ov;
            min_first_ipu = MIN_IPU + ov;
        } else {
            t += frames(&d.gap, &mut rng, 1);
        }
        cur = 1 - cur;
    }

    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let mut speakers: [SpeakerTrack; 2] = Default::default();
    for (track, draft) in speakers.iter_mut().zip(drafts) {
        let mut acoustic = Matrix::zeros(n, ACOUSTIC_COLUMNS.len());
        for f in 0..n {
            let row = acoustic.row_mut(f);
            for v in row.iter_mut() {
                *v = normal(&mut rng);
            }
            for &c in &INFORMATIVE_COLUMNS {
                row[c] += config.voicing_offset * f64::from(draft.va[f])
                    - config.kappa * config.cue_amplitude * draft.cue[f];
            }
        }
        let bnf = config.with_bnf.then(|| {
            let data = (0..SUBFRAMES * n * BNF_DIM).map(|_| normal(&mut rng)).collect();
            Matrix::from_vec(SUBFRAMES * n, BNF_DIM, data)
        });
        // tokens at the very end would only become visible after the session
        let keep = |e: &TokenEvent| frame_index(e.end_time_s + LINGUISTIC_DELAY_S) < n as i64;
        *track = SpeakerTrack {
            va: draft.va,
            words: draft.words.into_iter().filter(keep).collect(),
            pos: draft.pos.into_iter().filter(keep).collect(),
            acoustic: Some(acoustic),
            bnf_10ms: bnf,
        };
    }
    let session = DialogSession {
        session_id: session_id.to_string(),
        n_frames: n,
        speakers,
    };
    session.validate()?;
    Ok(session)
}

/// Session ids are `synth-0000`, `synth-0001`, ...; session `i` uses
/// `derive_seed(config.seed, i)`.
pub fn generate(config: &SynthConfig) -> Result<Vec<DialogSession>> {
    config.validate()?;
    (0..config.n_sessions)
        .map(|i| generate_session(config, &session_name(i), derive_seed(config.seed, i as u64)))
        .collect()
}

pub fn session_name(i: usize) -> String {
    format!("synth-{i:04}")
}

/// Placeholder vocabularies covering every id the generator can emit.
pub fn vocabularies() -> (Vocabulary, Vocabulary) {
    let make = |max: u32, prefix: &str| Vocabulary {
        tokens: (1..=max)
            .map(|i| {
                let tok = if i == TURN_FINAL_ID {
                    format!("{prefix}_final")
                } else {
                    format!("{prefix}{i}")
                };
                (i, tok)
            })
            .collect::<BTreeMap<_, _>>(),
    };
    (make(MAX_WORD_ID, "w"), make(MAX_POS_ID, "P"))
}

pub fn generate_corpus(config: &SynthConfig) -> Result<Corpus> {
    let (words, pos) = vocabularies();
    Ok(Corpus {
        sessions: generate(config)?,
        words: Some(words),
        pos: Some(pos),
    })
}
