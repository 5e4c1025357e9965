//! Dyadic dialog sessions on a shared 50 ms frame grid.

mod format;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use format::{
    load_corpus, load_session, read_vocabulary, write_corpus, write_session, write_vocabulary,
    Corpus, LoadedSession, Vocabulary, CORPUS_MANIFEST, FORMAT_VERSION, SESSION_MANIFEST,
};

use crate::error::{Error, Result};
use crate::nn::{Matrix, TargetWindow};
use crate::WINDOW;

/// Canonical acoustic low-level descriptor columns, in manifest order.
pub const ACOUSTIC_COLUMNS: [&str; 21] = [
    "F0semitoneFrom27.5Hz_sma3nz",
    "jitterLocal_sma3nz",
    "F1frequency_sma3nz",
    "F1bandwidth_sma3nz",
    "F2frequency_sma3nz",
    "F3frequency_sma3nz",
    "Loudness_sma3",
    "shimmerLocaldB_sma3nz",
    "HNRdBACF_sma3nz",
    "alphaRatio_sma3",
    "hammarbergIndex_sma3",
    "spectralFlux_sma3",
    "slope0-500_sma3",
    "slope500-1500_sma3",
    "F1amplitudeLogRelF0_sma3nz",
    "F2amplitudeLogRelF0_sma3nz",
    "F3amplitudeLogRelF0_sma3nz",
    "mfcc1_sma3",
    "mfcc2_sma3",
    "mfcc3_sma3",
    "mfcc4_sma3",
];

/// Index of a canonical acoustic column by name.
pub fn acoustic_index(name: &str) -> Option<usize> {
    ACOUSTIC_COLUMNS.iter().position(|c| *c == name)
}

/// Width of the phonetic bottleneck vectors.
pub const BNF_DIM: usize = 64;
pub const MAX_WORD_ID: u32 = 2501;
pub const MAX_POS_ID: u32 = 59;

/// Number of 10 ms rows per frame.
pub const SUBFRAMES: usize = 5;

const MICROS_PER_FRAME: i64 = 50_000;

/// Time in seconds rounded to whole microseconds.
pub fn micros(t_s: f64) -> i64 {
    (t_s * 1e6).round() as i64
}

/// Frame containing time `t_s`: `floor(t / 0.05)`, with a time exactly on a
/// boundary assigned to the later frame. Times are first rounded to the
/// microsecond so that decimal inputs such as 0.3 s land on their boundary.
pub fn frame_index(t_s: f64) -> i64 {
    micros(t_s).div_euclid(MICROS_PER_FRAME)
}

/// A linguistic token ending at `end_time_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenEvent {
    pub end_time_s: f64,
    pub id: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpeakerTrack {
    /// Per-frame voice activity, 0 or 1.
    pub va: Vec<u8>,
    pub words: Vec<TokenEvent>,
    pub pos: Vec<TokenEvent>,
    /// `n_frames x 21` at 50 ms, canonical column order, not normalized.
    pub acoustic: Option<Matrix>,
    /// `5 * n_frames x 64` at 10 ms, undelayed.
    pub bnf_10ms: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogSession {
    pub session_id: String,
    pub n_frames: usize,
    pub speakers: [SpeakerTrack; 2],
}

impl DialogSession {
    /// `(target, interlocutor)` tracks for the given target speaker.
    pub fn roles(&self, target: usize) -> (&SpeakerTrack, &SpeakerTrack) {
        (&self.speakers[target], &self.speakers[1 - target])
    }

    pub fn va(&self, speaker: usize) -> &[u8] {
        &self.speakers[speaker].va
    }

    /// Checks every track invariant.
    pub fn validate(&self) -> Result<()> {
        let id = &self.session_id;
        for (s, tr) in self.speakers.iter().enumerate() {
            if tr.va.len() != self.n_frames {
                return Err(Error::data(format!(
                    "{id} speaker {s}: va has {} frames, expected {}",
                    tr.va.len(),
                    self.n_frames
                )));
            }
            if let Some(f) = tr.va.iter().position(|&v| v > 1) {
                return Err(Error::data(format!(
                    "{id} speaker {s}: va frame {f} is not 0/1"
                )));
            }
            check_events(id, s, "words", &tr.words, MAX_WORD_ID)?;
            check_events(id, s, "pos", &tr.pos, MAX_POS_ID)?;
            if let Some(a) = &tr.acoustic {
                if a.rows() != self.n_frames || a.cols() != ACOUSTIC_COLUMNS.len() {
                    return Err(Error::data(format!(
                        "{id} speaker {s}: acoustic is {}x{}, expected {}x{}",
                        a.rows(),
                        a.cols(),
                        self.n_frames,
                        ACOUSTIC_COLUMNS.len()
                    )));
                }
            }
            if let Some(b) = &tr.bnf_10ms {
                if b.rows() != SUBFRAMES * self.n_frames || b.cols() != BNF_DIM {
                    return Err(Error::data(format!(
                        "{id} speaker {s}: bnf is {}x{}, expected {}x{BNF_DIM}",
                        b.rows(),
                        b.cols(),
                        SUBFRAMES * self.n_frames
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_events(id: &str, s: usize, stream: &str, events: &[TokenEvent], max_id: u32) -> Result<()> {
    let mut last = f64::NEG_INFINITY;
    for (k, e) in events.iter().enumerate() {
        if !(e.end_time_s.is_finite() && e.end_time_s >= 0.0) {
            return Err(Error::data(format!(
                "{id} speaker {s}: {stream} event {k} has invalid time {}",
                e.end_time_s
            )));
        }
        if e.end_time_s < last {
            return Err(Error::data(format!(
                "{id} speaker {s}: {stream} event {k} at {} s precedes the previous event",
                e.end_time_s
            )));
        }
        if e.id == 0 || e.id > max_id {
            return Err(Error::data(format!(
                "{id} speaker {s}: {stream} event {k} id {} outside [1, {max_id}]",
                e.id
            )));
        }
        last = e.end_time_s;
    }
    Ok(())
}

/// Rasterizes speech intervals (seconds) to frames: a frame is active iff
/// the union of intervals covers more than half of it.
pub fn rasterize_intervals(intervals: &[(f64, f64)], n_frames: usize) -> Vec<u8> {
    let mut iv: Vec<(i64, i64)> = intervals
        .iter()
        .map(|&(a, b)| (micros(a), micros(b)))
        .filter(|(a, b)| b > a)
        .collect();
    iv.sort_unstable();
    let mut merged: Vec<(i64, i64)> = Vec::new();
    for (a, b) in iv {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    // a frame may be covered piecewise by several disjoint intervals
    let mut cover = vec![0i64; n_frames];
    for (a, b) in merged {
        let first = a.div_euclid(MICROS_PER_FRAME).max(0);
        let last = (b - 1).div_euclid(MICROS_PER_FRAME).min(n_frames as i64 - 1);
        for f in first..=last {
            let lo = f * MICROS_PER_FRAME;
            cover[f as usize] += b.min(lo + MICROS_PER_FRAME) - a.max(lo);
        }
    }
    cover
        .into_iter()
        .map(|c| u8::from(2 * c > MICROS_PER_FRAME))
        .collect()
}

/// Maximal runs of active frames as `(start_s, end_s)` intervals.
pub fn va_to_intervals(va: &[u8]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut f = 0;
    while f < va.len() {
        if va[f] == 1 {
            let start = f;
            while f < va.len() && va[f] == 1 {
                f += 1;
            }
            out.push((frame_time(start), frame_time(f)));
        } else {
            f += 1;
        }
    }
    out
}

/// Start time of frame `f` in seconds.
pub fn frame_time(f: usize) -> f64 {
    (f as i64 * MICROS_PER_FRAME) as f64 / 1e6
}

/// Result of [`average_10ms_to_50ms`].
#[derive(Debug, Clone, PartialEq)]
pub struct Averaged {
    pub track: Matrix,
    /// Rows appended by repeating the last input row.
    pub padded_rows: usize,
}

/// Element-wise mean of consecutive groups of five 10 ms rows. A final
/// partial group is completed by repeating the last row.
pub fn average_10ms_to_50ms(track: &Matrix) -> Result<Averaged> {
    if track.rows() == 0 {
        return Err(Error::data("cannot average an empty track"));
    }
    let n_out = track.rows().div_ceil(SUBFRAMES);
    let padded_rows = n_out * SUBFRAMES - track.rows();
    if padded_rows > 0 {
        log::warn!(
            "track of {} rows padded with {padded_rows} repeated rows before averaging",
            track.rows()
        );
    }
    let cols = track.cols();
    let mut out = Matrix::zeros(n_out, cols);
    for k in 0..n_out {
        let row = out.row_mut(k);
        for r in k * SUBFRAMES..(k + 1) * SUBFRAMES {
            let src = track.row(r.min(track.rows() - 1));
            for (o, v) in row.iter_mut().zip(src) {
                *o += v;
            }
        }
        for o in row.iter_mut() {
            *o /= SUBFRAMES as f64;
        }
    }
    Ok(Averaged {
        track: out,
        padded_rows,
    })
}

/// Binary activity for frames `n+1 ..= n+60`; frames past the end are 0 and
/// mark the window as `tail`.
pub fn future_window_targets(va: &[u8], n: usize) -> TargetWindow {
    let mut values = [0.0; WINDOW];
    let mut tail = false;
    for (k, v) in values.iter_mut().enumerate() {
        match va.get(n + 1 + k) {
            Some(&a) => *v = f64::from(a),
            None => tail = true,
        }
    }
    TargetWindow { values, tail }
}

/// Targets for every frame of one speaker's activity track.
pub fn target_sequence(va: &[u8]) -> Vec<TargetWindow> {
    (0..va.len()).map(|n| future_window_targets(va, n)).collect()
}

/// Whether the 60-frame window emitted at `frame` fits inside the session.
pub fn is_complete_window(frame: usize, n_frames: usize) -> bool {
    frame + WINDOW < n_frames
}

/// Train / held-out / test partition by session id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: Vec<String>,
    #[serde(default)]
    pub heldout: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    /// Fails if any session id appears more than once across the split.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.heldout).chain(&self.test) {
            if !seen.insert(id) {
                return Err(Error::config(format!(
                    "session {id} appears more than once in the split"
                )));
            }
        }
        if self.train.is_empty() {
            return Err(Error::config("split has no training sessions"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_index_floor_and_boundaries() {
        assert_eq!(frame_index(0.237), 4);
        assert_eq!(frame_index(0.3), 6);
        assert_eq!(frame_index(0.05), 1);
        assert_eq!(frame_index(0.04999), 0);
        assert_eq!(frame_index(0.200 + 0.100), 6);
    }

    #[test]
    fn averaging_rules() {
        let same = Matrix::from_vec(5, 2, [1.5, -2.0].repeat(5));
        let a = average_10ms_to_50ms(&same).unwrap();
        assert_eq!(a.track, Matrix::from_vec(1, 2, vec![1.5, -2.0]));
        assert_eq!(a.padded_rows, 0);

        let ramp = Matrix::from_vec(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(average_10ms_to_50ms(&ramp).unwrap().track.as_slice(), &[2.0]);

        let twelve = Matrix::from_vec(12, 1, (0..12).map(f64::from).collect());
        let a = average_10ms_to_50ms(&twelve).unwrap();
        assert_eq!(a.track.rows(), 3);
        assert_eq!(a.padded_rows, 3);
        // rows 10, 11, 11, 11, 11
        assert_eq!(a.track.get(2, 0), (10.0 + 11.0 * 4.0) / 5.0);

        assert!(average_10ms_to_50ms(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn future_windows() {
        let va = vec![1u8; 100];
        let t = future_window_targets(&va, 10);
        assert!(!t.tail && t.values.iter().all(|&v| v == 1.0));
        let t = future_window_targets(&va, 99);
        assert!(t.tail && t.values.iter().all(|&v| v == 0.0));

        let mut burst = vec![0u8; 120];
        for v in &mut burst[30..42] {
            *v = 1;
        }
        let t = future_window_targets(&burst, 20);
        let expected: Vec<f64> = burst[21..81].iter().map(|&v| f64::from(v)).collect();
        assert_eq!(t.values.to_vec(), expected);
        assert!(!t.tail);
    }

    #[test]
    fn rasterization_majority_rule() {
        // 0.02-0.10 covers 60% of frame 0 and all of frame 1
        let va = rasterize_intervals(&[(0.02, 0.10), (0.1749, 0.2)], 5);
        assert_eq!(va, vec![1, 1, 0, 1, 0]);
        // exactly half is not enough
        assert_eq!(rasterize_intervals(&[(0.025, 0.05)], 2), vec![0, 0]);
        // two halves from separate intervals add up
        assert_eq!(rasterize_intervals(&[(0.0, 0.01), (0.04, 0.05)], 1), vec![0]);
        assert_eq!(rasterize_intervals(&[(0.0, 0.02), (0.025, 0.05)], 1), vec![1]);
    }

    #[test]
    fn intervals_round_trip() {
        let va = vec![0, 1, 1, 0, 0, 1, 0, 1, 1, 1];
        assert_eq!(rasterize_intervals(&va_to_intervals(&va), va.len()), va);
    }

    #[test]
    fn split_rejects_duplicates() {
        let s = SplitSpec {
            train: vec!["a".into(), "b".into()],
            heldout: vec!["c".into()],
            test: vec!["a".into()],
        };
        assert!(s.validate().is_err());
    }
}
