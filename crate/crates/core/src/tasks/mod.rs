//! Decision points extracted from voice activity, and scoring of model
//! prediction windows at those points.
//!
//! Frame conventions: a window emitted at frame `n` scores frames
//! `n+1 ..= n+60`, so output index `k` is frame `n+1+k`. Only decision
//! frames whose whole window lies inside the session are kept.

mod io;

use serde::{Deserialize, Serialize};

pub use io::{read_instances, write_instances, InstanceRecord};

use crate::corpus::{is_complete_window, DialogSession};
use crate::error::{Error, Result};
use crate::metrics::weighted_f1;
use crate::nn::PredictionWindow;

/// Frames in the one-second window after a pause decision.
pub const PAUSE_WINDOW: usize = 20;
/// Silence preceding an onset (1.5 s).
pub const ONSET_PRIOR_SILENCE: usize = 30;
/// Maximum SHORT utterance length (1 s).
pub const ONSET_SHORT_MAX: usize = 20;
/// Silence required after a SHORT utterance (5 s).
pub const ONSET_SHORT_AFTER: usize = 100;
/// Minimum LONG utterance length (2.5 s).
pub const ONSET_LONG_MIN: usize = 50;
/// Decision point offset into the utterance (500 ms).
pub const ONSET_DECISION_OFFSET: usize = 10;
/// Speech by the floor holder preceding an overlap decision (1.5 s).
pub const OVERLAP_HOLDER_SPEECH: usize = 30;
/// Overlap labeling window, frames after the decision (400-900 ms).
pub const OVERLAP_WINDOW: std::ops::RangeInclusive<usize> = 8..=17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "PAUSE50")]
    Pause50,
    #[serde(rename = "PAUSE500")]
    Pause500,
    #[serde(rename = "ONSET")]
    Onset,
    #[serde(rename = "OVERLAP")]
    Overlap,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Pause50,
        TaskKind::Pause500,
        TaskKind::Onset,
        TaskKind::Overlap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Pause50 => "PAUSE50",
            TaskKind::Pause500 => "PAUSE500",
            TaskKind::Onset => "ONSET",
            TaskKind::Overlap => "OVERLAP",
        }
    }

    pub fn parse(s: &str) -> Option<TaskKind> {
        TaskKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Mutual silence (frames) before a pause decision; `None` for other kinds.
    pub fn min_pause_frames(self) -> Option<usize> {
        match self {
            TaskKind::Pause50 => Some(1),
            TaskKind::Pause500 => Some(10),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "HOLD")]
    Hold,
    #[serde(rename = "SHIFT")]
    Shift,
    #[serde(rename = "SHORT")]
    Short,
    #[serde(rename = "LONG")]
    Long,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Hold => "HOLD",
            Label::Shift => "SHIFT",
            Label::Short => "SHORT",
            Label::Long => "LONG",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        [Label::Hold, Label::Shift, Label::Short, Label::Long]
            .into_iter()
            .find(|l| l.name() == s)
    }
}

/// Kind-specific context of a decision point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aux {
    Pause { pause_start: usize },
    Onset { utterance_start: usize, length: usize },
    Overlap { overlap_start: usize },
}

/// One evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DecisionInstance {
    pub kind: TaskKind,
    pub decision_frame: usize,
    /// Floor holder for pauses and overlaps; the utterer for onsets.
    pub speaker: usize,
    pub label: Label,
    pub aux: Aux,
}

/// Predicted label with the signed evidence behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    /// Pauses/overlaps: holder mean minus interlocutor mean.
    /// Onsets: window mean minus threshold.
    pub margin: f64,
}

fn any_speech(va: &[u8], range: std::ops::RangeInclusive<usize>) -> bool {
    va[range].iter().any(|&v| v == 1)
}

/// Label from the speakers active in `range`: exactly one must speak.
fn continuation_label(va: [&[u8]; 2], holder: usize, range: std::ops::RangeInclusive<usize>) -> Option<Label> {
    let active = [any_speech(va[0], range.clone()), any_speech(va[1], range)];
    match active {
        [true, false] => Some(if holder == 0 { Label::Hold } else { Label::Shift }),
        [false, true] => Some(if holder == 1 { Label::Hold } else { Label::Shift }),
        _ => None,
    }
}

fn check_pair(va: [&[u8]; 2]) -> usize {
    assert_eq!(va[0].len(), va[1].len(), "voice activity tracks differ in length");
    va[0].len()
}

/// Mutual-silence runs preceded by exactly one speaker and lasting at least
/// `min_pause_frames`: `(pause_start, floor_holder)`.
pub fn pause_candidates(va: [&[u8]; 2], min_pause_frames: usize) -> Vec<(usize, usize)> {
    let n = check_pair(va);
    let silent = |f: usize| va[0][f] == 0 && va[1][f] == 0;
    let mut out = Vec::new();
    let mut f = 1;
    while f < n {
        if silent(f) && !silent(f - 1) {
            let start = f;
            while f < n && silent(f) {
                f += 1;
            }
            let holder = match (va[0][start - 1], va[1][start - 1]) {
                (1, 0) => Some(0),
                (0, 1) => Some(1),
                _ => None,
            };
            if let Some(h) = holder {
                if f - start >= min_pause_frames {
                    out.push((start, h));
                }
            }
        } else {
            f += 1;
        }
    }
    out
}

/// HOLD/SHIFT decisions at pauses of the given kind (PAUSE50 or PAUSE500).
pub fn extract_pauses(va: [&[u8]; 2], kind: TaskKind) -> Vec<DecisionInstance> {
    let m = kind
        .min_pause_frames()
        .expect("extract_pauses needs a pause task kind");
    let n = check_pair(va);
    pause_candidates(va, m)
        .into_iter()
        .filter_map(|(start, holder)| {
            let d = start + m - 1;
            if !is_complete_window(d, n) {
                return None;
            }
            let label = continuation_label(va, holder, d + 1..=d + PAUSE_WINDOW)?;
            Some(DecisionInstance {
                kind,
                decision_frame: d,
                speaker: holder,
                label,
                aux: Aux::Pause { pause_start: start },
            })
        })
        .collect()
}

/// SHORT/LONG decisions 500 ms into utterances that follow 1.5 s of the
/// speaker's own silence.
pub fn extract_onsets(va: [&[u8]; 2]) -> Vec<DecisionInstance> {
    let n = check_pair(va);
    let mut out = Vec::new();
    for (s, track) in va.iter().enumerate() {
        let mut silence = 0usize;
        let mut f = 0;
        while f < n {
            if track[f] == 0 {
                silence += 1;
                f += 1;
                continue;
            }
            let onset = f;
            while f < n && track[f] == 1 {
                f += 1;
            }
            let len = f - onset;
            if silence >= ONSET_PRIOR_SILENCE {
                let label = if len >= ONSET_LONG_MIN {
                    Some(Label::Long)
                } else if len <= ONSET_SHORT_MAX
                    && f + ONSET_SHORT_AFTER <= n
                    && track[f..f + ONSET_SHORT_AFTER].iter().all(|&v| v == 0)
                {
                    Some(Label::Short)
                } else {
                    None
                };
                let d = onset + ONSET_DECISION_OFFSET;
                if let Some(label) = label.filter(|_| is_complete_window(d, n)) {
                    out.push(DecisionInstance {
                        kind: TaskKind::Onset,
                        decision_frame: d,
                        speaker: s,
                        label,
                        aux: Aux::Onset {
                            utterance_start: onset,
                            length: len,
                        },
                    });
                }
            }
            silence = 0;
        }
    }
    out.sort_by_key(|i| (i.decision_frame, i.speaker));
    out
}

/// HOLD/SHIFT decisions at the first qualifying frame of each overlap.
///
/// Frame `n` qualifies when both speakers are active at `n-1` and `n` and
/// one of them (the floor holder, strictly longer current run) has spoken
/// through `n-29 ..= n`. The label comes from frames `n+8 ..= n+17`.
pub fn extract_overlaps(va: [&[u8]; 2]) -> Vec<DecisionInstance> {
    let n = check_pair(va);
    let mut out = Vec::new();
    let mut run = [0usize; 2];
    let mut event_start: Option<usize> = None;
    let mut event_done = false;
    for f in 0..n {
        for s in 0..2 {
            run[s] = if va[s][f] == 1 { run[s] + 1 } else { 0 };
        }
        let both = run[0] > 0 && run[1] > 0;
        if !both {
            event_start = None;
            continue;
        }
        let start = *event_start.get_or_insert_with(|| {
            event_done = false;
            f
        });
        if event_done || f == start {
            continue;
        }
        let holder = if run[0] > run[1] {
            0
        } else if run[1] > run[0] {
            1
        } else {
            continue;
        };
        if run[holder] < OVERLAP_HOLDER_SPEECH {
            continue;
        }
        event_done = true;
        if !is_complete_window(f, n) {
            continue;
        }
        let window = f + OVERLAP_WINDOW.start()..=f + OVERLAP_WINDOW.end();
        if let Some(label) = continuation_label(va, holder, window) {
            out.push(DecisionInstance {
                kind: TaskKind::Overlap,
                decision_frame: f,
                speaker: holder,
                label,
                aux: Aux::Overlap {
                    overlap_start: start,
                },
            });
        }
    }
    out
}

/// All four task kinds for one session.
pub fn extract_all(session: &DialogSession) -> Vec<DecisionInstance> {
    let va = [session.va(0), session.va(1)];
    let mut out = extract_pauses(va, TaskKind::Pause50);
    out.extend(extract_pauses(va, TaskKind::Pause500));
    out.extend(extract_onsets(va));
    out.extend(extract_overlaps(va));
    out
}

fn check_emitted(instance: &DecisionInstance, w: &PredictionWindow) -> Result<()> {
    if w.emitted_at_frame != instance.decision_frame {
        return Err(Error::data(format!(
            "window emitted at frame {} used for a decision at frame {}",
            w.emitted_at_frame, instance.decision_frame
        )));
    }
    Ok(())
}

fn compare(holder: usize, means: [f64; 2]) -> Prediction {
    let margin = means[holder] - means[1 - holder];
    Prediction {
        label: if margin >= 0.0 { Label::Hold } else { Label::Shift },
        margin,
    }
}

/// Pause decision: the speaker with the higher mean over the next second is
/// predicted to continue. Ties predict HOLD.
pub fn score_pause(
    instance: &DecisionInstance,
    window_s0: &PredictionWindow,
    window_s1: &PredictionWindow,
) -> Result<Prediction> {
    check_emitted(instance, window_s0)?;
    check_emitted(instance, window_s1)?;
    let means = [window_s0.mean(0..PAUSE_WINDOW), window_s1.mean(0..PAUSE_WINDOW)];
    Ok(compare(instance.speaker, means))
}

/// Overlap decision over output indices 7..=16 (frames n+8..=n+17).
pub fn score_overlap(
    instance: &DecisionInstance,
    window_s0: &PredictionWindow,
    window_s1: &PredictionWindow,
) -> Result<Prediction> {
    check_emitted(instance, window_s0)?;
    check_emitted(instance, window_s1)?;
    let idx = OVERLAP_WINDOW.start() - 1..*OVERLAP_WINDOW.end();
    let means = [window_s0.mean(idx.clone()), window_s1.mean(idx)];
    Ok(compare(instance.speaker, means))
}

/// LONG iff the mean of all 60 outputs is at least `threshold`.
pub fn score_onset(window: &PredictionWindow, threshold: f64) -> Prediction {
    let mean = window.mean(0..window.probs.len());
    Prediction {
        label: if mean >= threshold { Label::Long } else { Label::Short },
        margin: mean - threshold,
    }
}

/// Onset decision with a frame check against the instance.
pub fn score_onset_instance(
    instance: &DecisionInstance,
    window_target: &PredictionWindow,
    threshold: f64,
) -> Result<Prediction> {
    check_emitted(instance, window_target)?;
    Ok(score_onset(window_target, threshold))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdFit {
    pub threshold: f64,
    /// Weighted F1 on the fitting data.
    pub train_f1: f64,
    /// All window means were identical.
    pub degenerate: bool,
}

/// Chooses the onset threshold maximizing weighted F1 on `(label, mean)`
/// pairs among midpoints between consecutive distinct sorted means; ties go
/// to the smallest threshold.
pub fn fit_onset_threshold(samples: &[(Label, f64)]) -> Result<ThresholdFit> {
    if samples.is_empty() {
        return Err(Error::data("no onset instances to fit a threshold on"));
    }
    let mut means: Vec<f64> = samples.iter().map(|s| s.1).collect();
    means.sort_by(f64::total_cmp);
    means.dedup();
    let f1_at = |thr: f64| {
        let pairs: Vec<(Label, Label)> = samples
            .iter()
            .map(|&(t, m)| (t, if m >= thr { Label::Long } else { Label::Short }))
            .collect();
        weighted_f1(&pairs).expect("non-empty")
    };
    if means.len() == 1 {
        log::warn!("all onset window means equal {}; threshold is degenerate", means[0]);
        return Ok(ThresholdFit {
            threshold: means[0],
            train_f1: f1_at(means[0]),
            degenerate: true,
        });
    }
    let mut best: Option<(f64, f64)> = None;
    for pair in means.windows(2) {
        let thr = 0.5 * (pair[0] + pair[1]);
        let f = f1_at(thr);
        if best.is_none_or(|(_, bf)| f > bf) {
            best = Some((thr, f));
        }
    }
    let (threshold, train_f1) = best.expect("at least one midpoint");
    Ok(ThresholdFit {
        threshold,
        train_f1,
        degenerate: false,
    })
}
