#![allow(dead_code)]

//! Brute-force instance extraction, written independently of the library
//! extractors, plus the random sessions used to compare the two.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turntake::synth::{generate_session, SynthConfig};
use turntake::tasks::{extract_onsets, extract_overlaps, extract_pauses, Label, TaskKind};
use turntake::WINDOW;

pub type Found = BTreeSet<(TaskKind, usize, usize, Label)>;

/// `(kind, decision_frame, speaker, label)` for every extracted instance.
pub fn optimized(va: [&[u8]; 2]) -> Found {
    let mut all = extract_pauses(va, TaskKind::Pause50);
    all.extend(extract_pauses(va, TaskKind::Pause500));
    all.extend(extract_onsets(va));
    all.extend(extract_overlaps(va));
    all.iter().map(|i| (i.kind, i.decision_frame, i.speaker, i.label)).collect()
}

fn speaks(va: &[u8], from: usize, to: usize) -> bool {
    (from..=to).any(|f| va[f] == 1)
}

/// Who has speech in `from..=to`; a label only when exactly one does.
fn next_speaker_label(va: [&[u8]; 2], holder: usize, from: usize, to: usize) -> Option<Label> {
    let s: Vec<usize> = (0..2).filter(|&s| speaks(va[s], from, to)).collect();
    match s[..] {
        [only] if only == holder => Some(Label::Hold),
        [_] => Some(Label::Shift),
        _ => None,
    }
}

/// Consecutive active frames of `va` ending at `f` (inclusive).
fn run_back(va: &[u8], f: usize) -> usize {
    (0..=f).rev().take_while(|&g| va[g] == 1).count()
}

/// Consecutive active frames of `va` starting at `f`.
pub fn run_forward(va: &[u8], f: usize) -> usize {
    (f..va.len()).take_while(|&g| va[g] == 1).count()
}

/// Direct reading of the definitions, one candidate frame at a time.
pub fn brute_force(va: [&[u8]; 2]) -> Found {
    let n = va[0].len();
    let both_silent = |f: usize| va[0][f] == 0 && va[1][f] == 0;
    let fits = |d: usize| d + WINDOW < n;
    let mut out = Found::new();

    // pauses: frame d where mutual silence has lasted exactly m frames and
    // the frame before it had exactly one speaker
    for (kind, m) in [(TaskKind::Pause50, 1), (TaskKind::Pause500, 10)] {
        for d in 0..n {
            if d + 1 < m + 1 {
                continue;
            }
            let start = d + 1 - m;
            if !(start..=d).all(both_silent) || both_silent(start - 1) {
                continue;
            }
            let holder = match (va[0][start - 1], va[1][start - 1]) {
                (1, 0) => 0,
                (0, 1) => 1,
                _ => continue,
            };
            if !fits(d) {
                continue;
            }
            if let Some(label) = next_speaker_label(va, holder, d + 1, d + 20) {
                out.insert((kind, d, holder, label));
            }
        }
    }

    // onsets: speech starting at o after 30 silent frames of the same speaker
    for s in 0..2 {
        let v = va[s];
        for o in 30..n {
            if v[o] == 0 || (o - 30..o).any(|f| v[f] == 1) {
                continue;
            }
            let len = run_forward(v, o);
            let end = o + len;
            let label = if len >= 50 {
                Label::Long
            } else if len <= 20 && end + 100 <= n && (end..end + 100).all(|f| v[f] == 0) {
                Label::Short
            } else {
                continue;
            };
            if fits(o + 10) {
                out.insert((TaskKind::Onset, o + 10, s, label));
            }
        }
    }

    // overlaps: both active at f-1 and f, one speaker active through the
    // last 30 frames with a strictly longer run; first such frame per event
    let qualifies = |f: usize| -> Option<usize> {
        if f == 0 || !(va[0][f] == 1 && va[1][f] == 1 && va[0][f - 1] == 1 && va[1][f - 1] == 1) {
            return None;
        }
        let r = [run_back(va[0], f), run_back(va[1], f)];
        let h = (0..2).find(|&s| r[s] >= 30 && r[s] > r[1 - s])?;
        Some(h)
    };
    for f in 0..n {
        let Some(h) = qualifies(f) else { continue };
        let mut g = f;
        let mut earlier = false;
        while g > 0 && va[0][g - 1] == 1 && va[1][g - 1] == 1 {
            g -= 1;
            if qualifies(g).is_some() {
                earlier = true;
            }
        }
        if earlier || !fits(f) {
            continue;
        }
        if let Some(label) = next_speaker_label(va, h, f + 8, f + 17) {
            out.insert((TaskKind::Overlap, f, h, label));
        }
    }
    out
}

/// Independent alternating runs per speaker, with long silences often
/// enough to produce onsets.
fn random_runs(rng: &mut ChaCha8Rng, n: usize) -> [Vec<u8>; 2] {
    [0, 1].map(|_| {
        let mut v = Vec::with_capacity(n);
        let mut on = rng.random_bool(0.5);
        while v.len() < n {
            let len = if on {
                *[rng.random_range(1..8), rng.random_range(5..25), rng.random_range(30..90)]
                    .get(rng.random_range(0..3))
                    .unwrap()
            } else {
                *[rng.random_range(1..6), rng.random_range(10..40), rng.random_range(90..130)]
                    .get(rng.random_range(0..3))
                    .unwrap()
            };
            v.extend(std::iter::repeat_n(u8::from(on), len));
            on = !on;
        }
        v.truncate(n);
        v
    })
}

/// 200 sessions of at most 200 frames: half from the dialog generator, half
/// from independent random runs.
pub fn sessions() -> Vec<[Vec<u8>; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e55);
    (0..200)
        .map(|i| {
            let n = rng.random_range(40..=200);
            if i % 2 == 0 {
                let config = SynthConfig {
                    session_length_frames: n,
                    ..SynthConfig::default()
                };
                let s = generate_session(&config, "x", rng.random()).unwrap();
                [s.va(0).to_vec(), s.va(1).to_vec()]
            } else {
                random_runs(&mut rng, n)
            }
        })
        .collect()
}
