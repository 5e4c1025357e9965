use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turntake::metrics::weighted_f1;
use turntake::tasks::{
    extract_onsets, extract_overlaps, extract_pauses, fit_onset_threshold, pause_candidates, Label,
    TaskKind,
};

#[path = "support/oracle.rs"]
mod oracle;

use oracle::{brute_force, optimized, run_forward, sessions};

#[test]
fn optimized_extractors_equal_brute_force() {
    let mut counts = std::collections::BTreeMap::new();
    for (i, [a, b]) in sessions().iter().enumerate() {
        let va = [&a[..], &b[..]];
        let fast = optimized(va);
        let slow = brute_force(va);
        assert_eq!(fast, slow, "session {i}: a={a:?} b={b:?}");
        for f in &fast {
            *counts.entry((f.0, f.3)).or_insert(0) += 1;
        }
    }
    // the comparison is only meaningful if every kind and label occurs
    for key in [
        (TaskKind::Pause50, Label::Hold),
        (TaskKind::Pause50, Label::Shift),
        (TaskKind::Pause500, Label::Hold),
        (TaskKind::Pause500, Label::Shift),
        (TaskKind::Onset, Label::Short),
        (TaskKind::Onset, Label::Long),
        (TaskKind::Overlap, Label::Hold),
        (TaskKind::Overlap, Label::Shift),
    ] {
        assert!(counts.get(&key).copied().unwrap_or(0) > 0, "no {key:?} in {counts:?}");
    }
}

#[test]
fn extraction_is_pure() {
    for [a, b] in sessions().iter().take(50) {
        let va = [&a[..], &b[..]];
        let first = (extract_pauses(va, TaskKind::Pause50), extract_onsets(va), extract_overlaps(va));
        let second = (extract_pauses(va, TaskKind::Pause50), extract_onsets(va), extract_overlaps(va));
        assert_eq!(first, second);
    }
}

#[test]
fn long_pauses_are_short_pauses() {
    for [a, b] in sessions() {
        let va = [&a[..], &b[..]];
        let short: BTreeSet<_> = pause_candidates(va, 1).into_iter().collect();
        for c in pause_candidates(va, 10) {
            assert!(short.contains(&c), "{c:?}");
        }
    }
}

#[test]
fn labels_do_not_read_past_their_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for [a, b] in sessions() {
        let va = [&a[..], &b[..]];
        let n = a.len();
        let mut all = extract_pauses(va, TaskKind::Pause50);
        all.extend(extract_pauses(va, TaskKind::Pause500));
        all.extend(extract_onsets(va));
        all.extend(extract_overlaps(va));
        for inst in all {
            let d = inst.decision_frame;
            let horizon = match (inst.kind, inst.label) {
                (TaskKind::Pause50 | TaskKind::Pause500, _) => d + 20,
                (TaskKind::Overlap, _) => d + 17,
                (TaskKind::Onset, Label::Long) => d - 10 + 49,
                (TaskKind::Onset, _) => {
                    let o = d - 10;
                    o + run_forward(va[inst.speaker], o) + 99
                }
            };
            let mut scrambled = [a.clone(), b.clone()];
            for track in scrambled.iter_mut() {
                for v in track.iter_mut().skip(horizon + 1) {
                    *v = rng.random_range(0..2);
                }
            }
            let sva = [&scrambled[0][..], &scrambled[1][..]];
            let again = match inst.kind {
                TaskKind::Onset => extract_onsets(sva),
                TaskKind::Overlap => extract_overlaps(sva),
                k => extract_pauses(sva, k),
            };
            let key = |i: &turntake::tasks::DecisionInstance| (i.decision_frame, i.speaker, i.label);
            assert!(again.iter().any(|i| key(i) == key(&inst)), "{inst:?} lost after scrambling beyond {horizon} of {n}");
        }
    }
}

/// Exhaustive sweep: every midpoint, best weighted F, smallest on ties.
fn sweep(samples: &[(Label, f64)]) -> f64 {
    let mut means: Vec<f64> = samples.iter().map(|s| s.1).collect();
    means.sort_by(f64::total_cmp);
    means.dedup();
    let mut cands: Vec<f64> = means.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    cands.sort_by(f64::total_cmp);
    let score = |t: f64| {
        let pairs: Vec<_> = samples
            .iter()
            .map(|&(l, m)| (l, if m >= t { Label::Long } else { Label::Short }))
            .collect();
        weighted_f1(&pairs).unwrap()
    };
    let best = cands.iter().map(|&t| score(t)).fold(f64::NEG_INFINITY, f64::max);
    cands.into_iter().find(|&t| score(t) == best).unwrap()
}

proptest! {
    #[test]
    fn threshold_matches_exhaustive_sweep(
        raw in prop::collection::vec((any::<bool>(), 0u32..20), 2..25)
    ) {
        let samples: Vec<(Label, f64)> = raw
            .iter()
            .map(|&(long, m)| (if long { Label::Long } else { Label::Short }, f64::from(m) / 20.0))
            .collect();
        let distinct: BTreeSet<u32> = raw.iter().map(|r| r.1).collect();
        prop_assume!(distinct.len() > 1);
        let fit = fit_onset_threshold(&samples).unwrap();
        prop_assert!(!fit.degenerate);
        prop_assert_eq!(fit.threshold, sweep(&samples));
    }
}
