//! Perturb-the-future check on assembled feature matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turntake::corpus::{DialogSession, TokenEvent, ACOUSTIC_COLUMNS};
use turntake::features::{file_stats, prepare_with_stats, FeaturePlan, FrameFeatureMatrix};
use turntake::synth::{generate_session, SynthConfig};

pub struct Report {
    /// `(trial, t, target)` where a frame at or before `t` changed.
    pub violations: Vec<(u64, f64, usize)>,
    /// Comparisons where some later frame did change, so the perturbation
    /// actually reached the features.
    pub later_changed: usize,
}

fn frames_equal(a: &FrameFeatureMatrix, b: &FrameFeatureMatrix, upto: usize) -> bool {
    (0..=upto).all(|f| a.dense_row(f) == b.dense_row(f) && a.token_row(f) == b.token_row(f))
}

/// Replaces every raw input of `session` stamped after `t` seconds: 50 ms
/// rows starting after `t`, 10 ms BNF rows starting after `t`, and every
/// token ending after `t` (new random tokens are added in their place).
fn perturb_after(session: &DialogSession, t: f64, rng: &mut ChaCha8Rng) -> DialogSession {
    let mut out = session.clone();
    let first_frame = (t / 0.05).floor() as usize + 1;
    for sp in out.speakers.iter_mut() {
        for f in first_frame..out.n_frames {
            sp.va[f] = rng.random_range(0..2);
        }
        let a = sp.acoustic.as_mut().unwrap();
        for r in first_frame..a.rows() {
            for v in a.row_mut(r) {
                *v = rng.random_range(-50.0..50.0);
            }
        }
        let b = sp.bnf_10ms.as_mut().unwrap();
        for r in 0..b.rows() {
            if r as f64 * 0.01 > t {
                for v in b.row_mut(r) {
                    *v = rng.random_range(-50.0..50.0);
                }
            }
        }
        let end = out.n_frames as f64 * 0.05;
        for (events, max) in [(&mut sp.words, 2501), (&mut sp.pos, 59)] {
            events.retain(|e| e.end_time_s <= t);
            let mut times: Vec<f64> = (0..rng.random_range(1..12))
                .map(|_| rng.random_range(t + 1e-4..end))
                .collect();
            times.sort_by(f64::total_cmp);
            events.extend(times.into_iter().map(|time| TokenEvent {
                end_time_s: time,
                id: rng.random_range(1..=max),
            }));
        }
    }
    out
}

/// Runs `trials` perturbations on generated sessions with every stream, for
/// both target speakers, with normalization statistics fixed to the
/// unperturbed file.
pub fn run(trials: u64, seed: u64) -> Report {
    let config = SynthConfig {
        session_length_frames: 120,
        with_bnf: true,
        ..SynthConfig::default()
    };
    let plan = FeaturePlan {
        acoustic: ACOUSTIC_COLUMNS.iter().map(|c| c.to_string()).collect(),
        words: true,
        pos: true,
        bnf: true,
        va: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report { violations: Vec::new(), later_changed: 0 };
    for trial in 0..trials {
        let session = generate_session(&config, "c", seed ^ trial).unwrap();
        let stats = file_stats(&session).unwrap();
        let base = prepare_with_stats(&session, &stats).unwrap().assemble(&plan).unwrap();
        let t: f64 = rng.random_range(0.0..5.5);
        let frame = (t / 0.05).floor() as usize;
        let changed = perturb_after(&session, t, &mut rng);
        changed.validate().unwrap();
        let moved = prepare_with_stats(&changed, &stats).unwrap().assemble(&plan).unwrap();
        for target in 0..2 {
            if !frames_equal(&base[target], &moved[target], frame) {
                report.violations.push((trial, t, target));
            }
            if !frames_equal(&base[target], &moved[target], base[target].n_frames() - 1) {
                report.later_changed += 1;
            }
        }
    }
    report
}
