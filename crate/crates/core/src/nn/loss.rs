use serde::{Deserialize, Serialize};

use super::model::{ModelParams, PredictionWindow};
use crate::error::{Error, Result};
use crate::WINDOW;

/// Probability clamp used by binary cross entropy.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Mae,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Mae => "mae",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingObjective {
    pub kind: LossKind,
    pub l2_lambda: f64,
}

/// Binary future voice activity for one frame.
///
/// `tail` marks frames whose 60-frame window runs past the end of the
/// conversation; they carry zero padding and are excluded from the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetWindow {
    pub values: [f64; WINDOW],
    pub tail: bool,
}

/// Per-cell loss value.
#[inline]
pub(crate) fn cell_loss(kind: LossKind, p: f64, y: f64) -> f64 {
    match kind {
        LossKind::Bce => {
            let q = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
        }
        LossKind::Mae => (y - p).abs(),
    }
}

/// Derivative of the per-cell loss with respect to the pre-sigmoid logit.
#[inline]
pub(crate) fn cell_logit_grad(kind: LossKind, p: f64, y: f64) -> f64 {
    match kind {
        LossKind::Bce => {
            if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                p - y
            } else {
                0.0
            }
        }
        LossKind::Mae => {
            let s = if p > y {
                1.0
            } else if p < y {
                -1.0
            } else {
                0.0
            };
            s * p * (1.0 - p)
        }
    }
}

pub(crate) fn validate_targets(targets: &[TargetWindow]) -> Result<()> {
    for (t, tw) in targets.iter().enumerate() {
        if let Some(v) = tw.values.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::data(format!(
                "target at frame {t} is not binary (found {v})"
            )));
        }
    }
    Ok(())
}

/// Sum of per-cell losses and number of cells over non-tail frames.
pub fn data_loss_sum(
    windows: &[PredictionWindow],
    targets: &[TargetWindow],
    kind: LossKind,
) -> Result<(f64, usize)> {
    if windows.len() != targets.len() {
        return Err(Error::data(format!(
            "{} prediction windows but {} targets",
            windows.len(),
            targets.len()
        )));
    }
    validate_targets(targets)?;
    let mut sum = 0.0;
    let mut cells = 0;
    for (w, t) in windows.iter().zip(targets) {
        if t.tail {
            continue;
        }
        for (&p, &y) in w.probs.iter().zip(&t.values) {
            sum += cell_loss(kind, p, y);
        }
        cells += WINDOW;
    }
    Ok((sum, cells))
}

/// Mean per-cell loss over non-tail frames plus `l2_lambda` times the
/// squared norm of the weight matrices (biases and embeddings excluded).
pub fn loss(
    windows: &[PredictionWindow],
    targets: &[TargetWindow],
    objective: &TrainingObjective,
    params: &ModelParams,
) -> Result<f64> {
    let (sum, cells) = data_loss_sum(windows, targets, objective.kind)?;
    let data = if cells == 0 { 0.0 } else { sum / cells as f64 };
    Ok(data + objective.l2_lambda * params.l2_norm_sq())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{InputLayout, Segment};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn window(p: f64, frame: usize) -> PredictionWindow {
        PredictionWindow {
            probs: [p; WINDOW],
            emitted_at_frame: frame,
        }
    }

    fn target(y: f64) -> TargetWindow {
        TargetWindow {
            values: [y; WINDOW],
            tail: false,
        }
    }

    fn params(h: usize, d: usize) -> ModelParams {
        ModelParams::random(InputLayout::new(vec![Segment::Dense { width: d }]), h, 3, 0.5)
            .unwrap()
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let z = ModelParams::zeros(InputLayout::new(vec![Segment::Dense { width: 1 }]), 1).unwrap();
        let mut w = window(1.0, 0);
        w.probs[3] = 0.0;
        let mut t = target(1.0);
        t.values[3] = 0.0;
        for kind in [LossKind::Bce, LossKind::Mae] {
            let obj = TrainingObjective { kind, l2_lambda: 0.0 };
            let l = loss(&[w.clone()], &[t.clone()], &obj, &z).unwrap();
            // clamping leaves ~1e-7 per cell for BCE
            assert!(l < 2e-7, "{kind:?} {l}");
        }
    }

    #[test]
    fn single_cell_bce_is_ln2() {
        assert!((cell_loss(LossKind::Bce, 0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        let z = ModelParams::zeros(InputLayout::new(vec![Segment::Dense { width: 1 }]), 1).unwrap();
        let obj = TrainingObjective {
            kind: LossKind::Bce,
            l2_lambda: 0.0,
        };
        let l = loss(&[window(0.5, 0)], &[target(1.0)], &obj, &z).unwrap();
        assert!((l - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn matches_direct_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = params(2, 2);
        let mut windows = Vec::new();
        let mut targets = Vec::new();
        for f in 0..4 {
            let mut w = window(0.0, f);
            let mut t = target(0.0);
            for k in 0..WINDOW {
                w.probs[k] = rng.random_range(0.0..1.0);
                t.values[k] = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            }
            windows.push(w);
            targets.push(t);
        }
        // brute force: per-cell terms, then weights listed explicitly
        let mut weights_sq = 0.0;
        for v in p.lstm_input_weights.as_slice() {
            weights_sq += v * v;
        }
        for v in p.lstm_recurrent_weights.as_slice() {
            weights_sq += v * v;
        }
        for v in p.output_weights.as_slice() {
            weights_sq += v * v;
        }
        let mut bce = 0.0;
        let mut mae = 0.0;
        for f in 0..4 {
            for k in 0..WINDOW {
                let q = windows[f].probs[k].max(1e-7).min(1.0 - 1e-7);
                let y = targets[f].values[k];
                bce += -(y * q.ln() + (1.0 - y) * (1.0 - q).ln());
                mae += (y - windows[f].probs[k]).abs();
            }
        }
        let n = (4 * WINDOW) as f64;
        let expect_bce = bce / n + 0.001 * weights_sq;
        let expect_mae = mae / n + 0.001 * weights_sq;
        let got_bce = loss(
            &windows,
            &targets,
            &TrainingObjective { kind: LossKind::Bce, l2_lambda: 0.001 },
            &p,
        )
        .unwrap();
        let got_mae = loss(
            &windows,
            &targets,
            &TrainingObjective { kind: LossKind::Mae, l2_lambda: 0.001 },
            &p,
        )
        .unwrap();
        assert!((got_bce - expect_bce).abs() < 1e-12);
        assert!((got_mae - expect_mae).abs() < 1e-12);
    }

    #[test]
    fn tail_frames_are_excluded() {
        let z = ModelParams::zeros(InputLayout::new(vec![Segment::Dense { width: 1 }]), 1).unwrap();
        let obj = TrainingObjective { kind: LossKind::Mae, l2_lambda: 0.0 };
        let mut tail = target(1.0);
        tail.tail = true;
        let l = loss(&[window(0.0, 0), window(0.0, 1)], &[target(0.0), tail], &obj, &z).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn rejects_length_mismatch_and_non_binary() {
        let z = ModelParams::zeros(InputLayout::new(vec![Segment::Dense { width: 1 }]), 1).unwrap();
        let obj = TrainingObjective { kind: LossKind::Bce, l2_lambda: 0.0 };
        assert!(loss(&[window(0.5, 0)], &[], &obj, &z).is_err());
        assert!(loss(&[window(0.5, 0)], &[target(0.5)], &obj, &z).is_err());
    }
}
