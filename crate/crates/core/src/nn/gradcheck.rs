//! Central finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{loss, LossKind, TargetWindow, TrainingObjective};
use super::model::ModelParams;
use super::train::loss_and_gradients;
use crate::error::Result;
use crate::features::{FrameFeatureMatrix, InputLayout, Segment, TokenStream};
use crate::WINDOW;

/// Gradients whose magnitudes are both below this are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Worst relative error found in one parameter block.
#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub block: String,
    pub params: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

fn eval(
    params: &ModelParams,
    inputs: &FrameFeatureMatrix,
    targets: &[TargetWindow],
    objective: &TrainingObjective,
) -> Result<f64> {
    let (windows, _) = params.forward(inputs, None)?;
    loss(&windows, targets, objective, params)
}

/// Compares every analytic partial derivative with a central difference of
/// step `delta`.
pub fn check_gradients(
    params: &ModelParams,
    inputs: &FrameFeatureMatrix,
    targets: &[TargetWindow],
    objective: &TrainingObjective,
    delta: f64,
) -> Result<GradCheckReport> {
    let mut analytic = params.zeros_like();
    loss_and_gradients(params, inputs, targets, objective, None, &mut analytic)?;
    let mut probe = params.clone();
    let n_blocks = params.blocks().len();
    let mut blocks = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let (name, len) = {
            let (blk, vals) = &params.blocks()[b];
            (blk.name(), vals.len())
        };
        let mut worst: f64 = 0.0;
        for j in 0..len {
            let orig = probe.blocks()[b].1[j];
            probe.blocks_mut()[b].1[j] = orig + delta;
            let up = eval(&probe, inputs, targets, objective)?;
            probe.blocks_mut()[b].1[j] = orig - delta;
            let down = eval(&probe, inputs, targets, objective)?;
            probe.blocks_mut()[b].1[j] = orig;
            let numeric = (up - down) / (2.0 * delta);
            let a = analytic.blocks()[b].1[j];
            worst = worst.max(relative_error(a, numeric));
        }
        blocks.push(BlockCheck {
            block: name,
            params: len,
            max_rel_error: worst,
        });
    }
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        blocks,
        max_rel_error,
    })
}

/// Small fixed problem: 4 dense inputs plus word and POS embeddings, the
/// given hidden size and frame count, random binary targets.
pub fn tiny_problem(
    hidden: usize,
    frames: usize,
    seed: u64,
) -> Result<(ModelParams, FrameFeatureMatrix, Vec<TargetWindow>)> {
    let layout = InputLayout::new(vec![
        Segment::Dense { width: 4 },
        Segment::Token {
            stream: TokenStream::Words,
        },
        Segment::Token {
            stream: TokenStream::Pos,
        },
    ]);
    let params = ModelParams::random(layout.clone(), hidden, seed, 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let dense: Vec<f64> = (0..frames * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut tokens = Vec::with_capacity(frames * 2);
    for f in 0..frames {
        // keep id 0 in play on even frames
        let (w, p) = if f % 2 == 0 {
            (0, rng.random_range(1..60))
        } else {
            (rng.random_range(1..2502), 0)
        };
        tokens.push(w);
        tokens.push(p);
    }
    let inputs = FrameFeatureMatrix::new(layout, frames, dense, tokens)?;
    let targets = (0..frames)
        .map(|_| {
            let mut values = [0.0; WINDOW];
            for v in values.iter_mut() {
                *v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            }
            TargetWindow {
                values,
                tail: false,
            }
        })
        .collect();
    Ok((params, inputs, targets))
}

/// The default check: H=3, 4 dense inputs, both embeddings, 6 frames,
/// The 3-unit, 6-frame tiny problem with L2 = 0.001 and delta = 1e-5.
pub fn default_check(kind: LossKind) -> Result<GradCheckReport> {
    let (params, inputs, targets) = tiny_problem(3, 6, 2024)?;
    let objective = TrainingObjective {
        kind,
        l2_lambda: 0.001,
    };
    check_gradients(&params, &inputs, &targets, &objective, 1e-5)
}
