use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{cell_logit_grad, cell_loss, data_loss_sum, validate_targets, TargetWindow, TrainingObjective};
use super::matrix::Matrix;
use super::model::{LstmState, ModelParams};
use crate::error::{Error, Result};
use crate::features::{FrameFeatureMatrix, Segment};
use crate::{EMBED_DIM, WINDOW};

/// Adam optimizer state, shaped like the parameters it updates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.steps += 1;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        let bc1 = 1.0 - b1.powi(self.steps as i32);
        let bc2 = 1.0 - b2.powi(self.steps as i32);
        let blocks = params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(self.m.blocks_mut().into_iter().zip(self.v.blocks_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in blocks {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                p[j] -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
            }
        }
    }
}

/// Forward activations kept for backpropagation.
struct Trace {
    xs: Vec<f64>,
    gates: Vec<f64>,
    /// `T + 1` rows; row 0 is the initial state.
    hs: Vec<f64>,
    cs: Vec<f64>,
    probs: Vec<f64>,
}

fn forward_trace(
    params: &ModelParams,
    inputs: &FrameFeatureMatrix,
    state: &LstmState,
) -> Result<Trace> {
    let t_len = inputs.n_frames();
    let (d, h) = (params.input_dim(), params.hidden());
    let mut tr = Trace {
        xs: vec![0.0; t_len * d],
        gates: vec![0.0; t_len * 4 * h],
        hs: vec![0.0; (t_len + 1) * h],
        cs: vec![0.0; (t_len + 1) * h],
        probs: vec![0.0; t_len * WINDOW],
    };
    tr.hs[..h].copy_from_slice(&state.hidden);
    tr.cs[..h].copy_from_slice(&state.cell);
    let mut hcur = state.hidden.clone();
    let mut ccur = state.cell.clone();
    for t in 0..t_len {
        let x = &mut tr.xs[t * d..(t + 1) * d];
        params.fill_input(inputs, t, x)?;
        params.step(
            &tr.xs[t * d..(t + 1) * d],
            &mut hcur,
            &mut ccur,
            &mut tr.gates[t * 4 * h..(t + 1) * 4 * h],
            &mut tr.probs[t * WINDOW..(t + 1) * WINDOW],
        );
        tr.hs[(t + 1) * h..(t + 2) * h].copy_from_slice(&hcur);
        tr.cs[(t + 1) * h..(t + 2) * h].copy_from_slice(&ccur);
    }
    Ok(tr)
}

/// Loss (as in [`super::loss::loss`]) and its gradient with respect to every
/// parameter, by backpropagation through time over the whole of `inputs`.
/// `grads` is overwritten. Returns the loss and the final recurrent state.
pub fn loss_and_gradients(
    params: &ModelParams,
    inputs: &FrameFeatureMatrix,
    targets: &[TargetWindow],
    objective: &TrainingObjective,
    state: Option<&LstmState>,
    grads: &mut ModelParams,
) -> Result<(f64, LstmState)> {
    params.check_inputs(inputs)?;
    if targets.len() != inputs.n_frames() {
        return Err(Error::data(format!(
            "{} frames but {} targets",
            inputs.n_frames(),
            targets.len()
        )));
    }
    validate_targets(targets)?;
    let init = match state {
        Some(s) => {
            params.check_state(s)?;
            s.clone()
        }
        None => LstmState::zeros(params.hidden()),
    };
    let tr = forward_trace(params, inputs, &init)?;
    let t_len = inputs.n_frames();
    let (d, hs) = (params.input_dim(), params.hidden());
    let kind = objective.kind;

    let cells = targets.iter().filter(|t| !t.tail).count() * WINDOW;
    let norm = if cells == 0 { 0.0 } else { 1.0 / cells as f64 };
    let mut data_sum = 0.0;

    grads.for_each_block_mut(|_, g| g.fill(0.0));
    let mut dz = [0.0; WINDOW];
    let mut dh = vec![0.0; hs];
    let mut dh_next = vec![0.0; hs];
    let mut dc_next = vec![0.0; hs];
    let mut da = vec![0.0; 4 * hs];
    let has_tokens = params.layout().token_columns() > 0;
    let mut dx = vec![0.0; if has_tokens { d } else { 0 }];

    for t in (0..t_len).rev() {
        let h_t = &tr.hs[(t + 1) * hs..(t + 2) * hs];
        let h_prev = &tr.hs[t * hs..(t + 1) * hs];
        let c_t = &tr.cs[(t + 1) * hs..(t + 2) * hs];
        let c_prev = &tr.cs[t * hs..(t + 1) * hs];
        let gates = &tr.gates[t * 4 * hs..(t + 1) * 4 * hs];
        let probs = &tr.probs[t * WINDOW..(t + 1) * WINDOW];
        let target = &targets[t];

        dh.copy_from_slice(&dh_next);
        if !target.tail {
            for k in 0..WINDOW {
                let (p, y) = (probs[k], target.values[k]);
                data_sum += cell_loss(kind, p, y);
                dz[k] = cell_logit_grad(kind, p, y) * norm;
            }
            grads.output_weights.outer_add(&dz, h_t);
            for (g, z) in grads.output_biases.iter_mut().zip(&dz) {
                *g += z;
            }
            params.output_weights.matvec_t_add(&dz, &mut dh);
        }

        for k in 0..hs {
            let (i, f, g, o) = (gates[k], gates[hs + k], gates[2 * hs + k], gates[3 * hs + k]);
            let tc = c_t[k].tanh();
            let d_o = dh[k] * tc;
            let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
            let di = dc * g;
            let dg = dc * i;
            let df = dc * c_prev[k];
            dc_next[k] = dc * f;
            da[k] = di * i * (1.0 - i);
            da[hs + k] = df * f * (1.0 - f);
            da[2 * hs + k] = dg * (1.0 - g * g);
            da[3 * hs + k] = d_o * o * (1.0 - o);
        }

        grads
            .lstm_input_weights
            .outer_add(&da, &tr.xs[t * d..(t + 1) * d]);
        grads.lstm_recurrent_weights.outer_add(&da, h_prev);
        for (g, a) in grads.lstm_biases.iter_mut().zip(&da) {
            *g += a;
        }
        dh_next.fill(0.0);
        params.lstm_recurrent_weights.matvec_t_add(&da, &mut dh_next);

        if has_tokens {
            dx.fill(0.0);
            params.lstm_input_weights.matvec_t_add(&da, &mut dx);
            scatter_embedding_grads(params, inputs, t, &dx, grads);
        }
    }

    let lambda = objective.l2_lambda;
    if lambda != 0.0 {
        add_l2_grad(params, grads, lambda);
    }
    if let Some(block) = grads.first_non_finite() {
        return Err(Error::Numerical(format!(
            "non-finite gradient in parameter block {}",
            block.name()
        )));
    }
    let loss = data_sum * norm + lambda * params.l2_norm_sq();
    let final_state = LstmState {
        hidden: tr.hs[t_len * hs..].to_vec(),
        cell: tr.cs[t_len * hs..].to_vec(),
        next_frame: init.next_frame + t_len,
    };
    Ok((loss, final_state))
}

fn scatter_embedding_grads(
    params: &ModelParams,
    inputs: &FrameFeatureMatrix,
    t: usize,
    dx: &[f64],
    grads: &mut ModelParams,
) {
    let tokens = inputs.token_row(t);
    let (mut xo, mut tcol) = (0, 0);
    for seg in &params.layout().segments {
        match *seg {
            Segment::Dense { width } => xo += width,
            Segment::Token { stream } => {
                let e = params.embedding_index(stream);
                let row = grads.embeddings[e].table.row_mut(tokens[tcol] as usize);
                for (r, g) in row.iter_mut().zip(&dx[xo..xo + EMBED_DIM]) {
                    *r += g;
                }
                xo += EMBED_DIM;
                tcol += 1;
            }
        }
    }
}

fn add_l2_grad(params: &ModelParams, grads: &mut ModelParams, lambda: f64) {
    let add = |g: &mut Matrix, w: &Matrix| {
        for (gi, wi) in g.as_mut_slice().iter_mut().zip(w.as_slice()) {
            *gi += 2.0 * lambda * wi;
        }
    };
    add(&mut grads.lstm_input_weights, &params.lstm_input_weights);
    add(&mut grads.lstm_recurrent_weights, &params.lstm_recurrent_weights);
    add(&mut grads.output_weights, &params.output_weights);
}

/// One optimizer update on a single sequence chunk. Returns the loss before
/// the update and the recurrent state at the end of the chunk.
pub fn backward_and_step(
    params: &mut ModelParams,
    inputs: &FrameFeatureMatrix,
    targets: &[TargetWindow],
    objective: &TrainingObjective,
    optimizer: &mut Adam,
    state: Option<&LstmState>,
) -> Result<(f64, LstmState)> {
    let mut grads = params.zeros_like();
    let (loss, st) = loss_and_gradients(params, inputs, targets, objective, state, &mut grads)?;
    optimizer.step(params, &grads);
    if let Some(block) = params.first_non_finite() {
        return Err(Error::Numerical(format!(
            "non-finite value in parameter block {} after update",
            block.name()
        )));
    }
    Ok((loss, st))
}

/// Inputs and future-activity targets for one (conversation, target speaker) pair.
#[derive(Debug, Clone)]
pub struct SequenceData {
    pub inputs: FrameFeatureMatrix,
    pub targets: Vec<TargetWindow>,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub hidden: usize,
    pub learning_rate: f64,
    pub objective: TrainingObjective,
    pub max_epochs: usize,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    /// BPTT chunk length in frames.
    pub chunk_frames: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            hidden: 60,
            learning_rate: 0.01,
            objective: TrainingObjective {
                kind: super::loss::LossKind::Bce,
                l2_lambda: 0.0001,
            },
            max_epochs: 40,
            patience: 3,
            chunk_frames: 600,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Parameters from the epoch with the lowest held-out loss.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Mean per-chunk training loss for each epoch.
    pub train_losses: Vec<f64>,
    /// Held-out data loss (objective kind, no L2) after each epoch.
    pub heldout_losses: Vec<f64>,
}

/// Mean data loss of `params` over all non-tail cells of `data`.
pub fn evaluate_loss(
    params: &ModelParams,
    data: &[SequenceData],
    kind: super::loss::LossKind,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut cells = 0;
    for seq in data {
        let (windows, _) = params.forward(&seq.inputs, None)?;
        let (s, c) = data_loss_sum(&windows, &seq.targets, kind)?;
        sum += s;
        cells += c;
    }
    Ok(if cells == 0 { 0.0 } else { sum / cells as f64 })
}

/// Trains a fresh model.
///
/// Each sequence is cut into `chunk_frames` pieces processed in order with
/// the recurrent state carried across pieces (reset per sequence). Every
/// epoch draws a random interleaving of all chunks, one Adam update per
/// chunk. Training stops after `patience` epochs without held-out
/// improvement, or at `max_epochs`.
pub fn train(train: &[SequenceData], heldout: &[SequenceData], opts: &TrainOptions) -> Result<TrainReport> {
    let layout = train
        .first()
        .ok_or_else(|| Error::data("no training sequences"))?
        .inputs
        .layout()
        .clone();
    if opts.chunk_frames == 0 {
        return Err(Error::config("chunk_frames must be positive"));
    }
    let mut params = ModelParams::init(layout, opts.hidden, opts.seed)?;
    let mut adam = Adam::new(&params, opts.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_0f_c4a9_b1e5);

    let chunks: Vec<Vec<(FrameFeatureMatrix, &[TargetWindow])>> = train
        .iter()
        .map(|s| {
            let n = s.inputs.n_frames();
            (0..n)
                .step_by(opts.chunk_frames)
                .map(|a| {
                    let b = (a + opts.chunk_frames).min(n);
                    (s.inputs.slice(a..b), &s.targets[a..b])
                })
                .collect()
        })
        .collect();
    let mut order: Vec<usize> = chunks
        .iter()
        .enumerate()
        .flat_map(|(i, c)| std::iter::repeat_n(i, c.len()))
        .collect();

    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut train_losses = Vec::new();
    let mut heldout_losses = Vec::new();
    let mut since_best = 0;
    let mut grads = params.zeros_like();

    for epoch in 0..opts.max_epochs {
        order.shuffle(&mut rng);
        let mut next_chunk = vec![0usize; chunks.len()];
        let mut states: Vec<Option<LstmState>> = vec![None; chunks.len()];
        let mut total = 0.0;
        let mut steps = 0;
        for &s in &order {
            let (inputs, targets) = &chunks[s][next_chunk[s]];
            next_chunk[s] += 1;
            if targets.iter().all(|t| t.tail) {
                continue;
            }
            let (loss, st) = loss_and_gradients(
                &params,
                inputs,
                targets,
                &opts.objective,
                states[s].as_ref(),
                &mut grads,
            )?;
            adam.step(&mut params, &grads);
            if let Some(block) = params.first_non_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite value in parameter block {} after update (epoch {epoch})",
                    block.name()
                )));
            }
            states[s] = Some(LstmState {
                next_frame: 0,
                ..st
            });
            total += loss;
            steps += 1;
        }
        train_losses.push(if steps == 0 { 0.0 } else { total / steps as f64 });

        if heldout.is_empty() {
            best = params.clone();
            best_epoch = epoch;
            continue;
        }
        let h = evaluate_loss(&params, heldout, opts.objective.kind)?;
        heldout_losses.push(h);
        debug!("epoch {epoch}: train {:.5} heldout {h:.5}", train_losses[epoch]);
        if h < best_loss {
            best_loss = h;
            best = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                break;
            }
        }
    }
    best.set_seed(opts.seed);
    Ok(TrainReport {
        params: best,
        best_epoch,
        epochs_run: train_losses.len(),
        train_losses,
        heldout_losses,
    })
}

