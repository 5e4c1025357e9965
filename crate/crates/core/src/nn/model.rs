use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::matrix::{sigmoid, Matrix};
use crate::error::{Error, Result};
use crate::features::{FrameFeatureMatrix, InputLayout, Segment, TokenStream};
use crate::{EMBED_DIM, WINDOW};

/// Embedding table for one linguistic stream; row 0 is the "no new token" element.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub stream: TokenStream,
    pub table: Matrix,
}

/// Parameters of the embedding + LSTM + sigmoid-head predictor.
///
/// Gate rows of the LSTM matrices are stacked as input, forget, cell, output.
/// The same shape doubles as a gradient buffer and as Adam moment storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layout: InputLayout,
    hidden: usize,
    seed: u64,
    /// `4H x D`
    pub lstm_input_weights: Matrix,
    /// `4H x H`
    pub lstm_recurrent_weights: Matrix,
    /// `4H`
    pub lstm_biases: Vec<f64>,
    /// `60 x H`
    pub output_weights: Matrix,
    /// `60`
    pub output_biases: Vec<f64>,
    /// One table per distinct token stream, in canonical stream order.
    pub embeddings: Vec<Embedding>,
}

/// Recurrent state carried between calls for streaming inference.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
    /// Frame index that the next processed input corresponds to.
    pub next_frame: usize,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            hidden: vec![0.0; hidden],
            cell: vec![0.0; hidden],
            next_frame: 0,
        }
    }
}

/// Future voice-activity probabilities emitted at one frame.
///
/// `probs[k]` scores frame `emitted_at_frame + 1 + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionWindow {
    pub probs: [f64; WINDOW],
    pub emitted_at_frame: usize,
}

impl PredictionWindow {
    /// Mean of `probs[range]`.
    pub fn mean(&self, range: std::ops::Range<usize>) -> f64 {
        let n = range.len() as f64;
        self.probs[range].iter().sum::<f64>() / n
    }
}

/// Named parameter block, used for diagnostics and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamBlock {
    LstmInputWeights,
    LstmRecurrentWeights,
    LstmBiases,
    OutputWeights,
    OutputBiases,
    Embedding(TokenStream),
}

impl ParamBlock {
    pub fn name(&self) -> String {
        match self {
            ParamBlock::LstmInputWeights => "lstm_input_weights".into(),
            ParamBlock::LstmRecurrentWeights => "lstm_recurrent_weights".into(),
            ParamBlock::LstmBiases => "lstm_biases".into(),
            ParamBlock::OutputWeights => "output_weights".into(),
            ParamBlock::OutputBiases => "output_biases".into(),
            ParamBlock::Embedding(s) => format!("embedding_{}", s.name()),
        }
    }

    /// Whether the block is subject to L2 regularization.
    pub fn is_regularized(&self) -> bool {
        matches!(
            self,
            ParamBlock::LstmInputWeights
                | ParamBlock::LstmRecurrentWeights
                | ParamBlock::OutputWeights
        )
    }
}

/// Returns row `token_id` of an embedding table.
pub fn embed_lookup(table: &Matrix, token_id: u32) -> Result<&[f64]> {
    let id = token_id as usize;
    if id >= table.rows() {
        return Err(Error::data(format!(
            "token id {token_id} outside vocabulary of {} entries",
            table.rows()
        )));
    }
    Ok(table.row(id))
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros(layout: InputLayout, hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::config("hidden size must be positive"));
        }
        let d = layout.input_dim();
        if d == 0 {
            return Err(Error::config("input layout is empty"));
        }
        let embeddings = layout
            .token_streams()
            .into_iter()
            .map(|stream| Embedding {
                stream,
                table: Matrix::zeros(stream.vocab_size(), EMBED_DIM),
            })
            .collect();
        Ok(ModelParams {
            layout,
            hidden,
            seed: 0,
            lstm_input_weights: Matrix::zeros(4 * hidden, d),
            lstm_recurrent_weights: Matrix::zeros(4 * hidden, hidden),
            lstm_biases: vec![0.0; 4 * hidden],
            output_weights: Matrix::zeros(WINDOW, hidden),
            output_biases: vec![0.0; WINDOW],
            embeddings,
        })
    }

    /// Seeded initialization: uniform(+-1/sqrt(H)) for LSTM and output
    /// weights, normal(0, 0.1) for embeddings, forget-gate bias 1.
    pub fn init(layout: InputLayout, hidden: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(layout, hidden)?;
        p.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden as f64).sqrt();
        let uni = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for w in p.lstm_input_weights.as_mut_slice() {
            *w = uni.sample(&mut rng);
        }
        for w in p.lstm_recurrent_weights.as_mut_slice() {
            *w = uni.sample(&mut rng);
        }
        for w in p.output_weights.as_mut_slice() {
            *w = uni.sample(&mut rng);
        }
        for b in p.output_biases.iter_mut() {
            *b = uni.sample(&mut rng);
        }
        for (k, b) in p.lstm_biases.iter_mut().enumerate() {
            *b = if (hidden..2 * hidden).contains(&k) {
                1.0
            } else {
                0.0
            };
        }
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        for e in &mut p.embeddings {
            for w in e.table.as_mut_slice() {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(p)
    }

    /// Parameters drawn uniformly from `[-scale, scale]`, biases included.
    /// Used by gradient checks and reference comparisons.
    pub fn random(layout: InputLayout, hidden: usize, seed: u64, scale: f64) -> Result<Self> {
        let mut p = Self::zeros(layout, hidden)?;
        p.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.for_each_block_mut(|_, values| {
            for v in values.iter_mut() {
                *v = rng.random_range(-scale..=scale);
            }
        });
        Ok(p)
    }

    /// Zero-valued buffer of identical shape.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_block_mut(|_, v| v.fill(0.0));
        z
    }

    pub fn layout(&self) -> &InputLayout {
        &self.layout
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.lstm_input_weights.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn embedding(&self, stream: TokenStream) -> Option<&Matrix> {
        self.embeddings
            .iter()
            .find(|e| e.stream == stream)
            .map(|e| &e.table)
    }

    pub(crate) fn embedding_index(&self, stream: TokenStream) -> usize {
        self.embeddings
            .iter()
            .position(|e| e.stream == stream)
            .expect("layout streams have tables")
    }

    pub fn blocks(&self) -> Vec<(ParamBlock, &[f64])> {
        let mut out = vec![
            (ParamBlock::LstmInputWeights, self.lstm_input_weights.as_slice()),
            (
                ParamBlock::LstmRecurrentWeights,
                self.lstm_recurrent_weights.as_slice(),
            ),
            (ParamBlock::LstmBiases, self.lstm_biases.as_slice()),
            (ParamBlock::OutputWeights, self.output_weights.as_slice()),
            (ParamBlock::OutputBiases, self.output_biases.as_slice()),
        ];
        for e in &self.embeddings {
            out.push((ParamBlock::Embedding(e.stream), e.table.as_slice()));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(ParamBlock, &mut [f64])> {
        let mut out = vec![
            (
                ParamBlock::LstmInputWeights,
                self.lstm_input_weights.as_mut_slice(),
            ),
            (
                ParamBlock::LstmRecurrentWeights,
                self.lstm_recurrent_weights.as_mut_slice(),
            ),
            (ParamBlock::LstmBiases, self.lstm_biases.as_mut_slice()),
            (ParamBlock::OutputWeights, self.output_weights.as_mut_slice()),
            (ParamBlock::OutputBiases, self.output_biases.as_mut_slice()),
        ];
        for e in &mut self.embeddings {
            out.push((ParamBlock::Embedding(e.stream), e.table.as_mut_slice()));
        }
        out
    }

    pub fn for_each_block_mut(&mut self, mut f: impl FnMut(ParamBlock, &mut [f64])) {
        for (b, v) in self.blocks_mut() {
            f(b, v);
        }
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.blocks().iter().map(|(_, v)| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of squared regularized weights (biases and embeddings excluded).
    pub fn l2_norm_sq(&self) -> f64 {
        self.blocks()
            .into_iter()
            .filter(|(b, _)| b.is_regularized())
            .map(|(_, v)| v.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// First block holding a NaN or infinite value.
    pub fn first_non_finite(&self) -> Option<ParamBlock> {
        self.blocks()
            .into_iter()
            .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
            .map(|(b, _)| b)
    }

    pub(crate) fn check_inputs(&self, inputs: &FrameFeatureMatrix) -> Result<()> {
        if inputs.layout() != &self.layout {
            return Err(Error::config(format!(
                "input layout (D={}) does not match model layout (D={})",
                inputs.layout().input_dim(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_state(&self, state: &LstmState) -> Result<()> {
        if state.hidden.len() != self.hidden || state.cell.len() != self.hidden {
            return Err(Error::config(format!(
                "state has {}/{} units, model has {}",
                state.hidden.len(),
                state.cell.len(),
                self.hidden
            )));
        }
        Ok(())
    }

    /// Expands frame `frame` of `inputs` into the model input vector `x`.
    pub(crate) fn fill_input(
        &self,
        inputs: &FrameFeatureMatrix,
        frame: usize,
        x: &mut [f64],
    ) -> Result<()> {
        let dense = inputs.dense_row(frame);
        let tokens = inputs.token_row(frame);
        let (mut xo, mut dcol, mut tcol) = (0, 0, 0);
        for seg in &self.layout.segments {
            match *seg {
                Segment::Dense { width } => {
                    x[xo..xo + width].copy_from_slice(&dense[dcol..dcol + width]);
                    xo += width;
                    dcol += width;
                }
                Segment::Token { stream } => {
                    let table = &self.embeddings[self.embedding_index(stream)].table;
                    let row = embed_lookup(table, tokens[tcol]).map_err(|e| {
                        Error::data(format!("frame {frame}, stream {}: {e}", stream.name()))
                    })?;
                    x[xo..xo + EMBED_DIM].copy_from_slice(row);
                    xo += EMBED_DIM;
                    tcol += 1;
                }
            }
        }
        Ok(())
    }

    /// One LSTM step. `gates` receives post-activation gate values
    /// `[i, f, g, o]`; `h` and `c` are updated in place; `probs` receives
    /// the sigmoid head output.
    #[inline]
    pub(crate) fn step(
        &self,
        x: &[f64],
        h: &mut [f64],
        c: &mut [f64],
        gates: &mut [f64],
        probs: &mut [f64],
    ) {
        let hs = self.hidden;
        gates.copy_from_slice(&self.lstm_biases);
        self.lstm_input_weights.matvec_add(x, gates);
        self.lstm_recurrent_weights.matvec_add(h, gates);
        for k in 0..hs {
            let i = sigmoid(gates[k]);
            let f = sigmoid(gates[hs + k]);
            let g = gates[2 * hs + k].tanh();
            let o = sigmoid(gates[3 * hs + k]);
            gates[k] = i;
            gates[hs + k] = f;
            gates[2 * hs + k] = g;
            gates[3 * hs + k] = o;
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
        probs.copy_from_slice(&self.output_biases);
        self.output_weights.matvec_add(h, probs);
        for p in probs.iter_mut() {
            *p = sigmoid(*p);
        }
    }

    /// Runs the model over every frame of `inputs`, starting from `state`
    /// (zeros when `None`). Returns one window per frame and the final
    /// state for streaming continuation.
    pub fn forward(
        &self,
        inputs: &FrameFeatureMatrix,
        state: Option<&LstmState>,
    ) -> Result<(Vec<PredictionWindow>, LstmState)> {
        self.check_inputs(inputs)?;
        let mut st = match state {
            Some(s) => {
                self.check_state(s)?;
                s.clone()
            }
            None => LstmState::zeros(self.hidden),
        };
        let mut x = vec![0.0; self.input_dim()];
        let mut gates = vec![0.0; 4 * self.hidden];
        let mut out = Vec::with_capacity(inputs.n_frames());
        for t in 0..inputs.n_frames() {
            self.fill_input(inputs, t, &mut x)?;
            let mut probs = [0.0; WINDOW];
            self.step(&x, &mut st.hidden, &mut st.cell, &mut gates, &mut probs);
            out.push(PredictionWindow {
                probs,
                emitted_at_frame: st.next_frame,
            });
            st.next_frame += 1;
        }
        Ok((out, st))
    }
}
