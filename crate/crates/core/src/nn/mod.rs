//! Embedding lookup, single-layer LSTM, sigmoid output head, losses,
//! backpropagation through time and Adam.

pub mod checkpoint;
pub mod gradcheck;
mod loss;
mod matrix;
mod model;
mod train;

pub use loss::{data_loss_sum, loss, LossKind, TargetWindow, TrainingObjective, PROB_EPS};
pub use matrix::{sigmoid, Matrix};
pub use model::{embed_lookup, Embedding, LstmState, ModelParams, ParamBlock, PredictionWindow};
pub use train::{
    backward_and_step, evaluate_loss, loss_and_gradients, train, Adam, SequenceData,
    TrainOptions, TrainReport,
};
