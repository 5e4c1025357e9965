//! Continuous turn-taking prediction for two-party spoken dialog.
//!
//! A single-layer LSTM reads per-frame features from both speakers on a
//! 50 ms grid and, at every frame, emits probabilities that the target
//! speaker is talking in each of the next 60 frames. Evaluators in
//! [`tasks`] turn those curves into HOLD/SHIFT decisions at pauses and
//! overlaps and SHORT/LONG decisions at utterance onsets, scored with the
//! support-weighted F1 in [`metrics`]. [`experiment`] wraps training,
//! grid search, repeated evaluation and sequential forward selection.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod tasks;

pub use error::{Error, Result};

/// Length of one frame in seconds.
pub const FRAME_SECONDS: f64 = 0.05;

/// Number of future frames covered by each prediction window.
pub const WINDOW: usize = 60;

/// Width of the linguistic embedding vectors.
pub const EMBED_DIM: usize = 64;

/// Derives the `index`-th child seed from a master seed (splitmix64 over
/// `master + (index + 1) * golden_gamma`).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
