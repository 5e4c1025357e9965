use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::EMBED_DIM;

/// Linguistic token stream carried as ids until the embedding layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenStream {
    Words,
    Pos,
}

impl TokenStream {
    /// Vocabulary size including the reserved zero element.
    pub fn vocab_size(self) -> usize {
        match self {
            TokenStream::Words => 2502,
            TokenStream::Pos => 60,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TokenStream::Words => "words",
            TokenStream::Pos => "pos",
        }
    }
}

/// One contiguous block of the model input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    /// `width` real-valued columns copied through unchanged.
    Dense { width: usize },
    /// A single token-id column expanded to an embedding row.
    Token { stream: TokenStream },
}

impl Segment {
    pub fn input_width(&self) -> usize {
        match *self {
            Segment::Dense { width } => width,
            Segment::Token { .. } => EMBED_DIM,
        }
    }
}

/// Ordered description of the model input vector.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InputLayout {
    pub segments: Vec<Segment>,
}

impl InputLayout {
    pub fn new(segments: Vec<Segment>) -> Self {
        InputLayout { segments }
    }

    /// Model input dimension (dense columns plus embedding widths).
    pub fn input_dim(&self) -> usize {
        self.segments.iter().map(Segment::input_width).sum()
    }

    pub fn dense_width(&self) -> usize {
        self.segments
            .iter()
            .map(|s| match *s {
                Segment::Dense { width } => width,
                Segment::Token { .. } => 0,
            })
            .sum()
    }

    pub fn token_columns(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s, Segment::Token { .. }))
            .count()
    }

    /// Distinct token streams in canonical order; one embedding table each.
    pub fn token_streams(&self) -> Vec<TokenStream> {
        let mut streams: Vec<TokenStream> = self
            .segments
            .iter()
            .filter_map(|s| match *s {
                Segment::Token { stream } => Some(stream),
                Segment::Dense { .. } => None,
            })
            .collect();
        streams.sort();
        streams.dedup();
        streams
    }
}

/// Per-frame model inputs for one target speaker.
///
/// Dense values are stored row-major (`n_frames x dense_width`); token ids
/// are stored row-major (`n_frames x token_columns`) in segment order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureMatrix {
    layout: InputLayout,
    n_frames: usize,
    dense: Vec<f64>,
    tokens: Vec<u32>,
}

impl FrameFeatureMatrix {
    pub fn new(
        layout: InputLayout,
        n_frames: usize,
        dense: Vec<f64>,
        tokens: Vec<u32>,
    ) -> Result<Self> {
        if dense.len() != n_frames * layout.dense_width() {
            return Err(Error::config(format!(
                "dense block has {} values, expected {} frames x {} columns",
                dense.len(),
                n_frames,
                layout.dense_width()
            )));
        }
        if tokens.len() != n_frames * layout.token_columns() {
            return Err(Error::config(format!(
                "token block has {} ids, expected {} frames x {} columns",
                tokens.len(),
                n_frames,
                layout.token_columns()
            )));
        }
        Ok(FrameFeatureMatrix {
            layout,
            n_frames,
            dense,
            tokens,
        })
    }

    /// Dense-only matrix; convenient for tests and tiny models.
    pub fn from_dense(n_frames: usize, width: usize, dense: Vec<f64>) -> Result<Self> {
        Self::new(
            InputLayout::new(vec![Segment::Dense { width }]),
            n_frames,
            dense,
            Vec::new(),
        )
    }

    pub fn layout(&self) -> &InputLayout {
        &self.layout
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dense_row(&self, frame: usize) -> &[f64] {
        let w = self.layout.dense_width();
        &self.dense[frame * w..(frame + 1) * w]
    }

    pub fn token_row(&self, frame: usize) -> &[u32] {
        let w = self.layout.token_columns();
        &self.tokens[frame * w..(frame + 1) * w]
    }

    /// Copy of the frames in `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> FrameFeatureMatrix {
        let dw = self.layout.dense_width();
        let tw = self.layout.token_columns();
        FrameFeatureMatrix {
            layout: self.layout.clone(),
            n_frames: range.len(),
            dense: self.dense[range.start * dw..range.end * dw].to_vec(),
            tokens: self.tokens[range.start * tw..range.end * tw].to_vec(),
        }
    }
}
