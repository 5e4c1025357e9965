//! Model checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes   "TTAKECKP"
//! version      u32       FORMAT_VERSION
//! endianness   u8        b'L'
//! header_len   u32
//! header       JSON      CheckpointHeader
//! payload      f64 * n   every block of `header.blocks`, in order, row-major
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ModelParams;
use crate::error::{Error, Result};
use crate::features::InputLayout;
use crate::WINDOW;

pub const MAGIC: &[u8; 8] = b"TTAKECKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub hidden: usize,
    pub input_dim: usize,
    pub window: usize,
    pub layout: InputLayout,
    pub plan_fingerprint: String,
    pub seed: u64,
    pub blocks: Vec<BlockShape>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub plan_fingerprint: String,
}

fn shapes(p: &ModelParams) -> Vec<BlockShape> {
    let h = p.hidden();
    let mut out = vec![
        BlockShape { name: "lstm_input_weights".into(), rows: 4 * h, cols: p.input_dim() },
        BlockShape { name: "lstm_recurrent_weights".into(), rows: 4 * h, cols: h },
        BlockShape { name: "lstm_biases".into(), rows: 4 * h, cols: 1 },
        BlockShape { name: "output_weights".into(), rows: WINDOW, cols: h },
        BlockShape { name: "output_biases".into(), rows: WINDOW, cols: 1 },
    ];
    for e in &p.embeddings {
        out.push(BlockShape {
            name: format!("embedding_{}", e.stream.name()),
            rows: e.table.rows(),
            cols: e.table.cols(),
        });
    }
    out
}

pub fn to_bytes(params: &ModelParams, plan_fingerprint: &str) -> Vec<u8> {
    let header = CheckpointHeader {
        hidden: params.hidden(),
        input_dim: params.input_dim(),
        window: WINDOW,
        layout: params.layout().clone(),
        plan_fingerprint: plan_fingerprint.to_string(),
        seed: params.seed(),
        blocks: shapes(params),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(17 + json.len() + params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(b'L');
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, values) in params.blocks() {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::data("checkpoint truncated"));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<Checkpoint> {
    let buf = &mut bytes;
    if take(buf, 8)? != MAGIC {
        return Err(Error::data("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(take(buf, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    if take(buf, 1)?[0] != b'L' {
        return Err(Error::data("unsupported checkpoint endianness"));
    }
    let hlen = u32::from_le_bytes(take(buf, 4)?.try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(buf, hlen)?)
        .map_err(|e| Error::data(format!("checkpoint header: {e}")))?;
    if header.window != WINDOW {
        return Err(Error::data(format!(
            "checkpoint window {} differs from {WINDOW}",
            header.window
        )));
    }
    let mut params = ModelParams::zeros(header.layout.clone(), header.hidden)?;
    if params.input_dim() != header.input_dim || shapes(&params) != header.blocks {
        return Err(Error::data("checkpoint block shapes inconsistent with layout"));
    }
    params.set_seed(header.seed);
    for (_, values) in params.blocks_mut() {
        let raw = take(buf, values.len() * 8)?;
        for (v, chunk) in values.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if !buf.is_empty() {
        return Err(Error::data("trailing bytes after checkpoint payload"));
    }
    Ok(Checkpoint {
        params,
        plan_fingerprint: header.plan_fingerprint,
    })
}

pub fn save(path: &Path, params: &ModelParams, plan_fingerprint: &str) -> Result<()> {
    std::fs::write(path, to_bytes(params, plan_fingerprint)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Segment, TokenStream};

    fn model() -> ModelParams {
        let layout = InputLayout::new(vec![
            Segment::Dense { width: 3 },
            Segment::Token { stream: TokenStream::Pos },
        ]);
        ModelParams::init(layout, 4, 77).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = model();
        let back = from_bytes(&to_bytes(&p, "abc123")).unwrap();
        assert_eq!(back.params, p);
        assert_eq!(back.plan_fingerprint, "abc123");
        assert_eq!(back.params.seed(), 77);
    }

    #[test]
    fn rejects_other_versions_and_truncation() {
        let mut bytes = to_bytes(&model(), "x");
        let full = bytes.clone();
        bytes[8] = 9;
        assert!(from_bytes(&bytes).unwrap_err().to_string().contains("version 9"));
        assert!(from_bytes(&full[..full.len() - 3]).is_err());
        assert!(from_bytes(b"garbage!").is_err());
    }
}
