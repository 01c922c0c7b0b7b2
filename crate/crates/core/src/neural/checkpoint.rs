//! Checkpoint format: a two-line text header (magic, then a JSON record with
//! the config and update count) followed by the flat parameter array as
//! little-endian f64 bytes in declared order. Reload reproduces eval-mode
//! outputs bit-identically.

use super::model::{Model, ModelConfig};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const MAGIC: &str = "CFKIT-CKPT v1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    updates: u64,
    n_params: usize,
}

pub fn save_checkpoint(model: &Model, updates: u64, path: &Path) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        updates,
        n_params: model.num_params(),
    };
    let header_json = serde_json::to_string(&header)
        .map_err(|e| Error::config(format!("cannot serialize checkpoint header: {e}")))?;
    let mut buf = Vec::with_capacity(64 + model.num_params() * 8);
    writeln!(buf, "{MAGIC}")?;
    writeln!(buf, "{header_json}")?;
    for v in model.params() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, u64)> {
    let bytes = std::fs::read(path)?;
    let (magic, rest) = split_line(&bytes).ok_or_else(|| Error::Parse {
        row: Some(1),
        message: "missing checkpoint magic line".into(),
    })?;
    if magic != MAGIC.as_bytes() {
        return Err(Error::Parse {
            row: Some(1),
            message: format!("bad magic, expected '{MAGIC}'"),
        });
    }
    let (header_line, body) = split_line(rest).ok_or_else(|| Error::Parse {
        row: Some(2),
        message: "missing checkpoint header line".into(),
    })?;
    let header: Header = serde_json::from_slice(header_line).map_err(|e| Error::Parse {
        row: Some(2),
        message: format!("bad checkpoint header: {e}"),
    })?;
    if body.len() != header.n_params * 8 {
        return Err(Error::Parse {
            row: None,
            message: format!(
                "parameter payload has {} bytes, expected {}",
                body.len(),
                header.n_params * 8
            ),
        });
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut model = Model::new(header.config)?;
    model.set_params(&params)?;
    Ok((model, header.updates))
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let pos = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..pos], &bytes[pos + 1..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical_in_eval_mode() {
        let config = ModelConfig {
            vocab_size: 9,
            max_len: 8,
            d_input: 8,
            d_output: 8,
            layers: 1,
            heads: 2,
            ffn_dim: 16,
            dropout: 0.1,
            seed: 33,
        };
        let model = Model::new(config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, 1234, &path).unwrap();
        let (loaded, updates) = load_checkpoint(&path).unwrap();
        assert_eq!(updates, 1234);
        assert_eq!(loaded.params(), model.params());
        let ids = [0, 2, 3, 4];
        let a = model.encode_eval(&ids, &[0; 4]).unwrap();
        let b = loaded.encode_eval(&ids, &[0; 4]).unwrap();
        // bit-identical, not merely close
        for (x, y) in a.h().iter().zip(b.h()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let config = ModelConfig {
            vocab_size: 5,
            max_len: 4,
            d_input: 4,
            d_output: 4,
            layers: 0,
            heads: 1,
            ffn_dim: 4,
            dropout: 0.0,
            seed: 0,
        };
        let model = Model::new(config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, 0, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
