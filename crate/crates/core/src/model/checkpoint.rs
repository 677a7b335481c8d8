//! Checkpoint files: one line of JSON header naming every tensor and its
//! shape, then the raw `f64` little-endian values in header order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams, PARAM_NAMES};
use crate::numerics::Tensor;

const FORMAT: &str = "timid-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    metadata: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Free-form training provenance (hyperparameters, seed, epochs).
    pub metadata: serde_json::Value,
}

pub fn write_checkpoint(
    out: &mut impl Write,
    params: &ModelParams,
    metadata: &serde_json::Value,
) -> Result<(), ModelError> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        config: params.config.clone(),
        tensors: params
            .named()
            .map(|(name, t)| TensorEntry {
                name: name.into(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
        metadata: metadata.clone(),
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for t in params.tensors() {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(input: impl Read) -> Result<Checkpoint, ModelError> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| ModelError::Checkpoint(format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    header.config.validate()?;
    let expected = ModelParams::expected_shapes(&header.config);
    if header.tensors.len() != expected.len() {
        return Err(ModelError::Checkpoint(format!(
            "{} tensors listed, expected {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for ((entry, name), shape) in header.tensors.iter().zip(PARAM_NAMES).zip(expected) {
        if entry.name != name || (entry.rows, entry.cols) != shape {
            return Err(ModelError::Checkpoint(format!(
                "tensor {} {}x{} does not match {name} {}x{}",
                entry.name, entry.rows, entry.cols, shape.0, shape.1
            )));
        }
    }
    let mut blob = Vec::new();
    reader.read_to_end(&mut blob)?;
    let total: usize = expected.iter().map(|(r, c)| r * c).sum();
    if blob.len() != 8 * total {
        return Err(ModelError::Checkpoint(format!(
            "parameter blob has {} bytes, expected {}",
            blob.len(),
            8 * total
        )));
    }
    let mut values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut params = ModelParams::init(header.config)?;
    for t in params.tensors_mut() {
        let (r, c) = t.shape();
        *t = Tensor::new(r, c, values.by_ref().take(r * c).collect())?;
    }
    if !params.is_finite() {
        return Err(ModelError::Checkpoint("non-finite parameter values".into()));
    }
    Ok(Checkpoint {
        params,
        metadata: header.metadata,
    })
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    metadata: &serde_json::Value,
) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, metadata)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let file = fs::File::open(path)
        .map_err(|e| ModelError::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    read_checkpoint(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn params() -> ModelParams {
        ModelParams::init(ModelConfig {
            feature_dim: 5,
            d_model: 4,
            init_seed: 3,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let p = params();
        let meta = json!({"seed": 4, "lr": 0.001});
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, &meta).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.params, p);
        assert_eq!(back.metadata, meta);
        let newline = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(buf.len() - newline - 1, 8 * p.parameter_count());
    }

    #[test]
    fn truncated_or_mismatched_files_fail() {
        let p = params();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, &json!(null)).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let text = String::from_utf8_lossy(&buf).replace("\"w_q\"", "\"w_z\"");
        assert!(read_checkpoint(text.as_bytes()).is_err());
        assert!(read_checkpoint(&b"not json\n"[..]).is_err());
    }

    #[test]
    fn save_and_load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.ckpt");
        save_checkpoint(&path, &params(), &json!({})).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().params, params());
        assert!(load_checkpoint(&dir.path().join("missing")).is_err());
    }
}
