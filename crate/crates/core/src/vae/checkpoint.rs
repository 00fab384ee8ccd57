//! Binary checkpoint: magic, length-prefixed JSON header, f32 LE tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{VaeArchitecture, VaeModel};
use crate::detector::ScoreMetric;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"GCLN1\n";

/// Detector settings stored next to the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub fs_target_hz: f64,
    pub eps: f64,
    pub threshold: Option<f64>,
    pub score_metric: ScoreMetric,
    pub threshold_percentile: f64,
    pub enable_revin: bool,
    pub enable_freq_adapter: bool,
    pub enable_heuristics: bool,
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        Self {
            fs_target_hz: 120.0,
            eps: crate::dsp::DEFAULT_EPS,
            threshold: None,
            score_metric: ScoreMetric::Mse,
            threshold_percentile: 90.0,
            enable_revin: true,
            enable_freq_adapter: true,
            enable_heuristics: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: VaeArchitecture,
    latent_dim: usize,
    input_len: usize,
    #[serde(flatten)]
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn checkpoint_bytes<T: Scalar>(model: &VaeModel<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let params = model.params();
    let header = Header {
        arch: model.arch().clone(),
        latent_dim: model.arch().latent_dim,
        input_len: model.arch().input_len,
        meta: *meta,
        tensors: model
            .param_names()
            .into_iter()
            .zip(&params)
            .map(|(name, p)| TensorEntry {
                name,
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(format!("header encoding failed: {e}")))?;
    let header_len = u32::try_from(json.len()).map_err(|_| bad("header too large"))?;
    let mut out = Vec::with_capacity(10 + json.len() + 4 * model.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        for &v in p.value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(VaeModel<f32>, CheckpointMeta)> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        if bytes.starts_with(b"GCLN") {
            return Err(bad("unsupported checkpoint version"));
        }
        return Err(bad("not a GenClean checkpoint"));
    }
    let rest = &bytes[CHECKPOINT_MAGIC.len()..];
    if rest.len() < 4 {
        return Err(bad("truncated checkpoint: missing header length"));
    }
    let header_len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < header_len {
        return Err(bad("truncated checkpoint: header cut short"));
    }
    let header: Header =
        serde_json::from_slice(&rest[..header_len]).map_err(|e| bad(format!("invalid checkpoint header: {e}")))?;
    if header.arch.latent_dim != header.latent_dim || header.arch.input_len != header.input_len {
        return Err(Error::shape(format!(
            "header latent_dim/input_len ({}, {}) disagree with architecture ({}, {})",
            header.latent_dim, header.input_len, header.arch.latent_dim, header.arch.input_len
        )));
    }
    let mut model = VaeModel::<f32>::new(header.arch.clone(), 0)?;
    let names = model.param_names();
    if header.tensors.len() != names.len() {
        return Err(Error::shape(format!(
            "checkpoint lists {} tensors, architecture has {}",
            header.tensors.len(),
            names.len()
        )));
    }
    let mut data = &rest[header_len..];
    for ((entry, name), param) in header.tensors.iter().zip(&names).zip(model.params_mut()) {
        if &entry.name != name || entry.shape != param.value.shape() {
            return Err(Error::shape(format!(
                "tensor {} {:?} does not match architecture tensor {name} {:?}",
                entry.name,
                entry.shape,
                param.value.shape()
            )));
        }
        let n = param.value.len();
        if data.len() < 4 * n {
            return Err(bad(format!("truncated checkpoint: tensor {name} incomplete")));
        }
        let values = data[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        param.value = Tensor::from_vec(&entry.shape, values)?;
        data = &data[4 * n..];
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes after the last tensor", data.len())));
    }
    Ok((model, header.meta))
}

pub fn save_checkpoint<T: Scalar>(model: &VaeModel<T>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(VaeModel<f32>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> VaeModel<f32> {
        VaeModel::new(VaeArchitecture::default(), 5).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let meta = CheckpointMeta {
            threshold: Some(0.125),
            ..CheckpointMeta::default()
        };
        let bytes = checkpoint_bytes(&m, &meta).unwrap();
        let (back, meta_back) = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(meta_back, meta);
        for (a, b) in m.params().iter().zip(back.params()) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert_eq!(checkpoint_bytes(&back, &meta_back).unwrap(), bytes);
    }

    #[test]
    fn null_threshold_round_trips() {
        let bytes = checkpoint_bytes(&model(), &CheckpointMeta::default()).unwrap();
        let text = String::from_utf8_lossy(&bytes[10..200]);
        assert!(text.contains("\"arch\""));
        let (_, meta) = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(meta.threshold, None);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = checkpoint_bytes(&model(), &CheckpointMeta::default()).unwrap();
        bytes[0] = b'X';
        let err = checkpoint_from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("not a GenClean checkpoint"), "{err}");
        assert!(checkpoint_from_bytes(b"").is_err());
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = checkpoint_bytes(&model(), &CheckpointMeta::default()).unwrap();
        for cut in [8, 20, bytes.len() - 1] {
            let err = checkpoint_from_bytes(&bytes[..cut]).unwrap_err().to_string();
            assert!(err.contains("truncated"), "{cut}: {err}");
        }
    }

    #[test]
    fn wide_stored_tensor_is_a_shape_error() {
        let bytes = checkpoint_bytes(&model(), &CheckpointMeta::default()).unwrap();
        let len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[10..10 + len]).unwrap();
        let tensors = header["tensors"].as_array_mut().unwrap();
        let mu = tensors.iter_mut().find(|t| t["name"] == "mu_head.weight").unwrap();
        assert_eq!(mu["shape"][0], 20);
        mu["shape"][0] = 21.into();
        let json = serde_json::to_vec(&header).unwrap();
        let mut forged = CHECKPOINT_MAGIC.to_vec();
        forged.extend_from_slice(&(json.len() as u32).to_le_bytes());
        forged.extend_from_slice(&json);
        forged.extend_from_slice(&bytes[10 + len..]);
        assert!(matches!(checkpoint_from_bytes(&forged), Err(Error::Shape(_))));
    }
}
