//! Checkpoints: a binary container of named f32 tensors plus a JSON
//! manifest describing the architecture and training state.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"HPRM";
const VERSION: u8 = 1;

/// Sidecar manifest stored as `<name>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: String,
    pub layers: Vec<super::vnet::LayerSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gtn_patch: Option<usize>,
    pub iteration: usize,
    pub seed: u64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
}

fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

fn format_err(path: &Path, reason: &str) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Write named tensors (insertion order preserved on read-back).
pub fn save_tensors(path: &Path, tensors: &[(String, Vec<f32>)], meta: &CheckpointMeta) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, data) in tensors {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.extend_from_slice(&(data.len() as u32).to_le_bytes());
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    fs::write(meta_path(path), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

/// Read back all named tensors and the manifest.
pub fn load_tensors(path: &Path) -> Result<(BTreeMap<String, Vec<f32>>, CheckpointMeta)> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 9 || &bytes[0..4] != MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(format_err(path, "unsupported version"));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let mut pos = 9usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        if pos + 2 > bytes.len() {
            return Err(format_err(path, "truncated tensor header"));
        }
        let name_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        if pos + name_len + 4 > bytes.len() {
            return Err(format_err(path, "truncated tensor name"));
        }
        let name = String::from_utf8(bytes[pos..pos + name_len].to_vec())
            .map_err(|_| format_err(path, "tensor name is not utf8"))?;
        pos += name_len;
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if pos + len * 4 > bytes.len() {
            return Err(format_err(path, "truncated tensor payload"));
        }
        let data = bytes[pos..pos + len * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        pos += len * 4;
        out.insert(name, data);
    }
    if pos != bytes.len() {
        return Err(format_err(path, "trailing bytes"));
    }
    let meta: CheckpointMeta = serde_json::from_str(
        &fs::read_to_string(meta_path(path))
            .map_err(|_| format_err(path, "missing manifest"))?,
    )?;
    Ok((out, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::vnet::VNetConfig;

    #[test]
    fn named_tensor_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.hprm");
        let tensors = vec![
            ("a.w".to_string(), vec![1.0f32, -2.5, 3.25]),
            ("a.b".to_string(), vec![0.0f32]),
        ];
        let meta = CheckpointMeta {
            model: "expert".into(),
            layers: VNetConfig::desk().layers,
            gtn_patch: None,
            iteration: 7,
            seed: 3,
            train_loss: 0.5,
            val_loss: Some(0.6),
        };
        save_tensors(&path, &tensors, &meta).unwrap();
        let (back, meta2) = load_tensors(&path).unwrap();
        assert_eq!(back.get("a.w").unwrap(), &tensors[0].1);
        assert_eq!(back.get("a.b").unwrap(), &tensors[1].1);
        assert_eq!(meta2, meta);
    }

    #[test]
    fn corrupt_container_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.hprm");
        fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_tensors(&path), Err(Error::Format { .. })));
    }
}
