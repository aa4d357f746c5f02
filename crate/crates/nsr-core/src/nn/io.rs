//! Model persistence: a JSON document with base64 little-endian parameter
//! payloads and a CRC32 over the decoded payload bytes in layer order.

use super::{LayerSpec, Model};
use crate::error::{NsrError, Result};
use crate::tensor::{Dtype, Tensor};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use std::collections::BTreeMap;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct ParamFile {
    shape: Vec<usize>,
    dtype: Dtype,
    data: String,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ModelFile {
    format_version: u32,
    input_shape: Vec<usize>,
    class_count: usize,
    dtype: Dtype,
    layers: Vec<LayerSpec>,
    params: BTreeMap<String, ParamFile>,
    checksum: u32,
}

/// CRC32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

fn payload_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut params = BTreeMap::new();
    let mut all_bytes = Vec::new();
    // BTreeMap iterates name order; names are zero-padded layer indices,
    // so this is layer order.
    for (name, p) in &model.params {
        let bytes = payload_bytes(p);
        all_bytes.extend_from_slice(&bytes);
        params.insert(
            name.clone(),
            ParamFile { shape: p.shape().to_vec(), dtype: p.dtype(), data: B64.encode(&bytes) },
        );
    }
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        input_shape: model.input_shape.clone(),
        class_count: model.class_count,
        dtype: model.dtype,
        layers: model.layers.clone(),
        params,
        checksum: crc32(&all_bytes),
    };
    let json = serde_json::to_string_pretty(&file).expect("model file is serializable");
    std::fs::write(path, json).map_err(|e| NsrError::io(path.display().to_string(), e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| NsrError::io(path.display().to_string(), e))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| NsrError::Malformed(e.to_string()))?;
    if file.format_version > FORMAT_VERSION {
        return Err(NsrError::Version { found: file.format_version, supported: FORMAT_VERSION });
    }
    let mut params = BTreeMap::new();
    let mut all_bytes = Vec::new();
    for (name, pf) in file.params {
        let bytes = B64
            .decode(&pf.data)
            .map_err(|e| NsrError::Malformed(format!("param {name}: bad base64: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(NsrError::Malformed(format!(
                "param {name}: payload length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        all_bytes.extend_from_slice(&bytes);
        let data: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.insert(name, Tensor::new(pf.shape, data, pf.dtype)?);
    }
    let computed = crc32(&all_bytes);
    if computed != file.checksum {
        return Err(NsrError::Checksum { stored: file.checksum, computed });
    }
    Model::build(file.layers, params, file.input_shape, file.class_count, file.dtype)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_mlp;
    use crate::rng::RandStream;

    #[test]
    fn crc32_known_vector() {
        assert_eq!(crc32(b"123456789"), 0xCBF43926);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RandStream::new(21, 0);
        let m = build_mlp(&[10, 8, 5], true, Dtype::F32, &mut rng).unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        save_model(&m, &p1).unwrap();
        let m2 = load_model(&p1).unwrap();
        save_model(&m2, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        for (name, p) in &m.params {
            assert_eq!(p.data(), m2.params[name].data(), "{name}");
        }
    }

    #[test]
    fn corrupted_payload_is_checksum_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RandStream::new(22, 0);
        let m = build_mlp(&[4, 3, 2], true, Dtype::F64, &mut rng).unwrap();
        let p = dir.path().join("m.json");
        save_model(&m, &p).unwrap();
        let mut file: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        let data = file["params"]["layer000.weight"]["data"].as_str().unwrap().to_string();
        let mut bytes = B64.decode(&data).unwrap();
        bytes[0] ^= 0x01;
        file["params"]["layer000.weight"]["data"] = serde_json::Value::String(B64.encode(&bytes));
        std::fs::write(&p, serde_json::to_string(&file).unwrap()).unwrap();
        assert!(matches!(load_model(&p), Err(NsrError::Checksum { .. })));
    }

    #[test]
    fn future_version_is_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RandStream::new(23, 0);
        let m = build_mlp(&[4, 3, 2], true, Dtype::F64, &mut rng).unwrap();
        let p = dir.path().join("m.json");
        save_model(&m, &p).unwrap();
        let mut file: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        file["format_version"] = serde_json::Value::from(99);
        std::fs::write(&p, serde_json::to_string(&file).unwrap()).unwrap();
        match load_model(&p) {
            Err(NsrError::Version { found, supported }) => {
                assert_eq!(found, 99);
                assert_eq!(supported, FORMAT_VERSION);
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_is_malformed_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.json");
        std::fs::write(&p, "not json at all").unwrap();
        assert!(matches!(load_model(&p), Err(NsrError::Malformed(_))));
    }
}
