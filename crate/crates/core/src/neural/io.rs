//! Weight serialization: a JSON manifest of layer names and shapes plus one
//! little-endian f32 binary blob per layer. Round trips are bit exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::neural::{NetworkConfig, NetworkParams, Tensor};
use crate::{CoreError, Result};

pub const WEIGHTS_MANIFEST: &str = "weights_manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsManifest {
    config: NetworkConfig,
    layers: Vec<LayerEntry>,
}

pub fn save_weights(dir: &Path, cfg: &NetworkConfig, params: &NetworkParams<f32>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let names = NetworkParams::<f32>::tensor_names(cfg);
    let tensors = params.tensors();
    let mut layers = Vec::with_capacity(names.len());
    for (name, tensor) in names.iter().zip(&tensors) {
        let file = format!("{name}.bin");
        let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join(&file))?);
        for v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        layers.push(LayerEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            file,
            dtype: "f32".into(),
        });
    }
    let manifest = WeightsManifest {
        config: cfg.clone(),
        layers,
    };
    std::fs::write(
        dir.join(WEIGHTS_MANIFEST),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_weights(dir: &Path) -> Result<(NetworkConfig, NetworkParams<f32>)> {
    let manifest: WeightsManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(WEIGHTS_MANIFEST))?)?;
    let cfg = manifest.config;
    let mut params = NetworkParams::<f32>::zeros(&cfg)?;
    let names = NetworkParams::<f32>::tensor_names(&cfg);
    if manifest.layers.len() != names.len() {
        return Err(CoreError::Data(format!(
            "weights manifest lists {} layers, config implies {}",
            manifest.layers.len(),
            names.len()
        )));
    }
    for ((entry, name), slot) in manifest
        .layers
        .iter()
        .zip(&names)
        .zip(params.tensors_mut())
    {
        if &entry.name != name {
            return Err(CoreError::Data(format!(
                "weights manifest layer `{}` does not match expected `{name}`",
                entry.name
            )));
        }
        if entry.dtype != "f32" {
            return Err(CoreError::Data(format!(
                "unsupported dtype `{}` for layer `{name}`",
                entry.dtype
            )));
        }
        if entry.shape != slot.shape() {
            return Err(CoreError::Data(format!(
                "layer `{name}` shape {:?} does not match config shape {:?}",
                entry.shape,
                slot.shape()
            )));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(dir.join(&entry.file))?.read_to_end(&mut bytes)?;
        if bytes.len() != slot.len() * 4 {
            return Err(CoreError::Data(format!(
                "layer `{name}` blob has {} bytes, expected {}",
                bytes.len(),
                slot.len() * 4
            )));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        *slot = Tensor::from_vec(&entry.shape, data);
    }
    Ok((cfg, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_round_trip_is_bit_exact() {
        let cfg = NetworkConfig::reduced_gradcheck();
        let params = NetworkParams::<f32>::xavier(&cfg, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_weights(dir.path(), &cfg, &params).unwrap();
        let (cfg2, params2) = load_weights(dir.path()).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(params, params2);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let cfg = NetworkConfig::reduced_gradcheck();
        let params = NetworkParams::<f32>::xavier(&cfg, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_weights(dir.path(), &cfg, &params).unwrap();
        std::fs::write(dir.path().join("conv1.weights.bin"), [0u8; 4]).unwrap();
        assert!(load_weights(dir.path()).is_err());
    }
}
