//! Checkpoint directories: `manifest.json` (format version, config echo,
//! metadata, array index, payload hash) plus `tensors.bin` holding every array
//! as little-endian f32, in name order.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, IoContext, Result};
use crate::nn::ParamStore;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    pub offset: usize,
}

impl ArrayEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: serde_json::Value,
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub arrays: Vec<ArrayEntry>,
    pub payload_sha256: String,
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub arrays: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    /// Gather every parameter of `stores`. Names must be unique across stores.
    pub fn from_stores(
        config: &RunConfig,
        stores: &[&ParamStore],
        metadata: BTreeMap<String, serde_json::Value>,
    ) -> Result<Self> {
        let mut arrays = BTreeMap::new();
        for store in stores {
            for (name, p) in store.iter() {
                let values = p.var.as_tensor().flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1::<f32>()?;
                if arrays.insert(name.clone(), (p.var.dims().to_vec(), values)).is_some() {
                    return Err(Error::Checkpoint(format!("parameter {name} appears in two stores")));
                }
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: serde_json::to_value(config)?,
            metadata,
            arrays: Vec::new(),
            payload_sha256: String::new(),
        };
        Ok(Self { manifest, arrays })
    }

    pub fn config(&self) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_value(self.manifest.config.clone())
            .map_err(|e| Error::Checkpoint(format!("config echo does not parse: {e}")))?;
        Ok(cfg)
    }

    fn payload(&self) -> (Vec<ArrayEntry>, Vec<u8>) {
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut bytes = Vec::new();
        let mut offset = 0;
        for (name, (shape, values)) in &self.arrays {
            entries.push(ArrayEntry { name: name.clone(), shape: shape.clone(), offset });
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            offset += values.len();
        }
        (entries, bytes)
    }

    /// Write `dir/manifest.json` and `dir/tensors.bin`, replacing any previous pair.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let (entries, bytes) = self.payload();
        let mut manifest = self.manifest.clone();
        manifest.format_version = FORMAT_VERSION;
        manifest.arrays = entries;
        manifest.payload_sha256 = hex::encode(Sha256::digest(&bytes));
        let text = serde_json::to_string_pretty(&serde_json::to_value(&manifest)?)? + "\n";
        write_atomic(&dir.join(PAYLOAD_FILE), &bytes)?;
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).at(&mpath)?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", mpath.display())))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let ppath = dir.join(PAYLOAD_FILE);
        let bytes = std::fs::read(&ppath).at(&ppath)?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != manifest.payload_sha256 {
            return Err(Error::Checkpoint(format!(
                "payload hash mismatch: manifest {}, file {digest}",
                manifest.payload_sha256
            )));
        }
        if bytes.len() % 4 != 0 {
            return Err(Error::Checkpoint("payload length is not a multiple of 4".into()));
        }
        let floats: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut arrays = BTreeMap::new();
        for e in &manifest.arrays {
            let end = e.offset + e.len();
            if end > floats.len() {
                return Err(Error::Checkpoint(format!("array {} runs past the payload", e.name)));
            }
            arrays.insert(e.name.clone(), (e.shape.clone(), floats[e.offset..end].to_vec()));
        }
        Ok(Self { manifest, arrays })
    }

    /// Copy stored values into every parameter of `store`.
    pub fn restore(&self, store: &ParamStore) -> Result<()> {
        for (name, p) in store.iter() {
            let (shape, values) = self
                .arrays
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks parameter {name}")))?;
            if shape.as_slice() != p.var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {shape:?}, model shape {:?}",
                    p.var.dims()
                )));
            }
            store.set(name, &Tensor::from_vec(values.clone(), shape.as_slice(), &Device::Cpu)?)?;
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}
