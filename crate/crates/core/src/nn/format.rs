//! Binary model format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic          b"SWNM"
//! version        u32        (currently 1)
//! meta_len       u32        followed by meta_len bytes of JSON metadata
//! layer_count    u32
//! per layer      tag u8 (0 dense, 1 conv1d, 2 global-avg-pool)
//!                act u8 (0 relu, 1 identity; pool writes 1)
//!                dense: in u32, out u32 / conv: filters u32, kernel u32
//! param_count    u64
//! parameters     param_count x f64, layer order, weights then bias
//! checksum       u32 CRC-32 (IEEE) over all preceding bytes
//! ```

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Activation, Conv1dLayer, DenseLayer, Layer, Network};

pub const MODEL_MAGIC: &[u8; 4] = b"SWNM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFormatError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("model format version {found} is newer than supported version {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("checksum mismatch; file is corrupted")]
    ChecksumMismatch,
    #[error("file is truncated")]
    Truncated,
    #[error("malformed metadata block: {0}")]
    BadMeta(String),
    #[error("unknown layer tag {0}")]
    BadLayerTag(u8),
    #[error("unknown activation tag {0}")]
    BadActivationTag(u8),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Descriptive metadata stored with a model.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelMeta {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine_id: Option<String>,
    /// SNR label of the training stratum, e.g. "6dB".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_snr: Option<String>,
    /// Class-index to label mapping for classifiers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_classes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u64>,
}

impl ModelMeta {
    pub fn new(kind: &str) -> Self {
        ModelMeta {
            kind: kind.to_string(),
            ..ModelMeta::default()
        }
    }
}

/// Serializes a network and its metadata to `path`. Round-trips bit-exactly.
pub fn save_model(net: &Network, meta: &ModelMeta, path: &Path) -> Result<(), ModelFormatError> {
    let bytes = encode(net, meta)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Reads a network and its metadata back from `path`.
pub fn load_model(path: &Path) -> Result<(Network, ModelMeta), ModelFormatError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn encode(net: &Network, meta: &ModelMeta) -> Result<Vec<u8>, ModelFormatError> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());

    let meta_json =
        serde_json::to_vec(meta).map_err(|e| ModelFormatError::BadMeta(e.to_string()))?;
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);

    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for layer in &net.layers {
        match layer {
            Layer::Dense(d) => {
                out.push(0);
                out.push(activation_tag(d.activation));
                out.extend_from_slice(&(d.in_dim as u32).to_le_bytes());
                out.extend_from_slice(&(d.out_dim as u32).to_le_bytes());
            }
            Layer::Conv1d(c) => {
                out.push(1);
                out.push(activation_tag(c.activation));
                out.extend_from_slice(&(c.n_filters as u32).to_le_bytes());
                out.extend_from_slice(&(c.kernel_len as u32).to_le_bytes());
            }
            Layer::GlobalAvgPool => {
                out.push(2);
                out.push(activation_tag(Activation::Identity));
            }
        }
    }

    out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for layer in &net.layers {
        let (w, b): (&[f64], &[f64]) = match layer {
            Layer::Dense(d) => (&d.weights, &d.bias),
            Layer::Conv1d(c) => (&c.kernels, &c.bias),
            Layer::GlobalAvgPool => (&[], &[]),
        };
        for v in w.iter().chain(b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Network, ModelMeta), ModelFormatError> {
    let mut r = Cursor { bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC.as_slice() {
        return Err(ModelFormatError::BadMagic);
    }
    let version = r.u32()?;
    if version > MODEL_FORMAT_VERSION {
        return Err(ModelFormatError::UnsupportedVersion {
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }

    let meta_len = r.u32()? as usize;
    let meta: ModelMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| ModelFormatError::BadMeta(e.to_string()))?;

    let layer_count = r.u32()? as usize;
    let mut descriptors = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let tag = r.u8()?;
        let act = match r.u8()? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            other => return Err(ModelFormatError::BadActivationTag(other)),
        };
        let dims = match tag {
            0 | 1 => Some((r.u32()? as usize, r.u32()? as usize)),
            2 => None,
            other => return Err(ModelFormatError::BadLayerTag(other)),
        };
        descriptors.push((tag, act, dims));
    }

    let declared_params = r.u64()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    let mut total = 0usize;
    for (tag, act, dims) in descriptors {
        let layer = match tag {
            0 => {
                let (in_dim, out_dim) = dims.unwrap();
                let mut d = DenseLayer::zeros(in_dim, out_dim, act);
                for w in d.weights.iter_mut().chain(d.bias.iter_mut()) {
                    *w = r.f64()?;
                }
                total += d.weights.len() + d.bias.len();
                Layer::Dense(d)
            }
            1 => {
                let (n_filters, kernel_len) = dims.unwrap();
                let mut c = Conv1dLayer::zeros(n_filters, kernel_len, act);
                for w in c.kernels.iter_mut().chain(c.bias.iter_mut()) {
                    *w = r.f64()?;
                }
                total += c.kernels.len() + c.bias.len();
                Layer::Conv1d(c)
            }
            _ => Layer::GlobalAvgPool,
        };
        layers.push(layer);
    }
    if total != declared_params {
        return Err(ModelFormatError::Truncated);
    }

    // Checksum covers everything before the trailing u32.
    let body_end = r.pos;
    let stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(ModelFormatError::Truncated);
    }
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(ModelFormatError::ChecksumMismatch);
    }

    Ok((Network::new(layers), meta))
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Identity => 1,
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelFormatError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelFormatError::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelFormatError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelFormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelFormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelFormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
