//! Single-file checkpoints.
//!
//! ```text
//! magic      8 bytes   "LDSGCKPT"
//! version    u32 LE
//! header_len u64 LE
//! header     JSON: format version, model config, config echo, iteration,
//!            optimizer step and the ordered tensor table
//! payload    f64 LE values of every table entry, in table order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset_io::write_atomic;
use crate::error::{Error, Result};
use crate::graph::{Buffer, Param, ParamSet};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LDSGCKPT";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: u64 = 64 << 20;

/// Adam moments, indexed like `ParamSet::params`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Echo of the run configuration that produced the checkpoint.
    pub config_echo: serde_json::Value,
    /// Number of completed training iterations.
    pub iteration: u64,
    pub params: ParamSet,
    pub optimizer: Option<AdamState>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    kind: Kind,
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pretrained: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    model: ModelConfig,
    config: serde_json::Value,
    iteration: u64,
    adam_step: Option<u64>,
    tensors: Vec<Entry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_model(model: &Model, optimizer: Option<&AdamState>, iteration: u64, config_echo: serde_json::Value) -> Self {
        Self {
            model: model.config().clone(),
            config_echo,
            iteration,
            params: model.params().clone(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut payload: Vec<&[f64]> = Vec::new();
        for p in &self.params.params {
            tensors.push(Entry {
                name: p.name.clone(),
                kind: Kind::Param,
                shape: p.value.shape().to_vec(),
                pretrained: p.pretrained,
            });
            payload.push(p.value.data());
        }
        for b in &self.params.buffers {
            tensors.push(Entry {
                name: b.name.clone(),
                kind: Kind::Buffer,
                shape: vec![b.value.len()],
                pretrained: false,
            });
            payload.push(&b.value);
        }
        if let Some(opt) = &self.optimizer {
            for (kind, moments) in [(Kind::AdamM, &opt.m), (Kind::AdamV, &opt.v)] {
                for (p, values) in self.params.params.iter().zip(moments) {
                    tensors.push(Entry {
                        name: p.name.clone(),
                        kind,
                        shape: vec![values.len()],
                        pretrained: false,
                    });
                    payload.push(values);
                }
            }
        }
        let header = Header {
            version: FORMAT_VERSION,
            model: self.model.clone(),
            config: self.config_echo.clone(),
            iteration: self.iteration,
            adam_step: self.optimizer.as_ref().map(|o| o.step),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * payload.iter().map(|p| p.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for values in payload {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let rest = &bytes[20..];
        if header_len > MAX_HEADER || header_len as usize > rest.len() {
            return Err(bad("truncated header"));
        }
        let (json, payload) = rest.split_at(header_len as usize);
        let header: Header = serde_json::from_slice(json)?;
        if header.version != FORMAT_VERSION {
            return Err(bad(format!("header version {} does not match", header.version)));
        }

        let mut needed = 0usize;
        for e in &header.tensors {
            let n = e
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| bad(format!("tensor `{}` is too large", e.name)))?;
            needed = needed
                .checked_add(n)
                .filter(|&t| t <= payload.len() / 8)
                .ok_or_else(|| bad("payload shorter than the tensor table"))?;
        }
        if needed * 8 != payload.len() {
            return Err(bad("payload length does not match the tensor table"));
        }

        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut params = ParamSet::default();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for e in header.tensors {
            let len: usize = e.shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(len).collect();
            match e.kind {
                Kind::Param => {
                    let shape: [usize; 4] = e
                        .shape
                        .as_slice()
                        .try_into()
                        .map_err(|_| bad(format!("parameter `{}` is not 4-dimensional", e.name)))?;
                    params.params.push(Param {
                        name: e.name,
                        value: Tensor::new(shape, data)?,
                        pretrained: e.pretrained,
                    });
                }
                Kind::Buffer => params.buffers.push(Buffer { name: e.name, value: data }),
                Kind::AdamM => m.push((e.name, data)),
                Kind::AdamV => v.push((e.name, data)),
            }
        }
        let optimizer = match header.adam_step {
            None if m.is_empty() && v.is_empty() => None,
            None => return Err(bad("optimizer moments without a step count")),
            Some(step) => {
                let order = |moments: Vec<(String, Vec<f64>)>| -> Result<Vec<Vec<f64>>> {
                    if moments.len() != params.params.len() {
                        return Err(bad("optimizer state does not cover every parameter"));
                    }
                    moments
                        .into_iter()
                        .zip(&params.params)
                        .map(|((name, data), p)| {
                            if name != p.name || data.len() != p.value.len() {
                                Err(bad(format!("optimizer state for `{name}` does not match")))
                            } else {
                                Ok(data)
                            }
                        })
                        .collect()
                };
                Some(AdamState {
                    step,
                    m: order(m)?,
                    v: order(v)?,
                })
            }
        };
        Ok(Self {
            model: header.model,
            config_echo: header.config,
            iteration: header.iteration,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    /// Rebuilds the model, checking every stored tensor against the
    /// architecture described by the stored config.
    pub fn restore_model(&self) -> Result<Model> {
        let mut model = Model::new(self.model.clone())?;
        let target = model.params_mut();
        if target.params.len() != self.params.params.len() || target.buffers.len() != self.params.buffers.len() {
            return Err(bad("tensor count does not match the model configuration"));
        }
        for (dst, src) in target.params.iter_mut().zip(&self.params.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(bad(format!("parameter `{}` does not match `{}`", src.name, dst.name)));
            }
            dst.value = src.value.clone();
            dst.pretrained = src.pretrained;
        }
        for (dst, src) in target.buffers.iter_mut().zip(&self.params.buffers) {
            if dst.name != src.name || dst.value.len() != src.value.len() {
                return Err(bad(format!("buffer `{}` does not match `{}`", src.name, dst.name)));
            }
            dst.value = src.value.clone();
        }
        Ok(model)
    }
}
