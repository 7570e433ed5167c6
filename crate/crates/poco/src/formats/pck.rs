//! PCK1 checkpoints.
//!
//! `"PCK1"`, `u32` parameter count, then per parameter: `u16` name
//! length, UTF-8 name, `u8` rank, `u32` extents, `f32` values in
//! row-major order. An optional extension block follows the parameters:
//! `"PCKX"`, `u32` byte length, UTF-8 TOML holding the architecture and
//! training hyperparameters ([`CheckpointMeta`]).

use std::path::Path;

use poco_core::diffcore::{ParamStore, Tensor};
use poco_core::net::Model;
use poco_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use super::{put_f32, put_string16, put_u32, read_file, write_atomic, Reader};
use crate::error::{Error, FormatError, Result};

const MAGIC: &[u8; 4] = b"PCK1";
const EXT_MAGIC: &[u8; 4] = b"PCKX";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// What is needed to rebuild the network and report how it was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Optimizer steps taken before this checkpoint.
    pub step: u64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<NamedTensor>,
    /// Extension block text, kept verbatim so files round-trip exactly.
    pub meta_toml: Option<String>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, meta: &CheckpointMeta) -> Result<Checkpoint> {
        let params = model
            .params
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().iter().map(|&x| x as f32).collect(),
            })
            .collect();
        let meta_toml = toml::to_string(meta)
            .map_err(|e| Error::Config(format!("cannot serialize checkpoint header: {e}")))?;
        Ok(Checkpoint {
            params,
            meta_toml: Some(meta_toml),
        })
    }

    pub fn meta(&self) -> Result<CheckpointMeta> {
        let text = self
            .meta_toml
            .as_deref()
            .ok_or_else(|| Error::Config("checkpoint has no architecture block".into()))?;
        toml::from_str(text)
            .map_err(|e| Error::Config(format!("checkpoint architecture block: {e}")))
    }

    pub fn param_store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for p in &self.params {
            store.add(
                p.name.clone(),
                Tensor::from_vec(&p.shape, p.data.iter().map(|&x| x as f64).collect()),
            );
        }
        store
    }

    /// Rebuilds the model described by the extension block.
    pub fn to_model(&self) -> Result<Model> {
        let meta = self.meta()?;
        Ok(Model::from_params(meta.train.model, self.param_store())?)
    }

    pub fn encode(&self) -> std::result::Result<Vec<u8>, String> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(
            &mut out,
            u32::try_from(self.params.len()).map_err(|_| "too many parameters")?,
        );
        for p in &self.params {
            put_string16(&mut out, &p.name)?;
            let rank = u8::try_from(p.shape.len())
                .map_err(|_| format!("{}: rank {} too large", p.name, p.shape.len()))?;
            out.push(rank);
            for &e in &p.shape {
                put_u32(
                    &mut out,
                    u32::try_from(e).map_err(|_| format!("{}: extent {e} too large", p.name))?,
                );
            }
            if p.shape.iter().product::<usize>() != p.data.len() {
                return Err(format!(
                    "{}: shape {:?} does not match {} values",
                    p.name,
                    p.shape,
                    p.data.len()
                ));
            }
            for &x in &p.data {
                put_f32(&mut out, x);
            }
        }
        if let Some(meta) = &self.meta_toml {
            out.extend_from_slice(EXT_MAGIC);
            put_u32(
                &mut out,
                u32::try_from(meta.len()).map_err(|_| "extension block too large")?,
            );
            out.extend_from_slice(meta.as_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, FormatError> {
        let mut r = Reader::new(bytes, "PCK1");
        r.magic(MAGIC)?;
        let count = r.u32("parameter count")? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string16("parameter name")?;
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("extent")? as usize);
            }
            let at = r.offset();
            let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
            let n = n.filter(|&n| n <= r.remaining() / 4).ok_or_else(|| {
                r.error(
                    at,
                    format!(
                        "truncated values of {name}: shape {shape:?} exceeds the {} bytes left",
                        r.remaining()
                    ),
                )
            })?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f32("value")?);
            }
            params.push(NamedTensor { name, shape, data });
        }
        let meta_toml = if r.is_at_end() {
            None
        } else {
            let at = r.offset();
            let tag = r.take(4, "extension tag")?;
            if tag != EXT_MAGIC {
                return Err(r.error(at, "expected extension block or end of file"));
            }
            let len = r.u32("extension length")? as usize;
            let start = r.offset();
            let text = r.take(len, "extension block")?;
            Some(
                String::from_utf8(text.to_vec())
                    .map_err(|_| r.error(start, "extension block is not UTF-8"))?,
            )
        };
        r.finish()?;
        Ok(Checkpoint { params, meta_toml })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode().map_err(|m| {
            Error::format(
                path,
                FormatError {
                    format: "PCK1",
                    offset: 0,
                    message: m,
                },
            )
        })?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::decode(&read_file(path)?).map_err(|e| Error::format(path, e))
    }
}

/// Writes `model` with its header.
pub fn save_model(model: &Model, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    Checkpoint::from_model(model, meta)?.save(path)
}

/// Loads a checkpoint and rebuilds its model.
pub fn load_model(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let ck = Checkpoint::load(path)?;
    let meta = ck.meta().map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        e => e,
    })?;
    let model = ck.to_model()?;
    Ok((model, meta))
}
