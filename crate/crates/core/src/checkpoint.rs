//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `FUDM`, u32 version, u32 header length,
//! UTF-8 JSON header, u32 blob count, then per blob a u16 name length, the
//! name, a u32 element count and that many f32 values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelDims;
use crate::data::Reader;
use crate::detector::DetectorMode;
use crate::error::{Error, Result};
use crate::membership::DOMAIN_NAMES;
use crate::numcore::{ParamStore, Real, Tensor};

const MAGIC: &[u8; 4] = b"FUDM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Membership,
    Detector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    /// Detector mode; absent for membership checkpoints.
    pub mode: Option<DetectorMode>,
    pub experts: usize,
    pub dims: ModelDims,
    pub domains: Vec<String>,
    /// Whether a frozen membership model is embedded under `membership.`.
    pub has_membership: bool,
}

impl CheckpointHeader {
    pub fn new(kind: ModelKind, mode: Option<DetectorMode>, dims: &ModelDims, has_membership: bool) -> Self {
        CheckpointHeader {
            kind,
            mode,
            experts: dims.experts,
            dims: dims.clone(),
            domains: DOMAIN_NAMES.iter().map(|s| s.to_string()).collect(),
            has_membership,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub blobs: Vec<(String, Vec<f32>)>,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, data) in &self.blobs {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("parameter name too long: {name}")))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(data.len() as u32).to_le_bytes());
            for x in data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn decode(bytes: &[u8], what: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, what);
        let wrap = |e: Error| Error::Checkpoint(e.to_string());
        if r.take(4).map_err(wrap)? != MAGIC {
            return Err(Error::Checkpoint(format!("{what}: not a model checkpoint")));
        }
        let version = r.u32().map_err(wrap)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("{what}: unsupported version {version}")));
        }
        let hlen = r.u32().map_err(wrap)? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen).map_err(wrap)?)
            .map_err(|e| Error::Checkpoint(format!("{what}: bad header: {e}")))?;
        if header.domains != DOMAIN_NAMES {
            return Err(Error::Checkpoint(format!("{what}: unexpected domain list {:?}", header.domains)));
        }
        let count = r.u32().map_err(wrap)? as usize;
        let mut blobs = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u16().map_err(wrap)? as usize;
            let name = r.string(n).map_err(wrap)?;
            let len = r.u32().map_err(wrap)? as usize;
            blobs.push((name, r.f32s(len).map_err(wrap)?));
        }
        r.finish().map_err(wrap)?;
        Ok(Checkpoint { header, blobs })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, &path.display().to_string())
    }

    /// Appends every tensor of `store` as `prefix + name`.
    pub fn push_store<S: Real>(&mut self, prefix: &str, store: &ParamStore<S>) {
        for (_, name, value) in store.iter() {
            self.blobs
                .push((format!("{prefix}{name}"), value.data().iter().map(|x| x.to_f32_lossy()).collect()));
        }
    }

    /// Overwrites every tensor of `store` from the blob `prefix + name`.
    /// Every blob with that prefix must be consumed.
    pub fn fill_store<S: Real>(&self, prefix: &str, store: &mut ParamStore<S>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in &ids {
            let full = format!("{prefix}{}", store.name(*id));
            let (_, data) = self
                .blobs
                .iter()
                .find(|(n, _)| *n == full)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {full}")))?;
            let shape = store.get(*id).shape().to_vec();
            if data.len() != store.get(*id).len() {
                return Err(Error::Checkpoint(format!(
                    "parameter {full} has {} values, expected shape {shape:?}",
                    data.len()
                )));
            }
            let values: Vec<S> = data.iter().map(|&x| S::lit(x as f64)).collect();
            store.set(*id, Tensor::new(shape, values)?)?;
        }
        let expected = self.blobs.iter().filter(|(n, _)| n.starts_with(prefix)).count();
        let nested = if prefix.is_empty() {
            self.blobs.iter().filter(|(n, _)| n.starts_with(crate::detector::MEMBERSHIP_PREFIX)).count()
        } else {
            0
        };
        if expected - nested != ids.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters under {prefix:?}, model expects {}",
                expected - nested,
                ids.len()
            )));
        }
        Ok(())
    }
}
