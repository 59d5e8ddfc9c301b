use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FeatureTransform;
use crate::error::{Error, Result};
use crate::models::{AggregatorConfig, Model};
use crate::numerics::{ParamStore, Tensor};
use crate::scalar::Scalar;

pub const SNAPSHOT_FORMAT: &str = "setchoice-model";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    d: usize,
    config: AggregatorConfig,
    transform: Option<FeatureTransform>,
    parameters: Vec<ParamEntry>,
}

impl<S: Scalar> Model<S> {
    pub fn to_json(&self) -> Result<String> {
        let parameters = self
            .params()
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
            })
            .collect();
        let snap = Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            d: self.d(),
            config: self.config().clone(),
            transform: self.transform().cloned(),
            parameters,
        };
        Ok(serde_json::to_string_pretty(&snap)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        let version = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != SNAPSHOT_VERSION {
            return Err(Error::SnapshotVersion { found: version, expected: SNAPSHOT_VERSION });
        }
        let snap: Snapshot = serde_json::from_value(probe)?;
        if snap.format != SNAPSHOT_FORMAT {
            return Err(Error::Parse(format!("not a model snapshot (format `{}`)", snap.format)));
        }
        let mut params = ParamStore::new();
        for p in snap.parameters {
            params.insert(p.name, Tensor::new(p.shape, p.values.into_iter().map(S::of).collect())?);
        }
        Model::from_parts(snap.config, snap.d, params, snap.transform)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
