//! JSON checkpoints: run configuration, step, parameters grouped into
//! named sections, and optimizer state. Floats round-trip exactly, so a
//! restored run continues bit-for-bit.
//!
//! Structural choices made from the seed at construction (permutations and
//! signs of the 1×1 layers, AR masks) are not stored; they are rebuilt by
//! constructing the model from the saved config and seed before the
//! parameters are restored.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::run::RunConfig;

pub const FORMAT: &str = "softflow-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model_kind: String,
    pub config: RunConfig,
    pub step: u64,
    /// Parameters keyed by the prefix of their name before the first `.`.
    pub sections: BTreeMap<String, Vec<ParamRecord>>,
    pub optimizer: AdamState,
}

fn section_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

impl Checkpoint {
    pub fn capture(config: &RunConfig, step: u64, store: &ParamStore, optimizer: &AdamState) -> Self {
        let mut sections: BTreeMap<String, Vec<ParamRecord>> = BTreeMap::new();
        for e in store.entries() {
            sections
                .entry(section_of(&e.name).to_string())
                .or_default()
                .push(ParamRecord {
                    name: e.name.clone(),
                    shape: e.tensor.shape().to_vec(),
                    data: e.tensor.data().to_vec(),
                });
        }
        Self {
            format: FORMAT.into(),
            version: VERSION,
            model_kind: config.kind.name().into(),
            config: config.clone(),
            step,
            sections,
            optimizer: optimizer.clone(),
        }
    }

    /// Overwrites every parameter of `store` from the matching record.
    /// Names and shapes must agree exactly in both directions.
    pub fn restore_params(&self, store: &mut ParamStore) -> Result<()> {
        let records: BTreeMap<&str, &ParamRecord> = self
            .sections
            .values()
            .flatten()
            .map(|r| (r.name.as_str(), r))
            .collect();
        if records.len() != store.len() {
            return Err(Error::Invalid(format!(
                "checkpoint holds {} parameters, model has {}",
                records.len(),
                store.len()
            )));
        }
        for e in store.entries_mut() {
            let r = records
                .get(e.name.as_str())
                .ok_or_else(|| Error::Invalid(format!("checkpoint lacks parameter `{}`", e.name)))?;
            if r.shape != e.tensor.shape() || r.data.len() != e.tensor.len() {
                return Err(Error::Invalid(format!(
                    "parameter `{}` has shape {:?} in the checkpoint, {:?} in the model",
                    e.name,
                    r.shape,
                    e.tensor.shape()
                )));
            }
            if r.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint parameter `{}`", e.name)));
            }
            e.tensor.data_mut().copy_from_slice(&r.data);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Parse {
                path: path.display().to_string(),
                msg: format!("unsupported checkpoint format {} v{}", ck.format, ck.version),
            });
        }
        Ok(ck)
    }
}
