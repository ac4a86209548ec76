//! Self-describing JSON model checkpoints.
//!
//! The payload (model, seed, normalizer) is hashed with SHA-256 and the hash
//! stored alongside it; loading recomputes and compares the hash. Floats are
//! written in shortest round-trip form, so save → load → save is byte-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Architecture, SuperNet};
use crate::data::Normalizer;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "tabgns-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CheckpointModel {
    SuperNet(SuperNet),
    Architecture(Architecture),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub model: CheckpointModel,
    pub normalizer: Option<Normalizer>,
    pub checksum: String,
}

#[derive(Serialize)]
struct Payload<'a> {
    seed: u64,
    model: &'a CheckpointModel,
    normalizer: &'a Option<Normalizer>,
}

fn payload_hash(seed: u64, model: &CheckpointModel, normalizer: &Option<Normalizer>) -> String {
    let bytes = serde_json::to_vec(&Payload {
        seed,
        model,
        normalizer,
    })
    .expect("checkpoint payload serializes");
    hex::encode(Sha256::digest(&bytes))
}

impl Checkpoint {
    pub fn new(seed: u64, model: CheckpointModel, normalizer: Option<Normalizer>) -> Self {
        let checksum = payload_hash(seed, &model, &normalizer);
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            seed,
            model,
            normalizer,
            checksum,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Integrity(format!("unreadable checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Integrity(format!(
                "unsupported checkpoint format '{}' (expected '{CHECKPOINT_FORMAT}')",
                ck.format
            )));
        }
        let expected = payload_hash(ck.seed, &ck.model, &ck.normalizer);
        if expected != ck.checksum {
            return Err(Error::Integrity("checksum mismatch".into()));
        }
        ck.validate()?;
        Ok(ck)
    }

    fn validate(&self) -> Result<()> {
        let as_integrity = |e: Error| Error::Integrity(format!("inconsistent model: {e}"));
        match &self.model {
            CheckpointModel::SuperNet(net) => {
                SuperNet::from_parts(net.space, net.layers.clone(), net.gates.clone(), net.seed)
                    .map_err(as_integrity)?;
            }
            CheckpointModel::Architecture(arch) => {
                let rebuilt = Architecture::from_layers(arch.space, arch.layers.clone()).map_err(as_integrity)?;
                if rebuilt.hidden_widths() != arch.hidden_widths() {
                    return Err(Error::Integrity("kept indices disagree with layer shapes".into()));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
