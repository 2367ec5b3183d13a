use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Block, PolicyDims, PolicyParameters};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "hoprouter-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON parameter checkpoint: dims, one flat array per named block, and
/// optional run metadata. 64-bit values round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dims: PolicyDims,
    pub blocks: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn from_params(params: &PolicyParameters, run: Option<serde_json::Value>) -> Self {
        let blocks = Block::ALL
            .iter()
            .map(|b| (b.name().to_string(), params.block(*b).to_vec()))
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dims: params.dims(),
            blocks,
            run,
        }
    }

    pub fn params(&self) -> Result<PolicyParameters> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut p = PolicyParameters::zeros(self.dims);
        for b in Block::ALL {
            let values = self
                .blocks
                .get(b.name())
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing block {}", b.name())))?;
            let dst = p.block_mut(b);
            if dst.len() != values.len() {
                return Err(Error::CheckpointMismatch(format!(
                    "block {} has {} values, dims require {}",
                    b.name(),
                    values.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(values);
        }
        if self.blocks.len() != Block::ALL.len() {
            return Err(Error::CheckpointMismatch("unexpected extra blocks".into()));
        }
        if !p.is_finite() {
            return Err(Error::CheckpointMismatch("non-finite parameter".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::CheckpointMismatch(format!("{}: {e}", path.display())))
    }
}
