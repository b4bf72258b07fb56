//! Checkpoint files: `DWIQACK1\n`, one line of JSON header, then the weights
//! as little-endian `f32`.

use std::path::Path;

use dwiqa_core::dataset::TaskSpec;
use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::model::Model;
use crate::train::TrainConfig;
use crate::{Error, Result};

const MAGIC: &[u8] = b"DWIQACK1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    LastEpoch,
    BestVal,
}

impl CheckpointKind {
    pub fn name(self) -> &'static str {
        match self {
            CheckpointKind::LastEpoch => "last_epoch",
            CheckpointKind::BestVal => "best_val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    pub arch: ArchSpec,
    pub task: TaskSpec,
    pub input_rows: usize,
    pub input_cols: usize,
    /// 1-based epoch the weights come from.
    pub epoch: usize,
    pub train_loss_history: Vec<f64>,
    pub val_loss_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<f32>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::from_params(
            &self.meta.arch,
            self.meta.task,
            self.meta.input_rows,
            self.meta.input_cols,
            self.params.clone(),
        )
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.params.len() != self.meta.param_count {
            return Err(Error::Checkpoint(format!(
                "header declares {} weights, payload has {}",
                self.meta.param_count,
                self.params.len()
            )));
        }
        let mut out = MAGIC.to_vec();
        out.extend(serde_json::to_vec(&self.meta)?);
        out.push(b'\n');
        out.reserve(self.params.len() * 4);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Checkpoint("missing DWIQACK1 magic".into()))?;
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("unterminated header".into()))?;
        let meta: CheckpointMeta = serde_json::from_slice(&rest[..nl])
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let payload = &rest[nl + 1..];
        if payload.len() != meta.param_count * 4 {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, header declares {} weights",
                payload.len(),
                meta.param_count
            )));
        }
        let params: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Checkpoint(format!("weight {i} is not finite")));
        }
        let ck = Self { meta, params };
        // Confirms the architecture really has that many parameters.
        ck.model()?;
        Ok(ck)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Family;
    use dwiqa_core::dataset::TaskMode;
    use dwiqa_core::Artifact;

    fn sample() -> Checkpoint {
        let task = TaskSpec::new(Artifact::Hypo, TaskMode::Binary);
        let spec = ArchSpec::new(Family::MiniSe);
        let model = Model::with_input(&spec, task, 64, 64, 5).unwrap();
        Checkpoint {
            meta: CheckpointMeta {
                kind: CheckpointKind::BestVal,
                arch: spec,
                task,
                input_rows: 64,
                input_cols: 64,
                epoch: 3,
                train_loss_history: vec![0.9, 0.7, 0.6],
                val_loss_history: vec![0.8, 0.75, 0.7],
                train_config: None,
                param_count: model.params.len(),
            },
            params: model.params,
        }
    }

    #[test]
    fn roundtrip() {
        let ck = sample();
        let bytes = ck.encode().unwrap();
        assert!(bytes.starts_with(b"DWIQACK1\n"));
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), ck);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        ck.write(&p).unwrap();
        assert_eq!(Checkpoint::read(&p).unwrap(), ck);
    }

    #[test]
    fn rejects_corruption() {
        let ck = sample();
        let bytes = ck.encode().unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::decode(&bytes[1..]).is_err());
        let mut wrong = ck.clone();
        wrong.meta.param_count += 1;
        wrong.params.push(0.0);
        assert!(Checkpoint::decode(&wrong.encode().unwrap()).is_err());
    }
}
