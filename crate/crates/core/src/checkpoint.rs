//! JSON checkpoints. Doubles are written in shortest round-trip form, so a
//! save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::embedding::Vocab;
use crate::model::{Model, ModelConfig};
use crate::numerics::Array;
use crate::training::{AdamState, Trainer};
use crate::util::write_atomic;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    /// Fine-grained relation inventory, NA first.
    pub relations: Vec<String>,
    pub params: Vec<NamedTensor>,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer, vocab: &Vocab, relations: &[String]) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            train: trainer.config.clone(),
            model: trainer.model.config.clone(),
            vocab: vocab.tokens().to_vec(),
            relations: relations.to_vec(),
            params: trainer
                .model
                .store
                .iter()
                .map(|(_, name, a)| NamedTensor {
                    name: name.to_string(),
                    shape: a.shape().to_vec(),
                    values: a.data().to_vec(),
                })
                .collect(),
            adam: trainer.adam.clone(),
            epoch: trainer.epoch,
        }
    }

    pub fn model(&self) -> Result<Model> {
        let parts = self
            .params
            .iter()
            .map(|t| {
                Array::new(t.shape.clone(), t.values.clone())
                    .map(|a| (t.name.clone(), a))
                    .map_err(|e| Error::input(format!("checkpoint tensor {}: {e}", t.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        Model::from_parts(self.model.clone(), parts)
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::from_tokens(self.vocab.clone())
    }

    /// Trainer positioned after `epoch` completed epochs.
    pub fn trainer(&self) -> Result<Trainer> {
        let model = self.model()?;
        if !self.adam.matches(&model.store) {
            return Err(Error::input("optimizer state does not match the parameters"));
        }
        Ok(Trainer {
            model,
            adam: self.adam.clone(),
            config: self.train.clone(),
            epoch: self.epoch,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::input(format!("checkpoint: {e}")))?;
        if c.format_version != FORMAT_VERSION {
            return Err(Error::input(format!("unsupported checkpoint version {}", c.format_version)));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| w.write_all(self.to_json().as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Input(m) => Error::input(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
