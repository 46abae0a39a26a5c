//! Self-describing JSON checkpoints with lineage hashes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dense::{Activation, DenseParams};
use super::lstm::LstmParams;
use super::model::{Model, BILSTM_UNITS, DENSE_ACTIVATIONS, DENSE_UNITS, INPUT_FEATURES, LSTM_UNITS};
use crate::error::{Error, Result};
use crate::pipeline::Scaler;
use crate::training::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Lstm {
        units: usize,
        inputs: usize,
        return_sequences: bool,
    },
    Bilstm {
        units: usize,
        inputs: usize,
        merge: String,
    },
    Dense {
        units: usize,
        inputs: usize,
        activation: Activation,
    },
}

/// The fixed layer chain, input side first.
pub fn layer_spec() -> Vec<LayerSpec> {
    let mut spec = vec![
        LayerSpec::Lstm {
            units: LSTM_UNITS,
            inputs: INPUT_FEATURES,
            return_sequences: true,
        },
        LayerSpec::Bilstm {
            units: BILSTM_UNITS,
            inputs: LSTM_UNITS,
            merge: "concat".into(),
        },
    ];
    let mut width = 2 * BILSTM_UNITS;
    for (&units, &activation) in DENSE_UNITS.iter().zip(&DENSE_ACTIVATIONS) {
        spec.push(LayerSpec::Dense {
            units,
            inputs: width,
            activation,
        });
        width = units;
    }
    spec
}

#[derive(Serialize, Deserialize)]
struct Parameters {
    lstm: LstmParams,
    bilstm_forward: LstmParams,
    bilstm_backward: LstmParams,
    dense: Vec<DenseParams>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format_version: u32,
    #[serde(rename = "L")]
    window_len: usize,
    layer_spec: Vec<LayerSpec>,
    parameters: Parameters,
    scaler: Scaler,
    train_config: TrainConfig,
    parent_checkpoint_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub scaler: Scaler,
    pub train_config: TrainConfig,
    pub parent_checkpoint_hash: Option<String>,
}

impl Checkpoint {
    pub fn new(
        model: Model,
        scaler: Scaler,
        train_config: TrainConfig,
        parent_checkpoint_hash: Option<String>,
    ) -> Self {
        Self {
            model,
            scaler,
            train_config,
            parent_checkpoint_hash,
        }
    }

    /// Pretty-printed JSON. Floats use the shortest representation that
    /// parses back to the same bits.
    pub fn to_json(&self) -> String {
        let m = &self.model;
        let doc = Document {
            format_version: FORMAT_VERSION,
            window_len: m.window_len,
            layer_spec: layer_spec(),
            parameters: Parameters {
                lstm: m.lstm.clone(),
                bilstm_forward: m.bi_forward.clone(),
                bilstm_backward: m.bi_backward.clone(),
                dense: m.dense.clone(),
            },
            scaler: self.scaler,
            train_config: self.train_config.clone(),
            parent_checkpoint_hash: self.parent_checkpoint_hash.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("checkpoint serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        if doc.layer_spec != layer_spec() {
            return Err(Error::Format(format!(
                "layer_spec {:?} does not match this model",
                doc.layer_spec
            )));
        }
        if doc.window_len != doc.train_config.window_len {
            return Err(Error::Format(format!(
                "L = {} but train_config says {}",
                doc.window_len, doc.train_config.window_len
            )));
        }
        if doc.scaler.max.partial_cmp(&doc.scaler.min) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Format(format!(
                "scaler min {} is not below max {}",
                doc.scaler.min, doc.scaler.max
            )));
        }
        let p = doc.parameters;
        let model = Model {
            window_len: doc.window_len,
            lstm: p.lstm,
            bi_forward: p.bilstm_forward,
            bi_backward: p.bilstm_backward,
            dense: p.dense,
        };
        model.validate_layout()?;
        Ok(Self {
            model,
            scaler: doc.scaler,
            train_config: doc.train_config,
            parent_checkpoint_hash: doc.parent_checkpoint_hash,
        })
    }

    /// SHA-256 of the serialised document, lowercase hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Unreadable or unparsable files are load errors; a well-formed file
    /// describing the wrong network is a format error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: format!("not a checkpoint document: {e}"),
        })?;
        if !value.is_object() {
            return Err(Error::Load {
                path: path.to_path_buf(),
                reason: "not a checkpoint document: top level is not an object".into(),
            });
        }
        Self::from_json(&text)
    }
}

pub fn save_model(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_model(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
