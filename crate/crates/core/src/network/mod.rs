//! The forecasting network: LSTM and Bi-LSTM layers, dense stack, the
//! assembled model with hand-written backpropagation, and checkpoints.

mod checkpoint;
mod dense;
mod lstm;
mod model;

pub use checkpoint::{layer_spec, load_model, save_model, Checkpoint, LayerSpec, FORMAT_VERSION};
pub use dense::{dense_forward, Activation, DenseCache, DenseParams};
pub use lstm::{bilstm_forward, lstm_cell_step, lstm_forward, BiLstmCache, LstmParams, LstmState, StepCache};
pub use model::{
    init_model, ForwardCache, Gradients, Model, BILSTM_UNITS, DENSE_ACTIVATIONS, DENSE_UNITS, INPUT_FEATURES,
    LSTM_UNITS,
};

use crate::error::Result;

pub fn model_forward(model: &Model, window: &[f64]) -> Result<(f64, ForwardCache)> {
    model.forward(window)
}

pub fn model_backward(model: &Model, cache: &ForwardCache, dl_dpred: f64) -> Result<Gradients> {
    model.backward(cache, dl_dpred)
}
