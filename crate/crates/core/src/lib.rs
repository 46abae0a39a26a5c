//! Blood glucose forecasting from continuous glucose monitor history with a
//! small LSTM + Bi-LSTM network, trained by pre-training on pooled data and
//! fine-tuning per patient.
//!
//! The modules follow the data flow: [`pipeline`] turns raw CGM files into
//! scaled windows, [`network`] and [`training`] fit the model, [`metrics`]
//! and [`baselines`] evaluate it. [`synth`] generates simulated subjects.

pub mod baselines;
pub mod error;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod pipeline;
pub mod plot;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
