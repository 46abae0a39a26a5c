//! The stacked forecaster: LSTM(4) → Bi-LSTM(4+4) → Dense 8 → 64 → 8 → 1.

use serde::{Deserialize, Serialize};

use super::dense::{dense_backward, dense_forward_cached, Activation, DenseCache, DenseParams};
use super::lstm::{bilstm_backward, bilstm_forward, lstm_backward, lstm_forward, BiLstmCache, LstmParams, StepCache};
use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Vector};

pub const INPUT_FEATURES: usize = 1;
pub const LSTM_UNITS: usize = 4;
pub const BILSTM_UNITS: usize = 4;
/// Widths of the dense stack after the Bi-LSTM, output layer last.
pub const DENSE_UNITS: [usize; 4] = [8, 64, 8, 1];
pub const DENSE_ACTIVATIONS: [Activation; 4] =
    [Activation::Relu, Activation::Relu, Activation::Relu, Activation::Linear];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub window_len: usize,
    pub lstm: LstmParams,
    pub bi_forward: LstmParams,
    pub bi_backward: LstmParams,
    pub dense: Vec<DenseParams>,
}

/// Activations recorded by [`Model::forward`], consumed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub lstm: Vec<StepCache>,
    pub lstm_out: Vec<Vector>,
    pub bilstm: BiLstmCache,
    pub bilstm_out: Vector,
    pub dense: Vec<DenseCache>,
}

impl ForwardCache {
    /// Output shape of each layer as `(steps, width)`; vector outputs have one step.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![
            (self.lstm_out.len(), self.lstm_out[0].len()),
            (1, self.bilstm_out.len()),
        ];
        shapes.extend(self.dense.iter().map(|d| (1, d.output.len())));
        shapes
    }
}

impl Model {
    /// All-zero parameters with the fixed layer layout.
    pub fn zeros(window_len: usize) -> Self {
        let mut dense = Vec::with_capacity(DENSE_UNITS.len());
        let mut width = 2 * BILSTM_UNITS;
        for (&units, &act) in DENSE_UNITS.iter().zip(&DENSE_ACTIVATIONS) {
            dense.push(DenseParams::zeros(width, units, act));
            width = units;
        }
        Self {
            window_len,
            lstm: LstmParams::zeros(LSTM_UNITS, INPUT_FEATURES),
            bi_forward: LstmParams::zeros(BILSTM_UNITS, LSTM_UNITS),
            bi_backward: LstmParams::zeros(BILSTM_UNITS, LSTM_UNITS),
            dense,
        }
    }

    /// Glorot-uniform weights, zero biases except the forget-gate biases,
    /// which start at 1.
    pub fn init(seed: u64, window_len: usize) -> Self {
        let mut m = Self::zeros(window_len);
        let mut rng = SeededRng::new(seed);
        for lstm in [&mut m.lstm, &mut m.bi_forward, &mut m.bi_backward] {
            for w in [&mut lstm.w_i, &mut lstm.w_f, &mut lstm.w_c, &mut lstm.w_o] {
                let bound = glorot_bound(w.cols(), w.rows());
                w.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = rng.uniform_range(-bound, bound));
            }
            lstm.b_f.iter_mut().for_each(|b| *b = 1.0);
        }
        for d in &mut m.dense {
            let bound = glorot_bound(d.w.cols(), d.w.rows());
            d.w.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = rng.uniform_range(-bound, bound));
        }
        m
    }

    /// Checks the layer chain against the fixed layout, naming what differs.
    pub fn validate_layout(&self) -> Result<()> {
        if self.window_len == 0 {
            return Err(Error::Format("window length must be positive".into()));
        }
        self.lstm
            .check_shape(LSTM_UNITS, INPUT_FEATURES)
            .map_err(|e| Error::Format(format!("first lstm layer: {e}")))?;
        for (name, p) in [
            ("bilstm forward", &self.bi_forward),
            ("bilstm backward", &self.bi_backward),
        ] {
            p.check_shape(BILSTM_UNITS, LSTM_UNITS)
                .map_err(|e| Error::Format(format!("{name}: {e}")))?;
        }
        let widths: Vec<usize> = self.dense.iter().map(|d| d.outputs()).collect();
        if widths != DENSE_UNITS {
            return Err(Error::Format(format!(
                "dense widths {}, expected {}",
                join_widths(&widths),
                join_widths(&DENSE_UNITS)
            )));
        }
        let mut width = 2 * BILSTM_UNITS;
        for (k, (d, &act)) in self.dense.iter().zip(&DENSE_ACTIVATIONS).enumerate() {
            if d.inputs() != width || d.b.len() != d.outputs() {
                return Err(Error::Format(format!(
                    "dense layer {k} is {}x{} with bias {}, expected {}x{width}",
                    d.outputs(),
                    d.inputs(),
                    d.b.len(),
                    d.outputs()
                )));
            }
            if d.activation != act {
                return Err(Error::Format(format!(
                    "dense layer {k} activation {:?}, expected {act:?}",
                    d.activation
                )));
            }
            width = d.outputs();
        }
        Ok(())
    }

    pub fn forward(&self, window: &[f64]) -> Result<(f64, ForwardCache)> {
        if window.len() != self.window_len {
            return Err(Error::input(format!(
                "window has {} samples, model expects {}",
                window.len(),
                self.window_len
            )));
        }
        let xs: Vec<&[f64]> = window.chunks(INPUT_FEATURES).collect();
        let (lstm_out, lstm) = lstm_forward(&self.lstm, &xs)?;
        let (bilstm_out, bilstm) = bilstm_forward(&self.bi_forward, &self.bi_backward, &lstm_out)?;
        let mut dense = Vec::with_capacity(self.dense.len());
        let mut v = bilstm_out.clone();
        for d in &self.dense {
            let c = dense_forward_cached(d, &v)?;
            v = c.output.clone();
            dense.push(c);
        }
        let pred = v[0];
        Ok((
            pred,
            ForwardCache {
                lstm,
                lstm_out,
                bilstm,
                bilstm_out,
                dense,
            },
        ))
    }

    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        self.forward(window).map(|(p, _)| p)
    }

    /// Exact gradients of `dl_dpred · prediction` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, dl_dpred: f64) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_accumulate(cache, dl_dpred, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Model::backward`] but adds into an existing gradient buffer.
    pub fn backward_accumulate(&self, cache: &ForwardCache, dl_dpred: f64, grads: &mut Gradients) -> Result<()> {
        if cache.lstm.len() != self.window_len
            || cache.bilstm.forward.len() != self.window_len
            || cache.bilstm.backward.len() != self.window_len
            || cache.dense.len() != self.dense.len()
        {
            return Err(Error::Internal(format!(
                "cache covers {} steps and {} dense layers, model has window {} and {} dense layers",
                cache.lstm.len(),
                cache.dense.len(),
                self.window_len,
                self.dense.len()
            )));
        }
        if cache
            .dense
            .iter()
            .zip(&self.dense)
            .any(|(c, d)| c.input.len() != d.inputs() || c.output.len() != d.outputs())
        {
            return Err(Error::Internal("dense cache widths do not match the model".into()));
        }
        let g = &mut grads.0;

        let mut d = vec![dl_dpred];
        for k in (0..self.dense.len()).rev() {
            d = dense_backward(&self.dense[k], &cache.dense[k], &d, &mut g.dense[k]);
        }

        let dlstm_out = bilstm_backward(
            &self.bi_forward,
            &self.bi_backward,
            &cache.bilstm,
            &d,
            &mut g.bi_forward,
            &mut g.bi_backward,
        );
        lstm_backward(&self.lstm, &cache.lstm, &dlstm_out, &mut g.lstm);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Every parameter block in a fixed order shared with [`Gradients`].
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        out.extend(self.lstm.slices());
        out.extend(self.bi_forward.slices());
        out.extend(self.bi_backward.slices());
        for d in &self.dense {
            out.extend(d.slices());
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        out.extend(self.lstm.slices_mut());
        out.extend(self.bi_forward.slices_mut());
        out.extend(self.bi_backward.slices_mut());
        for d in &mut self.dense {
            out.extend(d.slices_mut());
        }
        out
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.param_slices().concat()
    }
}

pub fn init_model(seed: u64, window_len: usize) -> Model {
    Model::init(seed, window_len)
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn join_widths(w: &[usize]) -> String {
    w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("/")
}

/// Parameter-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(Model);

impl Gradients {
    pub fn zeros_like(m: &Model) -> Self {
        Gradients(Model::zeros(m.window_len))
    }

    pub fn as_model(&self) -> &Model {
        &self.0
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.0.param_slices()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.params_flat()
    }

    pub fn scale(&mut self, s: f64) {
        for block in self.0.param_slices_mut() {
            block.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.0.param_slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn reset(&mut self) {
        self.scale(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Zeroes every gradient except those of the output layer.
    pub fn retain_output_layer(&mut self) {
        let window_len = self.0.window_len;
        let output = self.0.dense.pop().expect("model has dense layers");
        self.0 = Model::zeros(window_len);
        *self.0.dense.last_mut().expect("model has dense layers") = output;
    }
}

impl From<Model> for Gradients {
    fn from(m: Model) -> Self {
        Gradients(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(rng: &mut SeededRng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.uniform()).collect()
    }

    #[test]
    fn layer_widths_follow_layout() {
        let m = init_model(3, 12);
        m.validate_layout().unwrap();
        let mut rng = SeededRng::new(1);
        let (_, cache) = m.forward(&window(&mut rng, 12)).unwrap();
        assert_eq!(
            cache.layer_shapes(),
            vec![(12, 4), (1, 8), (1, 8), (1, 64), (1, 8), (1, 1)]
        );
        assert_eq!(m.param_count(), 96 + 2 * 144 + 72 + 576 + 520 + 9);
    }

    #[test]
    fn zero_model_outputs_final_bias() {
        let mut m = Model::zeros(12);
        m.dense[3].b[0] = 0.375;
        let mut rng = SeededRng::new(2);
        for _ in 0..20 {
            assert_eq!(m.predict(&window(&mut rng, 12)).unwrap(), 0.375);
        }
    }

    #[test]
    fn wrong_window_length() {
        let m = init_model(1, 12);
        assert!(matches!(m.forward(&[0.5; 11]), Err(Error::Input(_))));
    }

    #[test]
    fn init_rules() {
        let a = init_model(99, 12);
        assert_eq!(a, init_model(99, 12));
        assert_ne!(a, init_model(100, 12));
        for l in [&a.lstm, &a.bi_forward, &a.bi_backward] {
            assert!(l.b_f.iter().all(|&b| b == 1.0));
            assert!(l.b_i.iter().chain(l.b_c.iter()).chain(l.b_o.iter()).all(|&b| b == 0.0));
            for w in [&l.w_i, &l.w_f, &l.w_c, &l.w_o] {
                let bound = glorot_bound(w.cols(), w.rows());
                assert!(w.as_slice().iter().all(|v| v.abs() <= bound));
            }
        }
        for d in &a.dense {
            let bound = glorot_bound(d.w.cols(), d.w.rows());
            assert!(d.w.as_slice().iter().all(|v| v.abs() <= bound));
            assert!(d.b.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let m = init_model(8, 12);
        let w: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        assert_eq!(
            m.predict(&w).unwrap().to_bits(),
            init_model(8, 12).predict(&w).unwrap().to_bits()
        );
    }

    #[test]
    fn output_layer_gradient_is_input_times_upstream() {
        let m = init_model(4, 12);
        let mut rng = SeededRng::new(4);
        let (_, cache) = m.forward(&window(&mut rng, 12)).unwrap();
        let g = m.backward(&cache, 2.5).unwrap();
        let last = &g.as_model().dense[3];
        let input = &cache.dense[3].input;
        for (gw, x) in last.w.as_slice().iter().zip(input.iter()) {
            assert_eq!(*gw, 2.5 * x);
        }
        assert_eq!(last.b[0], 2.5);
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let m = init_model(4, 12);
        let other = init_model(4, 6);
        let (_, cache) = other.forward(&[0.1; 6]).unwrap();
        assert!(matches!(m.backward(&cache, 1.0), Err(Error::Internal(_))));
    }

    #[test]
    fn validate_reports_dense_widths() {
        let mut m = Model::zeros(12);
        m.dense[1] = DenseParams::zeros(8, 32, Activation::Relu);
        m.dense[2] = DenseParams::zeros(32, 8, Activation::Relu);
        let msg = m.validate_layout().unwrap_err().to_string();
        assert!(msg.contains("8/32/8/1") && msg.contains("8/64/8/1"), "{msg}");
    }
}
