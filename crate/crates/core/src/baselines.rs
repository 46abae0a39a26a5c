//! Comparison forecasters: ARI(p, d) fitted by least squares, a linear
//! ε-insensitive SVR on the lag window, and zero-order hold.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport, WindowPredictor};
use crate::numerics::{dot, SeededRng};
use crate::pipeline::{
    chrono_split, fit_scaler_for_split, horizon_steps, make_windows, train_sample_span, Scaler, SubDataset, WindowSet,
    TRAIN_FRACTION,
};

/// Autoregressive model on the `d`-times differenced series. Only ARI(p, d)
/// is supported: no moving-average part. The intercept is estimated only
/// when `d == 0`; differenced models carry no drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub p: usize,
    pub d: usize,
    /// Lag coefficients, most recent lag first.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl ArimaModel {
    pub fn label(&self) -> String {
        format!("ARI({},{})", self.p, self.d)
    }
}

fn difference(series: &[f64], d: usize) -> Vec<f64> {
    let mut out = series.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    out
}

pub fn arima_fit(series: &[f64], p: usize, d: usize) -> Result<ArimaModel> {
    if d > 1 {
        return Err(Error::Config(format!("differencing order {d} unsupported (0 or 1)")));
    }
    if series.len() <= p + d + 10 {
        return Err(Error::input(format!(
            "ARI({p},{d}) needs more than {} samples, got {}",
            p + d + 10,
            series.len()
        )));
    }
    let z = difference(series, d);
    let with_intercept = d == 0;
    let cols = p + usize::from(with_intercept);
    if cols == 0 {
        return Ok(ArimaModel {
            p,
            d,
            coefficients: Vec::new(),
            intercept: 0.0,
        });
    }

    let rows = z.len() - p;
    let x = DMatrix::from_fn(rows, cols, |r, c| {
        let t = r + p;
        if c < p {
            z[t - 1 - c]
        } else {
            1.0
        }
    });
    let y = DVector::from_iterator(rows, z[p..].iter().copied());
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let beta = xtx
        .clone()
        .cholesky()
        .map(|c| c.solve(&xty))
        .ok_or_else(|| Error::Fit(format!("singular normal equations fitting ARI({p},{d})")))?;
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Fit(format!("non-finite coefficients fitting ARI({p},{d})")));
    }
    Ok(ArimaModel {
        p,
        d,
        coefficients: beta.iter().take(p).copied().collect(),
        intercept: if with_intercept { beta[p] } else { 0.0 },
    })
}

/// Iterates the recurrence `k` steps past the end of `history`, feeding
/// forecasts back in, and returns the `k`-step value.
pub fn arima_forecast(m: &ArimaModel, history: &[f64], k: usize) -> Result<f64> {
    if history.len() < m.p + m.d || history.is_empty() {
        return Err(Error::input(format!(
            "{} forecast needs at least {} history samples, got {}",
            m.label(),
            (m.p + m.d).max(1),
            history.len()
        )));
    }
    let last = *history.last().expect("nonempty");
    if k == 0 {
        return Ok(last);
    }
    let mut z = difference(history, m.d);
    let mut level = last;
    for _ in 0..k {
        let next = m.intercept
            + m.coefficients
                .iter()
                .enumerate()
                .map(|(j, c)| c * z[z.len() - 1 - j])
                .sum::<f64>();
        z.push(next);
        level = if m.d == 1 { level + next } else { next };
    }
    Ok(level)
}

/// ARI forecaster over scaled windows: unscales, forecasts in mg/dl, rescales.
#[derive(Debug, Clone)]
pub struct ArimaPredictor {
    pub model: ArimaModel,
    pub scaler: Scaler,
    pub horizon: usize,
}

impl WindowPredictor for ArimaPredictor {
    fn predict_window(&self, window: &[f64]) -> Result<f64> {
        let history: Vec<f64> = window.iter().map(|&v| self.scaler.invert(v)).collect();
        arima_forecast(&self.model, &history, self.horizon).map(|g| self.scaler.apply(g))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub epsilon: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrOptions {
    pub epsilon: f64,
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Step at epoch `e` (1-based) is `step0 / sqrt(e)`.
    pub step0: f64,
}

impl Default for SvrOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            c: 1.0,
            epochs: 200,
            seed: 0,
            batch_size: 32,
            step0: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SvrFit {
    pub model: SvrModel,
    /// Objective of the returned (best-so-far) iterate after each epoch.
    pub objective: Vec<f64>,
}

impl SvrModel {
    pub fn objective(&self, inputs: &[Vec<f64>], targets: &[f64]) -> f64 {
        let hinge: f64 = inputs
            .iter()
            .zip(targets)
            .map(|(x, &y)| ((dot(&self.weights, x) + self.bias - y).abs() - self.epsilon).max(0.0))
            .sum();
        self.c * hinge + 0.5 * dot(&self.weights, &self.weights)
    }
}

/// Minimises `c·Σ max(0, |w·x + b − y| − ε) + ½‖w‖²` by seeded mini-batch
/// subgradient descent. Subgradient steps are not descent steps, so the
/// best iterate seen at an epoch boundary is kept and returned.
pub fn svr_fit(ws: &WindowSet, opts: SvrOptions) -> Result<SvrFit> {
    if ws.is_empty() {
        return Err(Error::input("svr_fit needs at least one training window"));
    }
    if opts.batch_size == 0 || opts.epsilon < 0.0 || opts.c < 0.0 {
        return Err(Error::Config("svr needs batch_size ≥ 1, epsilon ≥ 0, c ≥ 0".into()));
    }
    let n = ws.len();
    let dim = ws.window_len;
    let mut rng = SeededRng::new(opts.seed);
    let mut current = SvrModel {
        weights: vec![0.0; dim],
        bias: 0.0,
        epsilon: opts.epsilon,
        c: opts.c,
    };
    let mut best = current.clone();
    let mut best_obj = best.objective(&ws.inputs, &ws.targets);
    let mut trace = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut gw = vec![0.0; dim];

    for epoch in 1..=opts.epochs {
        let step = opts.step0 / (epoch as f64).sqrt();
        rng.shuffle(&mut order);
        for batch in order.chunks(opts.batch_size) {
            // Subgradient of the per-sample-averaged objective J / n.
            gw.iter_mut().zip(&current.weights).for_each(|(g, w)| *g = w / n as f64);
            let mut gb = 0.0;
            let scale = opts.c / batch.len() as f64;
            for &i in batch {
                let x = &ws.inputs[i];
                let r = dot(&current.weights, x) + current.bias - ws.targets[i];
                if r.abs() > opts.epsilon {
                    let s = scale * r.signum();
                    gw.iter_mut().zip(x).for_each(|(g, xi)| *g += s * xi);
                    gb += s;
                }
            }
            current.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= step * g);
            current.bias -= step * gb;
        }
        let obj = current.objective(&ws.inputs, &ws.targets);
        if obj < best_obj {
            best_obj = obj;
            best = current.clone();
        }
        trace.push(best_obj);
    }
    Ok(SvrFit {
        model: best,
        objective: trace,
    })
}

pub fn svr_predict(m: &SvrModel, window: &[f64]) -> Result<f64> {
    if window.len() != m.weights.len() {
        return Err(Error::shape(format!(
            "svr has {} weights, window has {} samples",
            m.weights.len(),
            window.len()
        )));
    }
    Ok(dot(&m.weights, window) + m.bias)
}

impl WindowPredictor for SvrModel {
    fn predict_window(&self, window: &[f64]) -> Result<f64> {
        svr_predict(self, window)
    }
}

/// Zero-order hold: the last observed value, whatever the horizon.
pub fn naive_forecast(window: &[f64], _k: usize) -> Result<f64> {
    window
        .last()
        .copied()
        .ok_or_else(|| Error::input("naive forecast needs a nonempty window"))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NaivePredictor;

impl WindowPredictor for NaivePredictor {
    fn predict_window(&self, window: &[f64]) -> Result<f64> {
        naive_forecast(window, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Baseline {
    Naive,
    Arima { p: usize, d: usize },
    Svr(SvrOptions),
}

impl Baseline {
    pub fn label(&self) -> String {
        match self {
            Baseline::Naive => "naive".into(),
            Baseline::Arima { p, d } => format!("arima({p},{d},0)"),
            Baseline::Svr(_) => "svr".into(),
        }
    }
}

/// Splits one dataset exactly as fine-tuning does (scaler fitted on the
/// training span), fits the baseline on the training part and scores the
/// test windows.
pub fn evaluate_baseline(
    baseline: Baseline,
    dataset: &SubDataset,
    window_len: usize,
    ph_min: u32,
) -> Result<(MetricsReport, Vec<f64>, WindowSet)> {
    let horizon = horizon_steps(ph_min)?;
    let scaler = fit_scaler_for_split(&dataset.values, window_len, horizon, TRAIN_FRACTION)?;
    let ws = make_windows(dataset, window_len, horizon, scaler)?;
    let (train, test) = chrono_split(&ws, TRAIN_FRACTION)?;
    let label = dataset.label();
    let method = baseline.label();
    let (report, preds) = match baseline {
        Baseline::Naive => evaluate(&NaivePredictor, &test, &label, &method)?,
        Baseline::Arima { p, d } => {
            let span = train_sample_span(dataset.len(), window_len, horizon, TRAIN_FRACTION);
            let model = arima_fit(&dataset.values[..span], p, d)?;
            let predictor = ArimaPredictor { model, scaler, horizon };
            evaluate(&predictor, &test, &label, &method)?
        }
        Baseline::Svr(opts) => evaluate(&svr_fit(&train, opts)?.model, &test, &label, &method)?,
    };
    Ok((report, preds, test))
}
