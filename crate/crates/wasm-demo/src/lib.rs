//! wasm-bindgen surface for the static page in `www/`: generate a synthetic
//! CGM trace, score the baselines on it, and train the network in the page.
//!
//! Every export wraps a plain Rust function so the logic is testable natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cgm_forecast::baselines::{evaluate_baseline, Baseline, SvrOptions};
use cgm_forecast::metrics::{evaluate, MetricsReport};
use cgm_forecast::network::Model;
use cgm_forecast::pipeline::{
    chrono_split, fit_scaler_for_split, horizon_steps, make_windows, SubDataset, WindowSet, TRAIN_FRACTION,
};
use cgm_forecast::plot::{line_chart, Series};
use cgm_forecast::synth::gen_cohort;
use cgm_forecast::training::{Phase, TrainConfig, Trainer};

const WINDOW_LEN: usize = 12;
const MAX_DAYS: usize = 14;
const STEP_MIN: f64 = 5.0;
const COLORS: [&str; 4] = ["#d62728", "#2ca02c", "#ff7f0e", "#9467bd"];

fn js(e: impl ToString) -> JsError {
    JsError::new(&e.to_string())
}

fn dataset(values: &[f64]) -> SubDataset {
    SubDataset {
        subject_id: "demo".into(),
        segment: 0,
        start_time: 0,
        values: values.to_vec(),
    }
}

/// One synthetic subject, mg/dl at 5-minute spacing.
pub fn synth_values(seed: u64, days: usize) -> Result<Vec<f64>, String> {
    if !(1..=MAX_DAYS).contains(&days) {
        return Err(format!("days must be between 1 and {MAX_DAYS}"));
    }
    Ok(gen_cohort(1, days, seed)[0].present_values())
}

pub fn trace_svg(values: &[f64]) -> String {
    line_chart(
        "synthetic subject",
        "glucose (mg/dl)",
        STEP_MIN,
        &[Series {
            label: "CGM",
            color: "#1f77b4",
            values,
        }],
    )
}

#[derive(Debug, Serialize)]
pub struct MethodView {
    pub method: String,
    pub rmse: f64,
    pub cc: f64,
    pub tl_min: f64,
    pub fit_pct: f64,
}

impl From<&MetricsReport> for MethodView {
    fn from(r: &MetricsReport) -> Self {
        Self {
            method: r.method.clone(),
            rmse: r.rmse,
            cc: r.cc,
            tl_min: r.tl_min,
            fit_pct: r.fit_pct,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ForecastView {
    pub ph_min: u32,
    pub test_points: usize,
    pub methods: Vec<MethodView>,
    pub svg: String,
}

fn forecast_svg(title: &str, actual: &[f64], curves: &[(String, Vec<f64>)]) -> String {
    let mut series = vec![Series {
        label: "actual",
        color: "#1f77b4",
        values: actual,
    }];
    for (k, (label, values)) in curves.iter().enumerate() {
        series.push(Series {
            label,
            color: COLORS[k % COLORS.len()],
            values,
        });
    }
    line_chart(title, "glucose (mg/dl)", STEP_MIN, &series)
}

/// Naive, ARI(3,1) and linear SVR forecasts on the test split of `values`.
pub fn baseline_view(values: &[f64], ph_min: u32) -> Result<ForecastView, String> {
    let d = dataset(values);
    let mut methods = Vec::new();
    let mut curves = Vec::new();
    let mut actual = Vec::new();
    for b in [
        Baseline::Naive,
        Baseline::Arima { p: 3, d: 1 },
        Baseline::Svr(SvrOptions::default()),
    ] {
        let (report, preds, test) = evaluate_baseline(b, &d, WINDOW_LEN, ph_min).map_err(|e| e.to_string())?;
        actual = test.targets_mgdl();
        methods.push(MethodView::from(&report));
        curves.push((report.method, preds));
    }
    let svg = forecast_svg(&format!("baselines, PH {ph_min} min"), &actual, &curves);
    Ok(ForecastView {
        ph_min,
        test_points: actual.len(),
        methods,
        svg,
    })
}

/// The network trained on the first 67 % of one trace, a few epochs at a time.
#[wasm_bindgen]
pub struct DemoModel {
    trainer: Trainer,
    train: WindowSet,
    test: WindowSet,
}

impl DemoModel {
    pub fn create(values: &[f64], ph_min: u32, seed: u64) -> Result<Self, String> {
        let horizon = horizon_steps(ph_min).map_err(|e| e.to_string())?;
        let scaler = fit_scaler_for_split(values, WINDOW_LEN, horizon, TRAIN_FRACTION).map_err(|e| e.to_string())?;
        let ws = make_windows(&dataset(values), WINDOW_LEN, horizon, scaler).map_err(|e| e.to_string())?;
        let (train, test) = chrono_split(&ws, TRAIN_FRACTION).map_err(|e| e.to_string())?;
        let cfg = TrainConfig::new(Phase::Finetune, 1, ph_min, WINDOW_LEN, seed);
        let trainer = Trainer::new(Model::init(seed, WINDOW_LEN), cfg).map_err(|e| e.to_string())?;
        Ok(Self { trainer, train, test })
    }

    /// Runs `epochs` more epochs; returns the last training MSE (scaled).
    pub fn train_epochs(&mut self, epochs: usize) -> Result<f64, String> {
        self.trainer
            .run_epochs(&self.train, None, epochs)
            .map_err(|e| e.to_string())?;
        Ok(self.trainer.history.last_train_mse().unwrap_or(f64::NAN))
    }

    pub fn view(&self) -> Result<ForecastView, String> {
        let (report, preds) = evaluate(&self.trainer.model, &self.test, "demo", "lstm").map_err(|e| e.to_string())?;
        let title = format!(
            "lstm after {} epochs, PH {} min",
            self.trainer.history.len(),
            report.ph_min
        );
        let svg = forecast_svg(&title, &self.test.targets_mgdl(), &[("lstm".into(), preds)]);
        Ok(ForecastView {
            ph_min: report.ph_min,
            test_points: self.test.len(),
            methods: vec![MethodView::from(&report)],
            svg,
        })
    }
}

#[wasm_bindgen]
impl DemoModel {
    #[wasm_bindgen(constructor)]
    pub fn new(values: Vec<f64>, ph_min: u32, seed: u32) -> Result<DemoModel, JsError> {
        Self::create(&values, ph_min, seed.into()).map_err(js)
    }

    pub fn train(&mut self, epochs: usize) -> Result<f64, JsError> {
        self.train_epochs(epochs).map_err(js)
    }

    #[wasm_bindgen(js_name = epochsDone)]
    pub fn epochs_done(&self) -> usize {
        self.trainer.history.len()
    }

    /// Test-split metrics and plot as JSON.
    pub fn evaluate(&self) -> Result<String, JsError> {
        let view = self.view().map_err(js)?;
        serde_json::to_string(&view).map_err(js)
    }
}

#[wasm_bindgen]
pub fn synth(seed: u32, days: usize) -> Result<Vec<f64>, JsError> {
    synth_values(seed.into(), days).map_err(js)
}

#[wasm_bindgen(js_name = traceSvg)]
pub fn trace_svg_js(values: Vec<f64>) -> String {
    trace_svg(&values)
}

/// Baseline metrics and plot as JSON.
#[wasm_bindgen]
pub fn baselines(values: Vec<f64>, ph_min: u32) -> Result<String, JsError> {
    let view = baseline_view(&values, ph_min).map_err(js)?;
    serde_json::to_string(&view).map_err(js)
}
