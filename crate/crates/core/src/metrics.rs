//! Forecast accuracy in mg/dl: RMSE, Pearson correlation, time lag and Fit,
//! plus hypo/hyper event counts for dataset summaries.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::WindowSet;

pub const HYPO_BELOW_MGDL: f64 = 70.0;
pub const HYPER_ABOVE_MGDL: f64 = 180.0;
const GRID_MINUTES: u32 = 5;

fn check_lengths(a: &[f64], b: &[f64], min: usize, what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "{what}: series lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < min {
        return Err(Error::input(format!(
            "{what} needs at least {min} samples, got {}",
            a.len()
        )));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted, 1, "rmse")?;
    let sse: f64 = actual.iter().zip(predicted).map(|(g, p)| (g - p).powi(2)).sum();
    Ok((sse / actual.len() as f64).sqrt())
}

/// Pearson correlation. Errors rather than returning 0 when either series
/// has no variance.
pub fn cc(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted, 2, "cc")?;
    let ma = mean(actual);
    let mp = mean(predicted);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (g, p) in actual.iter().zip(predicted) {
        let dx = g - ma;
        let dy = p - mp;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Metric("correlation undefined for a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Smallest shift in minutes (multiple of 5, up to `max_shift_min`) of the
/// prediction that maximises its correlation with the actual series.
/// `actual[0..N-s)` is paired with `predicted[s..N)`, so a positive lag means
/// the prediction trails the actual signal.
pub fn time_lag(actual: &[f64], predicted: &[f64], max_shift_min: u32) -> Result<u32> {
    let max_steps = (max_shift_min / GRID_MINUTES) as usize;
    if actual.len() != predicted.len() {
        return Err(Error::shape(format!(
            "time lag: series lengths differ ({} vs {})",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.len() <= max_steps + 2 {
        return Err(Error::input(format!(
            "time lag up to {max_shift_min} min needs more than {} samples, got {}",
            max_steps + 2,
            actual.len()
        )));
    }
    let n = actual.len();
    let mut best: Option<(usize, f64)> = None;
    for s in 0..=max_steps {
        let Ok(r) = cc(&actual[..n - s], &predicted[s..]) else {
            continue;
        };
        // Correlations within rounding of the incumbent count as ties.
        if best.is_none_or(|(_, b)| r > b + 1e-12) {
            best = Some((s, r));
        }
    }
    best.map(|(s, _)| s as u32 * GRID_MINUTES)
        .ok_or_else(|| Error::Metric("time lag undefined: every shifted pair is constant".into()))
}

pub fn fit(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted, 2, "fit")?;
    let m = mean(actual);
    let spread = (actual.iter().map(|g| (g - m).powi(2)).sum::<f64>() / actual.len() as f64).sqrt();
    if spread == 0.0 {
        return Err(Error::Metric("fit undefined for a constant actual series".into()));
    }
    Ok((1.0 - rmse(actual, predicted)? / spread) * 100.0)
}

/// Maximal runs strictly below 70 (hypo) and strictly above 180 (hyper).
pub fn count_events(values: &[f64]) -> (usize, usize) {
    let mut hypo = 0;
    let mut hyper = 0;
    let mut prev_hypo = false;
    let mut prev_hyper = false;
    for &v in values {
        let is_hypo = v < HYPO_BELOW_MGDL;
        let is_hyper = v > HYPER_ABOVE_MGDL;
        if is_hypo && !prev_hypo {
            hypo += 1;
        }
        if is_hyper && !prev_hyper {
            hyper += 1;
        }
        prev_hypo = is_hypo;
        prev_hyper = is_hyper;
    }
    (hypo, hyper)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub dataset: String,
    pub samples: usize,
    pub mean_mgdl: f64,
    pub hypo: usize,
    pub hyper: usize,
}

/// Summary row for one dataset. Missing samples are skipped and break event runs.
pub fn summarize_dataset(name: &str, samples: &[Option<f64>]) -> DatasetSummary {
    let present: Vec<f64> = samples.iter().flatten().copied().collect();
    let mut hypo = 0;
    let mut hyper = 0;
    for run in samples.split(|s| s.is_none()) {
        let vals: Vec<f64> = run.iter().flatten().copied().collect();
        let (a, b) = count_events(&vals);
        hypo += a;
        hyper += b;
    }
    DatasetSummary {
        dataset: name.to_string(),
        samples: present.len(),
        mean_mgdl: if present.is_empty() { f64::NAN } else { mean(&present) },
        hypo,
        hyper,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub method: String,
    pub ph_min: u32,
    pub rmse: f64,
    pub cc: f64,
    /// Multiple of 5 for a single dataset; mean rows may be fractional.
    pub tl_min: f64,
    pub fit_pct: f64,
    pub n: usize,
    pub hypo: usize,
    pub hyper: usize,
}

impl MetricsReport {
    pub fn compute(dataset: &str, method: &str, ph_min: u32, actual: &[f64], predicted: &[f64]) -> Result<Self> {
        check_lengths(actual, predicted, 2, "report")?;
        let (hypo, hyper) = count_events(actual);
        let max_shift = 2 * ph_min;
        Ok(Self {
            dataset: dataset.to_string(),
            method: method.to_string(),
            ph_min,
            rmse: rmse(actual, predicted)?,
            cc: cc(actual, predicted)?,
            tl_min: time_lag(actual, predicted, max_shift)? as f64,
            fit_pct: fit(actual, predicted)?,
            n: actual.len(),
            hypo,
            hyper,
        })
    }

    pub const CSV_HEADER: [&'static str; 10] = [
        "dataset", "method", "ph_min", "rmse", "cc", "tl_min", "fit_pct", "n", "hypo", "hyper",
    ];

    pub fn csv_record(&self) -> [String; 10] {
        [
            self.dataset.clone(),
            self.method.clone(),
            self.ph_min.to_string(),
            format!("{:.6}", self.rmse),
            format!("{:.6}", self.cc),
            if self.tl_min.fract() == 0.0 {
                format!("{}", self.tl_min)
            } else {
                format!("{:.6}", self.tl_min)
            },
            format!("{:.6}", self.fit_pct),
            self.n.to_string(),
            self.hypo.to_string(),
            self.hyper.to_string(),
        ]
    }
}

/// Anything that maps a scaled input window to a scaled forecast.
pub trait WindowPredictor {
    fn predict_window(&self, window: &[f64]) -> Result<f64>;
}

pub fn predict_all<P: WindowPredictor + ?Sized>(predictor: &P, ws: &WindowSet) -> Result<Vec<f64>> {
    ws.inputs.iter().map(|w| predictor.predict_window(w)).collect()
}

/// Predicts every window, maps back to mg/dl and scores against the targets.
pub fn evaluate<P: WindowPredictor + ?Sized>(
    predictor: &P,
    test: &WindowSet,
    dataset: &str,
    method: &str,
) -> Result<(MetricsReport, Vec<f64>)> {
    if test.is_empty() {
        return Err(Error::input(format!("no test windows to evaluate for {dataset}")));
    }
    let preds: Vec<f64> = predict_all(predictor, test)?
        .into_iter()
        .map(|p| test.scaler.invert(p))
        .collect();
    let actual = test.targets_mgdl();
    let ph = (test.horizon as u32) * GRID_MINUTES;
    let report = MetricsReport::compute(dataset, method, ph, &actual, &preds)?;
    Ok((report, preds))
}

/// Unweighted mean of per-dataset reports, labelled `mean`.
pub fn mean_report(reports: &[MetricsReport]) -> Option<MetricsReport> {
    let first = reports.first()?;
    let k = reports.len() as f64;
    let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    Some(MetricsReport {
        dataset: "mean".into(),
        method: first.method.clone(),
        ph_min: first.ph_min,
        rmse: avg(&|r| r.rmse),
        cc: avg(&|r| r.cc),
        tl_min: avg(&|r| r.tl_min),
        fit_pct: avg(&|r| r.fit_pct),
        n: reports.iter().map(|r| r.n).sum(),
        hypo: reports.iter().map(|r| r.hypo).sum(),
        hyper: reports.iter().map(|r| r.hyper).sum(),
    })
}
