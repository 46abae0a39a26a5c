//! CGM preprocessing: ingestion onto the 5-minute grid, singleton repair,
//! gap splitting, length filtering, min-max scaling, windowing and the
//! chronological train/test split.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_SECONDS: i64 = 300;
pub const SNAP_TOLERANCE_SECONDS: i64 = 60;
/// Present values outside this range are sensor-invalid.
pub const VALID_RANGE_MGDL: (f64, f64) = (1.0, 1000.0);
/// A value further than this from both neighbours is a single-sample outlier.
pub const OUTLIER_JUMP_MGDL: f64 = 50.0;
/// Replacements closer than this to the current value count as no change, so
/// steep straight ramps (already at their own midpoint) settle.
const REPAIR_TOLERANCE_MGDL: f64 = 1e-9;
pub const MIN_SUBDATASET_LEN: usize = 1500;
pub const TRAIN_FRACTION: f64 = 0.67;

/// CGM samples on a 5-minute grid starting at `start_time` (Unix seconds);
/// `samples[i]` is the reading at `start_time + 300·i`, `None` if missing.
#[derive(Debug, Clone, PartialEq)]
pub struct GlucoseSeries {
    pub subject_id: String,
    pub start_time: i64,
    pub samples: Vec<Option<f64>>,
}

impl GlucoseSeries {
    pub fn from_values(subject_id: impl Into<String>, start_time: i64, values: &[f64]) -> Self {
        Self {
            subject_id: subject_id.into(),
            start_time,
            samples: values.iter().map(|&v| Some(v)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn present_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_some()).count()
    }

    pub fn present_values(&self) -> Vec<f64> {
        self.samples.iter().flatten().copied().collect()
    }
}

/// A gap-free run of samples cut from one series.
#[derive(Debug, Clone, PartialEq)]
pub struct SubDataset {
    pub subject_id: String,
    /// Ordinal of this run within its parent series.
    pub segment: usize,
    pub start_time: i64,
    pub values: Vec<f64>,
}

impl SubDataset {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn label(&self) -> String {
        format!("{}_seg{:02}", self.subject_id, self.segment)
    }

    pub fn to_series(&self) -> GlucoseSeries {
        GlucoseSeries::from_values(self.label(), self.start_time, &self.values)
    }
}

/// Short sub-datasets merged for pre-training, with segment boundaries kept
/// so no window straddles two sources.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainPool {
    pub segments: Vec<SubDataset>,
}

impl PretrainPool {
    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Repairs and splits every series, keeping all runs regardless of length.
    pub fn from_series(series: &[GlucoseSeries]) -> Self {
        let segments = series
            .iter()
            .flat_map(|s| split_on_gaps(&repair_singletons(s)))
            .collect();
        Self { segments }
    }

    pub fn values(&self) -> Vec<f64> {
        self.segments.iter().flat_map(|s| s.values.iter().copied()).collect()
    }
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(secs) = raw.parse::<f64>() {
        return secs.is_finite().then(|| secs.round() as i64);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

pub fn format_timestamp(secs: i64) -> String {
    DateTime::from_timestamp(secs, 0)
        .map(|dt| dt.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| secs.to_string())
}

struct RawRow {
    line: u64,
    time: i64,
    value: Option<f64>,
    segment: Option<String>,
}

fn read_rows<R: Read>(reader: R, path: &Path, want_segment: bool) -> Result<Vec<RawRow>> {
    let parse_err = |line: u64, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(t_col), Some(v_col)) = (col("timestamp"), col("glucose_mgdl")) else {
        return Err(parse_err(
            1,
            format!(
                "expected header `timestamp,glucose_mgdl`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    };
    let s_col = col("segment_id");
    if want_segment && s_col.is_none() {
        return Err(parse_err(1, "pool file needs a `segment_id` column".into()));
    }

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let t_raw = record.get(t_col).unwrap_or("");
        let time = parse_timestamp(t_raw).ok_or_else(|| parse_err(line, format!("unparseable timestamp `{t_raw}`")))?;
        let v_raw = record.get(v_col).unwrap_or("");
        let value = match v_raw {
            "" | "NA" | "na" | "NaN" | "nan" => None,
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| parse_err(line, format!("unparseable glucose value `{other}`")))?;
                if !v.is_finite() {
                    return Err(parse_err(line, format!("non-finite glucose value `{other}`")));
                }
                Some(v).filter(|v| (VALID_RANGE_MGDL.0..=VALID_RANGE_MGDL.1).contains(v))
            }
        };
        let segment = s_col.map(|c| record.get(c).unwrap_or("").to_string());
        rows.push(RawRow {
            line,
            time,
            value,
            segment,
        });
    }
    Ok(rows)
}

fn grid_from_rows(subject_id: &str, rows: &[RawRow], path: &Path) -> Result<GlucoseSeries> {
    let Some(t0) = rows.iter().map(|r| r.time).min() else {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: "no data rows".into(),
        });
    };
    let mut slots: BTreeMap<usize, (u64, Option<f64>)> = BTreeMap::new();
    for r in rows {
        let offset = r.time - t0;
        let slot = (offset + GRID_SECONDS / 2).div_euclid(GRID_SECONDS);
        let drift = offset - slot * GRID_SECONDS;
        if drift.abs() > SNAP_TOLERANCE_SECONDS {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: r.line,
                reason: format!("timestamp is {drift} s off the 5-minute grid (tolerance ±{SNAP_TOLERANCE_SECONDS} s)"),
            });
        }
        if let Some((first, _)) = slots.insert(slot as usize, (r.line, r.value)) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: r.line,
                reason: format!("duplicate grid slot {slot} (already filled by line {first})"),
            });
        }
    }
    let len = slots.keys().next_back().map_or(0, |&k| k + 1);
    let mut samples = vec![None; len];
    for (slot, (_, value)) in slots {
        samples[slot] = value;
    }
    Ok(GlucoseSeries {
        subject_id: subject_id.to_string(),
        start_time: t0,
        samples,
    })
}

fn subject_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "subject".into())
}

/// Reads a `timestamp,glucose_mgdl` CSV onto the 5-minute grid.
pub fn ingest_csv(path: &Path) -> Result<GlucoseSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_series(file, &subject_from_path(path), path)
}

pub fn read_series<R: Read>(reader: R, subject_id: &str, path: &Path) -> Result<GlucoseSeries> {
    let rows = read_rows(reader, path, false)?;
    grid_from_rows(subject_id, &rows, path)
}

/// Reads a pre-train pool file; each `segment_id` becomes its own run.
pub fn ingest_pool_csv(path: &Path) -> Result<PretrainPool> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = read_rows(file, path, true)?;
    let mut groups: Vec<(String, Vec<RawRow>)> = Vec::new();
    for r in rows {
        let id = r.segment.clone().unwrap_or_default();
        match groups.iter_mut().find(|(g, _)| *g == id) {
            Some((_, v)) => v.push(r),
            None => groups.push((id, vec![r])),
        }
    }
    let mut segments = Vec::new();
    for (id, rows) in groups {
        let series = grid_from_rows(&id, &rows, path)?;
        segments.extend(relabel_runs(split_on_gaps(&series)));
    }
    Ok(PretrainPool { segments })
}

/// Splits `"abc_seg03"` into `("abc", 3)`.
fn parse_label(id: &str) -> Option<(&str, usize)> {
    let (stem, seg) = id.rsplit_once("_seg")?;
    if stem.is_empty() || seg.is_empty() || !seg.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((stem, seg.parse().ok()?))
}

/// A single run read back from a file named after its label keeps that label.
fn relabel_runs(mut runs: Vec<SubDataset>) -> Vec<SubDataset> {
    if let [run] = runs.as_mut_slice() {
        if let Some((stem, seg)) = parse_label(&run.subject_id) {
            run.subject_id = stem.to_string();
            run.segment = seg;
        }
    }
    runs
}

/// Reads one dataset file, repairs it and returns its gap-free runs. A file
/// written from a sub-dataset (`<subject>_segNN.csv`) comes back under the
/// same label.
pub fn ingest_datasets(path: &Path) -> Result<Vec<SubDataset>> {
    let series = ingest_csv(path)?;
    Ok(relabel_runs(split_on_gaps(&repair_singletons(&series))))
}

pub fn write_series_csv<W: Write>(out: W, series: &GlucoseSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Input(format!("csv write failed: {e}"));
    w.write_record(["timestamp", "glucose_mgdl"]).map_err(csv_err)?;
    for (i, s) in series.samples.iter().enumerate() {
        if let Some(v) = s {
            let t = series.start_time + i as i64 * GRID_SECONDS;
            w.write_record([format_timestamp(t), format_value(*v)])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Input(format!("csv write failed: {e}")))?;
    Ok(())
}

pub fn write_pool_csv<W: Write>(out: W, pool: &PretrainPool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Input(format!("csv write failed: {e}"));
    w.write_record(["timestamp", "glucose_mgdl", "segment_id"])
        .map_err(csv_err)?;
    for seg in &pool.segments {
        let label = seg.label();
        for (i, v) in seg.values.iter().enumerate() {
            let t = seg.start_time + i as i64 * GRID_SECONDS;
            w.write_record([format_timestamp(t), format_value(*v), label.clone()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Input(format!("csv write failed: {e}")))?;
    Ok(())
}

fn format_value(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Fills isolated missing samples by linear interpolation and replaces
/// single-sample spikes by the mean of their neighbours. Longer gaps are
/// left alone. Spike replacement is repeated until nothing changes, so the
/// operation is idempotent.
pub fn repair_singletons(s: &GlucoseSeries) -> GlucoseSeries {
    let mut samples = s.samples.clone();
    let n = samples.len();

    let orig = samples.clone();
    for i in 1..n.saturating_sub(1) {
        if let (Some(p), None, Some(nx)) = (orig[i - 1], orig[i], orig[i + 1]) {
            samples[i] = Some((p + nx) / 2.0);
        }
    }

    let max_passes = n.max(1) * 4;
    for _ in 0..max_passes {
        let mut changed = false;
        for i in 1..n.saturating_sub(1) {
            if let (Some(p), Some(v), Some(nx)) = (samples[i - 1], samples[i], samples[i + 1]) {
                if (v - p).abs() > OUTLIER_JUMP_MGDL && (v - nx).abs() > OUTLIER_JUMP_MGDL {
                    let mid = (p + nx) / 2.0;
                    if (mid - v).abs() > REPAIR_TOLERANCE_MGDL {
                        samples[i] = Some(mid);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    GlucoseSeries {
        subject_id: s.subject_id.clone(),
        start_time: s.start_time,
        samples,
    }
}

/// Maximal runs of present samples; any missing slot ends a run.
pub fn split_on_gaps(s: &GlucoseSeries) -> Vec<SubDataset> {
    let mut out = Vec::new();
    let mut run: Vec<f64> = Vec::new();
    let mut run_start = 0usize;
    let flush = |run: &mut Vec<f64>, start: usize, out: &mut Vec<SubDataset>| {
        if !run.is_empty() {
            let segment = out.len();
            out.push(SubDataset {
                subject_id: s.subject_id.clone(),
                segment,
                start_time: s.start_time + start as i64 * GRID_SECONDS,
                values: std::mem::take(run),
            });
        }
    };
    for (i, sample) in s.samples.iter().enumerate() {
        match sample {
            Some(v) => {
                if run.is_empty() {
                    run_start = i;
                }
                run.push(*v);
            }
            None => flush(&mut run, run_start, &mut out),
        }
    }
    flush(&mut run, run_start, &mut out);
    out
}

/// Keeps runs of at least `min_len` samples; shorter runs go to the pool.
pub fn partition_by_length(subs: Vec<SubDataset>, min_len: usize) -> (Vec<SubDataset>, PretrainPool) {
    let (kept, short): (Vec<_>, Vec<_>) = subs.into_iter().partition(|s| s.len() >= min_len);
    (kept, PretrainPool { segments: short })
}

/// Min-max transform fitted on training samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: f64,
    pub max: f64,
}

impl Scaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(min.is_finite() && max.is_finite()) || max <= min {
            return Err(Error::Fit(format!(
                "scaler needs at least two distinct finite values (got {} samples)",
                values.len()
            )));
        }
        Ok(Self { min, max })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * (self.max - self.min) + self.min
    }
}

pub fn fit_scaler(train: &[f64]) -> Result<Scaler> {
    Scaler::fit(train)
}

/// Horizon in grid steps for a prediction horizon in minutes.
pub fn horizon_steps(ph_min: u32) -> Result<usize> {
    if ph_min == 0 || ph_min as i64 % (GRID_SECONDS / 60) != 0 {
        return Err(Error::Config(format!(
            "prediction horizon {ph_min} min is not a positive multiple of 5"
        )));
    }
    Ok(ph_min as usize / 5)
}

/// Where a window came from: source run and the index of its first sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowOrigin {
    pub source: usize,
    pub start: usize,
}

/// Scaled input windows of `window_len` samples, each paired with the
/// sample `horizon` steps after the window's last one.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub window_len: usize,
    pub horizon: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub origins: Vec<WindowOrigin>,
    pub scaler: Scaler,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn empty(window_len: usize, horizon: usize, scaler: Scaler) -> Self {
        Self {
            window_len,
            horizon,
            inputs: Vec::new(),
            targets: Vec::new(),
            origins: Vec::new(),
            scaler,
        }
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            window_len: self.window_len,
            horizon: self.horizon,
            inputs: self.inputs[range.clone()].to_vec(),
            targets: self.targets[range.clone()].to_vec(),
            origins: self.origins[range].to_vec(),
            scaler: self.scaler,
        }
    }

    pub fn extend(&mut self, other: &WindowSet) -> Result<()> {
        if other.window_len != self.window_len || other.horizon != self.horizon || other.scaler != self.scaler {
            return Err(Error::input(
                "cannot merge window sets with different window, horizon or scaler",
            ));
        }
        self.inputs.extend(other.inputs.iter().cloned());
        self.targets.extend_from_slice(&other.targets);
        self.origins.extend_from_slice(&other.origins);
        Ok(())
    }

    /// Targets in mg/dl.
    pub fn targets_mgdl(&self) -> Vec<f64> {
        self.targets.iter().map(|&t| self.scaler.invert(t)).collect()
    }

    /// Source index of the target sample of window `i`.
    pub fn target_index(&self, i: usize) -> usize {
        self.origins[i].start + self.window_len - 1 + self.horizon
    }
}

pub fn make_windows(sub: &SubDataset, window_len: usize, horizon: usize, scaler: Scaler) -> Result<WindowSet> {
    windows_from_values(&sub.values, window_len, horizon, scaler, 0)
}

pub fn windows_from_values(
    values: &[f64],
    window_len: usize,
    horizon: usize,
    scaler: Scaler,
    source: usize,
) -> Result<WindowSet> {
    if window_len == 0 || horizon == 0 {
        return Err(Error::input("window length and horizon must be positive"));
    }
    if values.len() < window_len + horizon {
        return Err(Error::input(format!(
            "series of {} samples is too short for window {window_len} + horizon {horizon}",
            values.len()
        )));
    }
    let n = values.len() - window_len - horizon + 1;
    let scaled: Vec<f64> = values.iter().map(|&v| scaler.apply(v)).collect();
    let mut ws = WindowSet::empty(window_len, horizon, scaler);
    ws.inputs.reserve(n);
    for start in 0..n {
        ws.inputs.push(scaled[start..start + window_len].to_vec());
        ws.targets.push(scaled[start + window_len - 1 + horizon]);
        ws.origins.push(WindowOrigin { source, start });
    }
    Ok(ws)
}

pub fn train_count(n: usize, train_frac: f64) -> usize {
    // Small epsilon so 0.67·300 lands on 201 despite binary rounding.
    ((train_frac * n as f64) + 1e-9).floor() as usize
}

/// Chronological split: the first `floor(frac·N)` windows train, the rest
/// test, minus the first `horizon` test windows as a leakage guard. Test
/// targets never coincide with training targets.
pub fn chrono_split(ws: &WindowSet, train_frac: f64) -> Result<(WindowSet, WindowSet)> {
    let n = ws.len();
    if n < 3 {
        return Err(Error::input(format!(
            "chronological split needs at least 3 windows, got {n}"
        )));
    }
    if !(0.0..1.0).contains(&train_frac) || train_frac == 0.0 {
        return Err(Error::Config(format!("train fraction {train_frac} must lie in (0, 1)")));
    }
    let n_train = train_count(n, train_frac);
    let test_start = (n_train + ws.horizon).min(n);
    Ok((ws.slice(0..n_train), ws.slice(test_start..n)))
}

/// Number of leading raw samples touched by the training windows of a split.
pub fn train_sample_span(len: usize, window_len: usize, horizon: usize, train_frac: f64) -> usize {
    if len < window_len + horizon {
        return 0;
    }
    let n = len - window_len - horizon + 1;
    let n_train = train_count(n, train_frac);
    if n_train == 0 {
        0
    } else {
        n_train - 1 + window_len + horizon
    }
}

/// Fits a scaler on exactly the samples the training split will see.
pub fn fit_scaler_for_split(values: &[f64], window_len: usize, horizon: usize, train_frac: f64) -> Result<Scaler> {
    let span = train_sample_span(values.len(), window_len, horizon, train_frac);
    Scaler::fit(&values[..span])
}

/// Windows every run of a pool, splitting each run chronologically.
/// Runs too short for one window are skipped; runs with fewer than three
/// windows go entirely to training.
pub fn pool_windows(
    pool: &PretrainPool,
    window_len: usize,
    horizon: usize,
    scaler: Scaler,
    train_frac: f64,
) -> Result<(WindowSet, WindowSet)> {
    let mut train = WindowSet::empty(window_len, horizon, scaler);
    let mut val = WindowSet::empty(window_len, horizon, scaler);
    for (source, seg) in pool.segments.iter().enumerate() {
        if seg.len() < window_len + horizon {
            continue;
        }
        let ws = windows_from_values(&seg.values, window_len, horizon, scaler, source)?;
        if ws.len() < 3 {
            train.extend(&ws)?;
            continue;
        }
        let (tr, te) = chrono_split(&ws, train_frac)?;
        train.extend(&tr)?;
        val.extend(&te)?;
    }
    Ok((train, val))
}

/// Scaler fitted on the training portions of every pool run.
pub fn fit_pool_scaler(pool: &PretrainPool, window_len: usize, horizon: usize, train_frac: f64) -> Result<Scaler> {
    let mut values = Vec::new();
    for seg in &pool.segments {
        let span = train_sample_span(seg.len(), window_len, horizon, train_frac);
        let span = if seg.len() >= window_len + horizon && span == 0 {
            seg.len()
        } else {
            span
        };
        values.extend_from_slice(&seg.values[..span]);
    }
    Scaler::fit(&values)
}
