use std::path::{Path, PathBuf};

use cgm_forecast::baselines::{evaluate_baseline, Baseline, SvrOptions};
use cgm_forecast::metrics::{evaluate, mean_report, summarize_dataset, DatasetSummary, MetricsReport};
use cgm_forecast::network::Checkpoint;
use cgm_forecast::pipeline::{
    chrono_split, horizon_steps, ingest_csv, make_windows, partition_by_length, repair_singletons, split_on_gaps,
    write_pool_csv, write_series_csv, SubDataset, GRID_SECONDS, TRAIN_FRACTION,
};
use cgm_forecast::plot::{line_chart, Series};
use cgm_forecast::synth::gen_cohort;
use cgm_forecast::training::{self, epoch_sweep, pretrain_workflow, sweep_epochs, History, Phase, TrainConfig};
use cgm_forecast::{Error, Result};

use crate::output::{csv_files, ensure_dir, load_datasets, load_pool, write_run_config, write_text, write_with};
use crate::{
    BaselineArgs, BaselineOptions, CmdResult, CompareArgs, EvalArgs, Failure, FinetuneArgs, Method, PreprocessArgs,
    PretrainArgs, SweepArgs, SynthArgs,
};

const STEP_MIN: f64 = GRID_SECONDS as f64 / 60.0;

pub fn synth(a: &SynthArgs) -> CmdResult {
    if a.subjects == 0 {
        return Err(Failure::usage("--subjects must be at least 1"));
    }
    if a.days == 0 {
        return Err(Failure::usage("--days must be at least 1"));
    }
    ensure_dir(&a.out)?;
    let cohort = gen_cohort(a.subjects, a.days, a.seed);
    for s in &cohort {
        write_with(&a.out.join(format!("{}.csv", s.subject_id)), |w| write_series_csv(w, s))?;
    }
    write_run_config(&a.out, "synth", a)?;
    println!(
        "wrote {} subjects x {} samples to {}",
        cohort.len(),
        a.days * 288,
        a.out.display()
    );
    Ok(())
}

fn write_summary(path: &Path, rows: &[DatasetSummary]) -> Result<()> {
    write_with(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Input(format!("csv write failed: {e}"));
        csv.write_record(["dataset", "samples", "mean_mgdl", "hypo", "hyper"])
            .map_err(err)?;
        for r in rows {
            csv.write_record([
                r.dataset.clone(),
                r.samples.to_string(),
                if r.mean_mgdl.is_finite() {
                    format!("{:.3}", r.mean_mgdl)
                } else {
                    String::new()
                },
                r.hypo.to_string(),
                r.hyper.to_string(),
            ])
            .map_err(err)?;
        }
        csv.flush().map_err(|e| Error::Input(format!("csv write failed: {e}")))
    })
}

/// Pool summary: samples and events summed over segments, mean weighted by length.
fn pool_summary(name: &str, segments: &[SubDataset]) -> DatasetSummary {
    let parts: Vec<DatasetSummary> = segments
        .iter()
        .map(|s| summarize_dataset(name, &s.values.iter().map(|&v| Some(v)).collect::<Vec<_>>()))
        .collect();
    let samples: usize = parts.iter().map(|p| p.samples).sum();
    let total: f64 = parts
        .iter()
        .filter(|p| p.samples > 0)
        .map(|p| p.mean_mgdl * p.samples as f64)
        .sum();
    DatasetSummary {
        dataset: name.to_string(),
        samples,
        mean_mgdl: if samples == 0 { f64::NAN } else { total / samples as f64 },
        hypo: parts.iter().map(|p| p.hypo).sum(),
        hyper: parts.iter().map(|p| p.hyper).sum(),
    }
}

pub fn preprocess(a: &PreprocessArgs) -> CmdResult {
    let files = csv_files(&a.input)?;
    let mut subs = Vec::new();
    for f in &files {
        subs.extend(split_on_gaps(&repair_singletons(&ingest_csv(f)?)));
    }
    let (kept, pool) = partition_by_length(subs, a.min_len);

    ensure_dir(&a.out)?;
    let mut summary = Vec::with_capacity(kept.len() + 1);
    for d in &kept {
        let series = d.to_series();
        write_with(&a.out.join("datasets").join(format!("{}.csv", d.label())), |w| {
            write_series_csv(w, &series)
        })?;
        summary.push(summarize_dataset(&d.label(), &series.samples));
    }
    write_with(&a.out.join("pretrain_pool.csv"), |w| write_pool_csv(w, &pool))?;
    summary.push(pool_summary("pretrain_pool", &pool.segments));
    write_summary(&a.out.join("summary.csv"), &summary)?;
    write_run_config(&a.out, "preprocess", a)?;
    println!(
        "{} input files: {} datasets kept, {} short runs ({} samples) pooled",
        files.len(),
        kept.len(),
        pool.segments.len(),
        pool.total_len()
    );
    Ok(())
}

fn write_history(path: &Path, h: &History) -> Result<()> {
    write_with(path, |w| h.write_csv(w))
}

fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    ckpt.save(path)
}

fn checked_config(phase: Phase, epochs: usize, ph: u32, window_len: usize, seed: u64) -> Result<TrainConfig> {
    let cfg = TrainConfig::new(phase, epochs, ph, window_len, seed);
    cfg.validate()?;
    Ok(cfg)
}

fn run_pretrain(sim: &Path, real: &Path, cfg: &TrainConfig, epochs_r2: usize, out: &Path) -> Result<Checkpoint> {
    let sim = load_pool(sim)?;
    let real = load_pool(real)?;
    let o = pretrain_workflow(&sim, &real, cfg.epochs, epochs_r2, cfg)?;
    save_checkpoint(&out.join("round1.json"), &o.round1)?;
    save_checkpoint(&out.join("global.json"), &o.global)?;
    write_history(&out.join("history_round1.csv"), &o.history_round1)?;
    write_history(&out.join("history_round2.csv"), &o.history_round2)?;
    Ok(o.global)
}

pub fn pretrain(a: &PretrainArgs) -> CmdResult {
    let cfg = checked_config(Phase::Pretrain1, a.epochs, a.ph, a.model.window_len, a.model.seed)?;
    ensure_dir(&a.out)?;
    write_run_config(&a.out, "pretrain", a)?;
    let global = run_pretrain(&a.sim, &a.real, &cfg, a.epochs_r2.unwrap_or(a.epochs), &a.out)?;
    println!(
        "global checkpoint {} (sha256 {})",
        a.out.join("global.json").display(),
        global.hash()
    );
    Ok(())
}

fn checkpoint_name(label: &str, ph: u32) -> String {
    format!("{label}_ph{ph}.json")
}

fn write_reports(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    write_with(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Input(format!("csv write failed: {e}"));
        csv.write_record(MetricsReport::CSV_HEADER).map_err(err)?;
        for r in reports {
            csv.write_record(r.csv_record()).map_err(err)?;
        }
        csv.flush().map_err(|e| Error::Input(format!("csv write failed: {e}")))
    })
}

/// Appends one `mean` row per (PH, method) group, in first-seen order.
fn with_means(mut reports: Vec<MetricsReport>) -> Vec<MetricsReport> {
    let mut groups: Vec<(u32, String)> = Vec::new();
    for r in &reports {
        let key = (r.ph_min, r.method.clone());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let means: Vec<MetricsReport> = groups
        .iter()
        .filter_map(|(ph, m)| {
            let group: Vec<MetricsReport> = reports
                .iter()
                .filter(|r| r.ph_min == *ph && r.method == *m)
                .cloned()
                .collect();
            mean_report(&group)
        })
        .collect();
    reports.extend(means);
    reports
}

fn run_finetune(global: &Checkpoint, data: &[SubDataset], cfg: &TrainConfig, out: &Path) -> Result<Vec<MetricsReport>> {
    let mut reports = Vec::with_capacity(data.len());
    for d in data {
        let o = training::finetune(global, d, cfg)?;
        let name = checkpoint_name(&d.label(), cfg.ph_min);
        save_checkpoint(&out.join(&name), &o.checkpoint)?;
        write_history(
            &out.join(format!("{}_ph{}_history.csv", d.label(), cfg.ph_min)),
            &o.history,
        )?;
        reports.push(o.report);
    }
    Ok(reports)
}

pub fn finetune(a: &FinetuneArgs) -> CmdResult {
    let cfg = checked_config(Phase::Finetune, a.epochs, a.ph, a.model.window_len, a.model.seed)?;
    let global = Checkpoint::load(&a.checkpoint)?;
    if global.train_config.ph_min != a.ph {
        return Err(Error::Config(format!(
            "--ph {} does not match checkpoint horizon {} min",
            a.ph, global.train_config.ph_min
        ))
        .into());
    }
    let data = load_datasets(&a.data)?;
    ensure_dir(&a.out)?;
    write_run_config(&a.out, "finetune", a)?;
    let reports = run_finetune(&global, &data, &cfg, &a.out)?;
    write_reports(&a.out.join("finetune_report.csv"), &with_means(reports))?;
    println!("fine-tuned {} datasets into {}", data.len(), a.out.display());
    Ok(())
}

fn baseline_for(m: Method, o: &BaselineOptions, seed: u64) -> Option<Baseline> {
    match m {
        Method::Lstm => None,
        Method::Naive => Some(Baseline::Naive),
        Method::Arima => Some(Baseline::Arima {
            p: o.arima_p,
            d: o.arima_d,
        }),
        Method::Svr => Some(Baseline::Svr(SvrOptions {
            epsilon: o.svr_epsilon,
            c: o.svr_c,
            epochs: o.svr_epochs,
            seed,
            ..SvrOptions::default()
        })),
    }
}

fn validate_eval(phs: &[u32], methods: &[Method], o: &BaselineOptions, window_len: usize) -> Result<()> {
    if phs.is_empty() || methods.is_empty() {
        return Err(Error::Input("--ph and --methods need at least one value".into()));
    }
    for &ph in phs {
        horizon_steps(ph)?;
    }
    if window_len == 0 {
        return Err(Error::Config("--window-len must be at least 1".into()));
    }
    if o.arima_d > 1 {
        return Err(Error::Config(format!(
            "--arima-d {} unsupported; use 0 or 1",
            o.arima_d
        )));
    }
    if !(o.svr_epsilon >= 0.0 && o.svr_c >= 0.0) || o.svr_epochs == 0 {
        return Err(Error::Config(
            "SVR options must be non-negative with at least one epoch".into(),
        ));
    }
    Ok(())
}

fn lstm_eval(
    ckpt_path: &Path,
    d: &SubDataset,
    ph: u32,
    window_len: usize,
) -> Result<(MetricsReport, Vec<f64>, Vec<f64>)> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    if ckpt.train_config.ph_min != ph || ckpt.model.window_len != window_len {
        return Err(Error::Config(format!(
            "{} was trained for PH {} min, L {}; asked for PH {ph} min, L {window_len}",
            ckpt_path.display(),
            ckpt.train_config.ph_min,
            ckpt.model.window_len
        )));
    }
    let ws = make_windows(d, window_len, horizon_steps(ph)?, ckpt.scaler)?;
    let (_, test) = chrono_split(&ws, TRAIN_FRACTION)?;
    let (report, preds) = evaluate(&ckpt.model, &test, &d.label(), "lstm")?;
    Ok((report, preds, test.targets_mgdl()))
}

const COLORS: [&str; 4] = ["#d62728", "#2ca02c", "#ff7f0e", "#9467bd"];

struct EvalPlan<'a> {
    checkpoints: Option<&'a Path>,
    phs: &'a [u32],
    methods: &'a [Method],
    baselines: &'a BaselineOptions,
    window_len: usize,
    seed: u64,
}

/// Scores every dataset at every PH with every method, writes `report.csv`
/// and one actual-vs-predicted SVG per dataset and PH.
fn evaluate_all(plan: &EvalPlan<'_>, data: &[SubDataset], out: &Path) -> Result<Vec<MetricsReport>> {
    let mut reports = Vec::new();
    for &ph in plan.phs {
        for d in data {
            let mut actual = Vec::new();
            let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
            for &m in plan.methods {
                let (report, preds, targets) = match baseline_for(m, plan.baselines, plan.seed) {
                    Some(b) => {
                        let (r, p, test) = evaluate_baseline(b, d, plan.window_len, ph)?;
                        (r, p, test.targets_mgdl())
                    }
                    None => {
                        let dir = plan
                            .checkpoints
                            .ok_or_else(|| Error::Config("lstm evaluation needs --checkpoints".into()))?;
                        lstm_eval(&dir.join(checkpoint_name(&d.label(), ph)), d, ph, plan.window_len)?
                    }
                };
                actual = targets;
                curves.push((report.method.clone(), preds));
                reports.push(report);
            }
            let mut series = vec![Series {
                label: "actual",
                color: "#1f77b4",
                values: &actual,
            }];
            for (k, (label, values)) in curves.iter().enumerate() {
                series.push(Series {
                    label,
                    color: COLORS[k % COLORS.len()],
                    values,
                });
            }
            let title = format!("{} PH {ph} min (test split)", d.label());
            let svg = line_chart(&title, "glucose (mg/dl)", STEP_MIN, &series);
            write_text(&out.join("plots").join(format!("{}_ph{ph}.svg", d.label())), &svg)?;
        }
    }
    // Group rows by PH, then method, then dataset.
    let method_rank = |r: &MetricsReport| reports_method_rank(plan, &r.method);
    reports.sort_by_key(|r| (r.ph_min, method_rank(r)));
    let reports = with_means(reports);
    write_reports(&out.join("report.csv"), &reports)?;
    Ok(reports)
}

fn reports_method_rank(plan: &EvalPlan<'_>, label: &str) -> usize {
    plan.methods
        .iter()
        .position(|&m| match baseline_for(m, plan.baselines, plan.seed) {
            Some(b) => b.label() == label,
            None => label == "lstm",
        })
        .unwrap_or(usize::MAX)
}

fn print_means(reports: &[MetricsReport]) {
    for r in reports.iter().filter(|r| r.dataset == "mean") {
        println!(
            "PH {:>2} min  {:<14} RMSE {:>8.3}  CC {:.3}  TL {:>5.1}  FIT {:>7.2}%",
            r.ph_min, r.method, r.rmse, r.cc, r.tl_min, r.fit_pct
        );
    }
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    validate_eval(&a.ph, &a.methods, &a.baselines, a.model.window_len)?;
    let data = load_datasets(&a.data)?;
    ensure_dir(&a.out)?;
    write_run_config(&a.out, "eval", a)?;
    let plan = EvalPlan {
        checkpoints: Some(&a.checkpoints),
        phs: &a.ph,
        methods: &a.methods,
        baselines: &a.baselines,
        window_len: a.model.window_len,
        seed: a.model.seed,
    };
    print_means(&evaluate_all(&plan, &data, &a.out)?);
    Ok(())
}

pub fn baseline(a: &BaselineArgs) -> CmdResult {
    if a.methods.contains(&Method::Lstm) {
        return Err(Failure::usage("baseline does not score lstm; use eval"));
    }
    validate_eval(&a.ph, &a.methods, &a.baselines, a.model.window_len)?;
    let data = load_datasets(&a.data)?;
    ensure_dir(&a.out)?;
    write_run_config(&a.out, "baseline", a)?;
    let plan = EvalPlan {
        checkpoints: None,
        phs: &a.ph,
        methods: &a.methods,
        baselines: &a.baselines,
        window_len: a.model.window_len,
        seed: a.model.seed,
    };
    print_means(&evaluate_all(&plan, &data, &a.out)?);
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> CmdResult {
    let epochs = sweep_epochs(a.from, a.to, a.step)?;
    let cfg = checked_config(Phase::Finetune, a.epochs, a.ph, a.model.window_len, a.model.seed)?;
    let sim = load_pool(&a.sim)?;
    let real = load_pool(&a.real)?;
    let data = load_datasets(&a.data)?;
    ensure_dir(&a.out)?;
    write_run_config(&a.out, "sweep", a)?;

    let o = epoch_sweep(&sim, &real, &data, &cfg, &epochs)?;
    write_with(&a.out.join("sweep.csv"), |w| o.table.write_csv(w))?;
    let detail: Vec<MetricsReport> = o
        .reports
        .iter()
        .zip(&o.table.rows)
        .flat_map(|(rs, row)| {
            rs.iter().map(move |r| MetricsReport {
                method: format!("lstm@{}", row.epochs),
                ..r.clone()
            })
        })
        .collect();
    write_reports(&a.out.join("sweep_reports.csv"), &detail)?;

    let best = o
        .table
        .select_min_rmse()
        .ok_or_else(|| Error::Internal("empty sweep table".into()))?;
    let selection = serde_json::json!({
        "ph_min": a.ph,
        "selected_epochs": best.epochs,
        "rmse": best.rmse,
        "rule": "min rmse, ties to fewer epochs",
    });
    write_text(&a.out.join("selection.json"), &format!("{selection:#}\n"))?;
    println!(
        "{} rows; selected {} epochs (RMSE {:.3})",
        o.table.rows.len(),
        best.epochs,
        best.rmse
    );
    Ok(())
}

pub fn compare(a: &CompareArgs) -> CmdResult {
    validate_eval(&a.ph, &a.methods, &a.baselines, a.model.window_len)?;
    let pre_cfgs =
        a.ph.iter()
            .map(|&ph| {
                checked_config(
                    Phase::Pretrain1,
                    a.pretrain_epochs,
                    ph,
                    a.model.window_len,
                    a.model.seed,
                )
            })
            .collect::<Result<Vec<_>>>()?;
    checked_config(Phase::Finetune, a.epochs, a.ph[0], a.model.window_len, a.model.seed)?;
    let data = load_datasets(&a.data)?;
    ensure_dir(&a.out)?;
    write_run_config(&a.out, "compare", a)?;

    let ckpt_dir: PathBuf = a.out.join("checkpoints");
    if a.methods.contains(&Method::Lstm) {
        for cfg in &pre_cfgs {
            let dir = a.out.join(format!("pretrain_ph{}", cfg.ph_min));
            let global = run_pretrain(&a.sim, &a.real, cfg, a.pretrain_epochs, &dir)?;
            let ft = checked_config(Phase::Finetune, a.epochs, cfg.ph_min, a.model.window_len, a.model.seed)?;
            run_finetune(&global, &data, &ft, &ckpt_dir)?;
        }
    }
    let plan = EvalPlan {
        checkpoints: Some(&ckpt_dir),
        phs: &a.ph,
        methods: &a.methods,
        baselines: &a.baselines,
        window_len: a.model.window_len,
        seed: a.model.seed,
    };
    print_means(&evaluate_all(&plan, &data, &a.out)?);
    Ok(())
}
