//! Loss, Adam, the epoch loop, the two-round pre-train, per-patient
//! fine-tuning and the pre-train epoch sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, mean_report, MetricsReport, WindowPredictor};
use crate::network::{Checkpoint, Gradients, Model};
use crate::numerics::SeededRng;
use crate::pipeline::{
    chrono_split, fit_pool_scaler, horizon_steps, make_windows, pool_windows, PretrainPool, Scaler, SubDataset,
    WindowSet, TRAIN_FRACTION,
};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const FINETUNE_EPOCHS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain1,
    Pretrain2,
    Finetune,
}

impl Phase {
    fn stream_id(self) -> u64 {
        match self {
            Phase::Pretrain1 => 1,
            Phase::Pretrain2 => 2,
            Phase::Finetune => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub ph_min: u32,
    pub window_len: usize,
    pub phase: Phase,
    /// Dataset a fine-tuned model belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

impl TrainConfig {
    pub fn new(phase: Phase, epochs: usize, ph_min: u32, window_len: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed,
            ph_min,
            window_len,
            phase,
            dataset: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.window_len == 0 {
            return Err(Error::Config("window length must be at least 1".into()));
        }
        horizon_steps(self.ph_min)?;
        Ok(())
    }

    pub fn horizon(&self) -> Result<usize> {
        horizon_steps(self.ph_min)
    }

    fn with_phase(&self, phase: Phase, epochs: usize) -> Self {
        Self {
            phase,
            epochs,
            ..self.clone()
        }
    }
}

pub fn mse_loss(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::shape(format!(
            "mse: {} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::input("mse of an empty batch"));
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / preds.len() as f64)
}

/// Adam moment estimates, flattened in [`Model::param_slices`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let n = model.param_count();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
pub fn adam_step(params: &mut Model, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != params.param_count() {
        return Err(Error::shape(format!(
            "adam state holds {} moments for {} parameters",
            state.m.len(),
            params.param_count()
        )));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    let mut k = 0;
    for (block, gblock) in params.param_slices_mut().into_iter().zip(grads.slices()) {
        for (theta, &g) in block.iter_mut().zip(gblock) {
            let m = &mut state.m[k];
            let v = &mut state.v[k];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            k += 1;
        }
    }
    Ok(())
}

/// Mean squared error and mean gradient over a batch of windows.
pub fn batch_gradient(model: &Model, inputs: &[&[f64]], targets: &[f64]) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(model);
    let loss = accumulate_batch(model, inputs, targets, &mut grads)?;
    Ok((loss, grads))
}

fn accumulate_batch(model: &Model, inputs: &[&[f64]], targets: &[f64], grads: &mut Gradients) -> Result<f64> {
    let b = inputs.len() as f64;
    let mut sse = 0.0;
    for (x, &y) in inputs.iter().zip(targets) {
        let (pred, cache) = model.forward(x)?;
        let err = pred - y;
        sse += err * err;
        model.backward_accumulate(&cache, 2.0 * err / b, grads)?;
    }
    Ok(sse / b)
}

/// Mean squared error of `model` over a window set, scaled units.
pub fn dataset_mse(model: &Model, ws: &WindowSet) -> Result<f64> {
    let preds: Vec<f64> = ws.inputs.iter().map(|w| model.predict(w)).collect::<Result<_>>()?;
    mse_loss(&preds, &ws.targets)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last_train_mse(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_mse)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Input(format!("csv write failed: {e}"));
        w.write_record(["epoch", "train_mse", "val_mse"]).map_err(err)?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.9e}", e.train_mse),
                e.val_mse.map(|v| format!("{v:.9e}")).unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Input(format!("csv write failed: {e}")))
    }
}

/// Which parameters an optimiser step may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Trainable {
    #[default]
    All,
    /// Only the 8→1 output layer; everything upstream is frozen.
    OutputLayer,
}

/// Resumable training loop. Running `a` epochs then `b` more gives exactly
/// the same parameters as running `a + b` epochs in one go.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub history: History,
    adam: AdamState,
    rng: SeededRng,
    trainable: Trainable,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if model.window_len != config.window_len {
            return Err(Error::Config(format!(
                "model window {} does not match configured window {}",
                model.window_len, config.window_len
            )));
        }
        let adam = AdamState::new(&model);
        let rng = SeededRng::derive(config.seed, config.phase.stream_id());
        Ok(Self {
            model,
            config,
            history: History::default(),
            adam,
            rng,
            trainable: Trainable::All,
        })
    }

    pub fn with_trainable(mut self, trainable: Trainable) -> Self {
        self.trainable = trainable;
        self
    }

    pub fn run_epochs(&mut self, train: &WindowSet, val: Option<&WindowSet>, epochs: usize) -> Result<()> {
        if train.is_empty() {
            return Err(Error::input("no training windows"));
        }
        if train.window_len != self.model.window_len {
            return Err(Error::Config(format!(
                "windows of length {} for a model expecting {}",
                train.window_len, self.model.window_len
            )));
        }
        let n = train.len();
        let mut grads = Gradients::zeros_like(&self.model);
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..epochs {
            let epoch = self.history.len() + 1;
            order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
            self.rng.shuffle(&mut order);
            let mut sse = 0.0;
            for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
                let inputs: Vec<&[f64]> = batch.iter().map(|&i| train.inputs[i].as_slice()).collect();
                let targets: Vec<f64> = batch.iter().map(|&i| train.targets[i]).collect();
                grads.reset();
                let loss = accumulate_batch(&self.model, &inputs, &targets, &mut grads)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss became {loss} at epoch {epoch}, batch {}",
                        b + 1
                    )));
                }
                sse += loss * batch.len() as f64;
                if self.trainable == Trainable::OutputLayer {
                    grads.retain_output_layer();
                }
                adam_step(&mut self.model, &grads, &mut self.adam, self.config.learning_rate)
                    .map_err(|e| Error::Numeric(format!("{e} at epoch {epoch}, batch {}", b + 1)))?;
            }
            let val_mse = match val {
                Some(v) if !v.is_empty() => Some(dataset_mse(&self.model, v)?),
                _ => None,
            };
            self.history.epochs.push(EpochRecord {
                epoch,
                train_mse: sse / n as f64,
                val_mse,
            });
        }
        Ok(())
    }
}

/// Trains for `cfg.epochs` epochs: seeded shuffle each epoch, mini-batches
/// of `cfg.batch_size` (the last may be partial), one Adam step per batch.
pub fn train(model: Model, train: &WindowSet, val: Option<&WindowSet>, cfg: &TrainConfig) -> Result<(Model, History)> {
    let mut t = Trainer::new(model, cfg.clone())?;
    t.run_epochs(train, val, cfg.epochs)?;
    Ok((t.model, t.history))
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub round1: Checkpoint,
    pub global: Checkpoint,
    pub history_round1: History,
    pub history_round2: History,
}

/// Scaler shared by both pre-train rounds: fitted on the training portions
/// of both pools.
pub fn pretrain_scaler(
    sim_pool: &PretrainPool,
    real_pool: &PretrainPool,
    window_len: usize,
    horizon: usize,
) -> Result<Scaler> {
    let merged = PretrainPool {
        segments: sim_pool.segments.iter().chain(&real_pool.segments).cloned().collect(),
    };
    fit_pool_scaler(&merged, window_len, horizon, TRAIN_FRACTION)
}

/// Round 1 trains a fresh model on the simulated pool; round 2 continues on
/// the short real sub-datasets. Each round is checkpointed and the global
/// model records the round-1 hash as its parent. With `epochs_r2 == 0` the
/// global model is the round-1 model.
pub fn pretrain_workflow(
    sim_pool: &PretrainPool,
    real_pool: &PretrainPool,
    epochs_r1: usize,
    epochs_r2: usize,
    cfg: &TrainConfig,
) -> Result<PretrainOutcome> {
    let horizon = cfg.horizon()?;
    let scaler = pretrain_scaler(sim_pool, real_pool, cfg.window_len, horizon)?;
    let (sim_train, sim_val) = pool_windows(sim_pool, cfg.window_len, horizon, scaler, TRAIN_FRACTION)?;
    if sim_train.is_empty() {
        return Err(Error::input("simulated pool yields no training windows"));
    }

    let cfg1 = cfg.with_phase(Phase::Pretrain1, epochs_r1);
    let mut r1 = Trainer::new(Model::init(cfg.seed, cfg.window_len), cfg1.clone())?;
    r1.run_epochs(&sim_train, Some(&sim_val), epochs_r1)?;
    let round1 = Checkpoint::new(r1.model.clone(), scaler, cfg1, None);

    let (global, history_round2) = round_two(&round1, real_pool, epochs_r2, cfg)?;
    Ok(PretrainOutcome {
        round1,
        global,
        history_round1: r1.history,
        history_round2,
    })
}

fn round_two(
    round1: &Checkpoint,
    real_pool: &PretrainPool,
    epochs_r2: usize,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, History)> {
    if epochs_r2 == 0 {
        return Ok((round1.clone(), History::default()));
    }
    let horizon = cfg.horizon()?;
    let (train_ws, val_ws) = pool_windows(real_pool, cfg.window_len, horizon, round1.scaler, TRAIN_FRACTION)?;
    if train_ws.is_empty() {
        return Err(Error::input("real pre-train pool yields no training windows"));
    }
    let cfg2 = cfg.with_phase(Phase::Pretrain2, epochs_r2);
    let mut r2 = Trainer::new(round1.model.clone(), cfg2.clone())?;
    r2.run_epochs(&train_ws, Some(&val_ws), epochs_r2)?;
    let global = Checkpoint::new(r2.model, round1.scaler, cfg2, Some(round1.hash()));
    Ok((global, r2.history))
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub checkpoint: Checkpoint,
    pub history: History,
    pub report: MetricsReport,
    pub test: WindowSet,
    /// Test-split forecasts in mg/dl.
    pub predictions: Vec<f64>,
    pub train_windows: WindowSet,
}

impl WindowPredictor for Model {
    fn predict_window(&self, window: &[f64]) -> Result<f64> {
        self.predict(window)
    }
}

/// Windows one patient with the global scaler, trains on the first 67 % and
/// evaluates on the remainder.
pub fn finetune(global: &Checkpoint, patient: &SubDataset, cfg: &TrainConfig) -> Result<FinetuneOutcome> {
    if cfg.window_len != global.model.window_len {
        return Err(Error::Config(format!(
            "window length {} does not match checkpoint window {}",
            cfg.window_len, global.model.window_len
        )));
    }
    if cfg.ph_min != global.train_config.ph_min {
        return Err(Error::Config(format!(
            "prediction horizon {} min does not match checkpoint horizon {} min",
            cfg.ph_min, global.train_config.ph_min
        )));
    }
    let horizon = cfg.horizon()?;
    let ws = make_windows(patient, cfg.window_len, horizon, global.scaler)?;
    let (train_ws, test_ws) = chrono_split(&ws, TRAIN_FRACTION)?;

    let mut cfg_ft = cfg.with_phase(Phase::Finetune, cfg.epochs);
    cfg_ft.dataset = Some(patient.label());
    let mut t = Trainer::new(global.model.clone(), cfg_ft.clone())?;
    t.run_epochs(&train_ws, Some(&test_ws), cfg_ft.epochs)?;
    let (report, predictions) = evaluate(&t.model, &test_ws, &patient.label(), "lstm")?;
    let checkpoint = Checkpoint::new(t.model, global.scaler, cfg_ft, Some(global.hash()));
    Ok(FinetuneOutcome {
        checkpoint,
        history: t.history,
        report,
        test: test_ws,
        predictions,
        train_windows: train_ws,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub epochs: usize,
    pub rmse: f64,
    pub cc: f64,
    pub tl_min: f64,
    pub fit_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub ph_min: u32,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Row with the lowest RMSE; on ties the one with fewer epochs.
    pub fn select_min_rmse(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .min_by(|a, b| a.rmse.total_cmp(&b.rmse).then(a.epochs.cmp(&b.epochs)))
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Input(format!("csv write failed: {e}"));
        w.write_record(["epochs", "rmse", "cc", "tl_min", "fit_pct"])
            .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.epochs.to_string(),
                format!("{:.6}", r.rmse),
                format!("{:.6}", r.cc),
                format!("{:.6}", r.tl_min),
                format!("{:.6}", r.fit_pct),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Input(format!("csv write failed: {e}")))
    }
}

/// Epoch counts `from, from+step, …` up to and including `to`.
pub fn sweep_epochs(from: usize, to: usize, step: usize) -> Result<Vec<usize>> {
    if step == 0 || from == 0 || to < from {
        return Err(Error::Config(format!("invalid sweep range {from}..={to} step {step}")));
    }
    Ok((from..=to).step_by(step).collect())
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub table: SweepTable,
    /// Per-dataset fine-tune reports for every row, in row order.
    pub reports: Vec<Vec<MetricsReport>>,
}

/// For each epoch count `e`: pre-train both rounds with `e` epochs, fine-tune
/// every dataset for `cfg.epochs` epochs and average the test metrics.
/// Round 1 is trained incrementally across rows, which is exact because the
/// training loop is resumable.
pub fn epoch_sweep(
    sim_pool: &PretrainPool,
    real_pool: &PretrainPool,
    datasets: &[SubDataset],
    cfg: &TrainConfig,
    epochs: &[usize],
) -> Result<SweepOutcome> {
    if datasets.is_empty() {
        return Err(Error::input("epoch sweep needs at least one evaluation dataset"));
    }
    if epochs.windows(2).any(|w| w[1] <= w[0]) || epochs.first() == Some(&0) {
        return Err(Error::Config(
            "sweep epoch counts must be positive and increasing".into(),
        ));
    }
    let horizon = cfg.horizon()?;
    let scaler = pretrain_scaler(sim_pool, real_pool, cfg.window_len, horizon)?;
    let (sim_train, sim_val) = pool_windows(sim_pool, cfg.window_len, horizon, scaler, TRAIN_FRACTION)?;
    let cfg1 = cfg.with_phase(Phase::Pretrain1, epochs.last().copied().unwrap_or(1));
    let mut r1 = Trainer::new(Model::init(cfg.seed, cfg.window_len), cfg1)?;

    let mut rows = Vec::with_capacity(epochs.len());
    let mut reports = Vec::with_capacity(epochs.len());
    for &e in epochs {
        let done = r1.history.len();
        r1.run_epochs(&sim_train, Some(&sim_val), e - done)?;
        let round1 = Checkpoint::new(r1.model.clone(), scaler, cfg.with_phase(Phase::Pretrain1, e), None);
        let (global, _) = round_two(&round1, real_pool, e, cfg)?;
        let mut row_reports = Vec::with_capacity(datasets.len());
        for d in datasets {
            row_reports.push(finetune(&global, d, cfg)?.report);
        }
        let mean = mean_report(&row_reports).expect("nonempty");
        rows.push(SweepRow {
            epochs: e,
            rmse: mean.rmse,
            cc: mean.cc,
            tl_min: mean.tl_min,
            fit_pct: mean.fit_pct,
        });
        reports.push(row_reports);
    }
    Ok(SweepOutcome {
        table: SweepTable {
            ph_min: cfg.ph_min,
            rows,
        },
        reports,
    })
}
