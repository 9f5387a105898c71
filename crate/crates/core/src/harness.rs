//! Experiment protocol: learning-rate grid search over repeated seeded runs,
//! best-result selection, and per-epoch training-time measurement.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{shuffled_batches, Dataset};
use crate::error::{Result, SkanError};
use crate::network::{per_sample_cross_entropy, softmax_cross_entropy, SkanNetwork, DEFAULT_ARCH, INIT_RULE};
use crate::optim::{sgd_step, AdamConfig, AdamState};
use crate::sfunc::SFuncKind;

pub const DEFAULT_EPOCHS: usize = 30;
pub const DEFAULT_REPEATS: usize = 5;
pub const DEFAULT_BATCH: usize = 64;
const EVAL_CHUNK: usize = 1000;

/// 0.0001..=0.0009 in steps of 0.0001, then 0.001..=0.01 in steps of 0.001.
pub fn default_lr_grid() -> Vec<f64> {
    vec![
        0.0001, 0.0002, 0.0003, 0.0004, 0.0005, 0.0006, 0.0007, 0.0008, 0.0009, //
        0.001, 0.002, 0.003, 0.004, 0.005, 0.006, 0.007, 0.008, 0.009, 0.01,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: SFuncKind,
    pub lr: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub arch: Vec<usize>,
    pub optimizer: Optimizer,
}

impl TrainConfig {
    pub fn new(kind: SFuncKind, lr: f64, seed: u64) -> Self {
        TrainConfig {
            kind,
            lr,
            seed,
            epochs: DEFAULT_EPOCHS,
            batch: DEFAULT_BATCH,
            arch: DEFAULT_ARCH.to_vec(),
            optimizer: Optimizer::Adam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(SkanError::Config("epochs must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(SkanError::Config("batch size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SkanError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.arch.len() < 2 || self.arch.contains(&0) {
            return Err(SkanError::Config(format!("invalid architecture {:?}", self.arch)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based epoch index.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    /// Wall time of forward + backward + update over the epoch; evaluation excluded.
    pub epoch_seconds: f64,
}

/// A run stopped because the training loss became non-finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    pub train_loss: f64,
    pub epoch_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: SFuncKind,
    pub lr: f64,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    pub divergence: Option<Divergence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RunKey {
    pub kind: SFuncKind,
    pub lr_bits: u64,
    pub seed: u64,
}

impl RunKey {
    pub fn new(kind: SFuncKind, lr: f64, seed: u64) -> Self {
        RunKey { kind, lr_bits: lr.to_bits(), seed }
    }
}

impl RunRecord {
    pub fn key(&self) -> RunKey {
        RunKey::new(self.kind, self.lr, self.seed)
    }

    pub fn succeeded(&self) -> bool {
        self.divergence.is_none() && !self.epochs.is_empty()
    }

    pub fn final_epoch(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    /// Epoch with the highest test accuracy (earliest on ties).
    pub fn best_epoch(&self) -> Option<&EpochMetrics> {
        self.epochs.iter().fold(None, |best: Option<&EpochMetrics>, e| match best {
            Some(b) if b.test_accuracy >= e.test_accuracy => Some(b),
            _ => Some(e),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean cross-entropy and accuracy over the whole dataset.
pub fn evaluate(net: &SkanNetwork, ds: &Dataset) -> Result<Evaluation> {
    if ds.width() != net.input_width() {
        return Err(SkanError::dim("evaluate", net.input_width(), ds.width()));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in ds.chunks(EVAL_CHUNK) {
        let logits = net.logits(&chunk.x)?;
        for l in per_sample_cross_entropy(&logits, &chunk.labels)? {
            loss_sum += l;
        }
        let preds = crate::network::argmax_rows(&logits);
        correct += preds.iter().zip(&chunk.labels).filter(|(p, &l)| **p == l as usize).count();
    }
    Ok(Evaluation { loss: loss_sum / ds.len() as f64, accuracy: correct as f64 / ds.len() as f64 })
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub network: SkanNetwork,
}

/// Trains a fresh network; `on_epoch` sees each epoch's metrics as they complete.
pub fn train(
    cfg: &TrainConfig,
    train_ds: &Dataset,
    test_ds: &Dataset,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_ds.width() != cfg.arch[0] || test_ds.width() != cfg.arch[0] {
        return Err(SkanError::Config(format!(
            "architecture input width {} does not match data width {}/{}",
            cfg.arch[0],
            train_ds.width(),
            test_ds.width()
        )));
    }
    let classes = *cfg.arch.last().expect("validated");
    if train_ds.labels().iter().chain(test_ds.labels()).any(|&l| l as usize >= classes) {
        return Err(SkanError::Config(format!("architecture has {classes} outputs but labels exceed it")));
    }

    let mut net = SkanNetwork::init(&cfg.arch, cfg.kind, cfg.seed)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), net.params())?;
    let mut record = RunRecord {
        kind: cfg.kind,
        lr: cfg.lr,
        seed: cfg.seed,
        epochs: Vec::with_capacity(cfg.epochs),
        divergence: None,
    };

    'epochs: for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in shuffled_batches(train_ds, cfg.batch, cfg.seed, epoch as u64)? {
            let (logits, tape) = net.forward(&batch.x)?;
            let (loss, d_logits) = softmax_cross_entropy(&logits, &batch.labels)?;
            if !loss.is_finite() {
                record.divergence =
                    Some(Divergence { epoch, train_loss: loss, epoch_seconds: start.elapsed().as_secs_f64() });
                break 'epochs;
            }
            let grads = net.backward(&tape, &d_logits)?;
            let mut params = net.params_mut();
            match cfg.optimizer {
                Optimizer::Adam => adam.step(&mut params, &grads)?,
                Optimizer::Sgd => sgd_step(cfg.lr, &mut params, &grads)?,
            }
            if params.iter().any(|p| !p.is_finite()) {
                record.divergence =
                    Some(Divergence { epoch, train_loss: f64::NAN, epoch_seconds: start.elapsed().as_secs_f64() });
                break 'epochs;
            }
            loss_sum += loss;
            batches += 1;
        }
        let epoch_seconds = start.elapsed().as_secs_f64();
        let eval = evaluate(&net, test_ds)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / batches as f64,
            test_loss: eval.loss,
            test_accuracy: eval.accuracy,
            epoch_seconds,
        };
        on_epoch(&metrics);
        record.epochs.push(metrics);
    }
    Ok(TrainOutcome { record, network: net })
}

pub fn train_run(cfg: &TrainConfig, train_ds: &Dataset, test_ds: &Dataset) -> Result<RunRecord> {
    Ok(train(cfg, train_ds, test_ds, |_| {})?.record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kinds: Vec<SFuncKind>,
    pub lr_grid: Vec<f64>,
    pub repeats: usize,
    pub epochs: usize,
    pub batch: usize,
    pub arch: Vec<usize>,
    pub base_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            kinds: SFuncKind::ALL.to_vec(),
            lr_grid: default_lr_grid(),
            repeats: DEFAULT_REPEATS,
            epochs: DEFAULT_EPOCHS,
            batch: DEFAULT_BATCH,
            arch: DEFAULT_ARCH.to_vec(),
            base_seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(SkanError::Config("sweep needs at least one sfunc".into()));
        }
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(SkanError::Config(format!("invalid learning-rate grid {:?}", self.lr_grid)));
        }
        if self.repeats == 0 {
            return Err(SkanError::Config("repeats must be >= 1".into()));
        }
        // Epochs, batch and arch are checked per run.
        self.run_config(self.kinds[0], self.lr_grid[0], self.base_seed).validate()
    }

    fn run_config(&self, kind: SFuncKind, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            kind,
            lr,
            seed,
            epochs: self.epochs,
            batch: self.batch,
            arch: self.arch.clone(),
            optimizer: Optimizer::Adam,
        }
    }

    /// Every run of the sweep, ordered by kind, then lr, then seed.
    pub fn plan(&self) -> Result<Vec<TrainConfig>> {
        self.validate()?;
        let mut runs = Vec::with_capacity(self.kinds.len() * self.lr_grid.len() * self.repeats);
        for &kind in &self.kinds {
            for &lr in &self.lr_grid {
                for r in 0..self.repeats as u64 {
                    runs.push(self.run_config(kind, lr, self.base_seed + r));
                }
            }
        }
        Ok(runs)
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Upper bound on concurrently executing runs.
    pub jobs: usize,
    /// Records from an earlier invocation; matching runs are not re-trained.
    pub existing: Vec<RunRecord>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { jobs: 1, existing: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRun {
    pub lr: f64,
    pub seed: u64,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub final_test_accuracy: f64,
    pub best_epoch: usize,
    pub best_epoch_test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrBest {
    pub lr: f64,
    pub best: Option<BestRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSummary {
    pub kind: SFuncKind,
    pub runs: usize,
    pub failed_runs: usize,
    pub no_successful_run: bool,
    pub best: Option<BestRun>,
    pub per_lr: Vec<LrBest>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub best: Vec<BestSummary>,
    /// How many runs were taken from [`SweepOptions::existing`].
    pub reused: usize,
}

/// Runs every planned `(kind, lr, seed)` and selects the best result per kind.
pub fn sweep(
    cfg: &SweepConfig,
    train_ds: &Dataset,
    test_ds: &Dataset,
    opts: SweepOptions,
    on_run: impl Fn(&RunRecord) + Sync,
) -> Result<SweepOutcome> {
    let plan = cfg.plan()?;
    let mut existing: BTreeMap<RunKey, RunRecord> = opts.existing.into_iter().map(|r| (r.key(), r)).collect();
    let mut slots: Vec<Option<RunRecord>> = plan
        .iter()
        .map(|run| {
            existing
                .remove(&RunKey::new(run.kind, run.lr, run.seed))
                .filter(|r| r.divergence.is_some() || r.epochs.len() == run.epochs)
        })
        .collect();
    let reused = slots.iter().filter(|s| s.is_some()).count();
    let todo: Vec<usize> = (0..plan.len()).filter(|&i| slots[i].is_none()).collect();

    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(todo.len()));
    let jobs = opts.jobs.clamp(1, todo.len().max(1));
    thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let n = next.fetch_add(1, Ordering::Relaxed);
                let Some(&slot) = todo.get(n) else { break };
                let outcome = train_run(&plan[slot], train_ds, test_ds);
                if let Ok(record) = &outcome {
                    on_run(record);
                }
                results.lock().expect("no panics while holding the lock").push((slot, outcome));
            });
        }
    });
    for (slot, outcome) in results.into_inner().expect("workers joined") {
        slots[slot] = Some(outcome?);
    }

    let records: Vec<RunRecord> = slots.into_iter().map(|s| s.expect("every slot filled")).collect();
    let best = select_best(&records);
    Ok(SweepOutcome { records, best, reused })
}

fn better(a: &RunRecord, b: &RunRecord) -> bool {
    let (fa, fb) = (a.final_epoch().expect("successful"), b.final_epoch().expect("successful"));
    if fa.test_accuracy != fb.test_accuracy {
        return fa.test_accuracy > fb.test_accuracy;
    }
    if fa.test_loss != fb.test_loss {
        return fa.test_loss < fb.test_loss;
    }
    if a.lr != b.lr {
        return a.lr < b.lr;
    }
    a.seed < b.seed
}

fn best_of<'a>(records: impl Iterator<Item = &'a RunRecord>) -> Option<BestRun> {
    let winner = records.filter(|r| r.succeeded()).fold(None, |best: Option<&RunRecord>, r| match best {
        Some(b) if !better(r, b) => Some(b),
        _ => Some(r),
    })?;
    let last = winner.final_epoch().expect("successful");
    let peak = winner.best_epoch().expect("successful");
    Some(BestRun {
        lr: winner.lr,
        seed: winner.seed,
        final_train_loss: last.train_loss,
        final_test_loss: last.test_loss,
        final_test_accuracy: last.test_accuracy,
        best_epoch: peak.epoch,
        best_epoch_test_accuracy: peak.test_accuracy,
    })
}

/// Best run per kind by final-epoch test accuracy, then lower test loss, then lower lr, then lower seed.
///
/// Pure function of the records; kinds appear in [`SFuncKind::ALL`] order.
pub fn select_best(records: &[RunRecord]) -> Vec<BestSummary> {
    SFuncKind::ALL
        .iter()
        .filter(|k| records.iter().any(|r| r.kind == **k))
        .map(|&kind| {
            let of_kind: Vec<&RunRecord> = records.iter().filter(|r| r.kind == kind).collect();
            let mut lrs: Vec<f64> = of_kind.iter().map(|r| r.lr).collect();
            lrs.sort_by(f64::total_cmp);
            lrs.dedup();
            let per_lr = lrs
                .into_iter()
                .map(|lr| LrBest { lr, best: best_of(of_kind.iter().copied().filter(|r| r.lr == lr)) })
                .collect();
            let best = best_of(of_kind.iter().copied());
            BestSummary {
                kind,
                runs: of_kind.len(),
                failed_runs: of_kind.iter().filter(|r| !r.succeeded()).count(),
                no_successful_run: best.is_none(),
                best,
                per_lr,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindTiming {
    pub kind: SFuncKind,
    pub runs: usize,
    pub epochs: usize,
    pub mean_epoch_seconds: f64,
    /// Sample standard deviation; 0 for a single epoch.
    pub std_epoch_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub kinds: Vec<KindTiming>,
}

impl TimingReport {
    pub fn get(&self, kind: SFuncKind) -> Option<&KindTiming> {
        self.kinds.iter().find(|k| k.kind == kind)
    }

    /// `mean(a) / mean(b)`.
    pub fn ratio(&self, a: SFuncKind, b: SFuncKind) -> Option<f64> {
        Some(self.get(a)?.mean_epoch_seconds / self.get(b)?.mean_epoch_seconds)
    }
}

/// Mean and spread of epoch wall time per kind, over every completed epoch of every run.
pub fn timing_report(records: &[RunRecord]) -> Result<TimingReport> {
    let kinds: Vec<KindTiming> = SFuncKind::ALL
        .iter()
        .filter_map(|&kind| {
            let runs: Vec<&RunRecord> = records.iter().filter(|r| r.kind == kind).collect();
            let times: Vec<f64> = runs.iter().flat_map(|r| r.epochs.iter().map(|e| e.epoch_seconds)).collect();
            if times.is_empty() {
                return None;
            }
            let n = times.len() as f64;
            let mean = times.iter().sum::<f64>() / n;
            let std = if times.len() > 1 {
                (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Some(KindTiming {
                kind,
                runs: runs.len(),
                epochs: times.len(),
                mean_epoch_seconds: mean,
                std_epoch_seconds: std,
            })
        })
        .collect();
    if kinds.is_empty() {
        return Err(SkanError::Data("timing report needs at least one completed epoch".into()));
    }
    Ok(TimingReport { kinds })
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    kind: SFuncKind,
    lr: f64,
    seed: u64,
    epoch: usize,
    train_loss: f64,
    test_loss: f64,
    test_acc: f64,
    epoch_seconds: f64,
}

pub const CSV_COLUMNS: [&str; 8] =
    ["kind", "lr", "seed", "epoch", "train_loss", "test_loss", "test_acc", "epoch_seconds"];

/// One row per `(run, epoch)`. A diverged run gets one extra row for the
/// failing epoch with a non-finite `train_loss` and NaN test metrics.
pub fn write_records_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    append_records_csv(records, out, true)
}

/// Like [`write_records_csv`]; the header row is written only if `header` is set.
pub fn append_records_csv<W: Write>(records: &[RunRecord], out: W, header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(out);
    for r in records {
        for e in &r.epochs {
            w.serialize(CsvRow {
                kind: r.kind,
                lr: r.lr,
                seed: r.seed,
                epoch: e.epoch,
                train_loss: e.train_loss,
                test_loss: e.test_loss,
                test_acc: e.test_accuracy,
                epoch_seconds: e.epoch_seconds,
            })?;
        }
        if let Some(d) = &r.divergence {
            w.serialize(CsvRow {
                kind: r.kind,
                lr: r.lr,
                seed: r.seed,
                epoch: d.epoch,
                train_loss: d.train_loss,
                test_loss: f64::NAN,
                test_acc: f64::NAN,
                epoch_seconds: d.epoch_seconds,
            })?;
        }
    }
    if records.is_empty() && header {
        w.write_record(CSV_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_records_csv`]; rows are grouped into runs by `(kind, lr, seed)` in first-seen order.
pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut order: Vec<RunKey> = Vec::new();
    let mut runs: BTreeMap<RunKey, RunRecord> = BTreeMap::new();
    for row in rd.deserialize() {
        let row: CsvRow = row?;
        let key = RunKey::new(row.kind, row.lr, row.seed);
        let rec = runs.entry(key).or_insert_with(|| {
            order.push(key);
            RunRecord { kind: row.kind, lr: row.lr, seed: row.seed, epochs: Vec::new(), divergence: None }
        });
        if rec.divergence.is_some() {
            return Err(SkanError::Data(format!(
                "rows after divergence for {} lr={} seed={}",
                row.kind, row.lr, row.seed
            )));
        }
        if row.train_loss.is_finite() {
            rec.epochs.push(EpochMetrics {
                epoch: row.epoch,
                train_loss: row.train_loss,
                test_loss: row.test_loss,
                test_accuracy: row.test_acc,
                epoch_seconds: row.epoch_seconds,
            });
        } else {
            rec.divergence =
                Some(Divergence { epoch: row.epoch, train_loss: row.train_loss, epoch_seconds: row.epoch_seconds });
        }
    }
    Ok(order.into_iter().map(|k| runs.remove(&k).expect("inserted")).collect())
}

/// Settings that are not part of [`SweepConfig`] but shape every result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub optimizer: String,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub init: String,
    pub loss: String,
    pub bias_terms: bool,
    pub train_samples: usize,
    pub test_samples: usize,
    pub subset: Option<usize>,
    pub subset_seed: u64,
    pub pixel_scaling: String,
    pub selection: String,
}

impl RunSettings {
    pub fn new(train_samples: usize, test_samples: usize, subset: Option<usize>, subset_seed: u64) -> Self {
        let adam = AdamConfig::with_lr(1.0);
        RunSettings {
            optimizer: "adam".into(),
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            init: INIT_RULE.into(),
            loss: "softmax cross-entropy, mean over batch".into(),
            bias_terms: false,
            train_samples,
            test_samples,
            subset,
            subset_seed,
            pixel_scaling: "pixel / 255, no centering".into(),
            selection: "final-epoch test accuracy, then lower test loss, then lower lr, then lower seed".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config: SweepConfig,
    pub settings: RunSettings,
    pub total_runs: usize,
    pub best: Vec<BestSummary>,
    pub timing: Option<TimingReport>,
    /// `mean epoch time of kind / mean epoch time of larctan`.
    pub time_ratio_to_larctan: BTreeMap<String, f64>,
}

impl SweepSummary {
    pub fn new(config: SweepConfig, settings: RunSettings, records: &[RunRecord]) -> Self {
        let timing = timing_report(records).ok();
        let time_ratio_to_larctan = timing
            .as_ref()
            .map(|t| {
                t.kinds
                    .iter()
                    .filter_map(|k| Some((k.kind.name().to_string(), t.ratio(k.kind, SFuncKind::LArctan)?)))
                    .collect()
            })
            .unwrap_or_default();
        SweepSummary {
            config,
            settings,
            total_runs: records.len(),
            best: select_best(records),
            timing,
            time_ratio_to_larctan,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn epoch(epoch: usize, acc: f64, loss: f64, secs: f64) -> EpochMetrics {
        EpochMetrics { epoch, train_loss: loss, test_loss: loss, test_accuracy: acc, epoch_seconds: secs }
    }

    fn record(kind: SFuncKind, lr: f64, seed: u64, epochs: Vec<EpochMetrics>) -> RunRecord {
        RunRecord { kind, lr, seed, epochs, divergence: None }
    }

    fn tiny_data(n: usize, seed: u64) -> Dataset {
        // Two separable classes in 4 dimensions.
        let images = Matrix::from_fn(n, 4, |r, c| {
            let class = r % 2;
            let base = if (c < 2) == (class == 0) { 0.8 } else { 0.1 };
            base + 0.1 * (((r as u64 * 31 + c as u64 * 7 + seed) % 10) as f64 / 10.0)
        });
        let labels = (0..n).map(|r| (r % 2) as u8).collect();
        Dataset::new(images, labels).unwrap()
    }

    #[test]
    fn lr_grid_matches_protocol() {
        let grid = default_lr_grid();
        assert_eq!(grid.len(), 19);
        assert_eq!(grid[0], 0.0001);
        assert_eq!(grid[8], 0.0009);
        assert_eq!(grid[9], 0.001);
        assert_eq!(grid[18], 0.01);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn plan_counts() {
        let cfg = SweepConfig {
            kinds: vec![SFuncKind::LSin],
            lr_grid: vec![0.001, 0.002],
            repeats: 2,
            ..SweepConfig::default()
        };
        assert_eq!(cfg.plan().unwrap().len(), 4);
        assert_eq!(SweepConfig::default().plan().unwrap().len(), 285);
        let bad = SweepConfig { repeats: 0, ..SweepConfig::default() };
        assert!(bad.plan().is_err());
    }

    #[test]
    fn train_rejects_zero_epochs() {
        let ds = tiny_data(8, 0);
        let mut cfg = TrainConfig::new(SFuncKind::LArctan, 0.01, 0);
        cfg.arch = vec![4, 3, 2];
        cfg.epochs = 0;
        assert!(matches!(train_run(&cfg, &ds, &ds), Err(SkanError::Config(_))));
    }

    #[test]
    fn train_rejects_arch_data_mismatch() {
        let ds = tiny_data(8, 0);
        let cfg = TrainConfig::new(SFuncKind::LArctan, 0.01, 0);
        assert!(train_run(&cfg, &ds, &ds).is_err());
    }

    #[test]
    fn train_run_is_deterministic_and_learns() {
        let train_ds = tiny_data(64, 1);
        let test_ds = tiny_data(32, 2);
        for kind in SFuncKind::ALL {
            let mut cfg = TrainConfig::new(kind, 0.01, 3);
            cfg.arch = vec![4, 6, 2];
            cfg.epochs = 8;
            cfg.batch = 8;
            let strip = |r: RunRecord| -> Vec<(f64, f64, f64)> {
                r.epochs.iter().map(|e| (e.train_loss, e.test_loss, e.test_accuracy)).collect()
            };
            let a = train_run(&cfg, &train_ds, &test_ds).unwrap();
            assert_eq!(a.epochs.len(), 8);
            assert!(a.epochs.iter().all(|e| e.epoch_seconds > 0.0));
            let first = a.epochs[0].train_loss;
            let last = a.epochs[7].train_loss;
            assert!(last < first, "{kind}: {first} -> {last}");
            let b = train_run(&cfg, &train_ds, &test_ds).unwrap();
            assert_eq!(strip(a), strip(b));
        }
    }

    #[test]
    fn sgd_optimizer_also_trains() {
        let ds = tiny_data(32, 0);
        let mut cfg = TrainConfig::new(SFuncKind::LSin, 0.5, 0);
        cfg.arch = vec![4, 2];
        cfg.epochs = 5;
        cfg.batch = 4;
        cfg.optimizer = Optimizer::Sgd;
        let r = train_run(&cfg, &ds, &ds).unwrap();
        assert!(r.epochs[4].train_loss < r.epochs[0].train_loss);
    }

    #[test]
    fn sweep_runs_everything_and_is_schedule_independent() {
        let train_ds = tiny_data(32, 5);
        let test_ds = tiny_data(16, 6);
        let cfg = SweepConfig {
            kinds: vec![SFuncKind::LSin, SFuncKind::LArctan],
            lr_grid: vec![0.003, 0.01],
            repeats: 2,
            epochs: 2,
            batch: 8,
            arch: vec![4, 3, 2],
            base_seed: 10,
        };
        let serial = sweep(&cfg, &train_ds, &test_ds, SweepOptions::default(), |_| {}).unwrap();
        assert_eq!(serial.records.len(), 8);
        let parallel = sweep(&cfg, &train_ds, &test_ds, SweepOptions { jobs: 3, existing: vec![] }, |_| {}).unwrap();
        let metric_view = |o: &SweepOutcome| -> Vec<(RunKey, Vec<(u64, u64)>)> {
            o.records
                .iter()
                .map(|r| (r.key(), r.epochs.iter().map(|e| (e.test_loss.to_bits(), e.train_loss.to_bits())).collect()))
                .collect()
        };
        assert_eq!(metric_view(&serial), metric_view(&parallel));
        assert_eq!(serial.best, parallel.best);
        assert_eq!(serial.records.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![10, 11, 10, 11, 10, 11, 10, 11]);

        // Resuming re-uses all records.
        let resumed =
            sweep(&cfg, &train_ds, &test_ds, SweepOptions { jobs: 1, existing: serial.records.clone() }, |_| {
                panic!("nothing should be retrained")
            })
            .unwrap();
        assert_eq!(resumed.reused, 8);
        assert_eq!(resumed.records, serial.records);
    }

    #[test]
    fn best_selection_tie_breaks() {
        let k = SFuncKind::LSin;
        let records = vec![
            record(k, 0.002, 0, vec![epoch(1, 0.9, 0.30, 1.0)]),
            record(k, 0.001, 0, vec![epoch(1, 0.9, 0.30, 1.0)]),
            record(k, 0.003, 0, vec![epoch(1, 0.9, 0.20, 1.0)]),
            record(k, 0.004, 0, vec![epoch(1, 0.8, 0.10, 1.0)]),
        ];
        let best = select_best(&records);
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].best.as_ref().unwrap().lr, 0.003);
        let without_lowest_loss: Vec<_> = records.iter().filter(|r| r.lr != 0.003).cloned().collect();
        assert_eq!(select_best(&without_lowest_loss)[0].best.as_ref().unwrap().lr, 0.001);
        assert_eq!(best[0].per_lr.len(), 4);
        // Selection is a pure function of the records.
        assert_eq!(select_best(&records), best);
    }

    #[test]
    fn best_uses_final_epoch_and_reports_peak() {
        let k = SFuncKind::LCos;
        let records = vec![
            record(k, 0.001, 0, vec![epoch(1, 0.95, 0.1, 1.0), epoch(2, 0.5, 0.9, 1.0)]),
            record(k, 0.002, 0, vec![epoch(1, 0.6, 0.5, 1.0), epoch(2, 0.7, 0.4, 1.0)]),
        ];
        let best = select_best(&records)[0].best.clone().unwrap();
        assert_eq!(best.lr, 0.002);
        assert_eq!((best.best_epoch, best.best_epoch_test_accuracy), (2, 0.7));
    }

    #[test]
    fn all_diverged_is_flagged() {
        let mut r = record(SFuncKind::LArctan, 0.01, 0, vec![]);
        r.divergence = Some(Divergence { epoch: 1, train_loss: f64::NAN, epoch_seconds: 0.1 });
        let best = select_best(&[r.clone(), RunRecord { seed: 1, ..r }]);
        assert!(best[0].no_successful_run);
        assert_eq!(best[0].failed_runs, 2);
        assert!(best[0].best.is_none());
    }

    #[test]
    fn timing_report_means() {
        let r = record(SFuncKind::LSin, 0.001, 0, vec![epoch(1, 0.5, 1.0, 1.0), epoch(2, 0.5, 1.0, 3.0)]);
        let report = timing_report(&[r]).unwrap();
        let t = report.get(SFuncKind::LSin).unwrap();
        assert_eq!(t.mean_epoch_seconds, 2.0);
        assert_eq!(t.std_epoch_seconds, 2f64.sqrt());
        assert!(timing_report(&[]).is_err());
    }

    #[test]
    fn csv_round_trip_including_divergence() {
        let mut diverged = record(SFuncKind::LCos, 0.01, 4, vec![epoch(1, 0.4, 2.0, 0.5)]);
        diverged.divergence = Some(Divergence { epoch: 2, train_loss: f64::INFINITY, epoch_seconds: 0.25 });
        let records = vec![
            record(SFuncKind::LArctan, 0.0003, 1, vec![epoch(1, 0.91, 0.3, 1.5), epoch(2, 0.93, 0.25, 1.25)]),
            diverged,
        ];
        let mut buf = Vec::new();
        write_records_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("kind,lr,seed,epoch,train_loss,test_loss,test_acc,epoch_seconds\n"));
        assert!(text.contains("larctan,0.0003,1,1,"));
        let back = read_records_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0], records[0]);
        assert_eq!(back[1].epochs, records[1].epochs);
        assert_eq!(back[1].divergence.as_ref().unwrap().epoch, 2);
    }

    #[test]
    fn appended_rows_read_back_as_one_file() {
        let a = record(SFuncKind::LSin, 0.001, 0, vec![epoch(1, 0.5, 1.0, 1.0)]);
        let b = record(SFuncKind::LCos, 0.002, 1, vec![epoch(1, 0.6, 0.9, 1.0)]);
        let mut buf = Vec::new();
        append_records_csv(std::slice::from_ref(&a), &mut buf, true).unwrap();
        append_records_csv(std::slice::from_ref(&b), &mut buf, false).unwrap();
        assert_eq!(read_records_csv(buf.as_slice()).unwrap(), vec![a, b]);
    }

    #[test]
    fn empty_csv_has_header_only() {
        let mut buf = Vec::new();
        write_records_csv(&[], &mut buf).unwrap();
        assert_eq!(read_records_csv(buf.as_slice()).unwrap(), vec![]);
    }

    #[test]
    fn summary_echoes_config() {
        let r = record(SFuncKind::LSin, 0.001, 0, vec![epoch(1, 0.5, 1.0, 2.0)]);
        let a = record(SFuncKind::LArctan, 0.001, 0, vec![epoch(1, 0.5, 1.0, 4.0)]);
        let s = SweepSummary::new(SweepConfig::default(), RunSettings::new(100, 10, Some(100), 0), &[r, a]);
        assert_eq!(s.time_ratio_to_larctan["lsin"], 0.5);
        let json = s.to_json().unwrap();
        assert!(json.contains("\"lr_grid\""));
        assert!(json.contains("Uniform"));
    }
}
