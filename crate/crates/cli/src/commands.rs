use std::fs::{self, File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use skan::data::{load_mnist, NUM_CLASSES};
use skan::harness::{
    self, append_records_csv, evaluate, read_records_csv, write_records_csv, EpochMetrics, RunSettings, SweepSummary,
    TrainConfig,
};
use skan::{Checkpoint, Dataset, RunRecord, SkanError, SweepConfig, SweepOptions};

use crate::{DataArgs, EvalArgs, ModelArgs, Precision, SweepArgs, TrainArgs, UsageError};

const MNIST_WIDTH: usize = 784;

fn check_mnist_arch(arch: &[usize]) -> Result<()> {
    if arch.len() < 2 || arch[0] != MNIST_WIDTH || arch[arch.len() - 1] != NUM_CLASSES {
        bail!(UsageError(format!(
            "--arch must start at {MNIST_WIDTH} and end at {NUM_CLASSES} for MNIST, got {arch:?}"
        )));
    }
    if arch.contains(&0) {
        bail!(UsageError(format!("--arch widths must be >= 1, got {arch:?}")));
    }
    Ok(())
}

fn check_model(model: &ModelArgs) -> Result<()> {
    check_mnist_arch(&model.arch)?;
    if model.batch == 0 {
        bail!(UsageError("--batch must be >= 1".into()));
    }
    match model.precision {
        Precision::F64 => Ok(()),
    }
}

struct LoadedData {
    train: Dataset,
    test: Dataset,
    settings: RunSettings,
}

fn load_data(args: &DataArgs) -> Result<LoadedData> {
    let mnist =
        load_mnist(&args.mnist_dir).with_context(|| format!("loading MNIST from {}", args.mnist_dir.display()))?;
    let train = match args.subset {
        Some(0) => bail!(UsageError("--subset must be >= 1".into())),
        Some(n) => mnist.train.subset(n, args.subset_seed)?,
        None => mnist.train,
    };
    let settings = RunSettings::new(train.len(), mnist.test.len(), args.subset, args.subset_seed);
    Ok(LoadedData { train, test: mnist.test, settings })
}

fn write_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_records_csv(records, BufWriter::new(file))?;
    Ok(())
}

fn format_epoch(label: &str, e: &EpochMetrics) -> String {
    format!(
        "{label} epoch {:>3}: train_loss {:.5} test_loss {:.5} test_acc {:.4} ({:.2}s)",
        e.epoch, e.train_loss, e.test_loss, e.test_accuracy, e.epoch_seconds
    )
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    command: &'static str,
    config: &'a TrainConfig,
    settings: &'a RunSettings,
    precision: &'static str,
    mnist_dir: &'a Path,
    checkpoint: &'a Path,
    metrics_csv: &'a Path,
    record: &'a RunRecord,
}

pub fn train(args: TrainArgs) -> Result<()> {
    check_model(&args.model)?;
    let cfg = TrainConfig {
        kind: args.sfunc,
        lr: args.lr,
        seed: args.seed,
        epochs: args.epochs,
        batch: args.model.batch,
        arch: args.model.arch.clone(),
        optimizer: args.optimizer.into(),
    };
    cfg.validate()?;
    let data = load_data(&args.data)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let stem = format!("{}_lr{}_seed{}", cfg.kind, cfg.lr, cfg.seed);
    let label = stem.clone();
    let outcome = harness::train(&cfg, &data.train, &data.test, |e| eprintln!("{}", format_epoch(&label, e)))?;

    let csv_path = args.out.join(format!("{stem}.csv"));
    write_csv(&csv_path, std::slice::from_ref(&outcome.record))?;

    let ckpt_path = args.checkpoint.clone().unwrap_or_else(|| args.out.join(format!("{stem}.ckpt.json")));
    let mut ckpt = outcome.network.to_checkpoint(Some(cfg.seed));
    if let Some(last) = outcome.record.final_epoch().filter(|_| outcome.record.succeeded()) {
        ckpt.test_accuracy = Some(last.test_accuracy);
        ckpt.test_loss = Some(last.test_loss);
    }
    ckpt.save(&ckpt_path).with_context(|| format!("writing {}", ckpt_path.display()))?;

    let summary = TrainSummary {
        command: "train",
        config: &cfg,
        settings: &data.settings,
        precision: "f64",
        mnist_dir: &args.data.mnist_dir,
        checkpoint: &ckpt_path,
        metrics_csv: &csv_path,
        record: &outcome.record,
    };
    let summary_path = args.out.join(format!("{stem}.summary.json"));
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;

    if let Some(d) = &outcome.record.divergence {
        bail!(SkanError::Internal(format!(
            "training diverged in epoch {} (train loss {}); results written to {}",
            d.epoch,
            d.train_loss,
            csv_path.display()
        )));
    }
    let last = outcome.record.final_epoch().expect("at least one epoch");
    println!("final test accuracy: {:.4}", last.test_accuracy);
    println!("wrote {}, {}, {}", csv_path.display(), ckpt_path.display(), summary_path.display());
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    check_model(&args.model)?;
    let cfg = SweepConfig {
        kinds: args.sfuncs.clone(),
        lr_grid: args.lrs.clone().unwrap_or_else(skan::default_lr_grid),
        repeats: args.repeats,
        epochs: args.epochs,
        batch: args.model.batch,
        arch: args.model.arch.clone(),
        base_seed: args.base_seed,
    };
    let plan = cfg.plan()?;
    if args.jobs == 0 {
        bail!(UsageError("--jobs must be >= 1".into()));
    }
    if args.dry_run {
        for kind in &cfg.kinds {
            println!("{kind}: {} runs", plan.iter().filter(|r| r.kind == *kind).count());
        }
        println!(
            "total: {} runs ({} sfuncs x {} lrs x {} repeats), {} epochs each",
            plan.len(),
            cfg.kinds.len(),
            cfg.lr_grid.len(),
            cfg.repeats,
            cfg.epochs
        );
        return Ok(());
    }

    let data = load_data(&args.data)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let csv_path = args.out.join("sweep.csv");
    let existing = if args.resume && csv_path.is_file() {
        read_records_csv(File::open(&csv_path)?).with_context(|| format!("reading {}", csv_path.display()))?
    } else {
        write_csv(&csv_path, &[])?;
        Vec::new()
    };

    // Completed runs are appended as they finish so an interrupted sweep can resume.
    let appender = Mutex::new(OpenOptions::new().append(true).open(&csv_path)?);
    let total = plan.len();
    let done = Mutex::new(existing.len().min(total));
    let outcome = skan::sweep(&cfg, &data.train, &data.test, SweepOptions { jobs: args.jobs, existing }, |rec| {
        if let Ok(mut f) = appender.lock() {
            if let Err(e) = append_records_csv(std::slice::from_ref(rec), &mut *f, false) {
                eprintln!("warning: could not append to {}: {e}", csv_path.display());
            }
        }
        let mut n = done.lock().expect("progress lock");
        *n += 1;
        let status = match (rec.final_epoch(), &rec.divergence) {
            (_, Some(d)) => format!("diverged in epoch {}", d.epoch),
            (Some(e), None) => format!("test_acc {:.4}", e.test_accuracy),
            (None, None) => "no epochs".into(),
        };
        eprintln!("[{n}/{total}] {} lr={} seed={}: {status}", rec.kind, rec.lr, rec.seed);
    })?;
    drop(appender);
    if outcome.reused > 0 {
        eprintln!("reused {} completed runs from {}", outcome.reused, csv_path.display());
    }

    write_csv(&csv_path, &outcome.records)?;
    let summary = SweepSummary::new(cfg, data.settings, &outcome.records);
    let summary_path = args.out.join("summary.json");
    fs::write(&summary_path, summary.to_json()?)?;

    for b in &summary.best {
        match &b.best {
            Some(best) => println!(
                "{}: best final test accuracy {:.4} at lr={} seed={} ({} of {} runs failed)",
                b.kind, best.final_test_accuracy, best.lr, best.seed, b.failed_runs, b.runs
            ),
            None => println!("{}: no successful run ({} runs)", b.kind, b.runs),
        }
    }
    if let Some(timing) = &summary.timing {
        for t in &timing.kinds {
            println!(
                "{}: mean epoch time {:.3}s (sd {:.3}s over {} epochs)",
                t.kind, t.mean_epoch_seconds, t.std_epoch_seconds, t.epochs
            );
        }
    }
    println!("wrote {} and {}", csv_path.display(), summary_path.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let path: &PathBuf = &args.checkpoint;
    let ckpt = Checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let stored = ckpt.test_accuracy;
    let net = ckpt.into_network()?;
    let mnist =
        load_mnist(&args.mnist_dir).with_context(|| format!("loading MNIST from {}", args.mnist_dir.display()))?;
    if net.input_width() != mnist.test.width() || net.num_classes() != NUM_CLASSES {
        bail!(SkanError::Data(format!(
            "checkpoint arch {:?} does not fit MNIST ({} inputs, {NUM_CLASSES} classes)",
            net.arch(),
            mnist.test.width()
        )));
    }
    let result = evaluate(&net, &mnist.test)?;
    println!("{} {:?}: test loss {:.6}, test accuracy {:.4}", net.kind(), net.arch(), result.loss, result.accuracy);
    if let Some(stored) = stored {
        let delta = result.accuracy - stored;
        println!("stored accuracy {stored:.4}, delta {delta}");
        if delta != 0.0 {
            bail!(SkanError::Internal(format!(
                "accuracy {} differs from the {} stored in the checkpoint",
                result.accuracy, stored
            )));
        }
    }
    Ok(())
}
