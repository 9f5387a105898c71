//! SVG charts: per-epoch curves of each kind's best run, and mean epoch time per kind.

use std::fs::{self, File};
use std::path::Path;

use anyhow::{bail, Context, Result};
use plotters::prelude::*;
use skan::harness::read_records_csv;
use skan::{select_best, timing_report, RunRecord, SFuncKind, SkanError};

use crate::PlotsArgs;

const SIZE: (u32, u32) = (800, 500);

fn color(kind: SFuncKind) -> RGBColor {
    match kind {
        SFuncKind::LSin => RGBColor(31, 119, 180),
        SFuncKind::LCos => RGBColor(255, 127, 14),
        SFuncKind::LArctan => RGBColor(44, 160, 44),
    }
}

type Series<'a> = (SFuncKind, Vec<(f64, f64)>);

fn line_chart(path: &Path, title: &str, y_label: &str, series: &[Series<'_>]) -> Result<()> {
    let max_epoch = series.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.0)).fold(1.0, f64::max);
    let (mut lo, mut hi) = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.1))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = (hi - lo) * 0.05;

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(1.0..max_epoch.max(2.0), (lo - pad)..(hi + pad))?;
    chart.configure_mesh().x_desc("epoch").y_desc(y_label).draw()?;
    for (kind, pts) in series {
        let c = color(*kind);
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), c.stroke_width(2)))?
            .label(kind.name())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

fn bar_chart(path: &Path, title: &str, bars: &[(SFuncKind, f64)]) -> Result<()> {
    let top = bars.iter().map(|b| b.1).fold(0.0, f64::max) * 1.15;
    let n = bars.len();
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..n as f64, 0.0..top.max(1e-9))?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n * 2 + 1)
        .x_label_formatter(&|x| {
            let idx = x.floor() as usize;
            if (x - idx as f64 - 0.5).abs() < 1e-6 && idx < n {
                bars[idx].0.name().to_string()
            } else {
                String::new()
            }
        })
        .y_desc("mean seconds per epoch")
        .draw()?;
    chart.draw_series(bars.iter().enumerate().map(|(i, (kind, secs))| {
        Rectangle::new([(i as f64 + 0.2, 0.0), (i as f64 + 0.8, *secs)], color(*kind).filled())
    }))?;
    root.present()?;
    Ok(())
}

pub fn run(args: PlotsArgs) -> Result<()> {
    let mut records: Vec<RunRecord> = Vec::new();
    for path in &args.csvs {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        records.extend(read_records_csv(file).with_context(|| format!("reading {}", path.display()))?);
    }
    if records.iter().all(|r| r.epochs.is_empty()) {
        bail!(SkanError::Data("no completed epochs in the given CSV files".into()));
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let best_runs: Vec<&RunRecord> = select_best(&records)
        .iter()
        .filter_map(|summary| {
            let best = summary.best.as_ref()?;
            records.iter().find(|r| r.kind == summary.kind && r.lr == best.lr && r.seed == best.seed)
        })
        .collect();
    let curves = |metric: fn(&skan::EpochMetrics) -> f64| -> Vec<Series<'_>> {
        best_runs.iter().map(|r| (r.kind, r.epochs.iter().map(|e| (e.epoch as f64, metric(e))).collect())).collect()
    };

    let outputs = [
        ("accuracy.svg", "Test accuracy per epoch (best run per sfunc)", "test accuracy", curves(|e| e.test_accuracy)),
        ("loss.svg", "Test loss per epoch (best run per sfunc)", "test loss", curves(|e| e.test_loss)),
        ("train_loss.svg", "Training loss per epoch (best run per sfunc)", "train loss", curves(|e| e.train_loss)),
    ];
    for (name, title, y_label, series) in &outputs {
        let path = args.out.join(name);
        line_chart(&path, title, y_label, series).with_context(|| format!("drawing {}", path.display()))?;
        println!("wrote {}", path.display());
    }

    let timing = timing_report(&records)?;
    let bars: Vec<(SFuncKind, f64)> = timing.kinds.iter().map(|k| (k.kind, k.mean_epoch_seconds)).collect();
    let path = args.out.join("epoch_time.svg");
    bar_chart(&path, "Mean training time per epoch", &bars).with_context(|| format!("drawing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}
