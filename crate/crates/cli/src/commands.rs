use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use activesearch::active_loop::{run_active_loop, write_aggregate_csv, write_audit_csv, write_runs_csv, AggregateRow};
use activesearch::dissect::{dissect_report, write_dissect_csv};
use activesearch::metrics::MetricSummary;
use activesearch::netcore::checkpoint::{read_classifier, write_classifier, write_loss_history};
use activesearch::synthdata::{bundle_from_membership, read_split_csv, write_dataset_csv, write_split_csv, Dataset};
use activesearch::{RunReport, Sample};
use anyhow::{bail, Context, Result};

use crate::config::ExperimentConfig;
use crate::svg::{line_chart, scatter, Series};

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> activesearch::Result<()>) -> Result<PathBuf> {
    let mut w = create(dir, name)?;
    f(&mut w).with_context(|| format!("writing {name}"))?;
    w.flush()?;
    Ok(dir.join(name))
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

/// Writes `dataset.csv` and `split.csv`; returns a per-class count table.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let bundle = cfg.bundle()?;
    prepare(out)?;
    let mut samples: Vec<Sample> = bundle.train.iter().chain(&bundle.validation).chain(&bundle.pool).cloned().collect();
    samples.sort_by_key(|s| s.id);
    write_file(out, "dataset.csv", |w| write_dataset_csv(w, &samples, bundle.dim))?;
    write_file(out, "split.csv", |w| write_split_csv(w, &bundle))?;

    let mut table = String::from("class  rare  train  val  pool\n");
    for class in 0..bundle.num_classes {
        let count = |v: &[Sample]| v.iter().filter(|s| s.label == class).count();
        let (tr, va, po) = (count(&bundle.train), count(&bundle.validation), count(&bundle.pool));
        if tr + va + po == 0 {
            continue;
        }
        let rare = if bundle.rare_classes.contains(&class) { "yes" } else { "" };
        table.push_str(&format!("{class:>5}  {rare:>4}  {tr:>5}  {va:>3}  {po:>4}\n"));
    }
    Ok(table)
}

fn band(ci: &Option<MetricSummary<f64>>) -> Option<(f64, f64)> {
    ci.map(|c| (c.ci_lo, c.ci_hi))
}

fn series(name: &str, rows: &[AggregateRow], value: impl Fn(&AggregateRow) -> (f64, Option<(f64, f64)>)) -> Series {
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.t as f64, value(r).0)).collect();
    let band: Option<Vec<(f64, f64)>> = rows.iter().map(|r| value(r).1).collect();
    Series { name: name.to_string(), points, band }
}

fn write_curves(out: &Path, prefix: &str, reports: &[(String, &RunReport)]) -> Result<()> {
    let n_rare: Vec<Series> = reports.iter().map(|(name, r)| series(name, &r.aggregate, |a| (a.n_rare_mean, band(&a.n_rare_ci)))).collect();
    let f1: Vec<Series> = reports.iter().map(|(name, r)| series(name, &r.aggregate, |a| (a.f1_mean, band(&a.f1_ci)))).collect();
    fs::write(out.join(format!("{prefix}n_rare.svg")), line_chart("Rare training samples per class", "iteration t", "n_rare", &n_rare))?;
    fs::write(out.join(format!("{prefix}f1.svg")), line_chart("Macro F1 over rare classes", "iteration t", "F1", &f1))?;
    Ok(())
}

/// Runs the active loop and writes its CSVs, the first run's final
/// checkpoint, loss history and split, and optional plots.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    let bundle = cfg.bundle()?;
    let loop_cfg = cfg.loop_config()?;
    let report = run_active_loop(&bundle, &loop_cfg)?;
    prepare(out)?;
    write_file(out, "runs.csv", |w| write_runs_csv(w, &report))?;
    write_file(out, "aggregate.csv", |w| write_aggregate_csv(w, &report))?;
    write_file(out, "audit.csv", |w| write_audit_csv(w, &report))?;
    let first = &report.runs[0];
    write_file(out, "classifier.ckpt", |w| write_classifier(w, &first.final_classifier))?;
    write_file(out, "loss_history.csv", |w| write_loss_history(w, &first.final_losses))?;
    write_file(out, "final_split.csv", |w| write_split_csv(w, &first.final_bundle))?;
    if cfg.plots() {
        write_curves(out, "", &[(report.strategy.to_string(), &report)])?;
    }
    Ok(report)
}

/// Runs every config and writes one aggregate table with a `config` column.
pub fn compare(configs: &[(String, ExperimentConfig)], out: &Path, plots: bool) -> Result<String> {
    if configs.is_empty() {
        bail!("compare needs at least one config");
    }
    let mut reports = Vec::new();
    for (name, cfg) in configs {
        let bundle = cfg.bundle().with_context(|| format!("config {name}"))?;
        let loop_cfg = cfg.loop_config().with_context(|| format!("config {name}"))?;
        reports.push((name.clone(), run_active_loop(&bundle, &loop_cfg).with_context(|| format!("config {name}"))?));
    }
    prepare(out)?;
    let mut w = create(out, "compare.csv")?;
    writeln!(w, "config,t,strategy,n_rare_mean,n_rare_ci_lo,n_rare_ci_hi,f1_mean,f1_ci_lo,f1_ci_hi")?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut table = format!("{:<20} {:>3} {:>10} {:>8}\n", "config", "t", "n_rare", "f1");
    for (name, r) in &reports {
        for a in &r.aggregate {
            writeln!(
                w,
                "{name},{},{},{},{},{},{},{},{}",
                a.t,
                r.strategy,
                a.n_rare_mean,
                cell(a.n_rare_ci.map(|c| c.ci_lo)),
                cell(a.n_rare_ci.map(|c| c.ci_hi)),
                a.f1_mean,
                cell(a.f1_ci.map(|c| c.ci_lo)),
                cell(a.f1_ci.map(|c| c.ci_hi)),
            )?;
            table.push_str(&format!("{name:<20} {:>3} {:>10.3} {:>8.3}\n", a.t, a.n_rare_mean, a.f1_mean));
        }
    }
    w.flush()?;
    if plots {
        let refs: Vec<(String, &RunReport)> = reports.iter().map(|(n, r)| (n.clone(), r)).collect();
        write_curves(out, "compare_", &refs)?;
    }
    Ok(table)
}

/// Projects the validation set onto the rare class's uncentered principal
/// axes using a saved classifier. With `split`, the membership table (for
/// example a run's `final_split.csv`) replaces the configured split.
pub fn dissect(cfg: &ExperimentConfig, checkpoint: &Path, split: Option<&Path>, out: &Path) -> Result<PathBuf> {
    let (rare_class, k) = cfg.dissect_settings()?;
    let file = File::open(checkpoint).with_context(|| format!("cannot open checkpoint {}", checkpoint.display()))?;
    let classifier = read_classifier(BufReader::new(file)).with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
    let mut bundle = cfg.bundle()?;
    if let Some(path) = split {
        let file = File::open(path).with_context(|| format!("cannot open split {}", path.display()))?;
        let membership = read_split_csv(BufReader::new(file)).with_context(|| format!("reading split {}", path.display()))?;
        let samples: Vec<Sample> = bundle.train.iter().chain(&bundle.validation).chain(&bundle.pool).cloned().collect();
        let dataset = Dataset { samples, dim: bundle.dim, num_classes: bundle.num_classes };
        bundle = bundle_from_membership(&dataset, &membership, bundle.rare_classes.clone())?;
    }
    let rows = dissect_report(&classifier, &bundle, rare_class, k)?;
    prepare(out)?;
    let path = write_file(out, "dissect.csv", |w| write_dissect_csv(w, &rows, k))?;
    if cfg.plots() {
        let y = |c: &[f64]| c.get(1).copied().unwrap_or(0.0);
        let (rare, others): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r.class == rare_class);
        let pts = |v: &[&activesearch::dissect::DissectRow<f64>]| v.iter().map(|r| (r.coords[0], y(&r.coords))).collect::<Vec<_>>();
        let svg = scatter(
            "Validation set on the rare class's principal axes",
            "c0",
            "c1",
            &pts(&others),
            &pts(&rare),
            &format!("class {rare_class}"),
        );
        fs::write(out.join("dissect.svg"), svg)?;
    }
    Ok(path)
}
