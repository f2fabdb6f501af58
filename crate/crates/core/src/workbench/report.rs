//! Markdown and CSV reports derived purely from stored run artifacts.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use super::dataset::read_artifact;
use super::pipeline::{MetricsRecord, LOSSES_FILE, METRICS_FILE, RETRIEVER_LOSSES_FILE, RUN_MANIFEST};
use crate::error::{Error, Result};
use crate::inference::TaskKind;
use crate::training::{gaussian_smooth, smoothing_sigma, TrainReport};

pub const REPORT_FILE: &str = "report.md";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const RETRIEVER_CURVE_FILE: &str = "retriever_loss_curve.csv";
pub const BENCH_TABLE_FILE: &str = "bench.md";
pub const ABLATION_TABLE_FILE: &str = "ablation.md";
pub const SWEEP_FILE: &str = "sweep_k.csv";

/// `step,raw,smoothed` with the display smoothing width.
pub fn loss_curve_csv(losses: &[f64]) -> String {
    let smoothed = gaussian_smooth(losses, smoothing_sigma(losses.len()));
    let mut out = String::from("step,raw,smoothed\n");
    for (i, (r, s)) in losses.iter().zip(&smoothed).enumerate() {
        out.push_str(&format!("{},{},{}\n", i + 1, r, s));
    }
    out
}

fn read_losses(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    TrainReport::read_losses(BufReader::new(fs::File::open(path)?))
}

fn loss_summary(title: &str, losses: &[f64]) -> String {
    let smoothed = gaussian_smooth(losses, smoothing_sigma(losses.len()));
    let mut out = format!("## {title}\n\n");
    if losses.is_empty() {
        out.push_str("No optimizer steps were recorded.\n\n");
        return out;
    }
    // Ten evenly spaced checkpoints of the curve.
    out.push_str("| step | raw | smoothed |\n|---|---|---|\n");
    let n = losses.len();
    let mut last = usize::MAX;
    for j in 0..=10 {
        let i = ((n - 1) * j) / 10;
        if i == last {
            continue;
        }
        last = i;
        out.push_str(&format!("| {} | {:.4} | {:.4} |\n", i + 1, losses[i], smoothed[i]));
    }
    out.push('\n');
    out
}

fn metrics_section(m: &MetricsRecord) -> String {
    let mut out = String::from("## Test metrics\n\n| key | value |\n|---|---|\n");
    let mut row = |k: &str, v: String| out.push_str(&format!("| {k} | {v} |\n"));
    row("mode", m.mode.name().to_string());
    match m.metrics.task {
        TaskKind::Single => row("accuracy", format!("{:.4}", m.metrics.accuracy.unwrap_or(0.0))),
        TaskKind::Multi => {
            row("precision", format!("{:.4}", m.metrics.precision.unwrap_or(0.0)));
            row("recall", format!("{:.4}", m.metrics.recall.unwrap_or(0.0)));
            row("F1", format!("{:.4}", m.metrics.f1.unwrap_or(0.0)));
        }
    }
    row("instances", m.metrics.instances.to_string());
    if let Some(t) = m.tau {
        row("tau", format!("{t:.2}"));
    }
    row("chunk k", m.chunk_k.to_string());
    row(
        "candidates",
        m.top_k.map_or_else(|| "full space".to_string(), |k| format!("top-{k}")),
    );
    let cases = m.metrics.instances.max(1) as f64;
    row("forward passes / case", format!("{:.2}", m.forward_passes as f64 / cases));
    row("tokens / case", format!("{:.2}", m.tokens_processed as f64 / cases));
    row("epochs run", m.epochs_run.to_string());
    out.push('\n');
    if m.dev_metrics.iter().any(Option::is_some) {
        out.push_str("Dev metric per epoch: ");
        let parts: Vec<String> = m
            .dev_metrics
            .iter()
            .map(|v| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}")))
            .collect();
        out.push_str(&parts.join(", "));
        out.push_str("\n\n");
    }
    out
}

fn sweep_section(csv: &str) -> String {
    let mut out = String::from("## k sweep (dev)\n\n| k | recall@k | metric |\n|---|---|---|\n");
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() == 3 {
            let num = |s: &str| s.parse::<f64>().map(|v| format!("{v:.4}")).unwrap_or_else(|_| s.to_string());
            out.push_str(&format!("| {} | {} | {} |\n", cols[0], num(cols[1]), num(cols[2])));
        }
    }
    out.push('\n');
    out
}

/// Renders `report.md` and the loss-curve CSVs into `dir`. Requires the
/// training losses, metrics and run manifest; benchmark, ablation and sweep
/// outputs are included when present.
pub fn report(dir: &Path) -> Result<String> {
    let losses = read_losses(&dir.join(LOSSES_FILE))?;
    let metrics: MetricsRecord = serde_json::from_str(&read_artifact(&dir.join(METRICS_FILE))?)?;
    let manifest = read_artifact(&dir.join(RUN_MANIFEST))?;

    let mut md = String::from("# Run report\n\n## Run\n\n```text\n");
    md.push_str(&manifest);
    md.push_str("```\n\n");
    md.push_str(&metrics_section(&metrics));
    md.push_str(&loss_summary("Training loss", &losses));
    fs::write(dir.join(LOSS_CURVE_FILE), loss_curve_csv(&losses))?;

    let retriever_losses = dir.join(RETRIEVER_LOSSES_FILE);
    if retriever_losses.exists() {
        let r = read_losses(&retriever_losses)?;
        md.push_str(&loss_summary("Retriever loss", &r));
        fs::write(dir.join(RETRIEVER_CURVE_FILE), loss_curve_csv(&r))?;
    }
    for (file, title) in [(BENCH_TABLE_FILE, "Inference cost"), (ABLATION_TABLE_FILE, "Ablation")] {
        let path = dir.join(file);
        if path.exists() {
            md.push_str(&format!("## {title}\n\n"));
            md.push_str(&fs::read_to_string(path)?);
            md.push('\n');
        }
    }
    let sweep = dir.join(SWEEP_FILE);
    if sweep.exists() {
        md.push_str(&sweep_section(&fs::read_to_string(sweep)?));
    }
    fs::write(dir.join(REPORT_FILE), &md)?;
    Ok(md)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::Metrics;
    use crate::training::Mode;

    fn seed_run(dir: &Path) {
        let report = TrainReport {
            losses: (0..120).map(|i| 1.0 / (1.0 + i as f64)).collect(),
            ..TrainReport::default()
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        fs::write(dir.join(LOSSES_FILE), buf).unwrap();
        let record = MetricsRecord {
            mode: Mode::Parallel,
            metrics: Metrics {
                task: TaskKind::Multi,
                instances: 10,
                accuracy: None,
                precision: Some(0.9),
                recall: Some(0.8),
                f1: Some(0.847),
            },
            tau: Some(0.42),
            chunk_k: 8,
            top_k: Some(32),
            forward_passes: 40,
            tokens_processed: 4000,
            epochs_run: 3,
            dev_metrics: vec![Some(0.5), Some(0.7), Some(0.8)],
        };
        fs::write(dir.join(METRICS_FILE), serde_json::to_string(&record).unwrap()).unwrap();
        fs::write(dir.join(RUN_MANIFEST), "dataset = x\n").unwrap();
    }

    #[test]
    fn report_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        seed_run(dir.path());
        fs::write(dir.path().join(SWEEP_FILE), "k,recall,metric\n1,0.5,0.4\n8,1,0.9\n").unwrap();
        let a = report(dir.path()).unwrap();
        let curve_a = fs::read(dir.path().join(LOSS_CURVE_FILE)).unwrap();
        let b = report(dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(fs::read(dir.path().join(LOSS_CURVE_FILE)).unwrap(), curve_a);
        assert!(a.contains("| F1 | 0.8470 |"));
        assert!(a.contains("| 8 | 1.0000 | 0.9000 |"));
        assert_eq!(fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap(), a);
    }

    #[test]
    fn missing_artifacts_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(report(dir.path()), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn curve_has_raw_and_smoothed_columns() {
        let csv = loss_curve_csv(&[1.0, 1.0, 1.0]);
        assert_eq!(csv, "step,raw,smoothed\n1,1,1\n2,1,1\n3,1,1\n");
    }
}
