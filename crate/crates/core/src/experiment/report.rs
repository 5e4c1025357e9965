use std::path::Path;

use serde::Serialize;

use super::{GridOutcome, RunResult, SfsStep};
use crate::error::{Error, Result};
use crate::tasks::TaskKind;

/// Column order of results files.
pub const RESULT_COLUMNS: [&str; 18] = [
    "run",
    "fingerprint",
    "plan_fingerprint",
    "hidden",
    "learning_rate",
    "l2",
    "objective",
    "seed",
    "best_epoch",
    "epochs_run",
    "heldout_loss",
    "test_bce",
    "test_mae",
    "f_pause50",
    "f_pause500",
    "f_onset",
    "f_overlap",
    "onset_threshold",
];

/// Metrics aggregated across runs, in summary order.
const METRICS: [&str; 8] = [
    "heldout_loss",
    "test_bce",
    "test_mae",
    "f_pause50",
    "f_pause500",
    "f_onset",
    "f_overlap",
    "onset_threshold",
];

fn metric(r: &RunResult, name: &str) -> Option<f64> {
    match name {
        "heldout_loss" => Some(r.heldout_loss),
        "test_bce" => Some(r.test_bce),
        "test_mae" => Some(r.test_mae),
        "f_pause50" => r.scores.get(TaskKind::Pause50),
        "f_pause500" => r.scores.get(TaskKind::Pause500),
        "f_onset" => r.scores.get(TaskKind::Onset),
        "f_overlap" => r.scores.get(TaskKind::Overlap),
        "onset_threshold" => r.onset_threshold,
        _ => unreachable!("unknown metric {name}"),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn row(index: usize, r: &RunResult) -> Vec<String> {
    let mut out = vec![
        index.to_string(),
        r.fingerprint.clone(),
        r.plan_fingerprint.clone(),
        r.hyper.hidden.to_string(),
        r.hyper.learning_rate.to_string(),
        r.hyper.l2.to_string(),
        r.objective.name().to_string(),
        r.seed.to_string(),
        r.best_epoch.to_string(),
        r.epochs_run.to_string(),
    ];
    out.extend(METRICS.iter().map(|m| opt(metric(r, m))));
    out
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::data(format!("{}: {e}", path.display()))
}

/// One row per run, ordered by fingerprint and then run index.
pub fn write_results_csv(path: &Path, runs: &[RunResult]) -> Result<()> {
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| runs[a].fingerprint.cmp(&runs[b].fingerprint).then(a.cmp(&b)));
    let mut w = writer(path)?;
    w.write_record(RESULT_COLUMNS).map_err(csv_err(path))?;
    for i in order {
        w.write_record(row(i, &runs[i])).map_err(csv_err(path))?;
    }
    finish(w, path)
}

/// Grid-search runs with a leading `stage` column.
pub fn write_grid_csv(path: &Path, outcome: &GridOutcome) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["stage"];
    header.extend(RESULT_COLUMNS);
    w.write_record(&header).map_err(csv_err(path))?;
    for (stage, runs) in [("1", &outcome.stage1), ("2", &outcome.stage2)] {
        for (i, r) in runs.iter().enumerate() {
            let mut rec = vec![stage.to_string()];
            rec.extend(row(i, r));
            w.write_record(&rec).map_err(csv_err(path))?;
        }
    }
    finish(w, path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: &'static str,
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    /// Runs that reported the metric.
    pub n: usize,
}

/// Mean and standard deviation of every metric across runs.
pub fn summarize(runs: &[RunResult]) -> Vec<MetricSummary> {
    METRICS
        .iter()
        .map(|&m| {
            let xs: Vec<f64> = runs.iter().filter_map(|r| metric(r, m)).collect();
            if xs.is_empty() {
                return MetricSummary { metric: m, mean: None, std: None, n: 0 };
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            MetricSummary {
                metric: m,
                mean: Some(mean),
                std: Some(var.sqrt()),
                n: xs.len(),
            }
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, summary: &[MetricSummary]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["metric", "mean", "std", "n"]).map_err(csv_err(path))?;
    for s in summary {
        w.write_record([s.metric.to_string(), opt(s.mean), opt(s.std), s.n.to_string()])
            .map_err(csv_err(path))?;
    }
    finish(w, path)
}

/// `step,feature,loss` for the chosen features, plus every evaluated
/// candidate in `<stem>_candidates.csv` next to it.
pub fn write_sfs_report(path: &Path, steps: &[SfsStep]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["step", "feature", "loss"]).map_err(csv_err(path))?;
    for s in steps {
        w.write_record([s.step.to_string(), s.feature.clone(), s.loss.to_string()])
            .map_err(csv_err(path))?;
    }
    finish(w, path)?;

    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sfs");
    let cpath = path.with_file_name(format!("{stem}_candidates.csv"));
    let mut w = writer(&cpath)?;
    w.write_record(["step", "feature", "hidden", "learning_rate", "l2", "loss"])
        .map_err(csv_err(&cpath))?;
    for s in steps {
        for c in &s.candidates {
            w.write_record([
                s.step.to_string(),
                c.feature.clone(),
                c.hyper.hidden.to_string(),
                c.hyper.learning_rate.to_string(),
                c.hyper.l2.to_string(),
                c.loss.to_string(),
            ])
            .map_err(csv_err(&cpath))?;
        }
    }
    finish(w, &cpath)
}

/// Reads a results file back as string rows, checking the header.
pub fn read_results_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    if header != RESULT_COLUMNS {
        return Err(Error::data(format!("{}: unexpected header", path.display())));
    }
    r.records()
        .map(|rec| Ok(rec.map_err(csv_err(path))?.iter().map(String::from).collect()))
        .collect()
}
