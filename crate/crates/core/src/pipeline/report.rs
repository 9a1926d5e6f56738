//! Line-delimited JSON records and plain-text tables.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use crate::error::{Error, Result};

/// Appends one JSON object per line to `path`, creating it if needed.
pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// One row per report: backbone, mode, AUC, logloss, best epoch, seconds.
pub fn metrics_table(reports: &[MetricsReport]) -> String {
    let mut out = format!(
        "{:<8} {:<10} {:>8} {:>8} {:>5} {:>9}\n",
        "backbone", "mode", "auc", "logloss", "epoch", "seconds"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<8} {:<10} {:>8.4} {:>8.4} {:>5} {:>9.1}",
            r.backbone, r.mode, r.auc, r.logloss, r.best_epoch, r.train_seconds
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub variant: String,
    pub batches: usize,
    pub batch_size: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub min_seconds: f64,
}

pub fn timing_table(rows: &[TimingRecord]) -> String {
    let mut out = format!(
        "{:<18} {:>12} {:>12} {:>12} {:>8}\n",
        "variant", "mean (s)", "std (s)", "min (s)", "batches"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<18} {:>12.3e} {:>12.3e} {:>12.3e} {:>8}",
            r.variant, r.mean_seconds, r.std_seconds, r.min_seconds, r.batches
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_appends() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        let a = TimingRecord {
            variant: "base".into(),
            batches: 3,
            batch_size: 4,
            mean_seconds: 0.5,
            std_seconds: 0.1,
            min_seconds: 0.25,
        };
        append_jsonl(&p, &[a.clone()]).unwrap();
        append_jsonl(&p, &[a.clone()]).unwrap();
        let back: Vec<TimingRecord> = read_jsonl(&p).unwrap();
        assert_eq!(back, vec![a.clone(), a]);
        assert!(timing_table(&back).lines().nth(1).unwrap().starts_with("base"));
    }
}
