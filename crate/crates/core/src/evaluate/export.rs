//! CSV and JSON report files.
//!
//! Every file starts with `# key: value` provenance lines (tool version and
//! the SHA-256 of the run configuration). Metric files carry no timestamps so
//! identical runs produce identical bytes.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::aggregate::{CurveBand, EnsembleReport};
use super::metrics::{Metric, MetricsReport, ScoredPrediction, METRIC_NAMES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportHeader {
    pub tool_version: String,
    pub config_sha256: String,
}

impl ReportHeader {
    pub fn new(config_sha256: impl Into<String>) -> Self {
        Self { tool_version: crate::VERSION.to_string(), config_sha256: config_sha256.into() }
    }

    fn write_comment(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "# tool_version: {}", self.tool_version)?;
        writeln!(w, "# config_sha256: {}", self.config_sha256)
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn cell(m: &Metric) -> String {
    match m.value() {
        Some(v) => format!("{v:.6}"),
        None => "NA".into(),
    }
}

fn metric_row(w: &mut impl Write, label: &str, r: &MetricsReport) -> std::io::Result<()> {
    let cells: Vec<String> = r.values().iter().map(|m| cell(m)).collect();
    writeln!(w, "{label},{}", cells.join(","))
}

/// One row per fold, then `mean`, `std` (over folds) and `pooled`.
pub fn write_metrics_csv(path: &Path, header: &ReportHeader, report: &EnsembleReport) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    header.write_comment(&mut w).map_err(io)?;
    writeln!(w, "# threshold: {}", report.threshold).map_err(io)?;
    writeln!(w, "row,{}", METRIC_NAMES.join(",")).map_err(io)?;
    for (i, r) in report.per_fold.iter().enumerate() {
        metric_row(&mut w, &format!("fold{i}"), r).map_err(io)?;
    }
    metric_row(&mut w, "mean", &report.fold_mean).map_err(io)?;
    metric_row(&mut w, "std", &report.fold_std).map_err(io)?;
    metric_row(&mut w, "pooled", &report.pooled).map_err(io)?;
    w.flush().map_err(io)
}

/// Single-model metrics as one CSV row.
pub fn write_single_metrics_csv(path: &Path, header: &ReportHeader, label: &str, r: &MetricsReport) -> Result<()> {
    write_metric_rows(path, header, &[(label.to_string(), r)])
}

/// Arbitrary labeled metric rows, in the same layout as [`write_metrics_csv`].
pub fn write_metric_rows(path: &Path, header: &ReportHeader, rows: &[(String, &MetricsReport)]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    header.write_comment(&mut w).map_err(io)?;
    writeln!(w, "row,{}", METRIC_NAMES.join(",")).map_err(io)?;
    for (label, r) in rows {
        metric_row(&mut w, label, r).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Lowercase hex SHA-256, used for config hashes in report headers.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    crate::nn::params::hex_string(&Sha256::digest(bytes))
}

pub fn write_curve_csv(path: &Path, header: &ReportHeader, axis: &str, band: &CurveBand) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    header.write_comment(&mut w).map_err(io)?;
    writeln!(w, "{axis},mean,std").map_err(io)?;
    for ((g, m), s) in band.grid.iter().zip(&band.mean).zip(&band.std) {
        writeln!(w, "{g:.2},{m:.6},{s:.6}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_predictions_csv(path: &Path, header: &ReportHeader, preds: &[ScoredPrediction]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    header.write_comment(&mut w).map_err(io)?;
    writeln!(w, "id,label,score").map_err(io)?;
    for p in preds {
        writeln!(w, "{},{},{:.8}", p.id, p.label, p.score).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads back a predictions file written by [`write_predictions_csv`].
pub fn read_predictions_csv(path: &Path) -> Result<Vec<ScoredPrediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let label = rec[1].parse().map_err(|e: crate::Error| Error::Data(format!("{}: {e}", path.display())))?;
        let score: f64 = rec[2].parse().map_err(|_| Error::Data(format!("{}: bad score {:?}", path.display(), &rec[2])))?;
        out.push(ScoredPrediction { id: rec[0].to_string(), score, label });
    }
    Ok(out)
}

#[derive(Serialize)]
struct Summary<'a> {
    header: &'a ReportHeader,
    /// `fold_mean` averages fold metrics; `pooled` uses the summed confusion matrix.
    note: &'static str,
    report: &'a EnsembleReport,
}

pub fn write_summary_json(path: &Path, header: &ReportHeader, report: &EnsembleReport) -> Result<()> {
    let w = create(path)?;
    let s = Summary {
        header,
        note: "fold_mean/fold_std average per-fold metrics; pooled derives from the element-wise sum of fold confusion matrices, so pooled precision and F1 can differ from the fold means",
        report,
    };
    serde_json::to_writer_pretty(w, &s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::aggregate_folds;
    use crate::ingest::Label;

    #[test]
    fn files_are_reproducible_and_readable() {
        let preds: Vec<ScoredPrediction> = (0..10)
            .map(|i| ScoredPrediction { id: format!("p{i}"), score: i as f64 / 10.0, label: if i > 5 { Label::Vm } else { Label::Normal } })
            .collect();
        let r = aggregate_folds(&[preds.clone(), preds.clone()], 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let h = ReportHeader::new("abc");
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_metrics_csv(&a, &h, &r).unwrap();
        write_metrics_csv(&b, &h, &r).unwrap();
        let ta = std::fs::read_to_string(&a).unwrap();
        assert_eq!(ta, std::fs::read_to_string(&b).unwrap());
        assert!(ta.contains("config_sha256: abc"));
        assert_eq!(ta.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 + 3);
        let p = dir.path().join("p.csv");
        write_predictions_csv(&p, &h, &preds).unwrap();
        assert_eq!(read_predictions_csv(&p).unwrap(), preds);
        write_summary_json(&dir.path().join("s.json"), &h, &r).unwrap();
        write_curve_csv(&dir.path().join("roc.csv"), &h, "fpr", r.mean_roc.as_ref().unwrap()).unwrap();
    }
}
