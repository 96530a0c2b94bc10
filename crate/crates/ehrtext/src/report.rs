//! Report files: the full report as JSON, a long-format CSV with one
//! metric per row, and plot data for AUROC-versus-k curves.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ehrtext_core::eval::{k_label, MetricReport};

use crate::manifest::AtomicFile;
use crate::{Error, Result};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const PLOT_CSV: &str = "plot.csv";

pub fn report_files(dir: &Path) -> [PathBuf; 3] {
    [dir.join(REPORT_JSON), dir.join(REPORT_CSV), dir.join(PLOT_CSV)]
}

fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = AtomicFile::create(path)?;
    {
        let mut w = csv::Writer::from_writer(&mut f);
        for row in rows {
            w.serialize(row).map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    f.commit()
}

pub fn write_report(dir: &Path, report: &MetricReport) -> Result<Vec<PathBuf>> {
    let [json, csv, plot] = report_files(dir);
    let mut f = AtomicFile::create(&json)?;
    serde_json::to_writer_pretty(&mut f, report).map_err(|e| Error::format(&json, e.to_string()))?;
    f.commit()?;
    write_csv(&csv, &report.flat_rows())?;
    write_csv(&plot, &report.plot_rows())?;
    Ok(vec![json, csv, plot])
}

pub fn read_report(path: &Path) -> Result<MetricReport> {
    serde_json::from_str(&crate::io::read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}

/// Plain-text summary: macro AUROC per k, then every task's cells.
pub fn render_summary(report: &MetricReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "features: {}  head: {}", report.features, report.head);
    let _ = writeln!(out, "{:<24} {:>6} {:>8} {:>8} {:>8}  95% CI (AUROC)", "task", "k", "AUROC", "AUPRC", "Brier");
    for m in &report.macro_average {
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>8.4} {:>8.4} {:>8.4}",
            "macro",
            k_label(m.k),
            m.metrics.auroc,
            m.metrics.auprc,
            m.metrics.brier
        );
    }
    for c in &report.cells {
        match (&c.mean, &c.ci) {
            (Some(m), Some(ci)) => {
                let _ = writeln!(
                    out,
                    "{:<24} {:>6} {:>8.4} {:>8.4} {:>8.4}  [{:.4}, {:.4}]",
                    c.task_id,
                    k_label(c.k),
                    m.auroc,
                    m.auprc,
                    m.brier,
                    ci.auroc.lo,
                    ci.auroc.hi
                );
            }
            _ => {
                let reason = c.skip_reason.as_deref().unwrap_or("no result");
                let _ = writeln!(out, "{:<24} {:>6} skipped: {reason}", c.task_id, k_label(c.k));
            }
        }
    }
    out
}
