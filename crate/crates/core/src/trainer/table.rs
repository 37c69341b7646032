//! CSV and aligned plain-text metric tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::MetricsRecord;
use crate::trainer::ablation::AblationReport;
use crate::trainer::eval::EvalReport;

/// One line of a metrics table; `label` is an image stem, a variant name,
/// `mean`, or `baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub lab_l2: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl TableRow {
    pub fn new(label: impl Into<String>, m: &MetricsRecord) -> Self {
        Self {
            label: label.into(),
            lab_l2: m.lab_l2,
            psnr: m.psnr,
            ssim: m.ssim,
        }
    }

    pub fn metrics(&self) -> MetricsRecord {
        MetricsRecord {
            lab_l2: self.lab_l2,
            psnr: self.psnr,
            ssim: self.ssim,
        }
    }
}

/// Per-image rows followed by a `mean` row.
pub fn eval_table(report: &EvalReport) -> Vec<TableRow> {
    let mut rows: Vec<TableRow> = report
        .rows
        .iter()
        .map(|r| TableRow::new(&r.stem, &r.metrics()))
        .collect();
    rows.push(TableRow::new("mean", &report.mean));
    rows
}

/// A `baseline` row followed by one row per variant.
pub fn ablation_table(report: &AblationReport) -> Vec<TableRow> {
    let mut rows = vec![TableRow::new("baseline", &report.baseline)];
    rows.extend(
        report
            .rows
            .iter()
            .map(|r| TableRow::new(r.variant.name(), &r.metrics)),
    );
    rows
}

pub fn write_csv(path: &Path, rows: &[TableRow]) -> Result<()> {
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<TableRow>> {
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().map(|row| row.map_err(err)).collect()
}

pub fn format_text(rows: &[TableRow]) -> String {
    let header = ["", "L2-LAB", "PSNR", "SSIM"];
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                format!("{:.10}", r.lab_l2),
                format!("{:.10}", r.psnr),
                format!("{:.10}", r.ssim),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: [&str; 4]| {
        out.push_str(&format!("{:<w0$}", cols[0], w0 = widths[0]));
        for (c, w) in cols[1..].iter().zip(&widths[1..]) {
            out.push_str(&format!("  {c:>w$}"));
        }
        out.push('\n');
    };
    line(header);
    for row in &cells {
        line([&row[0], &row[1], &row[2], &row[3]]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![
            TableRow {
                label: "a".into(),
                lab_l2: 1.0 / 3.0,
                psnr: 24.123456789012345,
                ssim: 0.9,
            },
            TableRow {
                label: "mean".into(),
                lab_l2: 0.1 + 0.2,
                psnr: 99.0,
                ssim: 1.0,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, &rows).unwrap();
        assert_eq!(read_csv(&p).unwrap(), rows);
        let text = format_text(&rows);
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("24.1234567890"));
    }
}
