//! Report assembly and export. Per-round, per-class metric series from one or
//! more seeded repetitions are reduced to mean and range and written as CSV
//! (one row per class and round) and as structured JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ClassMetrics;

/// Mean and range of one metric across repetitions; `None` when the metric
/// was undefined in every repetition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl MetricSummary {
    fn over(values: impl Iterator<Item = Option<f64>>) -> Self {
        let defined: Vec<f64> = values.flatten().collect();
        if defined.is_empty() {
            return Self { mean: None, min: None, max: None };
        }
        let mean = defined.iter().sum::<f64>() / defined.len() as f64;
        let min = defined.iter().copied().fold(f64::INFINITY, f64::min);
        let max = defined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { mean: Some(mean), min: Some(min), max: Some(max) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub scenario: u8,
    pub round: u32,
    pub class: String,
    pub accuracy: MetricSummary,
    pub dr: MetricSummary,
    pub far: MetricSummary,
    pub f1: MetricSummary,
    /// Mean confusion counts across repetitions.
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: u8,
    pub repeats: usize,
    pub entries: Vec<ReportEntry>,
}

/// Reduces `runs[repeat][round][class]` to one entry per (round, class).
/// Every repetition must have the same round count and class ordering.
pub fn build_report(scenario: u8, runs: &[Vec<Vec<ClassMetrics>>]) -> Result<Report> {
    let first = runs.first().ok_or_else(|| Error::Argument("no runs to report".into()))?;
    if first.is_empty() {
        return Err(Error::Argument("runs contain no rounds".into()));
    }
    for run in runs {
        if run.len() != first.len() {
            return Err(Error::Argument("repetitions disagree on round count".into()));
        }
    }
    let mut entries = Vec::new();
    for (round, per_class) in first.iter().enumerate() {
        for (ci, class) in per_class.iter().enumerate() {
            let cell = |run: &Vec<Vec<ClassMetrics>>| -> Result<ClassMetrics> {
                let m = run
                    .get(round)
                    .and_then(|r| r.get(ci))
                    .ok_or_else(|| Error::Argument("ragged repetition shape".into()))?;
                if m.class != class.class {
                    return Err(Error::Argument("repetitions disagree on class order".into()));
                }
                Ok(m.clone())
            };
            let cells: Vec<ClassMetrics> =
                runs.iter().map(cell).collect::<Result<_>>()?;
            let n = cells.len() as f64;
            entries.push(ReportEntry {
                scenario,
                round: round as u32,
                class: class.class.clone(),
                accuracy: MetricSummary::over(cells.iter().map(|m| m.accuracy)),
                dr: MetricSummary::over(cells.iter().map(|m| m.dr)),
                far: MetricSummary::over(cells.iter().map(|m| m.far)),
                f1: MetricSummary::over(cells.iter().map(|m| m.f1)),
                tp: cells.iter().map(|m| m.counts.tp as f64).sum::<f64>() / n,
                tn: cells.iter().map(|m| m.counts.tn as f64).sum::<f64>() / n,
                fp: cells.iter().map(|m| m.counts.fp as f64).sum::<f64>() / n,
                fn_: cells.iter().map(|m| m.counts.fn_ as f64).sum::<f64>() / n,
            });
        }
    }
    Ok(Report { scenario, repeats: runs.len(), entries })
}

impl Report {
    /// Entries for the final round, in class order.
    pub fn final_round(&self) -> Vec<&ReportEntry> {
        let last = self.entries.iter().map(|e| e.round).max().unwrap_or(0);
        self.entries.iter().filter(|e| e.round == last).collect()
    }

    pub fn entry(&self, round: u32, class: &str) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.round == round && e.class == class)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    // f64 Display round-trips exactly through parse
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Data(format!("bad numeric field '{s}' in report CSV")))
}

const CSV_HEADER: [&str; 11] =
    ["scenario", "round", "class", "accuracy", "dr", "far", "f1", "tp", "tn", "fp", "fn"];

/// Writes the mean-valued table: one row per class and round.
pub fn write_csv(report: &Report, path: &Path) -> Result<()> {
    if report.entries.is_empty() {
        return Err(Error::Argument("empty report".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for e in &report.entries {
        w.write_record([
            e.scenario.to_string(),
            e.round.to_string(),
            e.class.clone(),
            fmt_opt(e.accuracy.mean),
            fmt_opt(e.dr.mean),
            fmt_opt(e.far.mean),
            fmt_opt(e.f1.mean),
            e.tp.to_string(),
            e.tn.to_string(),
            e.fp.to_string(),
            e.fn_.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One re-imported CSV row; used to check exports and by the `report`
/// subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub scenario: u8,
    pub round: u32,
    pub class: String,
    pub accuracy: Option<f64>,
    pub dr: Option<f64>,
    pub far: Option<f64>,
    pub f1: Option<f64>,
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    pub fn_: f64,
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::Data(format!("bad numeric field '{}'", field(i))))
        };
        out.push(CsvRow {
            scenario: num(0)? as u8,
            round: num(1)? as u32,
            class: field(2).to_string(),
            accuracy: parse_opt(field(3))?,
            dr: parse_opt(field(4))?,
            far: parse_opt(field(5))?,
            f1: parse_opt(field(6))?,
            tp: num(7)?,
            tn: num(8)?,
            fp: num(9)?,
            fn_: num(10)?,
        });
    }
    Ok(out)
}

pub fn write_json(report: &Report, path: &Path) -> Result<()> {
    if report.entries.is_empty() {
        return Err(Error::Argument("empty report".into()));
    }
    std::fs::write(path, serde_json::to_vec_pretty(report)?)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<Report> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{metrics_from_counts, ConfusionCounts};

    fn fake_run(rounds: u32, classes: &[&str], bias: u64) -> Vec<Vec<ClassMetrics>> {
        (0..rounds)
            .map(|r| {
                classes
                    .iter()
                    .map(|c| {
                        metrics_from_counts(
                            c,
                            ConfusionCounts {
                                tp: 10 + r as u64 + bias,
                                tn: 20,
                                fp: bias,
                                fn_: 2,
                            },
                        )
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn csv_row_count_and_round_trip() {
        let classes = ["DDoS", "DoS", "Reconnaissance", "Theft"];
        let runs = vec![fake_run(10, &classes, 0), fake_run(10, &classes, 1)];
        let report = build_report(3, &runs).unwrap();
        assert_eq!(report.entries.len(), 40);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        write_csv(&report, &path).unwrap();
        let rows = read_csv(&path).unwrap();
        assert_eq!(rows.len(), 40);
        for (row, entry) in rows.iter().zip(&report.entries) {
            assert_eq!(row.class, entry.class);
            let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) => (a - b).abs() < 1e-9,
                (None, None) => true,
                _ => false,
            };
            assert!(close(row.accuracy, entry.accuracy.mean));
            assert!(close(row.f1, entry.f1.mean));
            assert!((row.tp - entry.tp).abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip() {
        let runs = vec![fake_run(2, &["DDoS"], 0)];
        let report = build_report(1, &runs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_json(&report, &path).unwrap();
        assert_eq!(read_json(&path).unwrap(), report);
    }

    #[test]
    fn empty_report_rejected() {
        assert!(build_report(1, &[]).is_err());
        let report = Report { scenario: 1, repeats: 1, entries: vec![] };
        let dir = tempfile::tempdir().unwrap();
        assert!(write_csv(&report, &dir.path().join("r.csv")).is_err());
    }

    #[test]
    fn mean_and_range_across_repeats() {
        let runs = vec![fake_run(1, &["DoS"], 0), fake_run(1, &["DoS"], 4)];
        let report = build_report(2, &runs).unwrap();
        let e = &report.entries[0];
        assert_eq!(report.repeats, 2);
        let acc0 = 100.0 * 30.0 / 32.0;
        let acc1 = 100.0 * 34.0 / 40.0;
        assert!((e.accuracy.mean.unwrap() - (acc0 + acc1) / 2.0).abs() < 1e-12);
        assert!((e.accuracy.min.unwrap() - acc1.min(acc0)).abs() < 1e-12);
        assert!((e.accuracy.max.unwrap() - acc0.max(acc1)).abs() < 1e-12);
        assert!((e.tp - 12.0).abs() < 1e-12);
    }
}
