//! JSON report and flat TSV export.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::MetricsReport;

pub const TSV_HEADER: &str = "period\tstrategy\tmetric\tvalue";

pub fn report_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_report(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, report_json(report))?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid report {}: {e}", path.display())))
}

/// One row per period and metric. Values use six fractional digits.
pub fn metrics_tsv(report: &MetricsReport) -> String {
    let mut s = format!("{TSV_HEADER}\n");
    let strategy = &report.run.strategy;
    for p in &report.periods {
        let _ = writeln!(s, "{}\t{strategy}\trecall\t{:.6}", p.index, p.recall);
        let _ = writeln!(s, "{}\t{strategy}\tndcg\t{:.6}", p.index, p.ndcg);
        for c in &p.extra {
            let _ = writeln!(s, "{}\t{strategy}\trecall@{}\t{:.6}", p.index, c.k, c.recall);
            let _ = writeln!(s, "{}\t{strategy}\tndcg@{}\t{:.6}", p.index, c.k, c.ndcg);
        }
    }
    s
}

/// Writes `report.json` and `metrics.tsv` into `dir`.
pub fn export_metrics(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_report(report, dir.join("report.json"))?;
    std::fs::write(dir.join("metrics.tsv"), metrics_tsv(report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{aggregate_report, CutoffMetrics, PeriodMetrics, RunInfo};

    fn period(index: usize, recall: f64, ndcg: f64) -> PeriodMetrics {
        PeriodMetrics {
            index,
            recall,
            ndcg,
            users_evaluated: 3,
            unseen_users: 1,
            unseen_items: 0,
            extra: Vec::new(),
        }
    }

    fn run() -> RunInfo {
        RunInfo {
            strategy: "dil".into(),
            seed: 4,
            config_hash: "ab".into(),
        }
    }

    #[test]
    fn one_period_gives_two_rows() {
        let r = aggregate_report(run(), vec![period(2, 0.25, 0.125)]);
        let tsv = metrics_tsv(&r);
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines, [TSV_HEADER, "2\tdil\trecall\t0.250000", "2\tdil\tndcg\t0.125000"]);
    }

    #[test]
    fn tsv_values_match_json() {
        let mut p = period(3, 1.0 / 3.0, 0.123456789);
        p.extra.push(CutoffMetrics {
            k: 50,
            recall: 0.5,
            ndcg: 2.0 / 7.0,
        });
        let r = aggregate_report(run(), vec![period(2, 0.1, 0.2), p]);
        let json: serde_json::Value = serde_json::from_str(&report_json(&r)).unwrap();
        let tsv = metrics_tsv(&r);
        let rows: Vec<Vec<&str>> = tsv.lines().skip(1).map(|l| l.split('\t').collect()).collect();
        assert_eq!(rows.len(), 6);
        for row in rows {
            let k: usize = row[0].parse().unwrap();
            let entry = json["periods"].as_array().unwrap().iter().find(|p| p["index"] == k).unwrap();
            let value = match row[2].split_once('@') {
                None => entry[row[2]].as_f64().unwrap(),
                Some((m, cutoff)) => entry["extra"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .find(|c| c["k"].to_string() == cutoff)
                    .unwrap()[m]
                    .as_f64()
                    .unwrap(),
            };
            assert_eq!(row[3], format!("{value:.6}"));
        }
    }

    #[test]
    fn json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let r = aggregate_report(run(), vec![period(2, 0.02, 0.5), period(3, 0.04, 0.25)]);
        assert!((r.aggregate.recall - 0.03).abs() < 1e-15);
        export_metrics(&r, dir.path()).unwrap();
        assert_eq!(read_report(dir.path().join("report.json")).unwrap(), r);
        let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert!(!json.contains("extra"));
    }

    #[test]
    fn unwritable_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        std::fs::write(&file, "x").unwrap();
        let r = aggregate_report(run(), vec![period(2, 0.1, 0.1)]);
        assert!(export_metrics(&r, file.join("sub")).is_err());
    }
}
