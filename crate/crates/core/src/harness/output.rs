//! CSV outputs. Each file starts with a `# fairconf <schema> v<version>`
//! line naming its layout.

use std::fmt::Write as _;
use std::path::Path;

use super::experiment::{Aggregate, AuditAggregate, AuditRecord, ProbeRecord, RunRecord, SweepOutcome};
use super::HarnessError;
use crate::metrics::ProbeKind;

pub const RUNS_SCHEMA: &str = "# fairconf runs v1";
pub const AGGREGATE_SCHEMA: &str = "# fairconf aggregate v1";
pub const SWEEP_SCHEMA: &str = "# fairconf sweep v1";
pub const PROBES_SCHEMA: &str = "# fairconf probes v1";
pub const AUDIT_SCHEMA: &str = "# fairconf audit v1";
pub const AUDIT_AGGREGATE_SCHEMA: &str = "# fairconf audit-aggregate v1";

const METRIC_COLUMNS: [&str; 5] = ["group_coverage", "wsc", "wsc_plus", "average_coverage", "average_size"];

fn kind_name(k: ProbeKind) -> &'static str {
    match k {
        ProbeKind::Linear => "linear",
        ProbeKind::Quadratic => "quadratic",
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

fn aggregate_header() -> String {
    let mut h = String::from("method,runs");
    for c in METRIC_COLUMNS {
        let _ = write!(h, ",{c}_mean,{c}_std");
    }
    h
}

fn aggregate_fields(a: &Aggregate) -> String {
    let mut s = format!("{},{}", a.method, a.runs);
    for (m, sd) in [a.group_coverage, a.wsc, a.wsc_plus, a.average_coverage, a.average_size] {
        let _ = write!(s, ",{m},{sd}");
    }
    s
}

pub fn runs_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{RUNS_SCHEMA}\nmethod,seed,{},seconds\n", METRIC_COLUMNS.join(","));
    for r in records {
        let secs = r.seconds.map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method, r.seed, r.group_coverage, r.wsc, r.wsc_plus, r.average_coverage, r.average_size, secs
        );
    }
    out
}

pub fn aggregate_csv(aggs: &[Aggregate]) -> String {
    let mut out = format!("{AGGREGATE_SCHEMA}\n{}\n", aggregate_header());
    for a in aggs {
        let _ = writeln!(out, "{}", aggregate_fields(a));
    }
    out
}

pub fn sweep_csv(s: &SweepOutcome) -> String {
    let mut out = format!("{SWEEP_SCHEMA}\nparameter,value,{}\n", aggregate_header());
    for r in &s.rows {
        let _ = writeln!(out, "{},{},{}", s.parameter.name(), r.value, aggregate_fields(&r.aggregate));
    }
    out
}

pub fn probes_csv(probes: &[ProbeRecord]) -> String {
    let mut out = format!("{PROBES_SCHEMA}\nmethod,seed,kind,probe,coverage\n");
    for p in probes {
        for (i, c) in p.coverages.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{i},{c}", p.method, p.seed, kind_name(p.kind));
        }
    }
    out
}

pub fn audit_csv(records: &[AuditRecord]) -> String {
    let mut out = format!("{AUDIT_SCHEMA}\nseed,delta,kind,min_coverage\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.seed, r.delta, kind_name(r.kind), r.min_coverage);
    }
    out
}

pub fn audit_aggregate_csv(aggs: &[AuditAggregate]) -> String {
    let mut out = format!("{AUDIT_AGGREGATE_SCHEMA}\ndelta,kind,runs,mean,std\n");
    for a in aggs {
        let _ = writeln!(out, "{},{},{},{},{}", a.delta, kind_name(a.kind), a.runs, a.mean, a.std);
    }
    out
}

pub fn write_csv(dir: &Path, name: &str, text: &str) -> Result<std::path::PathBuf, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    let p = dir.join(name);
    write_file(&p, text)?;
    Ok(p)
}

/// Parsed CSV: schema line, header and string rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize, HarnessError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::Format(format!("missing column {name}")))
    }

    pub fn number(&self, row: usize, col: usize) -> Result<f64, HarnessError> {
        let s = &self.rows[row][col];
        s.parse()
            .map_err(|_| HarnessError::Format(format!("row {}: {s:?} is not a number", row + 1)))
    }
}

pub fn read_table(path: &Path) -> Result<Table, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let schema = lines
        .next()
        .filter(|l| l.starts_with("# fairconf "))
        .ok_or_else(|| HarnessError::Format(format!("{}: missing schema line", path.display())))?
        .to_string();
    let body: String = lines.collect::<Vec<_>>().join("\n");
    let mut r = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let header = r
        .headers()
        .map_err(|e| HarnessError::Format(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(String::from).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(|e| HarnessError::Format(e.to_string()))?;
    Ok(Table { schema, header, rows })
}
