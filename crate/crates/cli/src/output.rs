//! CSV artifacts and the run manifest.
//!
//! Every CSV starts with a header row; floats are written in scientific
//! notation with 17 significant digits so files round-trip exactly.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use tailrisk::eval::MetricsReport;
use tailrisk::meta::{TraceRecord, TrainTrace};

use crate::config::hex;
use crate::CliError;

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_rows(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>), CliError> {
    let io = |e: csv::Error| CliError::io(path, std::io::Error::other(e.to_string()));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let header = r.headers().map_err(io)?.clone();
    let rows = r.records().collect::<Result<Vec<_>, _>>().map_err(io)?;
    Ok((header, rows))
}

fn parse_f64(path: &Path, field: &str) -> Result<f64, CliError> {
    field
        .parse()
        .map_err(|_| CliError::Config(format!("{}: bad number {field:?}", path.display())))
}

pub const TRACE_HEADER: [&str; 5] = ["iter", "mean_loss", "xi_hat", "leader_objective", "follower_objective"];

pub fn trace_rows(trace: &TrainTrace) -> Vec<Vec<String>> {
    trace
        .records
        .iter()
        .map(|r| {
            vec![
                r.iter.to_string(),
                float(r.mean_loss),
                float(r.xi_hat),
                float(r.leader_objective),
                float(r.follower_objective),
            ]
        })
        .collect()
}

/// Reads a trace CSV back; per-task losses are not stored and come back
/// empty.
pub fn read_trace(path: &Path) -> Result<TrainTrace, CliError> {
    let (header, rows) = read_rows(path)?;
    if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(CliError::Config(format!("{} is not a trace file", path.display())));
    }
    let mut records = Vec::with_capacity(rows.len());
    for row in &rows {
        let iter = row[0]
            .parse()
            .map_err(|_| CliError::Config(format!("{}: bad iteration {:?}", path.display(), &row[0])))?;
        records.push(TraceRecord {
            iter,
            losses: Vec::new(),
            mean_loss: parse_f64(path, &row[1])?,
            xi_hat: parse_f64(path, &row[2])?,
            leader_objective: parse_f64(path, &row[3])?,
            follower_objective: parse_f64(path, &row[4])?,
        });
    }
    Ok(TrainTrace {
        records,
        snapshots: Vec::new(),
    })
}

/// One row per snapshot: `iter, theta_0, theta_1, ...`.
pub fn write_snapshots(path: &Path, snapshots: &[(usize, Vec<f64>)]) -> Result<(), CliError> {
    let n = snapshots.first().map_or(0, |s| s.1.len());
    let names: Vec<String> = (0..n).map(|i| format!("theta_{i}")).collect();
    let mut header = vec!["iter"];
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = snapshots
        .iter()
        .map(|(t, v)| std::iter::once(t.to_string()).chain(v.iter().map(|&x| float(x))).collect())
        .collect();
    write_csv(path, &header, &rows)
}

pub fn read_snapshots(path: &Path) -> Result<Vec<(usize, Vec<f64>)>, CliError> {
    let (_, rows) = read_rows(path)?;
    rows.iter()
        .map(|row| {
            let t = row[0]
                .parse()
                .map_err(|_| CliError::Config(format!("{}: bad iteration", path.display())))?;
            let v = row.iter().skip(1).map(|f| parse_f64(path, f)).collect::<Result<_, _>>()?;
            Ok((t, v))
        })
        .collect()
}

pub const SUMMARY_HEADER: [&str; 6] = ["average", "worst", "cvar", "alpha", "n_tasks", "n_nonfinite"];

pub fn summary_row(m: &MetricsReport) -> Vec<String> {
    vec![
        float(m.average),
        float(m.worst),
        float(m.cvar),
        float(m.alpha),
        m.n_tasks.to_string(),
        m.n_nonfinite.to_string(),
    ]
}

pub fn write_metrics(path: &Path, m: &MetricsReport) -> Result<(), CliError> {
    write_csv(path, &SUMMARY_HEADER, &[summary_row(m)])
}

/// Per-task query losses followed by a summary row whose `task_id` is
/// `summary`.
pub fn write_task_losses(path: &Path, ids: &[u64], m: &MetricsReport) -> Result<(), CliError> {
    let mut rows: Vec<Vec<String>> = ids
        .iter()
        .zip(&m.per_task_losses)
        .map(|(id, &l)| vec![id.to_string(), float(l), String::new(), String::new(), String::new()])
        .collect();
    rows.push(vec![
        "summary".into(),
        String::new(),
        float(m.average),
        float(m.worst),
        float(m.cvar),
    ]);
    write_csv(path, &["task_id", "loss", "average", "worst", "cvar"], &rows)
}

#[derive(Debug, Serialize)]
pub struct SummaryMetrics {
    pub average: f64,
    pub worst: f64,
    pub cvar: f64,
    pub alpha: f64,
    pub n_tasks: usize,
    pub n_nonfinite: usize,
}

impl From<&MetricsReport> for SummaryMetrics {
    fn from(m: &MetricsReport) -> Self {
        Self {
            average: m.average,
            worst: m.worst,
            cvar: m.cvar,
            alpha: m.alpha,
            n_tasks: m.n_tasks,
            n_nonfinite: m.n_nonfinite,
        }
    }
}

/// Manifest of one invocation. The timestamps are the only
/// non-reproducible content and live only here.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub code_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub metrics: Option<SummaryMetrics>,
    pub artifacts: Vec<PathBuf>,
    pub config: toml::Value,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn code_version() -> String {
    format!("tailrisk-cli {}", env!("CARGO_PKG_VERSION"))
}

/// Content hash of the version string in the style of a git blob id (over
/// SHA-256).
pub fn code_hash() -> String {
    let v = code_version();
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", v.len()).as_bytes());
    h.update(v.as_bytes());
    hex(&h.finalize())
}

pub fn write_manifest(path: &Path, record: &RunRecord) -> Result<(), CliError> {
    let text = toml::to_string(record).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_17_significant_digits() {
        assert_eq!(float(0.1), "1.0000000000000001e-1");
        assert_eq!(float(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        let trace = TrainTrace {
            records: vec![TraceRecord {
                iter: 3,
                losses: vec![],
                mean_loss: 1.5,
                xi_hat: 0.25,
                leader_objective: 2.0 / 3.0,
                follower_objective: 0.1,
            }],
            snapshots: vec![],
        };
        write_csv(&p, &TRACE_HEADER, &trace_rows(&trace)).unwrap();
        assert_eq!(read_trace(&p).unwrap(), trace);
        let s = dir.path().join("snap.csv");
        let snaps = vec![(0, vec![1.0, -0.5]), (1, vec![0.3, 1e-300])];
        write_snapshots(&s, &snaps).unwrap();
        assert_eq!(read_snapshots(&s).unwrap(), snaps);
    }
}
