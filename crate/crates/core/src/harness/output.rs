//! CSV and JSON result files.
//!
//! `results.csv`: `strategy,node_id,role,rep,round,contribution_weight,val_loss,test_auc`
//! `summary.csv`: `strategy,node_id,role,mean_auc,std_auc,mean_loss,delta_vs_fedavg_pct`
//! `results.json`: the whole [`ResultTable`].

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::experiment::{ResultTable, SummaryRow, TrajectoryRow};

pub const RESULTS_HEADER: [&str; 8] = [
    "strategy",
    "node_id",
    "role",
    "rep",
    "round",
    "contribution_weight",
    "val_loss",
    "test_auc",
];

pub const SUMMARY_HEADER: [&str; 7] = [
    "strategy",
    "node_id",
    "role",
    "mean_auc",
    "std_auc",
    "mean_loss",
    "delta_vs_fedavg_pct",
];

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const RESULTS_JSON: &str = "results.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown output format '{other}'"))),
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(Error::Format(format!(
            "{}: unexpected header {found:?}",
            path.display()
        )));
    }
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| csv_err(path, e))
}

/// Writes `table` into directory `dir`, creating it if needed, and returns
/// the files written.
pub fn emit_results(table: &ResultTable, format: OutputFormat, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        OutputFormat::Csv => {
            let results = dir.join(RESULTS_CSV);
            let summary = dir.join(SUMMARY_CSV);
            write_csv(&results, &RESULTS_HEADER, &table.trajectories)?;
            write_csv(&summary, &SUMMARY_HEADER, &table.summary)?;
            Ok(vec![results, summary])
        }
        OutputFormat::Json => {
            let path = dir.join(RESULTS_JSON);
            let text = serde_json::to_string_pretty(table)
                .map_err(|e| Error::Format(e.to_string()))?;
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(vec![path])
        }
    }
}

pub fn read_results_json(path: impl AsRef<Path>) -> Result<ResultTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRow>> {
    read_csv(path.as_ref(), &RESULTS_HEADER)
}

pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    read_csv(path.as_ref(), &SUMMARY_HEADER)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::Role;
    use crate::harness::experiment::{FinalRow, PartitionHash, RepFailure};
    use crate::strategies::StrategyKind;

    fn table() -> ResultTable {
        ResultTable {
            summary: vec![
                SummaryRow {
                    strategy: StrategyKind::FedAvg,
                    node_id: 0,
                    role: Role::Leader,
                    mean_auc: 0.812,
                    std_auc: 0.01,
                    mean_loss: 0.4,
                    delta_vs_fedavg_pct: Some(0.0),
                },
                SummaryRow {
                    strategy: StrategyKind::Aswm,
                    node_id: 2,
                    role: Role::Follower,
                    mean_auc: 0.674,
                    std_auc: 0.0,
                    mean_loss: 0.9,
                    delta_vs_fedavg_pct: None,
                },
            ],
            trajectories: vec![TrajectoryRow {
                strategy: StrategyKind::Aswm,
                node_id: 1,
                role: Role::Follower,
                rep: 0,
                round: 1,
                contribution_weight: 0.525,
                val_loss: 1.25,
                test_auc: 0.7,
            }],
            finals: vec![FinalRow {
                strategy: StrategyKind::Aswm,
                rep: 0,
                node_id: 1,
                role: Role::Follower,
                test_auc: 0.7,
                test_loss: 1.1,
            }],
            failures: vec![RepFailure {
                strategy: StrategyKind::Dswm,
                rep: 3,
                error: "boom".into(),
            }],
            partition_hashes: vec![PartitionHash {
                strategy: StrategyKind::Aswm,
                rep: 0,
                hash: u64::MAX,
            }],
        }
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = table();
        let files = emit_results(&t, OutputFormat::Json, dir.path()).unwrap();
        assert_eq!(read_results_json(&files[0]).unwrap(), t);
    }

    #[test]
    fn csv_headers_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = table();
        emit_results(&t, OutputFormat::Csv, dir.path()).unwrap();
        let results = std::fs::read_to_string(dir.path().join(RESULTS_CSV)).unwrap();
        assert_eq!(
            results.lines().next().unwrap(),
            "strategy,node_id,role,rep,round,contribution_weight,val_loss,test_auc"
        );
        assert_eq!(results.lines().nth(1).unwrap(), "aswm,1,follower,0,1,0.525,1.25,0.7");
        let summary = std::fs::read_to_string(dir.path().join(SUMMARY_CSV)).unwrap();
        assert_eq!(
            summary.lines().next().unwrap(),
            "strategy,node_id,role,mean_auc,std_auc,mean_loss,delta_vs_fedavg_pct"
        );
        assert_eq!(read_summary_csv(dir.path().join(SUMMARY_CSV)).unwrap(), t.summary);
        assert_eq!(read_results_csv(dir.path().join(RESULTS_CSV)).unwrap(), t.trajectories);
    }

    #[test]
    fn empty_table_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        emit_results(&ResultTable::default(), OutputFormat::Csv, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(RESULTS_CSV)).unwrap();
        assert_eq!(text, format!("{}\n", RESULTS_HEADER.join(",")));
        let text = std::fs::read_to_string(dir.path().join(SUMMARY_CSV)).unwrap();
        assert_eq!(text, format!("{}\n", SUMMARY_HEADER.join(",")));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = emit_results(&table(), OutputFormat::Csv, blocker.join("sub")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err:?}");
    }
}
