//! Per-round CSV output.
//!
//! Columns: `round, cumulative_bits, train_loss, eval_metric, s, b, eta,
//! interval, feasibility`. Optional values are written as empty fields.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedsim::RoundRecord;

pub const CSV_HEADER: [&str; 9] = [
    "round",
    "cumulative_bits",
    "train_loss",
    "eval_metric",
    "s",
    "b",
    "eta",
    "interval",
    "feasibility",
];

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub round: u64,
    pub cumulative_bits: u64,
    pub train_loss: f64,
    pub eval_metric: Option<f64>,
    pub s: u32,
    pub b: u32,
    pub eta: f64,
    pub interval: Option<u64>,
    pub feasibility: Option<bool>,
}

impl From<&RoundRecord<f64>> for CsvRow {
    fn from(r: &RoundRecord<f64>) -> Self {
        Self {
            round: r.round,
            cumulative_bits: r.cumulative_bits,
            train_loss: r.train_loss,
            eval_metric: r.eval_metric,
            s: r.s,
            b: r.b,
            eta: r.eta,
            interval: r.interval,
            feasibility: r.feasible,
        }
    }
}

/// Appends rows as rounds finish; each row is flushed so an interrupted run
/// leaves a valid prefix.
pub struct CsvRecorder {
    writer: csv::Writer<File>,
    path: PathBuf,
}

impl CsvRecorder {
    pub fn create(path: &Path) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(csv_err)?;
        writer.write_record(CSV_HEADER).map_err(csv_err)?;
        let mut rec = Self {
            writer,
            path: path.to_path_buf(),
        };
        rec.flush()?;
        Ok(rec)
    }

    pub fn push(&mut self, record: &RoundRecord<f64>) -> Result<()> {
        self.writer
            .serialize(CsvRow::from(record))
            .map_err(|source| Error::Csv {
                path: self.path.clone(),
                source,
            })?;
        self.flush()
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|source| Error::Io {
            path: self.path.clone(),
            source,
        })
    }
}

/// Writes a header and one row per record.
pub fn emit_csv(records: &[RoundRecord<f64>], path: &Path) -> Result<()> {
    let mut rec = CsvRecorder::create(path)?;
    records.iter().try_for_each(|r| rec.push(r))
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader.deserialize().map(|row| row.map_err(csv_err)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: u64, bits: u64, loss: f64) -> RoundRecord<f64> {
        RoundRecord {
            round,
            s: 3,
            b: 2,
            eta: 0.05,
            bits_this_round: 62,
            cumulative_bits: bits,
            train_loss: loss,
            eval_metric: if round.is_multiple_of(2) { Some(0.75) } else { None },
            interval: Some(round / 3),
            feasible: if round == 0 { None } else { Some(round.is_multiple_of(2)) },
        }
    }

    #[test]
    fn empty_run_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        emit_csv(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{}\n", CSV_HEADER.join(",")));
        assert!(read_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/run.csv");
        let records: Vec<_> = (0..5).map(|k| record(k, 62 * (k + 1), 1.0 / (k as f64 + 1.0))).collect();
        emit_csv(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), records.len() + 1);
        let rows = read_csv(&path).unwrap();
        let bits: Vec<u64> = rows.iter().map(|r| r.cumulative_bits).collect();
        assert_eq!(bits, vec![62, 124, 186, 248, 310]);
        let expected: Vec<CsvRow> = records.iter().map(CsvRow::from).collect();
        assert_eq!(rows, expected);
    }

    #[test]
    fn unwritable_path_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = emit_csv(&[], &blocker.join("run.csv")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
