//! Per-step training log.
//!
//! CSV schema (one row per optimizer step, step counters restart per phase):
//!
//! ```text
//! step,phase,J_D,J_G,J_M,J_total
//! ```
//!
//! Loss columns a phase does not compute are written as 0.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub phase: String,
    pub jd: f64,
    pub jg: f64,
    pub jm: f64,
    pub jtotal: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn new() -> TrainLog {
        TrainLog::default()
    }

    pub fn push(&mut self, phase: &str, step: u64, jd: f64, jg: f64, jm: f64, jtotal: f64) {
        self.rows.push(LogRow {
            step,
            phase: phase.to_string(),
            jd,
            jg,
            jm,
            jtotal,
        });
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("step,phase,J_D,J_G,J_M,J_total\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.phase, r.jd, r.jg, r.jm, r.jtotal
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Append this log's rows to `path`, writing the header only when the
    /// file does not exist yet. Lets pipeline stages share one file.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        let exists = path.exists();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        if !exists {
            text.push_str("step,phase,J_D,J_G,J_M,J_total\n");
        }
        for r in &self.rows {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.phase, r.jd, r.jg, r.jm, r.jtotal
            ));
        }
        file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Rows of one phase, in step order.
    pub fn phase_rows<'a>(&'a self, phase: &'a str) -> impl Iterator<Item = &'a LogRow> + 'a {
        self.rows.iter().filter(move |r| r.phase == phase)
    }
}
