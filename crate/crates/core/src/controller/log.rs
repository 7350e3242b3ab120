//! Append-only JSON-lines experiment log.
//!
//! ```text
//! {"ts":"2016-04-02T00:00:00.005Z","kind":"read","data":{"tag":1,"antenna":2,"rssi_dbm":-28.96}}
//! ```

use std::io::Write;

use chrono::{DateTime, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::clock::format_utc_ms;

#[derive(Debug, Error)]
#[error("experiment log write failed: {0}")]
pub struct LogError(#[from] pub std::io::Error);

#[derive(Serialize)]
struct Line<'a, T: Serialize> {
    ts: String,
    kind: &'a str,
    data: &'a T,
}

pub struct ExperimentLog<W: Write> {
    out: W,
    last: Option<DateTime<Utc>>,
    records: u64,
}

impl<W: Write> ExperimentLog<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            last: None,
            records: 0,
        }
    }

    /// Appends one record. A timestamp earlier than the previous record's
    /// is raised to it, so timestamps never decrease.
    pub fn record<T: Serialize>(&mut self, ts: DateTime<Utc>, kind: &str, data: &T) -> Result<(), LogError> {
        let ts = self.last.map_or(ts, |l| l.max(ts));
        self.last = Some(ts);
        let line = Line {
            ts: format_utc_ms(ts),
            kind,
            data,
        };
        serde_json::to_writer(&mut self.out, &line).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        Ok(self.out.flush()?)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
