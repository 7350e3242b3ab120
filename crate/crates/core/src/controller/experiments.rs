//! Canned experiments: inventory per antenna, and reprogramming a tag set.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::log::{ExperimentLog, LogError};
use super::ControlError;
use crate::port::ReaderPort;
use crate::reader::{ROSpec, ReaderEvent, ReportTrigger};
use crate::rf::{AntennaId, LinkBudgetParams, TagId, TestbedGeometry};
use crate::tag::{Epc, MemoryLayout};
use crate::wisent::{choose_antennas, FirmwareImage, ReprogramPolicy, Transfer, TransferOutcome};

/// Which part of the bench an experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvironmentSelection {
    /// Antenna 1 and its lone tag.
    SingleTag,
    /// Antenna 2, facing the row at increasing distances.
    MultiDistance,
    /// Antenna 3, seeing the row at varying angles.
    MultiAngle,
    /// Antennas 2 and 3.
    Dual,
}

impl EnvironmentSelection {
    pub fn antennas(self) -> Vec<AntennaId> {
        match self {
            EnvironmentSelection::SingleTag => vec![AntennaId(1)],
            EnvironmentSelection::MultiDistance => vec![AntennaId(2)],
            EnvironmentSelection::MultiAngle => vec![AntennaId(3)],
            EnvironmentSelection::Dual => vec![AntennaId(2), AntennaId(3)],
        }
    }

    pub fn from_antenna(a: u8) -> Option<Self> {
        match a {
            1 => Some(EnvironmentSelection::SingleTag),
            2 => Some(EnvironmentSelection::MultiDistance),
            3 => Some(EnvironmentSelection::MultiAngle),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryRow {
    pub tag: TagId,
    pub antenna: AntennaId,
    pub epc: Epc,
    pub read_count: u32,
    pub mean_rssi_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprogramRow {
    pub tag: TagId,
    pub antennas: Vec<AntennaId>,
    pub duration_s: f64,
    pub messages_sent: u64,
    pub messages_retried: u64,
    pub outcome: TransferOutcome,
}

/// Logs reader events as they happen. The first write error is kept and
/// surfaced once the reader call returns.
struct EventSink<'a, W: Write> {
    log: &'a mut ExperimentLog<W>,
    epoch: DateTime<Utc>,
    failed: Option<LogError>,
}

impl<W: Write> EventSink<'_, W> {
    fn on_event(&mut self, e: &ReaderEvent) {
        if self.failed.is_some() {
            return;
        }
        let at = |ms: u64| self.epoch + Duration::milliseconds(ms as i64);
        let r = match e {
            ReaderEvent::Read {
                time_ms,
                tag,
                epc,
                antenna,
                rssi_dbm,
            } => self.log.record(
                at(*time_ms),
                "read",
                &json!({"tag": tag, "epc": epc, "antenna": antenna, "rssi_dbm": rssi_dbm}),
            ),
            ReaderEvent::AccessAttempt {
                time_ms,
                spec_id,
                op_index,
                op,
                attempt,
                antenna,
                delivered,
            } => self.log.record(
                at(*time_ms),
                "access-attempt",
                &json!({"spec_id": spec_id, "op_index": op_index, "op": op, "attempt": attempt,
                        "antenna": antenna, "delivered": delivered}),
            ),
            ReaderEvent::Brownout { time_ms, count } => {
                self.log.record(at(*time_ms), "brownout", &json!({ "count": count }))
            }
        };
        if let Err(e) = r {
            self.failed = Some(e);
        }
    }

    fn check(&mut self) -> Result<(), LogError> {
        self.failed.take().map_or(Ok(()), Err)
    }
}

fn duration_ms(duration_s: f64) -> Result<u32, ControlError> {
    let ms = (duration_s * 1000.0).round();
    if !(0.0..=f64::from(u32::MAX)).contains(&ms) {
        return Err(ControlError::Invalid(format!("duration {duration_s} s out of range")));
    }
    Ok(ms as u32)
}

/// One ROSpec per antenna, each running for `duration_s`. Rows exist only
/// for (tag, antenna) pairs that were read, ordered by antenna then tag.
/// A zero duration runs nothing and yields an empty table.
pub fn run_inventory<W: Write>(
    port: &mut dyn ReaderPort,
    antennas: &[AntennaId],
    duration_s: f64,
    log: &mut ExperimentLog<W>,
) -> Result<Vec<InventoryRow>, ControlError> {
    let duration_ms = duration_ms(duration_s)?;
    if duration_ms == 0 {
        return Ok(Vec::new());
    }
    let mut acc: BTreeMap<(AntennaId, TagId), (Epc, u32, f64)> = BTreeMap::new();
    for (i, &antenna) in antennas.iter().enumerate() {
        let spec = ROSpec {
            id: i as u32 + 1,
            antenna_ids: vec![antenna],
            duration_ms,
            report_trigger: ReportTrigger::EndOfSpec,
        };
        log.record(port.now_utc(), "rospec-start", &json!({"rospec_id": spec.id, "antenna": antenna, "duration_ms": duration_ms}))?;
        let sink = RefCell::new(EventSink {
            epoch: port.event_epoch(),
            log: &mut *log,
            failed: None,
        });
        let batches = port.run_rospec(&spec, &mut |e| sink.borrow_mut().on_event(e))?;
        sink.into_inner().check()?;
        for b in &batches {
            let ts = DateTime::<Utc>::from_timestamp_millis(b.report_time_ms).unwrap_or_else(|| port.now_utc());
            for r in &b.reports {
                log.record(ts, "report", r)?;
                let Some(tag) = r.epc.bench_tag() else {
                    continue;
                };
                let e = acc.entry((r.antenna_id, tag)).or_insert((r.epc, 0, 0.0));
                e.1 += r.read_count;
                e.2 += r.mean_rssi_dbm * f64::from(r.read_count);
            }
        }
        log.record(port.now_utc(), "rospec-end", &json!({ "rospec_id": spec.id }))?;
    }
    Ok(acc
        .into_iter()
        .filter(|(_, (_, n, _))| *n > 0)
        .map(|((antenna, tag), (epc, n, sum))| InventoryRow {
            tag,
            antenna,
            epc,
            read_count: n,
            mean_rssi_dbm: sum / f64::from(n),
        })
        .collect())
}

/// Everything the host knows about the bench, used to pick antennas and to
/// check images before sending them.
pub struct BenchModel<'a> {
    pub geometry: &'a TestbedGeometry,
    pub link: &'a LinkBudgetParams,
    pub layout: &'a MemoryLayout,
}

/// Reprograms each tag in turn over its best antenna(s). A failure is
/// recorded in that tag's row and the experiment moves on.
pub fn run_reprogram<W: Write>(
    port: &mut dyn ReaderPort,
    bench: &BenchModel<'_>,
    tags: &[TagId],
    image: &FirmwareImage,
    policy: &ReprogramPolicy,
    log: &mut ExperimentLog<W>,
) -> Result<Vec<ReprogramRow>, ControlError> {
    let mut rows = Vec::with_capacity(tags.len());
    for &tag in tags {
        let antennas = choose_antennas(bench.geometry, bench.link, tag, policy.tie_window_db);
        log.record(
            port.now_utc(),
            "transfer-start",
            &json!({"tag": tag, "antennas": antennas, "bytes": image.byte_len()}),
        )?;
        let transfer = Transfer::new(
            tag,
            Epc::from_tag(tag),
            image.clone(),
            bench.layout,
            antennas.clone(),
            policy.clone(),
        );
        let sink = RefCell::new(EventSink {
            epoch: port.event_epoch(),
            log: &mut *log,
            failed: None,
        });
        let stats = transfer.run(port, &mut |e| sink.borrow_mut().on_event(e))?;
        sink.into_inner().check()?;
        log.record(port.now_utc(), "transfer-end", &stats)?;
        rows.push(ReprogramRow {
            tag,
            antennas,
            duration_s: stats.virtual_duration_s(),
            messages_sent: stats.messages_sent,
            messages_retried: stats.messages_retried,
            outcome: stats.outcome,
        });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct ReprogramCsv<'a> {
    tag: TagId,
    antennas: String,
    duration_s: f64,
    messages_sent: u64,
    messages_retried: u64,
    outcome: &'a str,
}

pub fn write_inventory_csv<W: Write>(rows: &[InventoryRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["tag", "antenna", "epc", "read_count", "mean_rssi_dbm"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reprogram_csv<W: Write>(rows: &[ReprogramRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(ReprogramCsv {
            tag: r.tag,
            antennas: r.antennas.iter().map(|a| a.0.to_string()).collect::<Vec<_>>().join("+"),
            duration_s: r.duration_s,
            messages_sent: r.messages_sent,
            messages_retried: r.messages_retried,
            outcome: r.outcome.as_str(),
        })?;
    }
    if rows.is_empty() {
        w.write_record(["tag", "antennas", "duration_s", "messages_sent", "messages_retried", "outcome"])?;
    }
    w.flush()?;
    Ok(())
}
