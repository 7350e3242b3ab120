//! Reader operations over the simulated bench: inventory (ROSpec) and
//! targeted access (AccessSpec), both on the virtual clock.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::VirtualClock;
use crate::gen2::{run_inventory_round, AccessOpKind, AccessResult, InventoryConfig, QState, SimRng};
use crate::rf::{AntennaId, TagId};
use crate::tag::{CommitManifest, Epc, Nack, TagState};
use crate::world::World;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReaderConfig {
    pub inventory: InventoryConfig,
    /// Virtual time charged per access attempt. One attempt covers the
    /// host round trip, singulating the target and the command exchange.
    pub access_slot_ms: u64,
}

impl Default for ReaderConfig {
    fn default() -> Self {
        Self {
            inventory: InventoryConfig::default(),
            access_slot_ms: 600,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReportTrigger {
    EndOfSpec,
    Periodic { interval_ms: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ROSpec {
    pub id: u32,
    pub antenna_ids: Vec<AntennaId>,
    pub duration_ms: u32,
    pub report_trigger: ReportTrigger,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum AccessOpSpec {
    Read { start: u32, len: u32 },
    BlockWrite { start: u32, words: Vec<u16> },
    GotoBios,
    Checksum { start: u32, end: u32 },
    Commit { manifest: CommitManifest },
}

impl AccessOpSpec {
    pub fn kind(&self) -> AccessOpKind {
        match self {
            AccessOpSpec::Read { .. } => AccessOpKind::Read,
            AccessOpSpec::BlockWrite { .. } => AccessOpKind::BlockWrite,
            AccessOpSpec::GotoBios => AccessOpKind::GotoBios,
            AccessOpSpec::Checksum { .. } => AccessOpKind::Checksum,
            AccessOpSpec::Commit { .. } => AccessOpKind::Commit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessOp {
    pub spec: AccessOpSpec,
    pub max_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessSpec {
    pub id: u32,
    pub target: Epc,
    /// Antennas allowed for this spec; empty means all.
    pub antenna_ids: Vec<AntennaId>,
    pub ops: Vec<AccessOp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reply", rename_all = "kebab-case")]
pub enum AccessReply {
    Ack,
    Data { bytes: Vec<u8> },
    Checksum { value: u16 },
    Nack { reason: Nack },
    Refused { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessOpResult {
    pub spec_id: u32,
    pub op_index: u16,
    pub result: AccessResult,
    pub reply: Option<AccessReply>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagReport {
    pub epc: Epc,
    pub antenna_id: AntennaId,
    pub read_count: u32,
    pub mean_rssi_dbm: f64,
    pub last_rssi_dbm: f64,
    /// Unix milliseconds, UTC.
    pub first_seen_ms: i64,
    pub last_seen_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBatch {
    /// Unix milliseconds at which the batch was emitted.
    pub report_time_ms: i64,
    pub reports: Vec<TagReport>,
}

/// Everything observable that happens inside the reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum ReaderEvent {
    Read {
        time_ms: u64,
        tag: TagId,
        epc: Epc,
        antenna: AntennaId,
        rssi_dbm: f64,
    },
    AccessAttempt {
        time_ms: u64,
        spec_id: u32,
        op_index: u16,
        op: AccessOpKind,
        attempt: u32,
        antenna: Option<AntennaId>,
        delivered: bool,
    },
    Brownout {
        time_ms: u64,
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReaderError {
    #[error("unknown antenna {0}")]
    UnknownAntenna(AntennaId),
    #[error("invalid ROSpec: {0}")]
    InvalidSpec(String),
}

struct Accumulator {
    read_count: u32,
    rssi_sum: f64,
    last_rssi: f64,
    first_seen: u64,
    last_seen: u64,
}

/// A reader attached to a simulated bench.
#[derive(Debug, Clone)]
pub struct Reader {
    pub config: ReaderConfig,
    pub world: World,
    pub clock: VirtualClock,
    rng: SimRng,
    q: BTreeMap<AntennaId, QState>,
}

impl Reader {
    pub fn new(config: ReaderConfig, world: World, clock: VirtualClock, seed: u64) -> Self {
        Self {
            config,
            world,
            clock,
            rng: SimRng::seed_from_u64(seed),
            q: BTreeMap::new(),
        }
    }

    pub fn validate_rospec(&self, spec: &ROSpec) -> Result<(), ReaderError> {
        if spec.antenna_ids.is_empty() {
            return Err(ReaderError::InvalidSpec("antenna set is empty".into()));
        }
        if spec.duration_ms == 0 {
            return Err(ReaderError::InvalidSpec("duration must be positive".into()));
        }
        if let ReportTrigger::Periodic { interval_ms: 0 } = spec.report_trigger {
            return Err(ReaderError::InvalidSpec("periodic interval must be positive".into()));
        }
        for &a in &spec.antenna_ids {
            if !self.world.has_antenna(a) {
                return Err(ReaderError::UnknownAntenna(a));
            }
        }
        Ok(())
    }

    /// Runs inventory rounds, alternating antennas round by round, until
    /// `spec.duration_ms` of virtual time has passed.
    pub fn execute_rospec(
        &mut self,
        spec: &ROSpec,
        observer: &mut dyn FnMut(&ReaderEvent),
    ) -> Result<Vec<ReportBatch>, ReaderError> {
        self.validate_rospec(spec)?;
        let inv = self.config.inventory.clone();
        let start = self.clock.now_ms();
        let end = start + u64::from(spec.duration_ms);
        let mut batches = Vec::new();
        let mut acc: BTreeMap<(AntennaId, TagId), Accumulator> = BTreeMap::new();
        let mut next_report = match spec.report_trigger {
            ReportTrigger::Periodic { interval_ms } => Some(start + u64::from(interval_ms)),
            ReportTrigger::EndOfSpec => None,
        };
        let mut turn = 0usize;
        while self.clock.now_ms() < end {
            let antenna = spec.antenna_ids[turn % spec.antenna_ids.len()];
            turn += 1;
            let q = self.q.entry(antenna).or_insert_with(|| QState::new(inv.q_initial));
            let frame_ms = u64::from(q.frame_size()) * inv.slot_duration_ms;
            // A frame that would run past the end of the spec is not started.
            if self.clock.now_ms() + frame_ms > end {
                break;
            }
            let brownouts = self.world.advance(Some(antenna), frame_ms);
            if brownouts > 0 {
                observer(&ReaderEvent::Brownout {
                    time_ms: self.clock.now_ms(),
                    count: brownouts,
                });
            }
            let contenders = self.world.contenders(antenna);
            let q = self.q.get_mut(&antenna).expect("inserted above");
            let round = run_inventory_round(
                &contenders,
                q,
                inv.q_fp_step,
                inv.slot_duration_ms,
                self.clock.now_ms(),
                &mut self.rng,
            );
            for (tag, rssi, t) in round.singulated() {
                let epc = self.world.tag(tag).map(|s| s.epc).expect("contender exists");
                observer(&ReaderEvent::Read {
                    time_ms: t,
                    tag,
                    epc,
                    antenna,
                    rssi_dbm: rssi,
                });
                let e = acc.entry((antenna, tag)).or_insert(Accumulator {
                    read_count: 0,
                    rssi_sum: 0.0,
                    last_rssi: rssi,
                    first_seen: t,
                    last_seen: t,
                });
                e.read_count += 1;
                e.rssi_sum += rssi;
                e.last_rssi = rssi;
                e.last_seen = t;
            }
            self.clock.advance(round.duration_ms);
            if let (Some(due), ReportTrigger::Periodic { interval_ms }) = (next_report, spec.report_trigger) {
                if self.clock.now_ms() >= due && self.clock.now_ms() < end {
                    batches.push(self.flush(&mut acc));
                    let mut due = due;
                    while due <= self.clock.now_ms() {
                        due += u64::from(interval_ms);
                    }
                    next_report = Some(due);
                }
            }
        }
        self.clock.advance_to(end);
        batches.push(self.flush(&mut acc));
        if matches!(spec.report_trigger, ReportTrigger::EndOfSpec) {
            batches.retain(|b| !b.reports.is_empty());
        }
        Ok(batches)
    }

    fn flush(&self, acc: &mut BTreeMap<(AntennaId, TagId), Accumulator>) -> ReportBatch {
        let reports = std::mem::take(acc)
            .into_iter()
            .map(|((antenna, tag), a)| TagReport {
                epc: self.world.tag(tag).map(|t| t.epc).expect("reported tag exists"),
                antenna_id: antenna,
                read_count: a.read_count,
                mean_rssi_dbm: a.rssi_sum / f64::from(a.read_count),
                last_rssi_dbm: a.last_rssi,
                first_seen_ms: self.clock.unix_ms_at(a.first_seen),
                last_seen_ms: self.clock.unix_ms_at(a.last_seen),
            })
            .collect();
        ReportBatch {
            report_time_ms: self.clock.unix_ms_at(self.clock.now_ms()),
            reports,
        }
    }

    /// Best allowed antenna for `tag` by delivery probability; ties go to
    /// the lower id.
    pub fn best_antenna(&self, allowed: &[AntennaId], tag: TagId) -> Option<AntennaId> {
        let candidates: Vec<AntennaId> = if allowed.is_empty() {
            self.world.antenna_ids()
        } else {
            allowed.to_vec()
        };
        candidates
            .into_iter()
            .filter(|&a| self.world.has_antenna(a))
            .fold(None, |best: Option<(AntennaId, f64)>, a| {
                let p = self.world.link(a, tag).delivery_probability;
                match best {
                    Some((_, bp)) if bp >= p => best,
                    _ => Some((a, p)),
                }
            })
            .map(|(a, _)| a)
    }

    /// Executes the ops of `spec` in order. Each attempt costs one access
    /// slot of virtual time; a missing target makes every op time out.
    pub fn execute_accessspec(
        &mut self,
        spec: &AccessSpec,
        observer: &mut dyn FnMut(&ReaderEvent),
    ) -> Vec<AccessOpResult> {
        let tag_idx = self.world.tag_index(&spec.target);
        let antenna = tag_idx.and_then(|i| self.best_antenna(&spec.antenna_ids, self.world.tags[i].tag_id));
        let p = match (tag_idx, antenna) {
            (Some(i), Some(a)) => self.world.link(a, self.world.tags[i].tag_id).delivery_probability,
            _ => 0.0,
        };
        let mut results = Vec::with_capacity(spec.ops.len());
        for (index, op) in spec.ops.iter().enumerate() {
            let op_index = index as u16;
            let mut reply = None;
            let mut attempts = 0;
            let budget = op.max_retries.saturating_add(1);
            while attempts < budget {
                attempts += 1;
                let t = self.clock.now_ms();
                let brownouts = self.world.advance(antenna, self.config.access_slot_ms);
                if brownouts > 0 {
                    observer(&ReaderEvent::Brownout { time_ms: t, count: brownouts });
                }
                self.clock.advance(self.config.access_slot_ms);
                let responsive = tag_idx.is_some_and(|i| self.world.tags[i].responsive());
                let exchanged = responsive && self.rng.random_bool((p * p).clamp(0.0, 1.0));
                let answer = if exchanged {
                    let tag = &mut self.world.tags[tag_idx.expect("responsive implies present")];
                    apply_op(tag, &op.spec)
                } else {
                    None
                };
                observer(&ReaderEvent::AccessAttempt {
                    time_ms: t,
                    spec_id: spec.id,
                    op_index,
                    op: op.spec.kind(),
                    attempt: attempts,
                    antenna,
                    delivered: answer.is_some(),
                });
                if answer.is_some() {
                    reply = answer;
                    break;
                }
            }
            let success = matches!(
                reply,
                Some(AccessReply::Ack | AccessReply::Data { .. } | AccessReply::Checksum { .. })
            );
            results.push(AccessOpResult {
                spec_id: spec.id,
                op_index,
                result: AccessResult {
                    op: op.spec.kind(),
                    target: spec.target,
                    success,
                    attempts,
                },
                reply,
            });
        }
        results
    }
}

/// Tag-side handling of one delivered command. `None` means the tag stays
/// silent.
fn apply_op(tag: &mut TagState, op: &AccessOpSpec) -> Option<AccessReply> {
    match op {
        AccessOpSpec::GotoBios => tag.on_goto_bios().then_some(AccessReply::Ack),
        AccessOpSpec::BlockWrite { start, words } => Some(match tag.on_write_words(*start, words) {
            Ok(()) => AccessReply::Ack,
            Err(reason) => AccessReply::Nack { reason },
        }),
        AccessOpSpec::Read { start, len } => {
            let end = u64::from(*start) + u64::from(*len);
            Some(match tag.memory.read(*start..end.min(u64::from(u32::MAX)) as u32) {
                Some(bytes) if end <= u64::from(tag.memory.layout.span) => AccessReply::Data { bytes: bytes.to_vec() },
                _ => AccessReply::Nack { reason: Nack::OutOfRange },
            })
        }
        AccessOpSpec::Checksum { start, end } => Some(match tag.compute_checksum(*start..*end) {
            Ok(value) => AccessReply::Checksum { value },
            Err(_) => AccessReply::Nack { reason: Nack::OutOfRange },
        }),
        AccessOpSpec::Commit { manifest } => Some(match tag.commit_firmware(manifest) {
            Ok(()) => AccessReply::Ack,
            Err(e) => AccessReply::Refused { reason: e.to_string() },
        }),
    }
}
