//! Random wire messages for round-trip and fuzz tests.
#![allow(dead_code)]

use rand::Rng;
use tpcbed::gen2::{AccessOpKind, AccessResult};
use tpcbed::llrp::{Capabilities, ErrorCode, Frame, Message, RoAccessReport};
use tpcbed::reader::{AccessOp, AccessOpResult, AccessOpSpec, AccessReply, AccessSpec, ROSpec, ReportTrigger, TagReport};
use tpcbed::rf::AntennaId;
use tpcbed::tag::{ApplicationBehavior, CommitManifest, Epc, Nack, SegmentDigest};

fn epc<R: Rng>(r: &mut R) -> Epc {
    Epc(r.random())
}

fn antennas<R: Rng>(r: &mut R) -> Vec<AntennaId> {
    let n = r.random_range(0..5);
    (0..n).map(|_| AntennaId(r.random())).collect()
}

fn text<R: Rng>(r: &mut R) -> String {
    let n = r.random_range(0..24);
    (0..n)
        .map(|_| {
            if r.random_bool(0.1) {
                'µ'
            } else {
                char::from(r.random_range(b' '..=b'~'))
            }
        })
        .collect()
}

// Finite, including negative zero and extremes.
fn float<R: Rng>(r: &mut R) -> f64 {
    match r.random_range(0..6) {
        0 => -0.0,
        1 => f64::MAX,
        2 => f64::MIN_POSITIVE,
        _ => r.random_range(-120.0..20.0),
    }
}

fn op_kind<R: Rng>(r: &mut R) -> AccessOpKind {
    [
        AccessOpKind::Read,
        AccessOpKind::BlockWrite,
        AccessOpKind::GotoBios,
        AccessOpKind::Checksum,
        AccessOpKind::Commit,
    ][r.random_range(0..5)]
}

fn op<R: Rng>(r: &mut R) -> AccessOp {
    let spec = match op_kind(r) {
        AccessOpKind::Read => AccessOpSpec::Read {
            start: r.random(),
            len: r.random(),
        },
        AccessOpKind::BlockWrite => AccessOpSpec::BlockWrite {
            start: r.random(),
            words: (0..r.random_range(0..12)).map(|_| r.random()).collect(),
        },
        AccessOpKind::GotoBios => AccessOpSpec::GotoBios,
        AccessOpKind::Checksum => AccessOpSpec::Checksum {
            start: r.random(),
            end: r.random(),
        },
        AccessOpKind::Commit => AccessOpSpec::Commit {
            manifest: CommitManifest {
                segments: (0..r.random_range(0..4))
                    .map(|_| SegmentDigest {
                        start: r.random(),
                        end: r.random(),
                        checksum: r.random(),
                    })
                    .collect(),
                behavior: ApplicationBehavior {
                    obeys_goto_bios: r.random(),
                    responds_to_inventory: r.random(),
                },
            },
        },
    };
    AccessOp {
        spec,
        max_retries: r.random(),
    }
}

fn reply<R: Rng>(r: &mut R) -> Option<AccessReply> {
    Some(match r.random_range(0..6) {
        0 => return None,
        1 => AccessReply::Ack,
        2 => AccessReply::Data {
            bytes: (0..r.random_range(0..32)).map(|_| r.random()).collect(),
        },
        3 => AccessReply::Checksum { value: r.random() },
        4 => AccessReply::Nack {
            reason: [Nack::WrongMode, Nack::RegionViolation, Nack::OutOfRange][r.random_range(0..3)],
        },
        _ => AccessReply::Refused { reason: text(r) },
    })
}

fn tag_report<R: Rng>(r: &mut R) -> TagReport {
    TagReport {
        epc: epc(r),
        antenna_id: AntennaId(r.random()),
        read_count: r.random(),
        mean_rssi_dbm: float(r),
        last_rssi_dbm: float(r),
        first_seen_ms: r.random(),
        last_seen_ms: r.random(),
    }
}

fn access_result<R: Rng>(r: &mut R) -> AccessOpResult {
    AccessOpResult {
        spec_id: r.random(),
        op_index: r.random(),
        result: AccessResult {
            op: op_kind(r),
            target: epc(r),
            success: r.random(),
            attempts: r.random(),
        },
        reply: reply(r),
    }
}

pub fn message<R: Rng>(r: &mut R) -> Message {
    match r.random_range(0..11) {
        0 => Message::GetCapabilities,
        1 => Message::CapabilitiesResponse(Capabilities {
            model: text(r),
            antennas: antennas(r),
            access_slot_ms: r.random(),
            now_ms: r.random(),
        }),
        2 => Message::AddRospec(ROSpec {
            id: r.random(),
            antenna_ids: antennas(r),
            duration_ms: r.random(),
            report_trigger: if r.random() {
                ReportTrigger::EndOfSpec
            } else {
                ReportTrigger::Periodic {
                    interval_ms: r.random(),
                }
            },
        }),
        3 => Message::StartRospec { rospec_id: r.random() },
        4 => Message::StopRospec { rospec_id: r.random() },
        5 => Message::AddAccessspec(AccessSpec {
            id: r.random(),
            target: epc(r),
            antenna_ids: antennas(r),
            ops: (0..r.random_range(0..5)).map(|_| op(r)).collect(),
        }),
        6 => Message::RoAccessReport(RoAccessReport {
            rospec_id: r.random(),
            report_time_ms: r.random(),
            tag_reports: (0..r.random_range(0..4)).map(|_| tag_report(r)).collect(),
            access_results: (0..r.random_range(0..4)).map(|_| access_result(r)).collect(),
        }),
        7 => Message::Keepalive,
        8 => Message::KeepaliveAck,
        9 => Message::Error {
            code: ErrorCode::from_u16(r.random()),
            message: text(r),
        },
        _ => Message::Success,
    }
}

pub fn frame<R: Rng>(r: &mut R) -> Frame {
    Frame::new(r.random(), message(r))
}

/// A valid encoding with a few bytes flipped, truncated or extended, or
/// plain noise.
pub fn fuzz_input<R: Rng>(r: &mut R, valid: &[u8]) -> Vec<u8> {
    let mut b = valid.to_vec();
    match r.random_range(0..4) {
        0 => {
            for _ in 0..r.random_range(1..4) {
                let i = r.random_range(0..b.len());
                b[i] ^= 1 << r.random_range(0..8);
            }
        }
        1 => b.truncate(r.random_range(0..b.len())),
        2 => b.extend((0..r.random_range(1..8)).map(|_| r.random::<u8>())),
        _ => {
            b = (0..r.random_range(0..64)).map(|_| r.random()).collect();
            // Often give noise a plausible header so the payload parsers run.
            if b.len() >= 11 && r.random() {
                b[0] = 1;
                let t: u16 = [1, 11, 20, 22, 23, 40, 61, 62, 72, 100, 101][r.random_range(0..11)];
                b[1..3].copy_from_slice(&t.to_be_bytes());
                let len = (b.len() as u32).to_be_bytes();
                b[7..11].copy_from_slice(&len);
            }
        }
    }
    b
}

pub mod golden;
