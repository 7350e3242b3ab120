//! Frames whose encodings are pinned in `tests/fixtures/wire/*.hex` and
//! reproduced in `docs/wire-format.md`.

use std::path::PathBuf;

use tpcbed::gen2::{AccessOpKind, AccessResult};
use tpcbed::llrp::{Capabilities, ErrorCode, Frame, Message, RoAccessReport};
use tpcbed::reader::{AccessOp, AccessOpResult, AccessOpSpec, AccessReply, AccessSpec, ROSpec, ReportTrigger, TagReport};
use tpcbed::rf::{AntennaId, TagId};
use tpcbed::tag::{ApplicationBehavior, CommitManifest, Epc, Nack, SegmentDigest};

const EPOCH_MS: i64 = 1_459_555_200_000;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wire")
}

pub fn read_hex(name: &str) -> Vec<u8> {
    let path = fixture_dir().join(format!("{name}.hex"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.split_whitespace()
        .map(|b| u8::from_str_radix(b, 16).expect("hex byte"))
        .collect()
}

fn op(spec: AccessOpSpec, max_retries: u32) -> AccessOp {
    AccessOp { spec, max_retries }
}

fn result(op_index: u16, op: AccessOpKind, success: bool, attempts: u32, reply: Option<AccessReply>) -> AccessOpResult {
    AccessOpResult {
        spec_id: 9,
        op_index,
        result: AccessResult {
            op,
            target: Epc::from_tag(TagId(1)),
            success,
            attempts,
        },
        reply,
    }
}

pub fn frames() -> Vec<(&'static str, Frame)> {
    let tag1 = Epc::from_tag(TagId(1));
    vec![
        ("keepalive", Frame::new(0x0102_0304, Message::Keepalive)),
        ("keepalive_ack", Frame::new(0x0102_0304, Message::KeepaliveAck)),
        ("get_capabilities", Frame::new(1, Message::GetCapabilities)),
        (
            "capabilities_response",
            Frame::new(
                1,
                Message::CapabilitiesResponse(Capabilities {
                    model: "tpcbed-sim".into(),
                    antennas: vec![AntennaId(1), AntennaId(2), AntennaId(3)],
                    access_slot_ms: 600,
                    now_ms: EPOCH_MS,
                }),
            ),
        ),
        (
            "add_rospec_periodic",
            Frame::new(
                2,
                Message::AddRospec(ROSpec {
                    id: 7,
                    antenna_ids: vec![AntennaId(2)],
                    duration_ms: 30_000,
                    report_trigger: ReportTrigger::Periodic { interval_ms: 1000 },
                }),
            ),
        ),
        (
            "add_rospec_end_of_spec",
            Frame::new(
                2,
                Message::AddRospec(ROSpec {
                    id: 8,
                    antenna_ids: vec![AntennaId(1), AntennaId(3)],
                    duration_ms: 10_000,
                    report_trigger: ReportTrigger::EndOfSpec,
                }),
            ),
        ),
        ("start_rospec", Frame::new(3, Message::StartRospec { rospec_id: 7 })),
        ("stop_rospec", Frame::new(4, Message::StopRospec { rospec_id: 7 })),
        (
            "add_accessspec",
            Frame::new(
                5,
                Message::AddAccessspec(AccessSpec {
                    id: 9,
                    target: tag1,
                    antenna_ids: vec![AntennaId(2)],
                    ops: vec![
                        op(AccessOpSpec::GotoBios, 99),
                        op(
                            AccessOpSpec::BlockWrite {
                                start: 0x4400,
                                words: vec![0x1234, 0xABCD],
                            },
                            64,
                        ),
                        op(
                            AccessOpSpec::Checksum {
                                start: 0x4400,
                                end: 0x4404,
                            },
                            64,
                        ),
                        op(
                            AccessOpSpec::Commit {
                                manifest: CommitManifest {
                                    segments: vec![SegmentDigest {
                                        start: 0x4400,
                                        end: 0x4404,
                                        checksum: 0x0116,
                                    }],
                                    behavior: ApplicationBehavior::default(),
                                },
                            },
                            64,
                        ),
                        op(AccessOpSpec::Read { start: 0x4400, len: 4 }, 0),
                    ],
                }),
            ),
        ),
        (
            "ro_access_report_inventory",
            Frame::new(
                3,
                Message::RoAccessReport(RoAccessReport {
                    rospec_id: 7,
                    report_time_ms: EPOCH_MS + 30_000,
                    tag_reports: vec![TagReport {
                        epc: tag1,
                        antenna_id: AntennaId(2),
                        read_count: 690,
                        mean_rssi_dbm: -28.9,
                        last_rssi_dbm: -29.25,
                        first_seen_ms: EPOCH_MS + 5,
                        last_seen_ms: EPOCH_MS + 29_990,
                    }],
                    access_results: vec![],
                }),
            ),
        ),
        (
            "ro_access_report_access",
            Frame::new(
                5,
                Message::RoAccessReport(RoAccessReport {
                    rospec_id: 0,
                    report_time_ms: EPOCH_MS + 90_600,
                    tag_reports: vec![],
                    access_results: vec![
                        result(0, AccessOpKind::GotoBios, true, 1, Some(AccessReply::Ack)),
                        result(
                            1,
                            AccessOpKind::BlockWrite,
                            false,
                            1,
                            Some(AccessReply::Nack {
                                reason: Nack::WrongMode,
                            }),
                        ),
                        result(2, AccessOpKind::Checksum, true, 3, Some(AccessReply::Checksum { value: 0x0116 })),
                        result(
                            3,
                            AccessOpKind::Commit,
                            false,
                            1,
                            Some(AccessReply::Refused {
                                reason: "checksum mismatch".into(),
                            }),
                        ),
                        result(3, AccessOpKind::Commit, false, 65, None),
                        result(
                            4,
                            AccessOpKind::Read,
                            true,
                            1,
                            Some(AccessReply::Data {
                                bytes: vec![0x34, 0x12, 0xCD, 0xAB],
                            }),
                        ),
                    ],
                }),
            ),
        ),
        (
            "error_busy",
            Frame::new(
                0,
                Message::Error {
                    code: ErrorCode::Busy,
                    message: "reader already has a client".into(),
                },
            ),
        ),
        ("success", Frame::new(3, Message::Success)),
    ]
}
