//! A small framed binary protocol between the controller and the reader.
//!
//! Every frame starts with an 11-byte header: version (1 byte, always 1),
//! message type (u16), message id (u32) and total frame length including the
//! header (u32). All integers are big-endian. The payload layout of each
//! message type is given in `docs/wire-format.md`.

mod codec;
pub mod io;

pub use codec::{decode, decode_prefix, encode, DecodeError, EncodeError, FrameDecoder};

use crate::reader::{AccessOpResult, AccessSpec, ROSpec, TagReport};
use crate::rf::AntennaId;

pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 11;
/// Largest frame `encode` will produce.
pub const MAX_FRAME_LEN: u64 = u32::MAX as u64;

pub mod msg_type {
    pub const GET_CAPABILITIES: u16 = 1;
    pub const CAPABILITIES_RESPONSE: u16 = 11;
    pub const ADD_ROSPEC: u16 = 20;
    pub const START_ROSPEC: u16 = 22;
    pub const STOP_ROSPEC: u16 = 23;
    pub const ADD_ACCESSSPEC: u16 = 40;
    pub const RO_ACCESS_REPORT: u16 = 61;
    pub const KEEPALIVE: u16 = 62;
    pub const KEEPALIVE_ACK: u16 = 72;
    pub const ERROR: u16 = 100;
    pub const SUCCESS: u16 = 101;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capabilities {
    pub model: String,
    pub antennas: Vec<AntennaId>,
    /// Virtual time per access attempt.
    pub access_slot_ms: u32,
    /// Reader clock, Unix milliseconds.
    pub now_ms: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoAccessReport {
    /// ROSpec that produced the tag reports, 0 for access results only.
    pub rospec_id: u32,
    /// Unix milliseconds, UTC.
    pub report_time_ms: i64,
    pub tag_reports: Vec<TagReport>,
    pub access_results: Vec<AccessOpResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    Malformed,
    UnknownRospec,
    UnknownAntenna,
    Busy,
    Unsupported,
    InvalidSpec,
    UnknownTag,
    Other(u16),
}

impl ErrorCode {
    pub fn to_u16(self) -> u16 {
        match self {
            ErrorCode::Malformed => 1,
            ErrorCode::UnknownRospec => 2,
            ErrorCode::UnknownAntenna => 3,
            ErrorCode::Busy => 4,
            ErrorCode::Unsupported => 5,
            ErrorCode::InvalidSpec => 6,
            ErrorCode::UnknownTag => 7,
            ErrorCode::Other(c) => c,
        }
    }

    pub fn from_u16(c: u16) -> Self {
        match c {
            1 => ErrorCode::Malformed,
            2 => ErrorCode::UnknownRospec,
            3 => ErrorCode::UnknownAntenna,
            4 => ErrorCode::Busy,
            5 => ErrorCode::Unsupported,
            6 => ErrorCode::InvalidSpec,
            7 => ErrorCode::UnknownTag,
            c => ErrorCode::Other(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    GetCapabilities,
    CapabilitiesResponse(Capabilities),
    AddRospec(ROSpec),
    StartRospec { rospec_id: u32 },
    StopRospec { rospec_id: u32 },
    AddAccessspec(AccessSpec),
    RoAccessReport(RoAccessReport),
    Keepalive,
    KeepaliveAck,
    Error { code: ErrorCode, message: String },
    Success,
}

impl Message {
    pub fn msg_type(&self) -> u16 {
        use msg_type::*;
        match self {
            Message::GetCapabilities => GET_CAPABILITIES,
            Message::CapabilitiesResponse(_) => CAPABILITIES_RESPONSE,
            Message::AddRospec(_) => ADD_ROSPEC,
            Message::StartRospec { .. } => START_ROSPEC,
            Message::StopRospec { .. } => STOP_ROSPEC,
            Message::AddAccessspec(_) => ADD_ACCESSSPEC,
            Message::RoAccessReport(_) => RO_ACCESS_REPORT,
            Message::Keepalive => KEEPALIVE,
            Message::KeepaliveAck => KEEPALIVE_ACK,
            Message::Error { .. } => ERROR,
            Message::Success => SUCCESS,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::GetCapabilities => "GET_CAPABILITIES",
            Message::CapabilitiesResponse(_) => "CAPABILITIES_RESPONSE",
            Message::AddRospec(_) => "ADD_ROSPEC",
            Message::StartRospec { .. } => "START_ROSPEC",
            Message::StopRospec { .. } => "STOP_ROSPEC",
            Message::AddAccessspec(_) => "ADD_ACCESSSPEC",
            Message::RoAccessReport(_) => "RO_ACCESS_REPORT",
            Message::Keepalive => "KEEPALIVE",
            Message::KeepaliveAck => "KEEPALIVE_ACK",
            Message::Error { .. } => "ERROR",
            Message::Success => "SUCCESS",
        }
    }
}

/// A message together with its header id. Responses echo the id of the
/// request they answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub msg_id: u32,
    pub message: Message,
}

impl Frame {
    pub fn new(msg_id: u32, message: Message) -> Self {
        Self { msg_id, message }
    }
}
