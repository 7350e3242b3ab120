use thiserror::Error;

use super::{msg_type, Capabilities, ErrorCode, Frame, Message, RoAccessReport, HEADER_LEN, MAX_FRAME_LEN, VERSION};
use crate::gen2::{AccessOpKind, AccessResult};
use crate::reader::{AccessOp, AccessOpResult, AccessOpSpec, AccessReply, AccessSpec, ROSpec, ReportTrigger, TagReport};
use crate::rf::AntennaId;
use crate::tag::{ApplicationBehavior, CommitManifest, Epc, Nack, SegmentDigest};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("payload of {0} bytes does not fit a frame")]
    PayloadTooLarge(u64),
    #[error("{field} has {len} entries, limit {max}")]
    FieldTooLong { field: &'static str, len: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("short header: {0} bytes")]
    ShortHeader(usize),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("length field {declared} does not match {actual} available bytes")]
    LengthMismatch { declared: u64, actual: u64 },
    #[error("unknown message type {0}")]
    UnknownType(u16),
    #[error("malformed type {msg_type} payload: {reason}")]
    Malformed { msg_type: u16, reason: &'static str },
}

// ---- encoding ----

struct Out {
    buf: Vec<u8>,
}

impl Out {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_be_bytes());
    }
    fn epc(&mut self, e: &Epc) {
        self.buf.extend_from_slice(&e.0);
    }
    fn count16(&mut self, field: &'static str, len: usize) -> Result<(), EncodeError> {
        let v = u16::try_from(len).map_err(|_| EncodeError::FieldTooLong {
            field,
            len,
            max: u16::MAX as usize,
        })?;
        self.u16(v);
        Ok(())
    }
    fn count8(&mut self, field: &'static str, len: usize) -> Result<(), EncodeError> {
        let v = u8::try_from(len).map_err(|_| EncodeError::FieldTooLong {
            field,
            len,
            max: u8::MAX as usize,
        })?;
        self.u8(v);
        Ok(())
    }
    fn string(&mut self, field: &'static str, s: &str) -> Result<(), EncodeError> {
        self.count16(field, s.len())?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn antennas(&mut self, a: &[AntennaId]) -> Result<(), EncodeError> {
        self.count8("antenna list", a.len())?;
        self.buf.extend(a.iter().map(|a| a.0));
        Ok(())
    }
}

fn op_code(k: AccessOpKind) -> u8 {
    match k {
        AccessOpKind::Read => 1,
        AccessOpKind::BlockWrite => 2,
        AccessOpKind::GotoBios => 3,
        AccessOpKind::Checksum => 4,
        AccessOpKind::Commit => 5,
    }
}

fn nack_code(n: Nack) -> u8 {
    match n {
        Nack::WrongMode => 1,
        Nack::RegionViolation => 2,
        Nack::OutOfRange => 3,
    }
}

fn behavior_flags(b: ApplicationBehavior) -> u8 {
    u8::from(b.obeys_goto_bios) | (u8::from(b.responds_to_inventory) << 1)
}

fn encode_payload(m: &Message, o: &mut Out) -> Result<(), EncodeError> {
    match m {
        Message::GetCapabilities | Message::Keepalive | Message::KeepaliveAck | Message::Success => {}
        Message::CapabilitiesResponse(c) => {
            o.string("model", &c.model)?;
            o.antennas(&c.antennas)?;
            o.u32(c.access_slot_ms);
            o.i64(c.now_ms);
        }
        Message::AddRospec(s) => {
            o.u32(s.id);
            o.u32(s.duration_ms);
            match s.report_trigger {
                ReportTrigger::EndOfSpec => {
                    o.u8(0);
                    o.u32(0);
                }
                ReportTrigger::Periodic { interval_ms } => {
                    o.u8(1);
                    o.u32(interval_ms);
                }
            }
            o.antennas(&s.antenna_ids)?;
        }
        Message::StartRospec { rospec_id } | Message::StopRospec { rospec_id } => o.u32(*rospec_id),
        Message::AddAccessspec(s) => {
            o.u32(s.id);
            o.epc(&s.target);
            o.antennas(&s.antenna_ids)?;
            o.count16("op list", s.ops.len())?;
            for op in &s.ops {
                encode_op(op, o)?;
            }
        }
        Message::RoAccessReport(r) => {
            o.u32(r.rospec_id);
            o.i64(r.report_time_ms);
            o.count16("tag reports", r.tag_reports.len())?;
            for t in &r.tag_reports {
                o.epc(&t.epc);
                o.u8(t.antenna_id.0);
                o.u32(t.read_count);
                o.f64(t.mean_rssi_dbm);
                o.f64(t.last_rssi_dbm);
                o.i64(t.first_seen_ms);
                o.i64(t.last_seen_ms);
            }
            o.count16("access results", r.access_results.len())?;
            for a in &r.access_results {
                o.u32(a.spec_id);
                o.u16(a.op_index);
                o.u8(op_code(a.result.op));
                o.epc(&a.result.target);
                o.u8(u8::from(a.result.success));
                o.u32(a.result.attempts);
                encode_reply(a.reply.as_ref(), o)?;
            }
        }
        Message::Error { code, message } => {
            o.u16(code.to_u16());
            o.string("error message", message)?;
        }
    }
    Ok(())
}

fn encode_op(op: &AccessOp, o: &mut Out) -> Result<(), EncodeError> {
    o.u8(op_code(op.spec.kind()));
    o.u32(op.max_retries);
    match &op.spec {
        AccessOpSpec::Read { start, len } => {
            o.u32(*start);
            o.u32(*len);
        }
        AccessOpSpec::BlockWrite { start, words } => {
            o.u32(*start);
            o.count16("block-write words", words.len())?;
            for w in words {
                o.u16(*w);
            }
        }
        AccessOpSpec::GotoBios => {}
        AccessOpSpec::Checksum { start, end } => {
            o.u32(*start);
            o.u32(*end);
        }
        AccessOpSpec::Commit { manifest } => {
            o.u8(behavior_flags(manifest.behavior));
            o.count16("manifest segments", manifest.segments.len())?;
            for s in &manifest.segments {
                o.u32(s.start);
                o.u32(s.end);
                o.u16(s.checksum);
            }
        }
    }
    Ok(())
}

fn encode_reply(r: Option<&AccessReply>, o: &mut Out) -> Result<(), EncodeError> {
    match r {
        None => o.u8(0),
        Some(AccessReply::Ack) => o.u8(1),
        Some(AccessReply::Data { bytes }) => {
            o.u8(2);
            o.count16("read data", bytes.len())?;
            o.buf.extend_from_slice(bytes);
        }
        Some(AccessReply::Checksum { value }) => {
            o.u8(3);
            o.u16(*value);
        }
        Some(AccessReply::Nack { reason }) => {
            o.u8(4);
            o.u8(nack_code(*reason));
        }
        Some(AccessReply::Refused { reason }) => {
            o.u8(5);
            o.string("refusal reason", reason)?;
        }
    }
    Ok(())
}

/// Serializes a frame.
pub fn encode(frame: &Frame) -> Result<Vec<u8>, EncodeError> {
    let mut o = Out {
        buf: Vec::with_capacity(HEADER_LEN),
    };
    o.u8(VERSION);
    o.u16(frame.message.msg_type());
    o.u32(frame.msg_id);
    o.u32(0);
    encode_payload(&frame.message, &mut o)?;
    let total = o.buf.len() as u64;
    if total > MAX_FRAME_LEN {
        return Err(EncodeError::PayloadTooLarge(total - HEADER_LEN as u64));
    }
    o.buf[7..11].copy_from_slice(&(total as u32).to_be_bytes());
    Ok(o.buf)
}

// ---- decoding ----

struct In<'a> {
    buf: &'a [u8],
    pos: usize,
}

type R<T> = Result<T, &'static str>;

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> R<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err("truncated payload");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn arr<const N: usize>(&mut self) -> R<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> R<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> R<u16> {
        self.arr().map(u16::from_be_bytes)
    }
    fn u32(&mut self) -> R<u32> {
        self.arr().map(u32::from_be_bytes)
    }
    fn i64(&mut self) -> R<i64> {
        self.arr().map(i64::from_be_bytes)
    }
    fn f64(&mut self) -> R<f64> {
        self.arr().map(|b| f64::from_bits(u64::from_be_bytes(b)))
    }
    fn bool(&mut self) -> R<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err("boolean out of range"),
        }
    }
    fn epc(&mut self) -> R<Epc> {
        self.arr().map(Epc)
    }
    fn string(&mut self) -> R<String> {
        let n = self.u16()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| "string is not UTF-8")
    }
    fn antennas(&mut self) -> R<Vec<AntennaId>> {
        let n = self.u8()? as usize;
        Ok(self.take(n)?.iter().map(|&a| AntennaId(a)).collect())
    }
    fn done(&self) -> R<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err("trailing bytes in payload")
        }
    }
}

fn op_kind(c: u8) -> R<AccessOpKind> {
    Ok(match c {
        1 => AccessOpKind::Read,
        2 => AccessOpKind::BlockWrite,
        3 => AccessOpKind::GotoBios,
        4 => AccessOpKind::Checksum,
        5 => AccessOpKind::Commit,
        _ => return Err("unknown access op"),
    })
}

fn nack(c: u8) -> R<Nack> {
    Ok(match c {
        1 => Nack::WrongMode,
        2 => Nack::RegionViolation,
        3 => Nack::OutOfRange,
        _ => return Err("unknown nack reason"),
    })
}

fn decode_op(i: &mut In) -> R<AccessOp> {
    let kind = op_kind(i.u8()?)?;
    let max_retries = i.u32()?;
    let spec = match kind {
        AccessOpKind::Read => AccessOpSpec::Read {
            start: i.u32()?,
            len: i.u32()?,
        },
        AccessOpKind::BlockWrite => {
            let start = i.u32()?;
            let n = i.u16()?;
            let words = (0..n).map(|_| i.u16()).collect::<R<_>>()?;
            AccessOpSpec::BlockWrite { start, words }
        }
        AccessOpKind::GotoBios => AccessOpSpec::GotoBios,
        AccessOpKind::Checksum => AccessOpSpec::Checksum {
            start: i.u32()?,
            end: i.u32()?,
        },
        AccessOpKind::Commit => {
            let flags = i.u8()?;
            if flags & !0b11 != 0 {
                return Err("unknown behavior flags");
            }
            let n = i.u16()?;
            let segments = (0..n)
                .map(|_| {
                    Ok(SegmentDigest {
                        start: i.u32()?,
                        end: i.u32()?,
                        checksum: i.u16()?,
                    })
                })
                .collect::<R<_>>()?;
            AccessOpSpec::Commit {
                manifest: CommitManifest {
                    segments,
                    behavior: ApplicationBehavior {
                        obeys_goto_bios: flags & 1 != 0,
                        responds_to_inventory: flags & 2 != 0,
                    },
                },
            }
        }
    };
    Ok(AccessOp { spec, max_retries })
}

fn decode_reply(i: &mut In) -> R<Option<AccessReply>> {
    Ok(Some(match i.u8()? {
        0 => return Ok(None),
        1 => AccessReply::Ack,
        2 => {
            let n = i.u16()? as usize;
            AccessReply::Data {
                bytes: i.take(n)?.to_vec(),
            }
        }
        3 => AccessReply::Checksum { value: i.u16()? },
        4 => AccessReply::Nack { reason: nack(i.u8()?)? },
        5 => AccessReply::Refused { reason: i.string()? },
        _ => return Err("unknown reply kind"),
    }))
}

fn decode_payload(t: u16, i: &mut In) -> R<Message> {
    use msg_type::*;
    let m = match t {
        GET_CAPABILITIES => Message::GetCapabilities,
        KEEPALIVE => Message::Keepalive,
        KEEPALIVE_ACK => Message::KeepaliveAck,
        SUCCESS => Message::Success,
        CAPABILITIES_RESPONSE => Message::CapabilitiesResponse(Capabilities {
            model: i.string()?,
            antennas: i.antennas()?,
            access_slot_ms: i.u32()?,
            now_ms: i.i64()?,
        }),
        ADD_ROSPEC => {
            let id = i.u32()?;
            let duration_ms = i.u32()?;
            let report_trigger = match (i.u8()?, i.u32()?) {
                (0, 0) => ReportTrigger::EndOfSpec,
                (1, interval_ms) => ReportTrigger::Periodic { interval_ms },
                _ => return Err("bad report trigger"),
            };
            Message::AddRospec(ROSpec {
                id,
                antenna_ids: i.antennas()?,
                duration_ms,
                report_trigger,
            })
        }
        START_ROSPEC => Message::StartRospec { rospec_id: i.u32()? },
        STOP_ROSPEC => Message::StopRospec { rospec_id: i.u32()? },
        ADD_ACCESSSPEC => {
            let id = i.u32()?;
            let target = i.epc()?;
            let antenna_ids = i.antennas()?;
            let n = i.u16()?;
            let ops = (0..n).map(|_| decode_op(i)).collect::<R<_>>()?;
            Message::AddAccessspec(AccessSpec {
                id,
                target,
                antenna_ids,
                ops,
            })
        }
        RO_ACCESS_REPORT => {
            let rospec_id = i.u32()?;
            let report_time_ms = i.i64()?;
            let n = i.u16()?;
            let tag_reports = (0..n)
                .map(|_| {
                    Ok(TagReport {
                        epc: i.epc()?,
                        antenna_id: AntennaId(i.u8()?),
                        read_count: i.u32()?,
                        mean_rssi_dbm: i.f64()?,
                        last_rssi_dbm: i.f64()?,
                        first_seen_ms: i.i64()?,
                        last_seen_ms: i.i64()?,
                    })
                })
                .collect::<R<_>>()?;
            let n = i.u16()?;
            let access_results = (0..n)
                .map(|_| {
                    let spec_id = i.u32()?;
                    let op_index = i.u16()?;
                    let op = op_kind(i.u8()?)?;
                    let target = i.epc()?;
                    let success = i.bool()?;
                    let attempts = i.u32()?;
                    Ok(AccessOpResult {
                        spec_id,
                        op_index,
                        result: AccessResult {
                            op,
                            target,
                            success,
                            attempts,
                        },
                        reply: decode_reply(i)?,
                    })
                })
                .collect::<R<_>>()?;
            Message::RoAccessReport(RoAccessReport {
                rospec_id,
                report_time_ms,
                tag_reports,
                access_results,
            })
        }
        ERROR => Message::Error {
            code: ErrorCode::from_u16(i.u16()?),
            message: i.string()?,
        },
        _ => unreachable!("type checked by caller"),
    };
    i.done()?;
    Ok(m)
}

fn known_type(t: u16) -> bool {
    use msg_type::*;
    matches!(
        t,
        GET_CAPABILITIES
            | CAPABILITIES_RESPONSE
            | ADD_ROSPEC
            | START_ROSPEC
            | STOP_ROSPEC
            | ADD_ACCESSSPEC
            | RO_ACCESS_REPORT
            | KEEPALIVE
            | KEEPALIVE_ACK
            | ERROR
            | SUCCESS
    )
}

struct Header {
    msg_type: u16,
    msg_id: u32,
    length: u32,
}

fn header(bytes: &[u8]) -> Result<Header, DecodeError> {
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::ShortHeader(bytes.len()));
    }
    if bytes[0] != VERSION {
        return Err(DecodeError::BadVersion(bytes[0]));
    }
    let h = Header {
        msg_type: u16::from_be_bytes([bytes[1], bytes[2]]),
        msg_id: u32::from_be_bytes(bytes[3..7].try_into().expect("4 bytes")),
        length: u32::from_be_bytes(bytes[7..11].try_into().expect("4 bytes")),
    };
    if (h.length as usize) < HEADER_LEN {
        return Err(DecodeError::LengthMismatch {
            declared: u64::from(h.length),
            actual: bytes.len() as u64,
        });
    }
    Ok(h)
}

fn decode_body(h: &Header, frame: &[u8]) -> Result<Frame, DecodeError> {
    if !known_type(h.msg_type) {
        return Err(DecodeError::UnknownType(h.msg_type));
    }
    let mut i = In {
        buf: &frame[HEADER_LEN..],
        pos: 0,
    };
    let message = decode_payload(h.msg_type, &mut i).map_err(|reason| DecodeError::Malformed {
        msg_type: h.msg_type,
        reason,
    })?;
    Ok(Frame {
        msg_id: h.msg_id,
        message,
    })
}

/// Decodes the frame at the start of `bytes` and returns it with the number
/// of bytes it occupied. Anything after that is left alone.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Frame, usize), DecodeError> {
    let h = header(bytes)?;
    let len = h.length as usize;
    if bytes.len() < len {
        return Err(DecodeError::LengthMismatch {
            declared: u64::from(h.length),
            actual: bytes.len() as u64,
        });
    }
    Ok((decode_body(&h, &bytes[..len])?, len))
}

/// Decodes exactly one frame; `bytes` must be exactly as long as the
/// header says.
pub fn decode(bytes: &[u8]) -> Result<Frame, DecodeError> {
    let h = header(bytes)?;
    if h.length as usize != bytes.len() {
        return Err(DecodeError::LengthMismatch {
            declared: u64::from(h.length),
            actual: bytes.len() as u64,
        });
    }
    decode_body(&h, bytes)
}

/// Reassembles frames from a byte stream.
///
/// A bad version or impossible length leaves no way to find the next frame
/// boundary, so the buffer is discarded. A frame with a known length but an
/// unknown type or bad payload is skipped on its own.
#[derive(Debug)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    max_frame_len: usize,
}

impl Default for FrameDecoder {
    fn default() -> Self {
        Self::new(1 << 24)
    }
}

impl FrameDecoder {
    pub fn new(max_frame_len: usize) -> Self {
        Self {
            buf: Vec::new(),
            max_frame_len,
        }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete frame, or `None` if more bytes are needed.
    pub fn next_frame(&mut self) -> Option<Result<Frame, DecodeError>> {
        if self.buf.len() < HEADER_LEN {
            return None;
        }
        let h = match header(&self.buf) {
            Ok(h) => h,
            Err(e) => {
                self.buf.clear();
                return Some(Err(e));
            }
        };
        let len = h.length as usize;
        if len > self.max_frame_len {
            self.buf.clear();
            return Some(Err(DecodeError::LengthMismatch {
                declared: u64::from(h.length),
                actual: self.max_frame_len as u64,
            }));
        }
        if self.buf.len() < len {
            return None;
        }
        let result = decode_body(&h, &self.buf[..len]);
        self.buf.drain(..len);
        Some(result)
    }
}
