//! Blocking frame I/O and a request/response client.

use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use chrono::{DateTime, Utc};
use thiserror::Error;

use super::{
    decode, encode, Capabilities, DecodeError, EncodeError, ErrorCode, Frame, Message, RoAccessReport, HEADER_LEN,
};
use crate::port::{PortError, ReaderPort};
use crate::reader::{AccessOpResult, AccessSpec, ROSpec, ReaderEvent, ReportBatch};
use crate::rf::AntennaId;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("peer closed the connection")]
    Closed,
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("reader error {code:?}: {message}")]
    Remote { code: ErrorCode, message: String },
    #[error("unexpected {0} in reply")]
    Unexpected(&'static str),
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), LinkError> {
    w.write_all(&encode(frame)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream before any
/// header byte.
pub fn read_frame<R: Read>(r: &mut R, max_len: u32) -> Result<Option<Frame>, LinkError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(LinkError::Closed),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(header[7..11].try_into().expect("4 bytes"));
    if len > max_len {
        return Err(LinkError::TooLarge(len));
    }
    let mut frame = header.to_vec();
    if (len as usize) > HEADER_LEN {
        frame.resize(len as usize, 0);
        r.read_exact(&mut frame[HEADER_LEN..]).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => LinkError::Closed,
            _ => LinkError::Io(e),
        })?;
    }
    Ok(Some(decode(&frame)?))
}

/// What the reader sent back for one request: any reports, then the final
/// reply.
#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub reports: Vec<RoAccessReport>,
    pub reply: Message,
}

pub struct Client {
    stream: TcpStream,
    next_id: u32,
    max_frame_len: u32,
}

impl Client {
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self, LinkError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            next_id: 1,
            max_frame_len: 1 << 24,
        })
    }

    /// Sends `message` and collects frames carrying its id until a final
    /// reply arrives. An ERROR reply becomes [`LinkError::Remote`].
    pub fn call(&mut self, message: Message) -> Result<Exchange, LinkError> {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1).max(1);
        write_frame(&mut self.stream, &Frame::new(id, message))?;
        let mut reports = Vec::new();
        loop {
            let frame = read_frame(&mut self.stream, self.max_frame_len)?.ok_or(LinkError::Closed)?;
            // Id 0 is used for errors not tied to a request, such as busy.
            let unsolicited_error = frame.msg_id == 0 && matches!(frame.message, Message::Error { .. });
            if frame.msg_id != id && !unsolicited_error {
                continue;
            }
            match frame.message {
                Message::RoAccessReport(r) => reports.push(r),
                Message::Error { code, message } => return Err(LinkError::Remote { code, message }),
                reply => return Ok(Exchange { reports, reply }),
            }
        }
    }
}

/// A reader reached over the wire protocol.
pub struct RemoteReader {
    client: Client,
    caps: Option<Capabilities>,
    last_seen: DateTime<Utc>,
}

impl RemoteReader {
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self, LinkError> {
        let mut r = Self {
            client: Client::connect(addr, timeout)?,
            caps: None,
            last_seen: DateTime::<Utc>::UNIX_EPOCH,
        };
        let caps = r.capabilities()?;
        if let Some(t) = DateTime::<Utc>::from_timestamp_millis(caps.now_ms) {
            r.last_seen = t;
        }
        Ok(r)
    }

    pub fn capabilities(&mut self) -> Result<Capabilities, LinkError> {
        if let Some(c) = &self.caps {
            return Ok(c.clone());
        }
        match self.client.call(Message::GetCapabilities)?.reply {
            Message::CapabilitiesResponse(c) => {
                self.caps = Some(c.clone());
                Ok(c)
            }
            other => Err(LinkError::Unexpected(other.name())),
        }
    }

    fn expect_success(&mut self, m: Message) -> Result<Vec<RoAccessReport>, LinkError> {
        let ex = self.client.call(m)?;
        match ex.reply {
            Message::Success => {
                if let Some(t) = ex.reports.iter().map(|r| r.report_time_ms).max() {
                    if let Some(t) = DateTime::<Utc>::from_timestamp_millis(t) {
                        self.last_seen = self.last_seen.max(t);
                    }
                }
                Ok(ex.reports)
            }
            other => Err(LinkError::Unexpected(other.name())),
        }
    }
}

impl ReaderPort for RemoteReader {
    fn antennas(&mut self) -> Result<Vec<AntennaId>, PortError> {
        Ok(self.capabilities()?.antennas)
    }

    fn access_slot_ms(&mut self) -> Result<u64, PortError> {
        Ok(u64::from(self.capabilities()?.access_slot_ms))
    }

    fn run_rospec(
        &mut self,
        spec: &ROSpec,
        _observer: &mut dyn FnMut(&ReaderEvent),
    ) -> Result<Vec<ReportBatch>, PortError> {
        self.expect_success(Message::AddRospec(spec.clone()))?;
        let reports = self.expect_success(Message::StartRospec { rospec_id: spec.id })?;
        Ok(reports
            .into_iter()
            .map(|r| ReportBatch {
                report_time_ms: r.report_time_ms,
                reports: r.tag_reports,
            })
            .collect())
    }

    fn run_accessspec(
        &mut self,
        spec: &AccessSpec,
        _observer: &mut dyn FnMut(&ReaderEvent),
    ) -> Result<Vec<AccessOpResult>, PortError> {
        let reports = self.expect_success(Message::AddAccessspec(spec.clone()))?;
        Ok(reports.into_iter().flat_map(|r| r.access_results).collect())
    }

    fn now_utc(&self) -> DateTime<Utc> {
        self.last_seen
    }

    fn event_epoch(&self) -> DateTime<Utc> {
        self.last_seen
    }
}
