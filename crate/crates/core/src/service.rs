//! The reader as a TCP service speaking the framed wire protocol.
//!
//! One client at a time; a second connection gets an ERROR(busy) frame and
//! is closed. START_ROSPEC runs the spec to completion, streaming one
//! RO_ACCESS_REPORT per report batch and then SUCCESS, all carrying the
//! request's message id. ADD_ACCESSSPEC executes immediately and answers
//! the same way.

use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crate::llrp::io::{read_frame, write_frame, LinkError};
use crate::llrp::{Capabilities, ErrorCode, Frame, Message, RoAccessReport};
use crate::reader::{ROSpec, Reader, ReaderError};

pub const MODEL: &str = "tpcbed-sim";
const MAX_FRAME_LEN: u32 = 1 << 24;

struct Shared {
    reader: Reader,
    rospecs: BTreeMap<u32, ROSpec>,
}

pub struct ReaderService {
    listener: TcpListener,
    shared: Arc<Mutex<Shared>>,
    busy: Arc<AtomicBool>,
}

fn error(code: ErrorCode, message: impl Into<String>) -> Message {
    Message::Error {
        code,
        message: message.into(),
    }
}

fn reader_error(e: ReaderError) -> Message {
    match e {
        ReaderError::UnknownAntenna(_) => error(ErrorCode::UnknownAntenna, e.to_string()),
        ReaderError::InvalidSpec(_) => error(ErrorCode::InvalidSpec, e.to_string()),
    }
}

impl ReaderService {
    pub fn bind<A: ToSocketAddrs>(addr: A, reader: Reader) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            shared: Arc::new(Mutex::new(Shared {
                reader,
                rospecs: BTreeMap::new(),
            })),
            busy: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until the listener fails.
    pub fn serve(self) -> io::Result<()> {
        for stream in self.listener.incoming() {
            let mut stream = stream?;
            if self.busy.swap(true, Ordering::AcqRel) {
                let _ = write_frame(&mut stream, &Frame::new(0, error(ErrorCode::Busy, "reader already has a client")));
                continue;
            }
            let shared = Arc::clone(&self.shared);
            let busy = Arc::clone(&self.busy);
            std::thread::spawn(move || {
                let _ = handle_connection(stream, &shared);
                busy.store(false, Ordering::Release);
            });
        }
        Ok(())
    }

    pub fn spawn(self) -> io::Result<(SocketAddr, JoinHandle<io::Result<()>>)> {
        let addr = self.local_addr()?;
        Ok((addr, std::thread::spawn(move || self.serve())))
    }
}

fn handle_connection(mut stream: TcpStream, shared: &Mutex<Shared>) -> Result<(), LinkError> {
    stream.set_nodelay(true)?;
    loop {
        let frame = match read_frame(&mut stream, MAX_FRAME_LEN) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(LinkError::Decode(e)) => {
                write_frame(&mut stream, &Frame::new(0, error(ErrorCode::Malformed, e.to_string())))?;
                continue;
            }
            Err(e) => return Err(e),
        };
        let replies = {
            let mut s = shared.lock().unwrap_or_else(|p| p.into_inner());
            dispatch(&mut s, frame.message)
        };
        for m in replies {
            write_frame(&mut stream, &Frame::new(frame.msg_id, m))?;
        }
    }
}

fn dispatch(s: &mut Shared, message: Message) -> Vec<Message> {
    match message {
        Message::GetCapabilities => vec![Message::CapabilitiesResponse(Capabilities {
            model: MODEL.into(),
            antennas: s.reader.world.antenna_ids(),
            access_slot_ms: u32::try_from(s.reader.config.access_slot_ms).unwrap_or(u32::MAX),
            now_ms: s.reader.clock.unix_ms_at(s.reader.clock.now_ms()),
        })],
        Message::Keepalive => vec![Message::KeepaliveAck],
        Message::AddRospec(spec) => match s.reader.validate_rospec(&spec) {
            Ok(()) => {
                s.rospecs.insert(spec.id, spec);
                vec![Message::Success]
            }
            Err(e) => vec![reader_error(e)],
        },
        Message::StartRospec { rospec_id } => {
            let Some(spec) = s.rospecs.get(&rospec_id).cloned() else {
                return vec![error(ErrorCode::UnknownRospec, format!("no rospec {rospec_id}"))];
            };
            match s.reader.execute_rospec(&spec, &mut |_| {}) {
                Ok(batches) => batches
                    .into_iter()
                    .map(|b| {
                        Message::RoAccessReport(RoAccessReport {
                            rospec_id,
                            report_time_ms: b.report_time_ms,
                            tag_reports: b.reports,
                            access_results: Vec::new(),
                        })
                    })
                    .chain(std::iter::once(Message::Success))
                    .collect(),
                Err(e) => vec![reader_error(e)],
            }
        }
        Message::StopRospec { rospec_id } => match s.rospecs.remove(&rospec_id) {
            Some(_) => vec![Message::Success],
            None => vec![error(ErrorCode::UnknownRospec, format!("no rospec {rospec_id}"))],
        },
        Message::AddAccessspec(spec) => {
            if let Some(a) = spec.antenna_ids.iter().find(|&&a| !s.reader.world.has_antenna(a)) {
                return vec![reader_error(ReaderError::UnknownAntenna(*a))];
            }
            if spec.ops.is_empty() {
                return vec![reader_error(ReaderError::InvalidSpec("access spec has no ops".into()))];
            }
            let results = s.reader.execute_accessspec(&spec, &mut |_| {});
            let now = s.reader.clock.now_ms();
            vec![
                Message::RoAccessReport(RoAccessReport {
                    rospec_id: 0,
                    report_time_ms: s.reader.clock.unix_ms_at(now),
                    tag_reports: Vec::new(),
                    access_results: results,
                }),
                Message::Success,
            ]
        }
        other => vec![error(ErrorCode::Unsupported, format!("{} is not a request", other.name()))],
    }
}
