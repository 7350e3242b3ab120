//! JSON-lines control protocol over TCP. One request object per line, one
//! response object per line, in order. See `docs/control-protocol.md`.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::experiments::{write_inventory_csv, write_reprogram_csv, EnvironmentSelection};
use super::log::ExperimentLog;
use super::session::{SessionError, Token};
use super::{ControlError, Testbed};
use crate::clock::format_utc_ms;
use crate::rf::{AntennaId, TagId};
use crate::tag::ApplicationBehavior;
use crate::wisent::FirmwareImage;

/// Longest request line accepted.
pub const MAX_LINE: u64 = 4 << 20;

fn default_duration() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    Acquire {
        user: String,
        #[serde(default)]
        secret: Option<String>,
    },
    Release {
        token: Token,
    },
    Status,
    Inventory {
        token: Token,
        #[serde(default)]
        antenna: Option<u8>,
        #[serde(default)]
        selection: Option<EnvironmentSelection>,
        #[serde(default = "default_duration")]
        duration_s: f64,
        #[serde(default)]
        seed: u64,
    },
    Reprogram {
        token: Token,
        tags: Vec<TagId>,
        /// TI-TXT text.
        firmware: String,
        #[serde(default)]
        behavior: ApplicationBehavior,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lease_expiry: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Response {
    fn ok(id: Option<u64>, result: Value) -> Self {
        Self {
            id,
            ok: true,
            result: Some(result),
            error: None,
        }
    }

    fn err(id: Option<u64>, kind: &str, message: String, lease_expiry: Option<String>) -> Self {
        Self {
            id,
            ok: false,
            result: None,
            error: Some(ErrorBody {
                kind: kind.into(),
                message,
                lease_expiry,
            }),
        }
    }
}

fn error_response(id: Option<u64>, e: ControlError) -> Response {
    match e {
        ControlError::Session(SessionError::Busy { lease_expiry }) => Response::err(
            id,
            "busy",
            SessionError::Busy { lease_expiry }.to_string(),
            Some(format_utc_ms(lease_expiry)),
        ),
        ControlError::Session(s @ SessionError::BadSecret) => Response::err(id, "auth", s.to_string(), None),
        ControlError::Session(s @ SessionError::InvalidToken) => Response::err(id, "auth", s.to_string(), None),
        ControlError::Invalid(m) => Response::err(id, "invalid", m, None),
        ControlError::Port(p) => Response::err(id, "reader", p.to_string(), None),
        ControlError::Log(l) => Response::err(id, "log", l.to_string(), None),
    }
}

/// Runs one request against `testbed`.
pub fn handle(testbed: &Testbed, req: Request) -> Response {
    let id = req.id;
    match execute(testbed, req.command) {
        Ok(v) => Response::ok(id, v),
        Err(e) => error_response(id, e),
    }
}

fn csv_text(write: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Result<String, ControlError> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| ControlError::Invalid(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| ControlError::Invalid(e.to_string()))
}

fn execute(testbed: &Testbed, command: Command) -> Result<Value, ControlError> {
    match command {
        Command::Acquire { user, secret } => {
            let s = testbed.sessions().acquire(&user, secret.as_deref())?;
            Ok(json!({
                "token": s.token,
                "user": s.user,
                "acquired_at": format_utc_ms(s.acquired_at),
                "lease_expiry": format_utc_ms(s.lease_expiry),
            }))
        }
        Command::Release { token } => {
            testbed.sessions().release(token)?;
            Ok(json!({}))
        }
        Command::Status => Ok(serde_json::to_value(testbed.status()).expect("status serializes")),
        Command::Inventory {
            token,
            antenna,
            selection,
            duration_s,
            seed,
        } => {
            let antennas: Vec<AntennaId> = match (antenna, selection) {
                (Some(a), None) => vec![AntennaId(a)],
                (None, Some(s)) => s.antennas(),
                _ => return Err(ControlError::Invalid("give exactly one of antenna or selection".into())),
            };
            let mut log = ExperimentLog::new(Vec::new());
            let rows = testbed.inventory(token, &antennas, duration_s, seed, &mut log)?;
            let csv = csv_text(|b| write_inventory_csv(&rows, b))?;
            Ok(json!({
                "rows": rows,
                "csv": csv,
                "log": String::from_utf8_lossy(&log.into_inner()),
            }))
        }
        Command::Reprogram {
            token,
            tags,
            firmware,
            behavior,
            seed,
        } => {
            let mut image = FirmwareImage::parse(&firmware).map_err(|e| ControlError::Invalid(e.to_string()))?;
            image.behavior = behavior;
            let mut log = ExperimentLog::new(Vec::new());
            let rows = testbed.reprogram(token, &tags, &image, seed, &mut log)?;
            let csv = csv_text(|b| write_reprogram_csv(&rows, b))?;
            Ok(json!({
                "rows": rows,
                "csv": csv,
                "log": String::from_utf8_lossy(&log.into_inner()),
            }))
        }
    }
}

pub struct ControlServer {
    listener: TcpListener,
    testbed: Arc<Testbed>,
}

impl ControlServer {
    pub fn bind<A: ToSocketAddrs>(addr: A, testbed: Arc<Testbed>) -> std::io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            testbed,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts clients concurrently; requests from all of them funnel into
    /// the one testbed.
    pub fn serve(self) -> std::io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            let testbed = Arc::clone(&self.testbed);
            std::thread::spawn(move || {
                let _ = serve_connection(stream, &testbed);
            });
        }
        Ok(())
    }

    pub fn spawn(self) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
        let addr = self.local_addr()?;
        Ok((addr, std::thread::spawn(move || self.serve())))
    }
}

fn serve_connection(stream: TcpStream, testbed: &Testbed) -> std::io::Result<()> {
    let mut out = stream.try_clone()?;
    let mut input = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        let n = (&mut input).take(MAX_LINE).read_line(&mut line)?;
        if n == 0 {
            return Ok(());
        }
        if !line.ends_with('\n') && n as u64 == MAX_LINE {
            let resp = Response::err(None, "invalid", "request line too long".into(), None);
            writeln!(out, "{}", serde_json::to_string(&resp)?)?;
            return Ok(());
        }
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => handle(testbed, req),
            Err(e) => Response::err(None, "invalid", format!("bad request: {e}"), None),
        };
        writeln!(out, "{}", serde_json::to_string(&resp)?)?;
        out.flush()?;
    }
}

/// A blocking client for the control protocol.
pub struct ControlClient {
    input: BufReader<TcpStream>,
    out: TcpStream,
    next_id: u64,
}

impl ControlClient {
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(timeout))?;
        Ok(Self {
            out: stream.try_clone()?,
            input: BufReader::new(stream),
            next_id: 1,
        })
    }

    pub fn call(&mut self, command: Command) -> std::io::Result<Response> {
        let req = Request {
            id: Some(self.next_id),
            command,
        };
        self.next_id += 1;
        writeln!(self.out, "{}", serde_json::to_string(&req)?)?;
        self.out.flush()?;
        let mut line = String::new();
        if self.input.read_line(&mut line)? == 0 {
            return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "server closed the connection"));
        }
        Ok(serde_json::from_str(&line)?)
    }
}
