use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use tpcbed::config::TestbedConfig;
use tpcbed::controller::experiments::{
    run_inventory, write_inventory_csv, write_reprogram_csv, EnvironmentSelection, InventoryRow, ReprogramRow,
};
use tpcbed::controller::log::ExperimentLog;
use tpcbed::controller::server::{Command, ControlClient, ControlServer, Response};
use tpcbed::controller::session::Token;
use tpcbed::controller::Testbed;
use tpcbed::llrp::io::RemoteReader;
use tpcbed::rf::{AntennaId, TagId};
use tpcbed::service::ReaderService;
use tpcbed::wisent::FirmwareImage;

const NET_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Parser)]
#[command(name = "tpcbed", version, about = "Computational RFID testbed simulator and controller")]
struct Cli {
    /// Testbed configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the control server (JSON lines over TCP).
    Serve {
        #[arg(long, default_value_t = 7070)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Run a simulated reader speaking the framed wire protocol.
    Reader {
        #[arg(long, default_value_t = 5084)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Inventory the tags seen by one antenna.
    Inventory {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        antenna: u8,
        /// Seconds of virtual time.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV table; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON-lines event log; next to --out when omitted.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Use a running control server instead of an in-process testbed.
        #[arg(long, conflicts_with = "reader")]
        connect: Option<String>,
        /// Drive a running reader over the wire protocol.
        #[arg(long)]
        reader: Option<String>,
        #[arg(long, default_value = "cli")]
        user: String,
        #[arg(long)]
        secret: Option<String>,
    },
    /// Reprogram tags wirelessly and tabulate transfer times.
    Reprogram {
        /// Tag ids: `0..5` (inclusive), `1,2,5` or a single id.
        #[arg(long)]
        tags: String,
        /// TI-TXT image; `<name>.behavior.toml` next to it is picked up.
        #[arg(long)]
        firmware: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        connect: Option<String>,
        #[arg(long, default_value = "cli")]
        user: String,
        #[arg(long)]
        secret: Option<String>,
    },
    /// Show who holds the testbed and what the tags are running.
    Status {
        #[arg(long)]
        connect: Option<String>,
    },
}

fn parse_tags(s: &str) -> Result<Vec<TagId>, String> {
    let num = |t: &str| t.trim().parse::<u8>().map_err(|e| format!("bad tag id {t:?}: {e}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty tag range {s}"));
        }
        return Ok((a..=b).map(TagId).collect());
    }
    s.split(',').map(|t| num(t).map(TagId)).collect()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(p) => TestbedConfig::load(p)?,
        None => TestbedConfig::default(),
    };
    match cli.command {
        Cmd::Serve { port, bind } => serve(config, &bind, port),
        Cmd::Reader { port, bind, seed } => {
            let service = ReaderService::bind((bind.as_str(), port), config.build_reader(seed)?)?;
            eprintln!("reader listening on {}", service.local_addr()?);
            service.serve()?;
            Ok(())
        }
        Cmd::Inventory {
            antenna,
            duration,
            seed,
            out,
            log,
            connect,
            reader,
            user,
            secret,
        } => {
            let log_path = log_path(log, out.as_deref());
            if let Some(addr) = connect {
                let cmd = |token| Command::Inventory {
                    token,
                    antenna: Some(antenna),
                    selection: None,
                    duration_s: duration,
                    seed,
                };
                let result = remote_experiment(&addr, &user, secret, cmd)?;
                return emit_remote(&result, out.as_deref(), log_path.as_deref());
            }
            let mut log = open_log(log_path.as_deref())?;
            let rows = if let Some(addr) = reader {
                let addr = resolve(&addr)?;
                let mut port = RemoteReader::connect(addr, NET_TIMEOUT)?;
                run_inventory(&mut port, &[AntennaId(antenna)], duration, &mut log)?
            } else {
                let selection = EnvironmentSelection::from_antenna(antenna).expect("range checked by clap");
                let testbed = Testbed::new(config)?;
                let session = testbed.sessions().acquire(&user, secret.as_deref())?;
                let rows = testbed.inventory(session.token, &selection.antennas(), duration, seed, &mut log)?;
                testbed.sessions().release(session.token)?;
                rows
            };
            log.flush()?;
            emit_inventory(&rows, out.as_deref())
        }
        Cmd::Reprogram {
            tags,
            firmware,
            seed,
            out,
            log,
            connect,
            user,
            secret,
        } => {
            let tags = parse_tags(&tags).map_err(|e| anyhow!(e))?;
            let image = FirmwareImage::load(&firmware)?;
            let log_path = log_path(log, out.as_deref());
            if let Some(addr) = connect {
                let text = std::fs::read_to_string(&firmware).with_context(|| firmware.display().to_string())?;
                let cmd = |token| Command::Reprogram {
                    token,
                    tags: tags.clone(),
                    firmware: text.clone(),
                    behavior: image.behavior,
                    seed,
                };
                let result = remote_experiment(&addr, &user, secret, cmd)?;
                return emit_remote(&result, out.as_deref(), log_path.as_deref());
            }
            let mut log = open_log(log_path.as_deref())?;
            let testbed = Testbed::new(config)?;
            let session = testbed.sessions().acquire(&user, secret.as_deref())?;
            let rows = testbed.reprogram(session.token, &tags, &image, seed, &mut log)?;
            testbed.sessions().release(session.token)?;
            log.flush()?;
            emit_reprogram(&rows, out.as_deref())
        }
        Cmd::Status { connect } => {
            let status = match connect {
                Some(addr) => {
                    let mut c = ControlClient::connect(resolve(&addr)?, NET_TIMEOUT)?;
                    ok_result(c.call(Command::Status)?)?
                }
                None => serde_json::to_value(Testbed::new(config)?.status())?,
            };
            writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&status)?)?;
            Ok(())
        }
    }
}

fn serve(config: TestbedConfig, bind: &str, port: u16) -> Result<()> {
    let testbed = Arc::new(Testbed::new(config)?);
    let server = ControlServer::bind((bind, port), testbed)?;
    eprintln!("control server listening on {}", server.local_addr()?);
    server.serve()?;
    Ok(())
}

fn resolve(addr: &str) -> Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| anyhow!("cannot resolve {addr}"))
}

/// Default log location: the table path with a `.jsonl` extension.
fn log_path(log: Option<PathBuf>, out: Option<&Path>) -> Option<PathBuf> {
    log.or_else(|| out.map(|o| o.with_extension("jsonl")))
}

fn open_log(path: Option<&Path>) -> Result<ExperimentLog<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::sink()),
    };
    Ok(ExperimentLog::new(sink))
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn emit_inventory(rows: &[InventoryRow], out: Option<&Path>) -> Result<()> {
    write_inventory_csv(rows, output(out)?)?;
    Ok(())
}

fn emit_reprogram(rows: &[ReprogramRow], out: Option<&Path>) -> Result<()> {
    write_reprogram_csv(rows, output(out)?)?;
    Ok(())
}

fn ok_result(resp: Response) -> Result<serde_json::Value> {
    match (resp.ok, resp.result, resp.error) {
        (true, Some(v), _) => Ok(v),
        (_, _, Some(e)) => match e.lease_expiry {
            Some(t) => bail!("{}: {} (lease expires {t})", e.kind, e.message),
            None => bail!("{}: {}", e.kind, e.message),
        },
        _ => bail!("malformed response"),
    }
}

/// Acquire, run, release.
fn remote_experiment(
    addr: &str,
    user: &str,
    secret: Option<String>,
    command: impl FnOnce(Token) -> Command,
) -> Result<serde_json::Value> {
    let mut c = ControlClient::connect(resolve(addr)?, NET_TIMEOUT)?;
    let lease = ok_result(c.call(Command::Acquire {
        user: user.into(),
        secret,
    })?)?;
    let token: Token = serde_json::from_value(lease["token"].clone())?;
    let result = c.call(command(token));
    let released = c.call(Command::Release { token });
    let result = ok_result(result?)?;
    ok_result(released?)?;
    Ok(result)
}

fn emit_remote(result: &serde_json::Value, out: Option<&Path>, log: Option<&Path>) -> Result<()> {
    let csv = result["csv"].as_str().ok_or_else(|| anyhow!("response lacks csv"))?;
    output(out)?.write_all(csv.as_bytes())?;
    if let Some(p) = log {
        let text = result["log"].as_str().ok_or_else(|| anyhow!("response lacks log"))?;
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}
