//! The testbed controller: leases, experiments and their logs.

pub mod experiments;
pub mod log;
pub mod server;
pub mod session;

use std::io::Write;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, TestbedConfig};
use crate::port::PortError;
use crate::reader::Reader;
use crate::rf::{AntennaId, TagId};
use crate::tag::{ApplicationBehavior, Mode};
use crate::wisent::FirmwareImage;
use crate::world::World;
use experiments::{run_inventory, run_reprogram, BenchModel, InventoryRow, ReprogramRow};
use log::{ExperimentLog, LogError};
use session::{Session, SessionError, SessionManager, Token};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Port(#[from] PortError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagStatus {
    pub tag: TagId,
    pub epc: String,
    pub model: String,
    pub mode: Mode,
    pub behavior: ApplicationBehavior,
    pub interruptions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub session: Option<SessionInfo>,
    pub antennas: Vec<AntennaId>,
    pub tags: Vec<TagStatus>,
}

/// A lease as shown to everyone: no token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub user: String,
    pub acquired_at: String,
    pub lease_expiry: String,
}

impl From<&Session> for SessionInfo {
    fn from(s: &Session) -> Self {
        Self {
            user: s.user.clone(),
            acquired_at: crate::clock::format_utc_ms(s.acquired_at),
            lease_expiry: crate::clock::format_utc_ms(s.lease_expiry),
        }
    }
}

/// The bench and everyone wanting to use it. Experiments serialize on the
/// world lock. Installed firmware persists from one experiment to the next;
/// every experiment starts with tags switched off and the clock at the
/// epoch, so a (config, seed) pair always reproduces the same run.
pub struct Testbed {
    config: TestbedConfig,
    world: Mutex<World>,
    sessions: SessionManager,
}

impl Testbed {
    pub fn new(config: TestbedConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let sessions = SessionManager::new(
            Duration::from_secs(config.controller.lease_idle_timeout_s),
            config.controller.shared_secret.clone(),
        );
        Self::with_sessions(config, sessions)
    }

    pub fn with_sessions(config: TestbedConfig, sessions: SessionManager) -> Result<Self, ConfigError> {
        let world = config.build_world()?;
        Ok(Self {
            config,
            world: Mutex::new(world),
            sessions,
        })
    }

    pub fn config(&self) -> &TestbedConfig {
        &self.config
    }

    pub fn sessions(&self) -> &SessionManager {
        &self.sessions
    }

    fn lock_world(&self) -> std::sync::MutexGuard<'_, World> {
        self.world.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn reader(&self, world: &World, seed: u64) -> Reader {
        let mut world = world.clone();
        for t in &mut world.tags {
            t.power_cycle();
        }
        Reader::new(self.config.reader.clone(), world, self.config.clock(), seed)
    }

    pub fn inventory<W: Write>(
        &self,
        token: Token,
        antennas: &[AntennaId],
        duration_s: f64,
        seed: u64,
        log: &mut ExperimentLog<W>,
    ) -> Result<Vec<InventoryRow>, ControlError> {
        self.sessions.touch(token)?;
        let world = self.lock_world();
        if let Some(a) = antennas.iter().find(|&&a| !world.has_antenna(a)) {
            return Err(ControlError::Invalid(format!("unknown antenna {}", a.0)));
        }
        let mut reader = self.reader(&world, seed);
        log.record(
            reader.clock.utc_now(),
            "experiment-start",
            &serde_json::json!({"experiment": "inventory", "session": token, "seed": seed,
                                "antennas": antennas, "duration_s": duration_s}),
        )?;
        let rows = run_inventory(&mut reader, antennas, duration_s, log)?;
        log.record(reader.clock.utc_now(), "experiment-end", &serde_json::json!({ "rows": rows }))?;
        log.flush()?;
        self.sessions.touch(token)?;
        Ok(rows)
    }

    pub fn reprogram<W: Write>(
        &self,
        token: Token,
        tags: &[TagId],
        image: &FirmwareImage,
        seed: u64,
        log: &mut ExperimentLog<W>,
    ) -> Result<Vec<ReprogramRow>, ControlError> {
        self.sessions.touch(token)?;
        let mut world = self.lock_world();
        if let Some(t) = tags.iter().find(|&&t| world.tag(t).is_none()) {
            return Err(ControlError::Invalid(format!("unknown tag {t}")));
        }
        let mut reader = self.reader(&world, seed);
        log.record(
            reader.clock.utc_now(),
            "experiment-start",
            &serde_json::json!({"experiment": "reprogram", "session": token, "seed": seed,
                                "tags": tags, "bytes": image.byte_len()}),
        )?;
        let geometry = self.config.geometry();
        let bench = BenchModel {
            geometry: &geometry,
            link: &self.config.link,
            layout: &self.config.memory,
        };
        let rows = run_reprogram(&mut reader, &bench, tags, image, &self.config.wisent, log)?;
        log.record(reader.clock.utc_now(), "experiment-end", &serde_json::json!({ "rows": rows }))?;
        log.flush()?;
        // Whatever firmware made it onto the tags stays there.
        *world = reader.world;
        self.sessions.touch(token)?;
        Ok(rows)
    }

    pub fn status(&self) -> Status {
        let world = self.lock_world();
        Status {
            session: self.sessions.current().as_ref().map(SessionInfo::from),
            antennas: world.antenna_ids(),
            tags: world
                .tags
                .iter()
                .map(|t| TagStatus {
                    tag: t.tag_id,
                    epc: t.epc.to_hex(),
                    model: t.model.clone(),
                    mode: t.mode,
                    behavior: t.behavior,
                    interruptions: t.interruptions(),
                })
                .collect(),
        }
    }
}
