//! Testbed configuration, read from TOML. Every section is optional and
//! falls back to the shipped defaults.
//!
//! ```toml
//! angle_mapping = "descending"
//!
//! [link]
//! coupling_penalty_per_neighbor_db = 1.0
//!
//! [reader]
//! access_slot_ms = 600
//!
//! [controller]
//! lease_idle_timeout_s = 300
//! epoch = "2016-04-02T00:00:00Z"
//!
//! [[tags]]
//! tag = 3
//! behavior = { obeys_goto_bios = false }
//! ```

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{default_epoch, VirtualClock};
use crate::reader::{Reader, ReaderConfig};
use crate::rf::{AngleMapping, LinkBudgetParams, TagId, TestbedGeometry};
use crate::tag::{ApplicationBehavior, EnergyParams, MemoryLayout, TagState};
use crate::wisent::ReprogramPolicy;
use crate::world::World;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// A session lapses after this long without activity.
    pub lease_idle_timeout_s: u64,
    /// UTC instant that virtual time 0 maps to.
    pub epoch: DateTime<Utc>,
    /// Clients must present this to acquire a session, when set.
    pub shared_secret: Option<String>,
    pub log_dir: Option<PathBuf>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            lease_idle_timeout_s: 300,
            epoch: default_epoch(),
            shared_secret: None,
            log_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagOverride {
    pub tag: TagId,
    #[serde(default)]
    pub behavior: ApplicationBehavior,
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestbedConfig {
    pub angle_mapping: AngleMapping,
    /// Replaces the built-in three-antenna bench when present.
    pub geometry: Option<TestbedGeometry>,
    pub link: LinkBudgetParams,
    pub energy: EnergyParams,
    pub memory: MemoryLayout,
    pub reader: ReaderConfig,
    pub wisent: ReprogramPolicy,
    pub controller: ControllerConfig,
    pub tags: Vec<TagOverride>,
}

impl TestbedConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&s)
    }

    pub fn geometry(&self) -> TestbedGeometry {
        self.geometry
            .clone()
            .unwrap_or_else(|| TestbedGeometry::three_antenna(self.angle_mapping))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.geometry().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.link.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.memory.validate().map_err(ConfigError::Invalid)?;
        self.reader.inventory.validate().map_err(ConfigError::Invalid)?;
        self.wisent.validate().map_err(ConfigError::Invalid)?;
        let e = &self.energy;
        if !(e.capacity_uj > 0.0) || !(e.harvest_efficiency > 0.0 && e.harvest_efficiency <= 1.0) || !(e.draw_mw >= 0.0) {
            return invalid("energy: capacity must be positive, efficiency in (0, 1], draw non-negative".into());
        }
        if self.reader.access_slot_ms == 0 {
            return invalid("reader.access_slot_ms must be positive".into());
        }
        if self.controller.lease_idle_timeout_s == 0 {
            return invalid("controller.lease_idle_timeout_s must be positive".into());
        }
        let geometry = self.geometry();
        for o in &self.tags {
            if geometry.tag(o.tag).is_err() {
                return invalid(format!("tags: no placement for tag {}", o.tag));
            }
        }
        Ok(())
    }

    /// Fresh tags, unpowered and running the configured behavior.
    pub fn build_world(&self) -> Result<World, ConfigError> {
        let geometry = self.geometry();
        let tags = geometry
            .tag_ids()
            .map(|id| {
                let o = self.tags.iter().find(|o| o.tag == id);
                let mut t = TagState::new(
                    id,
                    self.energy.clone(),
                    self.memory.clone(),
                    o.map(|o| o.behavior).unwrap_or_default(),
                );
                if let Some(model) = o.and_then(|o| o.model.clone()) {
                    t.model = model;
                }
                t
            })
            .collect();
        World::new(geometry, self.link.clone(), tags).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn clock(&self) -> VirtualClock {
        VirtualClock::new(self.controller.epoch)
    }

    pub fn build_reader(&self, seed: u64) -> Result<Reader, ConfigError> {
        Ok(Reader::new(self.reader.clone(), self.build_world()?, self.clock(), seed))
    }
}
