//! Link budget for the reader antennas and the tag row.
//!
//! Every antenna/tag pair is described by a distance and a tag rotation
//! angle. The forward link (reader to tag) follows Friis with a dipole
//! `cos²` pattern, a constant circular-to-linear polarization loss, a
//! near-field penalty for tags closer than the far-field boundary, and a
//! per-neighbor coupling penalty. The backscatter link applies the same
//! terms a second time on the return traversal.
//!
//! All functions here are pure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Below this `|cos θ|` the tag dipole is treated as sitting in its null.
const NULL_COS_EPSILON: f64 = 1e-9;

/// Default reader antenna gain, circularly polarized patch.
pub const DEFAULT_ANTENNA_GAIN_DB: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AntennaId(pub u8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagId(pub u8);

impl std::fmt::Display for AntennaId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for TagId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The tag of the single-tag environment served by antenna 1.
pub const SINGLE_TAG: TagId = TagId(6);

/// Number of tags in the shared multi-tag row.
pub const ROW_TAGS: u8 = 6;

/// Spacing between neighboring tags of the multi-tag row.
pub const ROW_PITCH_M: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RfError {
    #[error("unknown antenna {0}")]
    UnknownAntenna(AntennaId),
    #[error("unknown tag {0}")]
    UnknownTag(TagId),
    #[error("tag {tag} has no placement relative to antenna {antenna}")]
    NoPlacement { antenna: AntennaId, tag: TagId },
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntennaPort {
    pub id: AntennaId,
    #[serde(default = "default_antenna_gain")]
    pub gain_db: f64,
    #[serde(default)]
    pub label: String,
}

fn default_antenna_gain() -> f64 {
    DEFAULT_ANTENNA_GAIN_DB
}

/// Distance and rotation of one tag as seen from one antenna.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntennaLink {
    pub antenna: AntennaId,
    pub distance_m: f64,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagPlacement {
    pub tag_id: TagId,
    /// Physical position on the bench, used for neighbor coupling.
    pub position_m: [f64; 2],
    pub links: Vec<AntennaLink>,
}

/// How the antenna-3 rotation angles are assigned to the tag row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleMapping {
    /// Tag `y` sits at `90° - 10°·y`: tag 0 is in the dipole null.
    #[default]
    Descending,
    /// Tag `y` sits at `10°·y`.
    Literal,
}

impl AngleMapping {
    pub fn angle_for(self, row_index: u8) -> f64 {
        match self {
            AngleMapping::Descending => 90.0 - 10.0 * f64::from(row_index),
            AngleMapping::Literal => 10.0 * f64::from(row_index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestbedGeometry {
    pub antennas: Vec<AntennaPort>,
    pub tags: Vec<TagPlacement>,
    #[serde(default = "default_wall_clearance")]
    pub wall_clearance_m: f64,
}

fn default_wall_clearance() -> f64 {
    0.70
}

impl Default for TestbedGeometry {
    fn default() -> Self {
        Self::three_antenna(AngleMapping::default())
    }
}

impl TestbedGeometry {
    /// The three-antenna bench: a single tag 20 cm in front of antenna 1,
    /// and a six-tag row seen by antenna 2 at `10·(y+1)` cm and by antenna 3
    /// at a fixed 30 cm with varying rotation.
    pub fn three_antenna(mapping: AngleMapping) -> Self {
        let antennas = vec![
            AntennaPort {
                id: AntennaId(1),
                gain_db: DEFAULT_ANTENNA_GAIN_DB,
                label: "single-tag".into(),
            },
            AntennaPort {
                id: AntennaId(2),
                gain_db: DEFAULT_ANTENNA_GAIN_DB,
                label: "multi-distance".into(),
            },
            AntennaPort {
                id: AntennaId(3),
                gain_db: DEFAULT_ANTENNA_GAIN_DB,
                label: "multi-angle".into(),
            },
        ];
        let mut tags: Vec<TagPlacement> = (0..ROW_TAGS)
            .map(|y| TagPlacement {
                tag_id: TagId(y),
                position_m: [ROW_PITCH_M * f64::from(y), 0.0],
                links: vec![
                    AntennaLink {
                        antenna: AntennaId(2),
                        distance_m: 0.10 * f64::from(y + 1),
                        angle_deg: 0.0,
                    },
                    AntennaLink {
                        antenna: AntennaId(3),
                        distance_m: 0.30,
                        angle_deg: mapping.angle_for(y),
                    },
                ],
            })
            .collect();
        // The single-tag environment is on its own part of the bench.
        tags.push(TagPlacement {
            tag_id: SINGLE_TAG,
            position_m: [0.0, 2.0],
            links: vec![AntennaLink {
                antenna: AntennaId(1),
                distance_m: 0.20,
                angle_deg: 0.0,
            }],
        });
        Self {
            antennas,
            tags,
            wall_clearance_m: default_wall_clearance(),
        }
    }

    pub fn antenna(&self, id: AntennaId) -> Result<&AntennaPort, RfError> {
        self.antennas
            .iter()
            .find(|a| a.id == id)
            .ok_or(RfError::UnknownAntenna(id))
    }

    pub fn tag(&self, id: TagId) -> Result<&TagPlacement, RfError> {
        self.tags
            .iter()
            .find(|t| t.tag_id == id)
            .ok_or(RfError::UnknownTag(id))
    }

    pub fn tag_ids(&self) -> impl Iterator<Item = TagId> + '_ {
        self.tags.iter().map(|t| t.tag_id)
    }

    pub fn validate(&self) -> Result<(), RfError> {
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.antennas {
            if !seen.insert(a.id) {
                return Err(RfError::InvalidGeometry(format!("duplicate antenna {}", a.id)));
            }
        }
        let mut seen_tags = std::collections::BTreeSet::new();
        for t in &self.tags {
            if !seen_tags.insert(t.tag_id) {
                return Err(RfError::InvalidGeometry(format!("duplicate tag {}", t.tag_id)));
            }
            let mut linked = std::collections::BTreeSet::new();
            for l in &t.links {
                self.antenna(l.antenna)?;
                if !linked.insert(l.antenna) {
                    return Err(RfError::InvalidGeometry(format!(
                        "tag {} has two placements for antenna {}",
                        t.tag_id, l.antenna
                    )));
                }
                if !(l.distance_m > 0.0) {
                    return Err(RfError::NonPositiveDistance(l.distance_m));
                }
                if !(0.0..=90.0).contains(&l.angle_deg) {
                    return Err(RfError::InvalidGeometry(format!(
                        "tag {} angle {}° outside [0, 90]",
                        t.tag_id, l.angle_deg
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Returns `(distance_m, angle_deg)` for an antenna/tag pair.
pub fn resolve_placement(
    geometry: &TestbedGeometry,
    antenna: AntennaId,
    tag: TagId,
) -> Result<(f64, f64), RfError> {
    geometry.antenna(antenna)?;
    let placement = geometry.tag(tag)?;
    placement
        .links
        .iter()
        .find(|l| l.antenna == antenna)
        .map(|l| (l.distance_m, l.angle_deg))
        .ok_or(RfError::NoPlacement { antenna, tag })
}

/// Counts the other tags whose bench position lies within `radius_m`.
pub fn neighbor_count(geometry: &TestbedGeometry, tag: TagId, radius_m: f64) -> Result<u32, RfError> {
    let me = geometry.tag(tag)?;
    let count = geometry
        .tags
        .iter()
        .filter(|other| other.tag_id != tag)
        .filter(|other| {
            let dx = other.position_m[0] - me.position_m[0];
            let dy = other.position_m[1] - me.position_m[1];
            dx.hypot(dy) < radius_m
        })
        .count();
    Ok(count as u32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudgetParams {
    pub tx_power_dbm: f64,
    pub carrier_frequency_hz: f64,
    pub tag_gain_db: f64,
    pub backscatter_loss_db: f64,
    pub polarization_mismatch_db: f64,
    pub far_field_boundary_m: f64,
    /// Near-field loss at zero distance. It falls off as
    /// `(1 - d/boundary)^near_field_exponent` and vanishes at the boundary.
    pub near_field_penalty_db: f64,
    pub near_field_exponent: f64,
    pub coupling_radius_m: f64,
    pub coupling_penalty_per_neighbor_db: f64,
    pub rssi_floor_dbm: f64,
    pub delivery_midpoint_dbm: f64,
    pub delivery_slope_db: f64,
    /// Extra receive-side noise, e.g. daytime interference. Zero disables it.
    pub ambient_noise_db: f64,
}

impl Default for LinkBudgetParams {
    fn default() -> Self {
        Self {
            tx_power_dbm: 30.0,
            carrier_frequency_hz: 915e6,
            tag_gain_db: 2.0,
            backscatter_loss_db: 30.0,
            polarization_mismatch_db: 3.0,
            far_field_boundary_m: 0.30,
            near_field_penalty_db: 48.0,
            near_field_exponent: 3.0,
            coupling_radius_m: 0.15,
            coupling_penalty_per_neighbor_db: 1.0,
            rssi_floor_dbm: -90.0,
            delivery_midpoint_dbm: -38.0,
            delivery_slope_db: 5.0,
            ambient_noise_db: 0.0,
        }
    }
}

impl LinkBudgetParams {
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    pub fn validate(&self) -> Result<(), RfError> {
        let penalties = [
            ("backscatter_loss_db", self.backscatter_loss_db),
            ("polarization_mismatch_db", self.polarization_mismatch_db),
            ("near_field_penalty_db", self.near_field_penalty_db),
            ("coupling_penalty_per_neighbor_db", self.coupling_penalty_per_neighbor_db),
            ("ambient_noise_db", self.ambient_noise_db),
        ];
        for (name, v) in penalties {
            if !(v >= 0.0) {
                return Err(RfError::InvalidGeometry(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.far_field_boundary_m > 0.0) {
            return Err(RfError::InvalidGeometry("far_field_boundary_m must be > 0".into()));
        }
        if !(self.delivery_slope_db > 0.0) {
            return Err(RfError::InvalidGeometry("delivery_slope_db must be > 0".into()));
        }
        if !(self.carrier_frequency_hz > 0.0) {
            return Err(RfError::InvalidGeometry("carrier_frequency_hz must be > 0".into()));
        }
        Ok(())
    }
}

/// One traversal's geometry: distance, tag rotation, crowding and the
/// gain of the reader antenna in use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPath {
    pub distance_m: f64,
    pub angle_deg: f64,
    pub neighbors: u32,
    pub antenna_gain_db: f64,
}

impl LinkPath {
    pub fn new(distance_m: f64, angle_deg: f64) -> Self {
        Self {
            distance_m,
            angle_deg,
            neighbors: 0,
            antenna_gain_db: DEFAULT_ANTENNA_GAIN_DB,
        }
    }

    pub fn with_neighbors(mut self, neighbors: u32) -> Self {
        self.neighbors = neighbors;
        self
    }

    pub fn with_antenna_gain(mut self, gain_db: f64) -> Self {
        self.antenna_gain_db = gain_db;
        self
    }
}

pub fn free_space_path_loss(distance_m: f64, wavelength_m: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * distance_m / wavelength_m).log10()
}

pub fn near_field_loss(params: &LinkBudgetParams, distance_m: f64) -> f64 {
    if distance_m >= params.far_field_boundary_m {
        return 0.0;
    }
    let depth = 1.0 - distance_m / params.far_field_boundary_m;
    params.near_field_penalty_db * depth.powf(params.near_field_exponent)
}

/// Gain of one traversal excluding transmit power. `None` in the dipole null.
fn traversal_gain(params: &LinkBudgetParams, path: &LinkPath) -> Result<Option<f64>, RfError> {
    if !(path.distance_m > 0.0) {
        return Err(RfError::NonPositiveDistance(path.distance_m));
    }
    let cos = path.angle_deg.abs().to_radians().cos().abs();
    if cos < NULL_COS_EPSILON {
        return Ok(None);
    }
    let pattern_db = 10.0 * (cos * cos).log10();
    let gain = path.antenna_gain_db + params.tag_gain_db
        - free_space_path_loss(path.distance_m, params.wavelength_m())
        - params.polarization_mismatch_db
        + pattern_db
        - near_field_loss(params, path.distance_m)
        - params.coupling_penalty_per_neighbor_db * f64::from(path.neighbors);
    Ok(Some(gain))
}

/// Power arriving at the tag, clamped at the RSSI floor.
pub fn incident_power(params: &LinkBudgetParams, path: &LinkPath) -> Result<f64, RfError> {
    Ok(match traversal_gain(params, path)? {
        Some(g) => (params.tx_power_dbm + g).max(params.rssi_floor_dbm),
        None => params.rssi_floor_dbm,
    })
}

/// Backscattered power at the reader: both traversals plus the modulation
/// loss, clamped at the RSSI floor.
pub fn backscatter_rssi(params: &LinkBudgetParams, path: &LinkPath) -> Result<f64, RfError> {
    Ok(match traversal_gain(params, path)? {
        Some(g) => {
            let rssi = params.tx_power_dbm + 2.0 * g
                - params.backscatter_loss_db
                - params.ambient_noise_db;
            rssi.max(params.rssi_floor_dbm)
        }
        None => params.rssi_floor_dbm,
    })
}

/// Per-message success probability for a reply heard at `rssi_dbm`.
pub fn delivery_probability(params: &LinkBudgetParams, rssi_dbm: f64) -> f64 {
    if rssi_dbm <= params.rssi_floor_dbm {
        return 0.0;
    }
    let x = (rssi_dbm - params.delivery_midpoint_dbm) / params.delivery_slope_db;
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkQuality {
    pub incident_power_dbm: f64,
    pub rssi_dbm: f64,
    pub delivery_probability: f64,
}

impl LinkQuality {
    pub fn unreachable(params: &LinkBudgetParams) -> Self {
        Self {
            incident_power_dbm: params.rssi_floor_dbm,
            rssi_dbm: params.rssi_floor_dbm,
            delivery_probability: 0.0,
        }
    }

    pub fn is_reachable(&self) -> bool {
        self.delivery_probability > 0.0
    }
}

/// Full link evaluation for a configured antenna/tag pair.
pub fn link_quality(
    geometry: &TestbedGeometry,
    params: &LinkBudgetParams,
    antenna: AntennaId,
    tag: TagId,
) -> Result<LinkQuality, RfError> {
    let (distance, angle) = resolve_placement(geometry, antenna, tag)?;
    let gain = geometry.antenna(antenna)?.gain_db;
    let neighbors = neighbor_count(geometry, tag, params.coupling_radius_m)?;
    let path = LinkPath::new(distance, angle)
        .with_neighbors(neighbors)
        .with_antenna_gain(gain);
    let rssi = backscatter_rssi(params, &path)?;
    Ok(LinkQuality {
        incident_power_dbm: incident_power(params, &path)?,
        rssi_dbm: rssi,
        delivery_probability: delivery_probability(params, rssi),
    })
}
