//! The simulated bench: geometry, link budget and the tag population.

use std::collections::BTreeMap;

use crate::gen2::Contender;
use crate::rf::{link_quality, AntennaId, LinkBudgetParams, LinkQuality, RfError, TagId, TestbedGeometry};
use crate::tag::{Epc, TagState};

#[derive(Debug, Clone)]
pub struct World {
    pub geometry: TestbedGeometry,
    pub link: LinkBudgetParams,
    pub tags: Vec<TagState>,
    links: BTreeMap<(AntennaId, TagId), LinkQuality>,
}

impl World {
    /// Builds the world and precomputes every configured link.
    pub fn new(geometry: TestbedGeometry, link: LinkBudgetParams, tags: Vec<TagState>) -> Result<Self, RfError> {
        geometry.validate()?;
        link.validate()?;
        let mut links = BTreeMap::new();
        for placement in &geometry.tags {
            for l in &placement.links {
                let q = link_quality(&geometry, &link, l.antenna, placement.tag_id)?;
                links.insert((l.antenna, placement.tag_id), q);
            }
        }
        for t in &tags {
            geometry.tag(t.tag_id)?;
        }
        Ok(Self {
            geometry,
            link,
            tags,
            links,
        })
    }

    /// Swaps the link budget and recomputes every link.
    pub fn set_link_params(&mut self, link: LinkBudgetParams) -> Result<(), RfError> {
        let rebuilt = World::new(self.geometry.clone(), link, std::mem::take(&mut self.tags))?;
        *self = rebuilt;
        Ok(())
    }

    pub fn link(&self, antenna: AntennaId, tag: TagId) -> LinkQuality {
        self.links
            .get(&(antenna, tag))
            .copied()
            .unwrap_or_else(|| LinkQuality::unreachable(&self.link))
    }

    pub fn has_antenna(&self, antenna: AntennaId) -> bool {
        self.geometry.antenna(antenna).is_ok()
    }

    pub fn antenna_ids(&self) -> Vec<AntennaId> {
        self.geometry.antennas.iter().map(|a| a.id).collect()
    }

    pub fn tag_index(&self, epc: &Epc) -> Option<usize> {
        self.tags.iter().position(|t| &t.epc == epc)
    }

    pub fn tag(&self, id: TagId) -> Option<&TagState> {
        self.tags.iter().find(|t| t.tag_id == id)
    }

    pub fn tag_mut(&mut self, id: TagId) -> Option<&mut TagState> {
        self.tags.iter_mut().find(|t| t.tag_id == id)
    }

    /// Lets `dt_ms` pass with `active` transmitting (or all antennas off).
    /// Returns the number of brownouts.
    pub fn advance(&mut self, active: Option<AntennaId>, dt_ms: u64) -> usize {
        if dt_ms == 0 {
            return 0;
        }
        let floor = self.link.rssi_floor_dbm;
        let mut brownouts = 0;
        for i in 0..self.tags.len() {
            let incident = match active {
                Some(a) => self.link(a, self.tags[i].tag_id).incident_power_dbm,
                None => floor,
            };
            if self.tags[i].harvest_step(incident, dt_ms as f64) {
                brownouts += 1;
            }
        }
        brownouts
    }

    /// Tags that can answer an inventory on `antenna` right now.
    pub fn contenders(&self, antenna: AntennaId) -> Vec<Contender> {
        self.tags
            .iter()
            .filter(|t| t.responsive())
            .filter_map(|t| {
                let q = self.link(antenna, t.tag_id);
                q.is_reachable().then_some(Contender {
                    tag: t.tag_id,
                    delivery_probability: q.delivery_probability,
                    rssi_dbm: q.rssi_dbm,
                })
            })
            .collect()
    }
}
