//! What the controller needs from a reader, whether it runs in-process or
//! behind the wire protocol.

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::llrp::io::LinkError;
use crate::reader::{AccessOpResult, AccessSpec, ROSpec, Reader, ReaderError, ReaderEvent, ReportBatch};
use crate::rf::AntennaId;

#[derive(Debug, Error)]
pub enum PortError {
    #[error(transparent)]
    Reader(#[from] ReaderError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("reader returned no result for access spec {0}")]
    MissingResult(u32),
}

pub trait ReaderPort {
    fn antennas(&mut self) -> Result<Vec<AntennaId>, PortError>;

    /// Virtual time charged per access attempt.
    fn access_slot_ms(&mut self) -> Result<u64, PortError>;

    /// Runs the spec to completion. `observer` sees individual reads where
    /// the reader exposes them.
    fn run_rospec(
        &mut self,
        spec: &ROSpec,
        observer: &mut dyn FnMut(&ReaderEvent),
    ) -> Result<Vec<ReportBatch>, PortError>;

    fn run_accessspec(
        &mut self,
        spec: &AccessSpec,
        observer: &mut dyn FnMut(&ReaderEvent),
    ) -> Result<Vec<AccessOpResult>, PortError>;

    /// UTC of the reader's clock as last observed.
    fn now_utc(&self) -> DateTime<Utc>;

    /// UTC of virtual time 0, for the timestamps carried by
    /// [`ReaderEvent`]s.
    fn event_epoch(&self) -> DateTime<Utc>;
}

impl ReaderPort for Reader {
    fn antennas(&mut self) -> Result<Vec<AntennaId>, PortError> {
        Ok(self.world.antenna_ids())
    }

    fn access_slot_ms(&mut self) -> Result<u64, PortError> {
        Ok(self.config.access_slot_ms)
    }

    fn run_rospec(
        &mut self,
        spec: &ROSpec,
        observer: &mut dyn FnMut(&ReaderEvent),
    ) -> Result<Vec<ReportBatch>, PortError> {
        Ok(self.execute_rospec(spec, observer)?)
    }

    fn run_accessspec(
        &mut self,
        spec: &AccessSpec,
        observer: &mut dyn FnMut(&ReaderEvent),
    ) -> Result<Vec<AccessOpResult>, PortError> {
        Ok(self.execute_accessspec(spec, observer))
    }

    fn now_utc(&self) -> DateTime<Utc> {
        self.clock.utc_now()
    }

    fn event_epoch(&self) -> DateTime<Utc> {
        self.clock.epoch()
    }
}
