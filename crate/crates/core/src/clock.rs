//! Virtual millisecond clock mapped onto UTC through a configurable epoch.

use chrono::{DateTime, Duration, SecondsFormat, TimeZone, Utc};

/// Default epoch used when mapping virtual time to UTC.
pub fn default_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2016, 4, 2, 0, 0, 0).unwrap()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualClock {
    epoch: DateTime<Utc>,
    now_ms: u64,
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new(default_epoch())
    }
}

impl VirtualClock {
    pub fn new(epoch: DateTime<Utc>) -> Self {
        Self { epoch, now_ms: 0 }
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn advance(&mut self, ms: u64) {
        self.now_ms += ms;
    }

    /// Moves forward to `ms`; never moves backwards.
    pub fn advance_to(&mut self, ms: u64) {
        self.now_ms = self.now_ms.max(ms);
    }

    pub fn epoch(&self) -> DateTime<Utc> {
        self.epoch
    }

    pub fn utc_at(&self, ms: u64) -> DateTime<Utc> {
        self.epoch + Duration::milliseconds(ms as i64)
    }

    pub fn utc_now(&self) -> DateTime<Utc> {
        self.utc_at(self.now_ms)
    }

    /// Milliseconds since the Unix epoch for virtual time `ms`.
    pub fn unix_ms_at(&self, ms: u64) -> i64 {
        self.utc_at(ms).timestamp_millis()
    }
}

/// ISO-8601 UTC with exactly three fractional digits.
pub fn format_utc_ms(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}
