//! Exclusive access to the testbed: one lease at a time, first come first
//! served, lapsing after an idle timeout.

use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::clock::format_utc_ms;

/// Opaque 128-bit session token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub Uuid);

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.as_simple().fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: Token,
    pub user: String,
    pub acquired_at: DateTime<Utc>,
    pub lease_expiry: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("testbed in use until {}", format_utc_ms(*.lease_expiry))]
    Busy { lease_expiry: DateTime<Utc> },
    #[error("wrong shared secret")]
    BadSecret,
    #[error("session token is not valid or has expired")]
    InvalidToken,
}

pub type TimeSource = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub struct SessionManager {
    idle_timeout: Duration,
    secret: Option<String>,
    now: TimeSource,
    active: Mutex<Option<Session>>,
}

impl SessionManager {
    pub fn new(idle_timeout: std::time::Duration, secret: Option<String>) -> Self {
        Self::with_time_source(idle_timeout, secret, Arc::new(Utc::now))
    }

    pub fn with_time_source(idle_timeout: std::time::Duration, secret: Option<String>, now: TimeSource) -> Self {
        Self {
            idle_timeout: Duration::from_std(idle_timeout).unwrap_or(Duration::MAX),
            secret,
            now,
            active: Mutex::new(None),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Option<Session>> {
        self.active.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn live(slot: &mut Option<Session>, now: DateTime<Utc>) -> Option<&mut Session> {
        if slot.as_ref().is_some_and(|s| s.lease_expiry <= now) {
            *slot = None;
        }
        slot.as_mut()
    }

    pub fn acquire(&self, user: &str, secret: Option<&str>) -> Result<Session, SessionError> {
        if let Some(expected) = &self.secret {
            if secret != Some(expected.as_str()) {
                return Err(SessionError::BadSecret);
            }
        }
        let now = (self.now)();
        let mut slot = self.lock();
        if let Some(s) = Self::live(&mut slot, now) {
            return Err(SessionError::Busy {
                lease_expiry: s.lease_expiry,
            });
        }
        let session = Session {
            token: Token(Uuid::new_v4()),
            user: user.to_owned(),
            acquired_at: now,
            lease_expiry: now + self.idle_timeout,
        };
        *slot = Some(session.clone());
        Ok(session)
    }

    /// Checks `token` and extends its lease.
    pub fn touch(&self, token: Token) -> Result<Session, SessionError> {
        let now = (self.now)();
        let mut slot = self.lock();
        match Self::live(&mut slot, now) {
            Some(s) if s.token == token => {
                s.lease_expiry = now + self.idle_timeout;
                Ok(s.clone())
            }
            _ => Err(SessionError::InvalidToken),
        }
    }

    pub fn release(&self, token: Token) -> Result<(), SessionError> {
        let now = (self.now)();
        let mut slot = self.lock();
        match Self::live(&mut slot, now) {
            Some(s) if s.token == token => {
                *slot = None;
                Ok(())
            }
            _ => Err(SessionError::InvalidToken),
        }
    }

    pub fn current(&self) -> Option<Session> {
        let now = (self.now)();
        Self::live(&mut self.lock(), now).cloned()
    }
}
