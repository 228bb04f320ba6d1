//! PRACH preamble contention and the extended access-barring gate.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::GroupId;
use crate::config::ConfigError;
use crate::scenario::DeviceId;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RachConfig {
    /// Seconds.
    pub slot_length: f64,
    pub preambles: u32,
    /// Upper bound of the uniform delay before retrying after a preamble
    /// collision, seconds.
    pub retry_backoff_max: f64,
    /// Preamble transmissions after which an individual access is abandoned;
    /// 0 retries forever. Group coordinators always retry.
    pub preamble_trans_max: u32,
}

impl Default for RachConfig {
    fn default() -> Self {
        RachConfig { slot_length: 0.005, preambles: 54, retry_backoff_max: 0.5, preamble_trans_max: 0 }
    }
}

impl RachConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.preambles == 0 {
            return Err(ConfigError::invalid("rach.preambles", "must be at least 1"));
        }
        if !(self.slot_length > 0.0) || SimTime::from_secs(self.slot_length) == SimTime::ZERO {
            return Err(ConfigError::invalid("rach.slot_length", "must be positive"));
        }
        if !(self.retry_backoff_max >= 0.0) {
            return Err(ConfigError::invalid("rach.retry_backoff_max", "must be non-negative"));
        }
        Ok(())
    }

    pub fn slot(&self) -> SimTime {
        SimTime::from_secs(self.slot_length)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EabConfig {
    pub barring_factor: f64,
    /// Seconds.
    pub max_backoff: f64,
    /// Seconds.
    pub sib_period: f64,
    pub exempt_acs: BTreeSet<u8>,
}

impl Default for EabConfig {
    fn default() -> Self {
        EabConfig {
            barring_factor: 0.1,
            max_backoff: 0.5,
            sib_period: 0.32,
            exempt_acs: (11..=15).collect(),
        }
    }
}

impl EabConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.barring_factor) {
            return Err(ConfigError::invalid("eab.barring_factor", "must lie in [0, 1]"));
        }
        if !(self.max_backoff >= 0.0) {
            return Err(ConfigError::invalid("eab.max_backoff", "must be non-negative"));
        }
        if !(self.sib_period > 0.0) || SimTime::from_secs(self.sib_period) == SimTime::ZERO {
            return Err(ConfigError::invalid("eab.sib_period", "must be positive"));
        }
        if self.exempt_acs.iter().any(|&ac| ac > 15) {
            return Err(ConfigError::invalid("eab.exempt_acs", "access classes are 0..=15"));
        }
        Ok(())
    }
}

/// Who is asking for access: an individual device or a group coordinator
/// acting for its group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Requester {
    Device(DeviceId),
    Group(GroupId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaAttempt {
    pub requester: Requester,
    /// When the access need arose.
    pub request_epoch: SimTime,
    /// Start of the slot the preamble is sent in.
    pub attempt_epoch: SimTime,
    pub preamble: Option<u32>,
}

impl RaAttempt {
    pub fn new(requester: Requester, request_epoch: SimTime, attempt_epoch: SimTime) -> Self {
        debug_assert!(attempt_epoch >= request_epoch);
        RaAttempt { requester, request_epoch, attempt_epoch, preamble: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotOutcome {
    Success,
    Collision,
}

/// Draws a preamble for every attempt and reports which ones were alone on
/// their preamble. Colliding attempts all fail; there is no capture.
pub fn resolve_slot<R: Rng + ?Sized>(attempts: &mut [RaAttempt], config: &RachConfig, rng: &mut R) -> Vec<SlotOutcome> {
    let mut usage = vec![0u32; config.preambles as usize];
    for a in attempts.iter_mut() {
        let p = rng.gen_range(0..config.preambles);
        a.preamble = Some(p);
        usage[p as usize] += 1;
    }
    attempts
        .iter()
        .map(|a| match a.preamble {
            Some(p) if usage[p as usize] == 1 => SlotOutcome::Success,
            _ => SlotOutcome::Collision,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GateDecision {
    Pass,
    /// Barred for `backoff` seconds; the device re-gates at the first SIB
    /// boundary after the backoff expires.
    Barred { backoff: f64 },
}

pub fn eab_gate<R: Rng + ?Sized>(access_class: u8, config: &EabConfig, rng: &mut R) -> GateDecision {
    if config.exempt_acs.contains(&access_class) {
        return GateDecision::Pass;
    }
    if rng.gen::<f64>() < config.barring_factor {
        GateDecision::Pass
    } else {
        // Uniform on (0, max_backoff].
        let backoff = config.max_backoff * (1.0 - rng.gen::<f64>());
        GateDecision::Barred { backoff }
    }
}

/// Smallest multiple of the SIB period strictly after `now` (seconds).
pub fn next_sib_epoch(now: f64, config: &EabConfig) -> f64 {
    next_sib(SimTime::from_secs(now), config).as_secs()
}

pub fn next_sib(now: SimTime, config: &EabConfig) -> SimTime {
    now.next_multiple(SimTime::from_secs(config.sib_period))
}

/// Uniform retry delay on (0, retry_backoff_max] after a collision.
pub fn retry_delay<R: Rng + ?Sized>(config: &RachConfig, rng: &mut R) -> SimTime {
    SimTime::from_secs(config.retry_backoff_max * (1.0 - rng.gen::<f64>()))
}
