//! Grouped random-access protocol: the per-group six-phase cycle, the
//! aggregated frame codec and D2D exception handling.

mod cycle;
mod exception;
pub mod frame;

use serde::{Deserialize, Serialize};

pub use cycle::{
    advance_cycle, build_uplink_frame, AccessResult, CycleAction, CycleInput, CyclePhase, GroupCycleState, ProtocolError,
    RaState,
};
pub use exception::{detect_d2d_exception, handle_exception_command, ExceptionDetector, ExceptionOutcome};
pub use frame::{
    build_downlink_frame, parse_frame, AggregatedFrame, DataRecord, Direction, FrameError, FrameErrorKind, FrameHeader,
    SignalingKind, SignalingMessage,
};

use crate::config::ConfigError;
use crate::scenario::DeviceId;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Phase lengths in seconds. The RA phase lasts one RACH slot per attempt.
    pub da: f64,
    pub aut: f64,
    pub guard: f64,
    pub adt: f64,
    pub dd: f64,
    /// Consecutive missed DA exchanges before a GM is reported.
    pub miss_threshold: u32,
    /// Cycles without service before a GM falls back to direct access, and
    /// cycles without an RA response before a GC's macro link counts as lost.
    pub fallback_cycles: u32,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig { da: 0.040, aut: 0.010, guard: 0.005, adt: 0.010, dd: 0.040, miss_threshold: 2, fallback_cycles: 3 }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, v) in [("da", self.da), ("aut", self.aut), ("guard", self.guard), ("adt", self.adt), ("dd", self.dd)] {
            if !(v > 0.0) {
                return Err(ConfigError::invalid(format!("protocol.{key}"), "phase length must be positive"));
            }
        }
        if self.miss_threshold == 0 {
            return Err(ConfigError::invalid("protocol.miss_threshold", "must be at least 1"));
        }
        if self.fallback_cycles == 0 {
            return Err(ConfigError::invalid("protocol.fallback_cycles", "must be at least 1"));
        }
        Ok(())
    }

    pub fn phase_length(&self, phase: CyclePhase) -> SimTime {
        SimTime::from_secs(match phase {
            CyclePhase::DataAggregation => self.da,
            CyclePhase::RandomAccess => 0.0,
            CyclePhase::AggregatedUplink => self.aut,
            CyclePhase::Guard => self.guard,
            CyclePhase::AggregatedDownlink => self.adt,
            CyclePhase::DataDistribution => self.dd,
        })
    }

    /// Nominal cycle length excluding the RA phase.
    pub fn cycle_without_ra(&self) -> SimTime {
        SimTime::from_secs(self.da + self.aut + self.guard + self.adt + self.dd)
    }
}

/// Intra-group D2D delivery, one draw per DA or DD exchange.
pub trait D2dLinks {
    fn exchange(&mut self, gm: DeviceId, gc: DeviceId, group_size: usize) -> bool;
}

/// Every exchange succeeds.
#[derive(Debug, Clone, Copy, Default)]
pub struct ErrorFree;

impl D2dLinks for ErrorFree {
    fn exchange(&mut self, _: DeviceId, _: DeviceId, _: usize) -> bool {
        true
    }
}
