//! Event loop, metrics and Monte-Carlo orchestration.

mod metrics;
mod queue;
mod sim;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{DelayStats, GroupingStats, MetricSummary, MetricsReport, MonteCarloReport};
pub use queue::{Backoff, Event, EventKind, EventQueue};
pub use sim::initial_grouping;

use crate::config::{Config, ConfigError};
use crate::gdb::GdbError;
use crate::protocol::ProtocolError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    /// Simulated seconds per run.
    pub horizon: f64,
    /// Seconds between global group updates.
    pub update_interval: f64,
    /// Seconds between mobility steps.
    pub mobility_tick: f64,
    /// Mean ULL-class access delay regarded as acceptable, seconds.
    pub ull_delay_budget: f64,
    /// Replace the D2D channel with lossless links.
    pub ideal_d2d: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { horizon: 30.0, update_interval: 10.0, mobility_tick: 1.0, ull_delay_budget: 0.1, ideal_d2d: false }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(ConfigError::invalid("engine.horizon", "must be a finite non-negative number"));
        }
        if !(self.update_interval > 0.0) {
            return Err(ConfigError::invalid("engine.update_interval", "must be positive"));
        }
        if !(self.mobility_tick > 0.0) {
            return Err(ConfigError::invalid("engine.mobility_tick", "must be positive"));
        }
        if !(self.ull_delay_budget > 0.0) {
            return Err(ConfigError::invalid("engine.ull_delay_budget", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccessMode {
    GroupedRa,
    Eab,
}

impl AccessMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AccessMode::GroupedRa => "grouped-ra",
            AccessMode::Eab => "eab",
        }
    }
}

impl fmt::Display for AccessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AccessMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grouped-ra" | "grouped_ra" => Ok(AccessMode::GroupedRa),
            "eab" => Ok(AccessMode::Eab),
            other => Err(format!("unknown mode `{other}`, expected grouped-ra or eab")),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("registration failed: {0}")]
    Gdb(#[from] GdbError),
    #[error("at least one run is required")]
    NoRuns,
    #[error("sweep needs at least one value")]
    EmptySweep,
    #[error("run with seed {seed} failed: {source}")]
    Run { seed: u64, source: Box<EngineError> },
    #[error("sweep point {variable}={value} failed: {source}")]
    Point { variable: SweepVariable, value: f64, source: Box<EngineError> },
}

/// Simulates one run. Identical inputs give identical reports.
pub fn run(config: &Config, mode: AccessMode, seed: u64) -> Result<MetricsReport, EngineError> {
    config.validate()?;
    sim::simulate(config, mode, seed)
}

/// Runs seeds `base_seed..base_seed + runs` in parallel. The report lists
/// runs in seed order regardless of scheduling.
pub fn monte_carlo(config: &Config, mode: AccessMode, runs: usize, base_seed: u64) -> Result<MonteCarloReport, EngineError> {
    if runs == 0 {
        return Err(EngineError::NoRuns);
    }
    config.validate()?;
    let reports: Vec<MetricsReport> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i);
            run(config, mode, seed).map_err(|e| EngineError::Run { seed, source: Box::new(e) })
        })
        .collect::<Result<_, _>>()?;
    Ok(MonteCarloReport::from_runs(reports))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    DeviceCount,
    GroupSizeCap,
    CsiMae,
}

impl SweepVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepVariable::DeviceCount => "device_count",
            SweepVariable::GroupSizeCap => "group_size_cap",
            SweepVariable::CsiMae => "csi_mae",
        }
    }

    pub fn apply(self, config: &mut Config, value: f64) {
        match self {
            SweepVariable::DeviceCount => config.scenario.device_count = value.round() as u32,
            SweepVariable::GroupSizeCap => config.clustering.max_group_size = value.round() as usize,
            SweepVariable::CsiMae => config.channel.csi_mae = value,
        }
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One Monte-Carlo batch per value, in the order given.
pub fn sweep(
    template: &Config,
    variable: SweepVariable,
    values: &[f64],
    mode: AccessMode,
    runs: usize,
    base_seed: u64,
) -> Result<Vec<(f64, MonteCarloReport)>, EngineError> {
    if values.is_empty() {
        return Err(EngineError::EmptySweep);
    }
    values
        .iter()
        .map(|&value| {
            let mut config = template.clone();
            variable.apply(&mut config, value);
            monte_carlo(&config, mode, runs, base_seed)
                .map(|r| (value, r))
                .map_err(|e| EngineError::Point { variable, value, source: Box::new(e) })
        })
        .collect()
}
