//! Discrete-event simulator for uplink random access in a single cell
//! populated by massive numbers of sensors.
//!
//! Two access schemes are modeled side by side:
//!
//! - **Grouped RA**: sensors are clustered into D2D groups. Each group runs a
//!   six-phase cycle (data aggregation, random access, aggregated uplink,
//!   guard, aggregated downlink, data distribution) in which only the group
//!   coordinator contends on the PRACH and group-management signaling rides
//!   inside the aggregated frames.
//! - **EAB**: every sensor passes an access-class barring gate and contends
//!   individually.
//!
//! The crate is organized by subsystem: [`scenario`] (population),
//! [`channel`] (link budget and error models), [`clustering`] (group
//! management), [`rach`] (preamble contention and barring), [`protocol`]
//! (cycle state machine and frame codec), [`gdb`] (geolocation database),
//! and [`engine`] (event loop, metrics, Monte-Carlo orchestration).

pub mod channel;
pub mod clustering;
pub mod config;
pub mod engine;
pub mod gdb;
pub mod protocol;
pub mod rach;
pub mod rng;
pub mod scenario;
pub mod time;

pub use config::{Config, ConfigError};
pub use engine::{monte_carlo, run, sweep, AccessMode, MetricsReport, MonteCarloReport};
pub use scenario::{DeviceId, DeviceProfile, Position};
pub use time::SimTime;
