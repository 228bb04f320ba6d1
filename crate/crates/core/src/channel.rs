//! Link budget, path loss, packet error and CSI estimation error models.
//!
//! The macro link (device to base station) is treated as error-free; only
//! D2D links between group members and their coordinator are subject to
//! packet errors here.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::rng::{self, pair_stream};
use crate::scenario::{DeviceId, Position};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    /// Loss at the reference distance, dB.
    pub pl0: f64,
    /// Reference distance, m.
    pub d0: f64,
    pub exponent: f64,
    /// Log-normal shadowing standard deviation, dB.
    pub shadowing_sigma: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        PathLossModel { pl0: 40.0, d0: 1.0, exponent: 3.0, shadowing_sigma: 4.0 }
    }
}

/// Log-distance path loss. Distances below `d0` are clamped to `d0`.
pub fn path_loss(model: &PathLossModel, distance: f64, shadowing_draw: f64) -> f64 {
    let d = distance.max(model.d0);
    model.pl0 + 10.0 * model.exponent * (d / model.d0).log10() + shadowing_draw
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Transmit power plus antenna gain, dBm.
    pub tx_gain: f64,
    /// dBm.
    pub noise_floor: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        LinkBudget { tx_gain: 20.0, noise_floor: -90.0 }
    }
}

pub fn snr(budget: &LinkBudget, loss: f64) -> f64 {
    budget.tx_gain - loss - budget.noise_floor
}

/// Bit error rate of noncoherent binary GFSK at linear SNR `gamma`.
pub fn bit_error_rate(snr_db: f64) -> f64 {
    let gamma = 10f64.powf(snr_db / 10.0);
    0.5 * (-gamma / 2.0).exp()
}

/// PER of a `payload`-byte packet with independent bit errors.
pub fn packet_error_rate(snr_db: f64, payload: u16) -> f64 {
    debug_assert!(payload >= 1);
    let ber = bit_error_rate(snr_db);
    let bits = 8.0 * payload as f64;
    // 1 - (1 - ber)^bits, without cancellation for tiny ber.
    (-(bits * (-ber).ln_1p()).exp_m1()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsiRecord {
    pub true_loss: f64,
    pub estimated_loss: f64,
    pub mae: f64,
}

/// Zero-mean Laplace draw with scale `b` (so `E|e| = b`).
pub fn laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    let u: f64 = rng.gen_range(-0.5..0.5);
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn estimate_csi<R: Rng + ?Sized>(true_loss: f64, mae: f64, rng: &mut R) -> CsiRecord {
    debug_assert!(mae >= 0.0);
    CsiRecord { true_loss, estimated_loss: true_loss + laplace(mae, rng), mae }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct D2dSlotBudget {
    pub slot_duration: f64,
    pub packet_airtime: f64,
}

impl D2dSlotBudget {
    /// Transmission attempts available to each GM when the slot is shared
    /// by `group_size - 1` members.
    pub fn attempts(&self, group_size: usize) -> u32 {
        if group_size < 2 {
            return 0;
        }
        let per_gm = (group_size - 1) as f64 * self.packet_airtime;
        // Nudge avoids 0.04 / 0.0004 landing a hair under 100.
        ((self.slot_duration / per_gm) * (1.0 + 1e-12)).floor().max(0.0) as u32
    }
}

/// Probability that at least one of the GM's attempts in the slot succeeds.
pub fn d2d_link_reliability(per: f64, budget: &D2dSlotBudget, group_size: usize) -> f64 {
    match budget.attempts(group_size) {
        0 => 0.0,
        a => 1.0 - per.powi(a as i32),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub pl0: f64,
    pub d0: f64,
    pub exponent: f64,
    pub shadowing_sigma: f64,
    pub tx_gain: f64,
    pub noise_floor: f64,
    /// Air time of one D2D transmission attempt, s.
    pub packet_airtime: f64,
    /// Mean absolute error of device-side D2D CSI estimates, dB.
    pub csi_mae: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let pl = PathLossModel::default();
        let lb = LinkBudget::default();
        ChannelConfig {
            pl0: pl.pl0,
            d0: pl.d0,
            exponent: pl.exponent,
            shadowing_sigma: pl.shadowing_sigma,
            tx_gain: lb.tx_gain,
            noise_floor: lb.noise_floor,
            packet_airtime: 0.0003,
            csi_mae: 6.0,
        }
    }
}

impl ChannelConfig {
    pub fn path_loss_model(&self) -> PathLossModel {
        PathLossModel {
            pl0: self.pl0,
            d0: self.d0,
            exponent: self.exponent,
            shadowing_sigma: self.shadowing_sigma,
        }
    }

    pub fn link_budget(&self) -> LinkBudget {
        LinkBudget { tx_gain: self.tx_gain, noise_floor: self.noise_floor }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| Err(ConfigError::invalid(format!("channel.{key}"), msg.to_string()));
        if !(self.exponent >= 2.0) {
            return bad("exponent", "must be at least 2");
        }
        if !(self.shadowing_sigma >= 0.0) {
            return bad("shadowing_sigma", "must be non-negative");
        }
        if !(self.d0 > 0.0) {
            return bad("d0", "must be positive");
        }
        if !(self.tx_gain > self.noise_floor) {
            return bad("tx_gain", "must exceed noise_floor");
        }
        if !(self.packet_airtime > 0.0) {
            return bad("packet_airtime", "must be positive");
        }
        if !(self.csi_mae >= 0.0) {
            return bad("csi_mae", "must be non-negative");
        }
        Ok(())
    }
}

/// Frozen propagation environment of one run.
///
/// Shadowing is drawn once per unordered device pair from a keyed stream,
/// so it is reciprocal and stable for the whole run without storing an
/// N x N table.
#[derive(Debug, Clone)]
pub struct LinkModel {
    pub path_loss: PathLossModel,
    pub budget: LinkBudget,
    shadowing_seed: u64,
}

impl LinkModel {
    pub fn new(path_loss: PathLossModel, budget: LinkBudget, run_seed: u64) -> Self {
        LinkModel {
            path_loss,
            budget,
            shadowing_seed: rng::derive_seed(run_seed, "shadowing"),
        }
    }

    pub fn shadowing(&self, a: DeviceId, b: DeviceId) -> f64 {
        if self.path_loss.shadowing_sigma == 0.0 {
            return 0.0;
        }
        let z: f64 = StandardNormal.sample(&mut pair_stream(self.shadowing_seed, a, b));
        z * self.path_loss.shadowing_sigma
    }

    pub fn true_loss(&self, a: DeviceId, pa: &Position, b: DeviceId, pb: &Position) -> f64 {
        path_loss(&self.path_loss, pa.distance(pb), self.shadowing(a, b))
    }

    pub fn snr(&self, loss: f64) -> f64 {
        snr(&self.budget, loss)
    }
}

/// Frozen per-pair estimation error on top of a [`LinkModel`].
#[derive(Debug, Clone)]
pub struct CsiEstimator {
    pub mae: f64,
    seed: u64,
}

impl CsiEstimator {
    pub fn new(mae: f64, run_seed: u64, salt: &str) -> Self {
        CsiEstimator { mae, seed: rng::derive_seed(run_seed, salt) }
    }

    pub fn error(&self, a: DeviceId, b: DeviceId) -> f64 {
        if self.mae == 0.0 {
            return 0.0;
        }
        laplace(self.mae, &mut pair_stream(self.seed, a, b))
    }
}
