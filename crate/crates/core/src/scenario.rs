//! Device population: placement, access classes, traffic modes and mobility.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::config::ConfigError;

pub type DeviceId = u32;

/// Access classes 11..=15 are treated as ultra-low-latency.
pub const ULL_CLASSES: std::ops::RangeInclusive<u8> = 11..=15;
pub const ACCESS_CLASSES: u8 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn within(&self, side: f64) -> bool {
        (0.0..=side).contains(&self.x) && (0.0..=side).contains(&self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrafficKind {
    Aperiodic { rate: f64 },
    Periodic { period: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficMode {
    pub kind: TrafficKind,
    pub payload: u16,
}

impl TrafficMode {
    /// Index used for independence checks: 0 aperiodic, 1 short period, 2 long period.
    pub fn class_index(&self) -> usize {
        match self.kind {
            TrafficKind::Aperiodic { .. } => 0,
            TrafficKind::Periodic { period } if period < 5.0 => 1,
            TrafficKind::Periodic { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: DeviceId,
    pub access_class: u8,
    pub traffic: TrafficMode,
    pub mobile: bool,
    pub position: Position,
}

impl DeviceProfile {
    pub fn is_ull(&self) -> bool {
        ULL_CLASSES.contains(&self.access_class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub area_side: f64,
    pub device_count: u32,
    /// Fractions of (aperiodic, 1 s periodic, 10 s periodic) devices.
    pub traffic_mix: [f64; 3],
    pub mobile_fraction: f64,
    /// Total variance of the speed vector, m^2/s^2.
    pub speed_variance: f64,
    pub aperiodic_rate: f64,
    pub payload: u16,
    /// Align every periodic device to phase zero (burst load).
    pub synchronized: bool,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            area_side: 200.0,
            device_count: 10_000,
            traffic_mix: [0.5, 0.25, 0.25],
            mobile_fraction: 0.5,
            speed_variance: 2.0,
            aperiodic_rate: 0.1,
            payload: 64,
            synchronized: false,
            rng_seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: String| Err(ConfigError::invalid(format!("scenario.{key}"), msg));
        if !(self.area_side > 0.0) {
            return bad("area_side", "must be positive".into());
        }
        if self.device_count == 0 {
            return bad("device_count", "must be at least 1".into());
        }
        if self.traffic_mix.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("traffic_mix", "fractions must lie in [0, 1]".into());
        }
        let sum: f64 = self.traffic_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad("traffic_mix", format!("fractions sum to {sum}, expected 1"));
        }
        if !(0.0..=1.0).contains(&self.mobile_fraction) {
            return bad("mobile_fraction", "must lie in [0, 1]".into());
        }
        if !(self.speed_variance >= 0.0) {
            return bad("speed_variance", "must be non-negative".into());
        }
        if !(self.aperiodic_rate > 0.0) {
            return bad("aperiodic_rate", "must be positive".into());
        }
        if self.payload == 0 {
            return bad("payload", "must be at least 1 byte".into());
        }
        Ok(())
    }
}

/// Draws the device population. Position, access class, traffic mode and
/// mobility are sampled independently of each other.
pub fn build_scenario<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<Vec<DeviceProfile>, ConfigError> {
    config.validate()?;
    let side = config.area_side;
    let [aperiodic, short, _] = config.traffic_mix;
    let devices = (0..config.device_count)
        .map(|id| {
            let position = Position::new(rng.gen_range(0.0..=side), rng.gen_range(0.0..=side));
            let access_class = rng.gen_range(0..ACCESS_CLASSES);
            let u: f64 = rng.gen();
            let kind = if u < aperiodic {
                TrafficKind::Aperiodic { rate: config.aperiodic_rate }
            } else if u < aperiodic + short {
                TrafficKind::Periodic { period: 1.0 }
            } else {
                TrafficKind::Periodic { period: 10.0 }
            };
            let mobile = rng.gen_bool(config.mobile_fraction);
            DeviceProfile {
                id,
                access_class,
                traffic: TrafficMode { kind, payload: config.payload },
                mobile,
                position,
            }
        })
        .collect();
    Ok(devices)
}

/// Folds a coordinate back into `[0, side]` by mirror reflection.
pub fn reflect(v: f64, side: f64) -> f64 {
    let period = 2.0 * side;
    let m = v.rem_euclid(period);
    if m > side {
        period - m
    } else {
        m
    }
}

/// Moves every mobile device by one Gaussian random-walk step of length `dt`.
/// Per-axis displacement variance is `(speed_variance / 2) * dt^2`.
pub fn step_mobility<R: Rng + ?Sized>(
    devices: &mut [DeviceProfile],
    dt: f64,
    speed_variance: f64,
    area_side: f64,
    rng: &mut R,
) {
    debug_assert!(dt > 0.0);
    let sd = (speed_variance / 2.0).sqrt() * dt;
    let Ok(step) = Normal::new(0.0, sd) else { return };
    for d in devices.iter_mut().filter(|d| d.mobile) {
        d.position.x = reflect(d.position.x + step.sample(rng), area_side);
        d.position.y = reflect(d.position.y + step.sample(rng), area_side);
    }
}

/// Uplink arrival epochs (seconds) in `[0, horizon)`.
///
/// Periodic devices draw one phase in `[0, period)` unless `synchronized`,
/// in which case the phase is zero. Aperiodic devices follow a Poisson
/// process.
pub fn draw_arrivals<R: Rng + ?Sized>(
    device: &DeviceProfile,
    horizon: f64,
    synchronized: bool,
    rng: &mut R,
) -> Vec<f64> {
    match device.traffic.kind {
        TrafficKind::Periodic { period } => {
            let phase = if synchronized { 0.0 } else { rng.gen_range(0.0..period) };
            periodic_epochs(phase, period, horizon)
        }
        TrafficKind::Aperiodic { rate } => {
            let Ok(gap) = Exp::new(rate) else { return Vec::new() };
            let mut out = Vec::new();
            let mut t = gap.sample(rng);
            while t < horizon {
                out.push(t);
                t += gap.sample(rng);
            }
            out
        }
    }
}

pub fn periodic_epochs(phase: f64, period: f64, horizon: f64) -> Vec<f64> {
    (0..)
        .map(|k| phase + k as f64 * period)
        .take_while(|&t| t < horizon)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn cfg(count: u32) -> ScenarioConfig {
        ScenarioConfig { device_count: count, ..Default::default() }
    }

    #[test]
    fn small_population_is_in_domain() {
        let mut r = rng::stream(1, rng::SCENARIO);
        let devs = build_scenario(&cfg(4), &mut r).unwrap();
        assert_eq!(devs.len(), 4);
        for (i, d) in devs.iter().enumerate() {
            assert_eq!(d.id as usize, i);
            assert!(d.access_class < 16);
            assert!(d.position.within(200.0));
        }
    }

    #[test]
    fn same_seed_same_population() {
        let a = build_scenario(&cfg(500), &mut rng::stream(9, rng::SCENARIO)).unwrap();
        let b = build_scenario(&cfg(500), &mut rng::stream(9, rng::SCENARIO)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn access_classes_are_uniform() {
        let devs = build_scenario(&cfg(20_000), &mut rng::stream(2, rng::SCENARIO)).unwrap();
        let mut counts = [0f64; 16];
        for d in &devs {
            counts[d.access_class as usize] += 1.0;
        }
        let expected = 20_000.0 / 16.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // Upper 0.001 tail of chi-square with 15 degrees of freedom.
        assert!(chi2 < 37.697, "chi2 = {chi2}");
    }

    #[test]
    fn assignments_are_uncorrelated() {
        let devs = build_scenario(&cfg(20_000), &mut rng::stream(5, rng::SCENARIO)).unwrap();
        let corr = |xs: &[f64], ys: &[f64]| {
            let n = xs.len() as f64;
            let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
            let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
            cov / (vx * vy).sqrt()
        };
        let ac: Vec<f64> = devs.iter().map(|d| d.access_class as f64).collect();
        let tm: Vec<f64> = devs.iter().map(|d| d.traffic.class_index() as f64).collect();
        let mob: Vec<f64> = devs.iter().map(|d| d.mobile as u8 as f64).collect();
        assert!(corr(&ac, &tm).abs() < 0.05);
        assert!(corr(&ac, &mob).abs() < 0.05);
        assert!(corr(&tm, &mob).abs() < 0.05);
    }

    #[test]
    fn rejects_bad_mix_and_count() {
        let mut r = rng::stream(1, rng::SCENARIO);
        let bad_mix = ScenarioConfig { traffic_mix: [0.5, 0.5, 0.5], ..Default::default() };
        assert!(build_scenario(&bad_mix, &mut r).is_err());
        assert!(build_scenario(&cfg(0), &mut r).is_err());
    }

    #[test]
    fn static_devices_do_not_move() {
        let mut devs = build_scenario(&cfg(50), &mut rng::stream(1, rng::SCENARIO)).unwrap();
        devs.iter_mut().for_each(|d| d.mobile = false);
        let before = devs.clone();
        step_mobility(&mut devs, 1.0, 2.0, 200.0, &mut rng::stream(1, rng::MOBILITY));
        assert_eq!(before, devs);
    }

    #[test]
    fn step_variance_matches_speed_variance() {
        let mut r = rng::stream(4, rng::MOBILITY);
        let mut dev = build_scenario(&cfg(1), &mut r).unwrap();
        dev[0].mobile = true;
        // A huge area keeps reflection out of the way.
        let side = 1e9;
        dev[0].position = Position::new(side / 2.0, side / 2.0);
        let steps = 100_000;
        let mut sum_sq = 0.0;
        for _ in 0..steps {
            let p = dev[0].position;
            step_mobility(&mut dev, 1.0, 2.0, side, &mut r);
            let q = dev[0].position;
            sum_sq += (q.x - p.x).powi(2) + (q.y - p.y).powi(2);
        }
        let var = sum_sq / steps as f64;
        assert!((var - 2.0).abs() < 0.1, "speed variance {var}");
    }

    #[test]
    fn reflection_keeps_corner_device_inside() {
        assert_eq!(reflect(-3.0, 200.0), 3.0);
        assert_eq!(reflect(205.0, 200.0), 195.0);
        assert_eq!(reflect(-405.0, 200.0), 5.0);
    }

    #[test]
    fn periodic_arrivals() {
        assert_eq!(periodic_epochs(0.0, 10.0, 30.0), vec![0.0, 10.0, 20.0]);
        let mut r = rng::stream(1, rng::ARRIVALS);
        let mut d = build_scenario(&cfg(1), &mut r).unwrap().remove(0);
        d.traffic.kind = TrafficKind::Periodic { period: 1.0 };
        for _ in 0..20 {
            assert_eq!(draw_arrivals(&d, 30.0, false, &mut r).len(), 30);
        }
        d.traffic.kind = TrafficKind::Periodic { period: 10.0 };
        assert_eq!(draw_arrivals(&d, 30.0, true, &mut r), vec![0.0, 10.0, 20.0]);
    }

    #[test]
    fn poisson_mean_count() {
        let mut r = rng::stream(8, rng::ARRIVALS);
        let mut d = build_scenario(&cfg(1), &mut r).unwrap().remove(0);
        d.traffic.kind = TrafficKind::Aperiodic { rate: 0.1 };
        let n = 10_000;
        let total: usize = (0..n).map(|_| draw_arrivals(&d, 30.0, false, &mut r).len()).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 3.0).abs() < 0.15, "mean {mean}");
    }

    proptest! {
        #[test]
        fn mobility_stays_in_area(seed in any::<u64>(), steps in 1usize..40, dt in 0.1f64..50.0) {
            let mut r = rng::stream(seed, rng::MOBILITY);
            let mut devs = build_scenario(&cfg(30), &mut r).unwrap();
            for _ in 0..steps {
                step_mobility(&mut devs, dt, 2.0, 200.0, &mut r);
                prop_assert!(devs.iter().all(|d| d.position.within(200.0)));
            }
        }
    }
}
