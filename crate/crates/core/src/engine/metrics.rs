use serde::Serialize;

use super::AccessMode;
use crate::scenario::DeviceProfile;

/// Count, sum and maximum of a set of delays.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DelayStats {
    pub count: u64,
    pub sum: f64,
    pub max: f64,
}

impl DelayStats {
    pub fn add(&mut self, delay: f64) {
        self.count += 1;
        self.sum += delay;
        self.max = self.max.max(delay);
    }

    pub fn merge(&mut self, other: &DelayStats) {
        self.count += other.count;
        self.sum += other.sum;
        self.max = self.max.max(other.max);
    }

    /// NaN when empty.
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }
}

/// D2D quality of a partition at the moment it is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GroupingStats {
    pub groups: usize,
    /// Grouped devices, coordinators included.
    pub members: usize,
    /// Group members other than the coordinator.
    pub links: usize,
    /// Averages over all grouped devices; a coordinator counts as PER 0 and
    /// reliability 1.
    pub mean_per: f64,
    pub mean_reliability: f64,
    /// Averages over coordinator links only.
    pub mean_link_per: f64,
    pub mean_link_reliability: f64,
    pub worst_per: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub mode: AccessMode,
    pub device_count: u32,
    pub horizon: f64,
    /// Arrival-to-grant delay of every delivered arrival, seconds, in
    /// delivery order.
    pub delays: Vec<f64>,
    pub per_ac: [DelayStats; 16],
    pub ull: DelayStats,
    /// Arrivals still waiting at the horizon, with delay counted up to it.
    pub censored: DelayStats,
    pub arrivals: u64,
    pub delivered: u64,
    pub failed: u64,
    pub pending: u64,
    pub preamble_attempts: u64,
    pub preamble_collisions: u64,
    /// Preambles sent by individual devices.
    pub direct_attempts: u64,
    /// Preambles sent by coordinators for their group.
    pub group_attempts: u64,
    /// Cycles that entered the RA phase.
    pub ra_requests: u64,
    pub completed_cycles: u64,
    /// Cycles that entered RA but were cut short by a regrouping or the horizon.
    pub unfinished_cycles: u64,
    pub d2d_success: u64,
    pub d2d_failure: u64,
    pub link_reports: u64,
    pub orphans: u64,
    /// Worst PER each device saw on its D2D link, 0 if it never used one.
    pub worst_per: Vec<f64>,
    pub data_bytes: u64,
    pub signaling_bytes: u64,
    pub header_bytes: u64,
    /// `(epoch, group count)` after every change.
    pub group_count: Vec<(f64, usize)>,
    pub initial_grouping: Option<GroupingStats>,
}

impl MetricsReport {
    pub fn empty(seed: u64, mode: AccessMode, device_count: u32, horizon: f64) -> Self {
        MetricsReport {
            seed,
            mode,
            device_count,
            horizon,
            delays: Vec::new(),
            per_ac: [DelayStats::default(); 16],
            ull: DelayStats::default(),
            censored: DelayStats::default(),
            arrivals: 0,
            delivered: 0,
            failed: 0,
            pending: 0,
            preamble_attempts: 0,
            preamble_collisions: 0,
            direct_attempts: 0,
            group_attempts: 0,
            ra_requests: 0,
            completed_cycles: 0,
            unfinished_cycles: 0,
            d2d_success: 0,
            d2d_failure: 0,
            link_reports: 0,
            orphans: 0,
            worst_per: Vec::new(),
            data_bytes: 0,
            signaling_bytes: 0,
            header_bytes: 0,
            group_count: Vec::new(),
            initial_grouping: None,
        }
    }

    pub(crate) fn record_delivery(&mut self, device: &DeviceProfile, delay: f64) {
        debug_assert!(delay >= 0.0);
        self.delays.push(delay);
        self.delivered += 1;
        self.per_ac[device.access_class as usize % 16].add(delay);
        if device.is_ull() {
            self.ull.add(delay);
        }
    }

    /// Served-only mean delay; NaN with no deliveries.
    pub fn mean_delay(&self) -> f64 {
        if self.delays.is_empty() {
            return f64::NAN;
        }
        self.delays.iter().sum::<f64>() / self.delays.len() as f64
    }

    /// Mean over delivered and still-pending arrivals, the latter censored
    /// at the horizon.
    pub fn censored_mean_delay(&self) -> f64 {
        let n = self.delays.len() as u64 + self.censored.count;
        if n == 0 {
            return f64::NAN;
        }
        (self.delays.iter().sum::<f64>() + self.censored.sum) / n as f64
    }

    pub fn delay_std(&self) -> f64 {
        std_dev(&self.delays)
    }

    pub fn ull_mean_delay(&self) -> f64 {
        self.ull.mean()
    }

    pub fn collision_rate(&self) -> f64 {
        if self.preamble_attempts == 0 {
            0.0
        } else {
            self.preamble_collisions as f64 / self.preamble_attempts as f64
        }
    }

    pub fn d2d_success_rate(&self) -> f64 {
        let n = self.d2d_success + self.d2d_failure;
        if n == 0 {
            f64::NAN
        } else {
            self.d2d_success as f64 / n as f64
        }
    }

    pub fn worst_device_per(&self) -> f64 {
        self.worst_per.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_conserved(&self) -> bool {
        self.delivered + self.failed + self.pending == self.arrivals
    }

    /// Named scalar metrics, in a fixed order.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("mean_delay", self.mean_delay()),
            ("censored_mean_delay", self.censored_mean_delay()),
            ("ull_mean_delay", self.ull_mean_delay()),
            ("collision_rate", self.collision_rate()),
            ("arrivals", self.arrivals as f64),
            ("delivered", self.delivered as f64),
            ("pending", self.pending as f64),
            ("preamble_attempts", self.preamble_attempts as f64),
            ("direct_attempts", self.direct_attempts as f64),
            ("ra_requests", self.ra_requests as f64),
            ("completed_cycles", self.completed_cycles as f64),
            ("d2d_success_rate", self.d2d_success_rate()),
            ("worst_per", self.worst_device_per()),
            ("data_bytes", self.data_bytes as f64),
            ("signaling_bytes", self.signaling_bytes as f64),
        ]
    }
}

pub(crate) fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Cross-run mean and sample standard deviation of one scalar metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub name: &'static str,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub seeds: Vec<u64>,
    pub runs: Vec<MetricsReport>,
    pub summary: Vec<MetricSummary>,
}

impl MonteCarloReport {
    pub fn from_runs(runs: Vec<MetricsReport>) -> Self {
        let seeds = runs.iter().map(|r| r.seed).collect();
        let names: Vec<&'static str> = runs.first().map(|r| r.scalars().into_iter().map(|(n, _)| n).collect()).unwrap_or_default();
        let columns: Vec<Vec<f64>> = runs.iter().map(|r| r.scalars().into_iter().map(|(_, v)| v).collect()).collect();
        let summary = names
            .iter()
            .enumerate()
            .map(|(i, &name)| {
                let xs: Vec<f64> = columns.iter().map(|c| c[i]).filter(|v| v.is_finite()).collect();
                let mean = if xs.is_empty() { f64::NAN } else { xs.iter().sum::<f64>() / xs.len() as f64 };
                MetricSummary { name, mean, std: std_dev(&xs) }
            })
            .collect();
        MonteCarloReport { seeds, runs, summary }
    }

    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.summary.iter().find(|m| m.name == name)
    }

    /// Mean delay over all runs' samples, i.e. per-run means weighted by
    /// sample count.
    pub fn mean_delay(&self) -> f64 {
        let (sum, n) = self.runs.iter().fold((0.0, 0usize), |(s, n), r| (s + r.delays.iter().sum::<f64>(), n + r.delays.len()));
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }

    /// Standard deviation of the per-run mean delays.
    pub fn delay_std(&self) -> f64 {
        let means: Vec<f64> = self.runs.iter().map(|r| r.mean_delay()).filter(|m| m.is_finite()).collect();
        std_dev(&means)
    }

    /// Pooled ULL-class mean delay.
    pub fn ull_mean_delay(&self) -> f64 {
        let mut s = DelayStats::default();
        for r in &self.runs {
            s.merge(&r.ull);
        }
        s.mean()
    }

    pub fn collision_rate(&self) -> f64 {
        let (c, a) = self.runs.iter().fold((0, 0), |(c, a), r| (c + r.preamble_collisions, a + r.preamble_attempts));
        if a == 0 {
            0.0
        } else {
            c as f64 / a as f64
        }
    }

    /// Mean of a per-run initial-grouping statistic.
    pub fn grouping_mean(&self, f: impl Fn(&GroupingStats) -> f64) -> f64 {
        let xs: Vec<f64> = self.runs.iter().filter_map(|r| r.initial_grouping.as_ref()).map(f).collect();
        if xs.is_empty() {
            f64::NAN
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    }
}
