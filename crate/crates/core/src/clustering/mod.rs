//! Group management: global re-clustering, join, leave and history-fair
//! coordinator selection.

mod kmeans;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kmeans::capacity_kmeans;

use crate::channel::{snr, LinkBudget};
use crate::config::ConfigError;
use crate::scenario::{DeviceId, DeviceProfile};

pub type GroupId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum ClusteringError {
    #[error("device {0} is not in the unclustered set")]
    NotUnclustered(DeviceId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub max_group_size: usize,
    /// Minimum worst-link estimated SNR (dB) for GC candidacy.
    pub snr_threshold: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig { max_group_size: 50, snr_threshold: 10.0 }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_group_size == 0 {
            return Err(ConfigError::invalid("clustering.max_group_size", "must be at least 1"));
        }
        if !self.snr_threshold.is_finite() {
            return Err(ConfigError::invalid("clustering.snr_threshold", "must be finite"));
        }
        Ok(())
    }
}

/// Pairwise estimated path loss (dB). `None` means the pair is unknown and
/// is treated as infinite loss.
pub trait LossTable {
    fn loss(&self, a: DeviceId, b: DeviceId) -> Option<f64>;
}

impl<F> LossTable for F
where
    F: Fn(DeviceId, DeviceId) -> Option<f64>,
{
    fn loss(&self, a: DeviceId, b: DeviceId) -> Option<f64> {
        self(a, b)
    }
}

/// Explicit symmetric table, mostly for tests and small instances.
#[derive(Debug, Clone, Default)]
pub struct CsiTable {
    entries: HashMap<(DeviceId, DeviceId), f64>,
}

impl CsiTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: DeviceId, b: DeviceId, loss: f64) {
        self.entries.insert((a.min(b), a.max(b)), loss);
    }
}

impl LossTable for CsiTable {
    fn loss(&self, a: DeviceId, b: DeviceId) -> Option<f64> {
        self.entries.get(&(a.min(b), a.max(b))).copied()
    }
}

/// Cumulative time each device has spent as group coordinator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GcHistory {
    duty: HashMap<DeviceId, f64>,
}

impl GcHistory {
    pub fn duty(&self, device: DeviceId) -> f64 {
        self.duty.get(&device).copied().unwrap_or(0.0)
    }

    pub fn accrue(&mut self, device: DeviceId, seconds: f64) {
        if seconds > 0.0 {
            *self.duty.entry(device).or_insert(0.0) += seconds;
        }
    }
}

/// Inputs to coordinator selection beyond the group itself.
#[derive(Debug, Clone, Default)]
pub struct GcPolicy {
    pub budget: LinkBudget,
    pub snr_threshold: f64,
    /// Devices that registered without the GC role.
    pub gc_ineligible: HashSet<DeviceId>,
}

impl GcPolicy {
    pub fn new(budget: LinkBudget, snr_threshold: f64) -> Self {
        GcPolicy { budget, snr_threshold, gc_ineligible: HashSet::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub group_id: GroupId,
    pub members: BTreeSet<DeviceId>,
    pub gc: DeviceId,
}

impl Group {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members_except_gc(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.members.iter().copied().filter(move |&m| m != self.gc)
    }
}

/// Worst (minimum) estimated SNR from each member to every other member.
fn worst_link_snr(members: &[DeviceId], csi: &dyn LossTable, budget: &LinkBudget) -> Vec<f64> {
    let n = members.len();
    let mut worst = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = csi
                .loss(members[i], members[j])
                .map_or(f64::NEG_INFINITY, |l| snr(budget, l));
            worst[i] = worst[i].min(s);
            worst[j] = worst[j].min(s);
        }
    }
    worst
}

/// Picks the coordinator of a non-empty member set.
///
/// Candidates are the GC-capable members whose worst estimated link SNR
/// reaches the threshold (all GC-capable members if none do). The candidate
/// with the least accumulated duty wins; ties go to the better worst link,
/// then to the lower id.
pub fn select_gc(
    members: &BTreeSet<DeviceId>,
    csi: &dyn LossTable,
    history: &GcHistory,
    policy: &GcPolicy,
) -> DeviceId {
    let ids: Vec<DeviceId> = members.iter().copied().collect();
    assert!(!ids.is_empty(), "select_gc on an empty group");
    if ids.len() == 1 {
        return ids[0];
    }
    let worst = worst_link_snr(&ids, csi, &policy.budget);
    let capable: Vec<usize> = {
        let c: Vec<usize> = (0..ids.len()).filter(|&i| !policy.gc_ineligible.contains(&ids[i])).collect();
        if c.is_empty() {
            (0..ids.len()).collect()
        } else {
            c
        }
    };
    let above: Vec<usize> = capable.iter().copied().filter(|&i| worst[i] >= policy.snr_threshold).collect();
    let candidates = if above.is_empty() { capable } else { above };
    candidates
        .into_iter()
        .min_by(|&a, &b| {
            history
                .duty(ids[a])
                .total_cmp(&history.duty(ids[b]))
                .then(worst[b].total_cmp(&worst[a]))
                .then(ids[a].cmp(&ids[b]))
        })
        .map(|i| ids[i])
        .expect("non-empty candidate set")
}

/// Replaceable spatial grouping step of a global update.
pub trait GroupingStrategy {
    /// Splits `devices` into member lists of at most `max_size`.
    fn group(&self, devices: &[DeviceProfile], max_size: usize, rng: &mut dyn RngCore) -> Vec<Vec<DeviceId>>;
}

/// k-means on positions with `ceil(N / max_size)` clusters and a capacity
/// repair pass.
#[derive(Debug, Clone, Copy)]
pub struct CapacityKMeans {
    pub max_iterations: usize,
}

impl Default for CapacityKMeans {
    fn default() -> Self {
        CapacityKMeans { max_iterations: 50 }
    }
}

impl GroupingStrategy for CapacityKMeans {
    fn group(&self, devices: &[DeviceProfile], max_size: usize, rng: &mut dyn RngCore) -> Vec<Vec<DeviceId>> {
        if devices.is_empty() {
            return Vec::new();
        }
        let k = devices.len().div_ceil(max_size);
        let points: Vec<_> = devices.iter().map(|d| d.position).collect();
        let assign = capacity_kmeans(&points, k, max_size, self.max_iterations, rng);
        let mut groups = vec![Vec::new(); k];
        for (d, c) in devices.iter().zip(assign) {
            groups[c].push(d.id);
        }
        groups.retain(|g| !g.is_empty());
        groups
    }
}

/// Cell-wide assignment of devices to disjoint groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    groups: BTreeMap<GroupId, Group>,
    unclustered: BTreeSet<DeviceId>,
    membership: HashMap<DeviceId, GroupId>,
    max_group_size: usize,
    next_group_id: GroupId,
}

impl Partition {
    pub fn new(max_group_size: usize) -> Self {
        Partition {
            groups: BTreeMap::new(),
            unclustered: BTreeSet::new(),
            membership: HashMap::new(),
            max_group_size: max_group_size.max(1),
            next_group_id: 0,
        }
    }

    pub fn max_group_size(&self) -> usize {
        self.max_group_size
    }

    pub fn groups(&self) -> impl Iterator<Item = &Group> {
        self.groups.values()
    }

    pub fn group(&self, id: GroupId) -> Option<&Group> {
        self.groups.get(&id)
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn unclustered(&self) -> &BTreeSet<DeviceId> {
        &self.unclustered
    }

    pub fn group_of(&self, device: DeviceId) -> Option<GroupId> {
        self.membership.get(&device).copied()
    }

    pub fn contains(&self, device: DeviceId) -> bool {
        self.membership.contains_key(&device) || self.unclustered.contains(&device)
    }

    pub fn add_unclustered(&mut self, device: DeviceId) {
        if !self.membership.contains_key(&device) {
            self.unclustered.insert(device);
        }
    }

    fn insert_group(&mut self, members: BTreeSet<DeviceId>, gc: DeviceId) -> GroupId {
        let id = self.next_group_id;
        self.next_group_id += 1;
        for &m in &members {
            self.unclustered.remove(&m);
            self.membership.insert(m, id);
        }
        self.groups.insert(id, Group { group_id: id, members, gc });
        id
    }

    /// Re-runs coordinator selection for `group` and returns the new GC.
    pub fn reselect_gc(&mut self, group: GroupId, csi: &dyn LossTable, history: &GcHistory, policy: &GcPolicy) -> Option<DeviceId> {
        let g = self.groups.get_mut(&group)?;
        g.gc = select_gc(&g.members, csi, history, policy);
        Some(g.gc)
    }

    /// Adds an unclustered device to the non-full group whose coordinator
    /// it reaches with the least estimated loss (lowest group id on ties),
    /// or opens a new singleton group when every group is full.
    pub fn join(
        &mut self,
        device: DeviceId,
        csi: &dyn LossTable,
        history: &GcHistory,
        policy: &GcPolicy,
    ) -> Result<GroupId, ClusteringError> {
        self.join_excluding(device, None, csi, history, policy)
    }

    /// [`Partition::join`] that never picks `exclude`.
    pub fn join_excluding(
        &mut self,
        device: DeviceId,
        exclude: Option<GroupId>,
        csi: &dyn LossTable,
        history: &GcHistory,
        policy: &GcPolicy,
    ) -> Result<GroupId, ClusteringError> {
        if !self.unclustered.contains(&device) {
            return Err(ClusteringError::NotUnclustered(device));
        }
        let target = self
            .groups
            .values()
            .filter(|g| g.len() < self.max_group_size && Some(g.group_id) != exclude)
            .map(|g| (g.group_id, csi.loss(device, g.gc).unwrap_or(f64::INFINITY)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(id, _)| id);
        let Some(id) = target else {
            return Ok(self.insert_group(BTreeSet::from([device]), device));
        };
        self.unclustered.remove(&device);
        self.membership.insert(device, id);
        self.groups.get_mut(&id).expect("target exists").members.insert(device);
        self.reselect_gc(id, csi, history, policy);
        Ok(id)
    }

    /// Places an unclustered device into a specific group without
    /// re-electing the coordinator. Fails if the group is full or missing.
    pub fn assign(&mut self, device: DeviceId, group: GroupId) -> bool {
        if !self.unclustered.contains(&device) {
            return false;
        }
        let max = self.max_group_size;
        let Some(g) = self.groups.get_mut(&group) else { return false };
        if g.len() >= max {
            return false;
        }
        g.members.insert(device);
        self.unclustered.remove(&device);
        self.membership.insert(device, group);
        true
    }

    /// Makes `device` the coordinator of its group.
    pub fn set_gc(&mut self, group: GroupId, device: DeviceId) -> bool {
        match self.groups.get_mut(&group) {
            Some(g) if g.members.contains(&device) => {
                g.gc = device;
                true
            }
            _ => false,
        }
    }

    /// Moves `device` from its group to the unclustered set. Empty groups
    /// are deleted; a departing coordinator is replaced. Returns the group
    /// the device left, or `None` (with a warning) if it was not grouped.
    pub fn leave(
        &mut self,
        device: DeviceId,
        csi: &dyn LossTable,
        history: &GcHistory,
        policy: &GcPolicy,
    ) -> Option<GroupId> {
        let Some(id) = self.membership.remove(&device) else {
            tracing::warn!(device, "group_leave for a device that is not in any group");
            return None;
        };
        self.unclustered.insert(device);
        let g = self.groups.get_mut(&id).expect("membership points at a live group");
        g.members.remove(&device);
        if g.members.is_empty() {
            self.groups.remove(&id);
        } else if g.gc == device {
            self.reselect_gc(id, csi, history, policy);
        }
        Some(id)
    }

    /// Checks disjointness, coverage of `universe`, the capacity bound and
    /// coordinator membership.
    pub fn check_invariants(&self, universe: &BTreeSet<DeviceId>) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for g in self.groups.values() {
            if g.members.is_empty() || g.members.len() > self.max_group_size {
                return Err(format!("group {} has {} members", g.group_id, g.members.len()));
            }
            if !g.members.contains(&g.gc) {
                return Err(format!("group {} coordinator {} is not a member", g.group_id, g.gc));
            }
            for &m in &g.members {
                if !seen.insert(m) {
                    return Err(format!("device {m} is in two groups"));
                }
                if self.membership.get(&m) != Some(&g.group_id) {
                    return Err(format!("membership index out of sync for device {m}"));
                }
            }
        }
        for &u in &self.unclustered {
            if !seen.insert(u) {
                return Err(format!("device {u} is both grouped and unclustered"));
            }
        }
        if &seen != universe {
            return Err(format!("coverage mismatch: {} tracked vs {} expected", seen.len(), universe.len()));
        }
        if self.membership.len() + self.unclustered.len() != seen.len() {
            return Err("stale membership entries".into());
        }
        Ok(())
    }
}

/// Re-clusters every device and elects a coordinator per group.
pub fn global_group_update(
    devices: &[DeviceProfile],
    csi: &dyn LossTable,
    max_size: usize,
    history: &GcHistory,
    policy: &GcPolicy,
    strategy: &dyn GroupingStrategy,
    rng: &mut dyn RngCore,
) -> Partition {
    let mut partition = Partition::new(max_size);
    for members in strategy.group(devices, max_size.max(1), rng) {
        let members: BTreeSet<DeviceId> = members.into_iter().collect();
        let gc = select_gc(&members, csi, history, policy);
        partition.insert_group(members, gc);
    }
    partition
}
