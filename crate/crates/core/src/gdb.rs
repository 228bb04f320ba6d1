//! Geolocation database: device registration (directly or through a
//! MASTER acting for its SLAVEs), low-error propagation queries, and
//! grouping advice for the base station.
//!
//! The database lives in-process but is reachable through
//! [`Gdb::handle`], a request/response interface over [`GdbMessage`]
//! values that serialize with the same length-prefixed, big-endian
//! conventions as the aggregated frames.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{laplace, path_loss, CsiEstimator, LinkModel, PathLossModel};
use crate::clustering::{global_group_update, GcHistory, GcPolicy, GroupingStrategy, Partition};
use crate::config::ConfigError;
use crate::scenario::{DeviceId, DeviceProfile, Position, TrafficKind, TrafficMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdbConfig {
    /// Use database advice for the initial grouping.
    pub enabled: bool,
    /// Mean absolute error of the database's pairwise loss estimates, dB.
    pub residual_mae: f64,
}

impl Default for GdbConfig {
    fn default() -> Self {
        GdbConfig { enabled: true, residual_mae: 1.0 }
    }
}

impl GdbConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.residual_mae >= 0.0) {
            return Err(ConfigError::invalid("gdb.residual_mae", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Gc,
    Gm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub tx_gain: f64,
    pub supported_roles: BTreeSet<Role>,
}

impl Default for Capabilities {
    fn default() -> Self {
        Capabilities { tx_gain: 20.0, supported_roles: BTreeSet::from([Role::Gc, Role::Gm]) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GrantToken(pub u64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub device: DeviceId,
    pub location: Position,
    pub capabilities: Capabilities,
    pub registered_via: Option<DeviceId>,
    pub resource_grant: Option<GrantToken>,
}

impl RegistrationRecord {
    pub fn new(device: DeviceId, location: Position) -> Self {
        RegistrationRecord { device, location, capabilities: Capabilities::default(), registered_via: None, resource_grant: None }
    }

    fn same_registration(&self, other: &RegistrationRecord) -> bool {
        self.location == other.location && self.capabilities == other.capabilities && self.registered_via == other.registered_via
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GdbError {
    #[error("device {0} is outside the service area")]
    OutsideServiceArea(DeviceId),
    #[error("device {0} is already registered with different parameters")]
    Conflict(DeviceId),
    #[error("device {0} is not registered directly and cannot act as MASTER")]
    UnauthorizedMaster(DeviceId),
    #[error("device {0} is not registered")]
    NotRegistered(DeviceId),
    #[error("malformed message at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: &'static str },
}

/// Per-location propagation knowledge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationMap {
    pub residual_mae: f64,
    pub path_loss: PathLossModel,
}

impl PropagationMap {
    /// True loss between two positions with the given frozen shadowing,
    /// perturbed by a Laplace error of scale `residual_mae`.
    pub fn query<R: Rng + ?Sized>(&self, a: &Position, b: &Position, shadowing: f64, rng: &mut R) -> f64 {
        path_loss(&self.path_loss, a.distance(b), shadowing) + laplace(self.residual_mae, rng)
    }
}

pub struct Gdb {
    area_side: f64,
    records: BTreeMap<DeviceId, RegistrationRecord>,
    next_grant: u64,
    link: LinkModel,
    map: PropagationMap,
    error: CsiEstimator,
}

impl Gdb {
    pub fn new(area_side: f64, link: LinkModel, residual_mae: f64, run_seed: u64) -> Self {
        let map = PropagationMap { residual_mae, path_loss: link.path_loss };
        Gdb {
            area_side,
            records: BTreeMap::new(),
            next_grant: 1,
            link,
            map,
            error: CsiEstimator::new(residual_mae, run_seed, "gdb-error"),
        }
    }

    pub fn map(&self) -> &PropagationMap {
        &self.map
    }

    pub fn record(&self, device: DeviceId) -> Option<&RegistrationRecord> {
        self.records.get(&device)
    }

    pub fn records(&self) -> impl Iterator<Item = &RegistrationRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn check(&self, record: &RegistrationRecord) -> Result<Option<GrantToken>, GdbError> {
        if !record.location.within(self.area_side) {
            return Err(GdbError::OutsideServiceArea(record.device));
        }
        match self.records.get(&record.device) {
            Some(existing) if existing.same_registration(record) => Ok(existing.resource_grant),
            Some(_) => Err(GdbError::Conflict(record.device)),
            None => Ok(None),
        }
    }

    fn store(&mut self, mut record: RegistrationRecord) -> RegistrationRecord {
        let grant = GrantToken(self.next_grant);
        self.next_grant += 1;
        record.resource_grant = Some(grant);
        self.records.insert(record.device, record.clone());
        record
    }

    /// Registers a device directly. Re-registering identical parameters
    /// returns the existing grant.
    pub fn register(&mut self, mut record: RegistrationRecord) -> Result<RegistrationRecord, GdbError> {
        record.registered_via = None;
        record.resource_grant = None;
        if let Some(existing) = self.check(&record)? {
            record.resource_grant = Some(existing);
            return Ok(record);
        }
        Ok(self.store(record))
    }

    /// Registers `slaves` through a directly registered `master`. Either all
    /// slaves are stored or none are.
    pub fn register_on_behalf(
        &mut self,
        master: DeviceId,
        slaves: Vec<RegistrationRecord>,
    ) -> Result<Vec<RegistrationRecord>, GdbError> {
        match self.records.get(&master) {
            Some(r) if r.registered_via.is_none() => {}
            _ => return Err(GdbError::UnauthorizedMaster(master)),
        }
        let mut prepared = Vec::with_capacity(slaves.len());
        for mut s in slaves {
            s.registered_via = Some(master);
            s.resource_grant = None;
            let existing = self.check(&s)?;
            prepared.push((s, existing));
        }
        Ok(prepared
            .into_iter()
            .map(|(mut s, existing)| match existing {
                Some(g) => {
                    s.resource_grant = Some(g);
                    s
                }
                None => self.store(s),
            })
            .collect())
    }

    /// Database estimate of the loss between two registered devices. The
    /// estimation error is frozen per pair.
    pub fn query_registered(&self, a: DeviceId, b: DeviceId) -> Option<f64> {
        let (ra, rb) = (self.records.get(&a)?, self.records.get(&b)?);
        Some(self.link.true_loss(a, &ra.location, b, &rb.location) + self.error.error(a, b))
    }

    /// Suggested partition of every registered device, built from the
    /// database's own loss estimates. Devices registered without the GC
    /// role are never chosen as coordinator.
    pub fn advise_grouping(
        &self,
        max_size: usize,
        history: &GcHistory,
        policy: &GcPolicy,
        strategy: &dyn GroupingStrategy,
        rng: &mut dyn RngCore,
    ) -> Partition {
        let devices: Vec<DeviceProfile> = self
            .records
            .values()
            .map(|r| DeviceProfile {
                id: r.device,
                access_class: 0,
                traffic: TrafficMode { kind: TrafficKind::Periodic { period: 1.0 }, payload: 0 },
                mobile: false,
                position: r.location,
            })
            .collect();
        let mut policy = policy.clone();
        policy.gc_ineligible.extend(
            self.records
                .values()
                .filter(|r| !r.capabilities.supported_roles.contains(&Role::Gc))
                .map(|r| r.device),
        );
        let csi = |a, b| self.query_registered(a, b);
        global_group_update(&devices, &csi, max_size, history, &policy, strategy, rng)
    }

    /// Request/response entry point.
    pub fn handle(&mut self, request: GdbMessage) -> GdbMessage {
        match request {
            GdbMessage::RegistrationRequest { record } => {
                let device = record.device;
                let result = match record.registered_via {
                    Some(master) => self.register_on_behalf(master, vec![record]).map(|mut v| v.remove(0)),
                    None => self.register(record),
                };
                match result {
                    Ok(r) => GdbMessage::RegistrationResponse { device, grant: r.resource_grant.expect("stored records carry a grant") },
                    Err(e) => GdbMessage::Error { device, code: error_code(&e) },
                }
            }
            GdbMessage::ResourceRequest { device } => match self.records.get(&device).and_then(|r| r.resource_grant) {
                Some(grant) => GdbMessage::ResourceGrant { device, grant },
                None => GdbMessage::Error { device, code: error_code(&GdbError::NotRegistered(device)) },
            },
            GdbMessage::PropagationQuery { device, peer } => match self.query_registered(device, peer) {
                Some(loss) => GdbMessage::PropagationReply { device, peer, loss },
                None => GdbMessage::Error { device, code: error_code(&GdbError::NotRegistered(peer)) },
            },
            other => GdbMessage::Error { device: other.device(), code: 0xff },
        }
    }
}

/// MASTER for initial registration: the lowest device id with a direct
/// connection to the base station.
pub fn bootstrap_master(devices: impl IntoIterator<Item = DeviceId>, direct: impl Fn(DeviceId) -> bool) -> Option<DeviceId> {
    devices.into_iter().filter(|&d| direct(d)).min()
}

fn error_code(e: &GdbError) -> u8 {
    match e {
        GdbError::OutsideServiceArea(_) => 1,
        GdbError::Conflict(_) => 2,
        GdbError::UnauthorizedMaster(_) => 3,
        GdbError::NotRegistered(_) => 4,
        GdbError::Malformed { .. } => 5,
    }
}

/// Database signaling. Wire form: `kind u8 | device u32 | body_len u16 | body`.
#[derive(Debug, Clone, PartialEq)]
pub enum GdbMessage {
    RegistrationRequest { record: RegistrationRecord },
    RegistrationResponse { device: DeviceId, grant: GrantToken },
    ResourceRequest { device: DeviceId },
    ResourceGrant { device: DeviceId, grant: GrantToken },
    PropagationQuery { device: DeviceId, peer: DeviceId },
    PropagationReply { device: DeviceId, peer: DeviceId, loss: f64 },
    Error { device: DeviceId, code: u8 },
}

const NO_MASTER: u32 = u32::MAX;

impl GdbMessage {
    pub fn device(&self) -> DeviceId {
        match self {
            GdbMessage::RegistrationRequest { record } => record.device,
            GdbMessage::RegistrationResponse { device, .. }
            | GdbMessage::ResourceRequest { device }
            | GdbMessage::ResourceGrant { device, .. }
            | GdbMessage::PropagationQuery { device, .. }
            | GdbMessage::PropagationReply { device, .. }
            | GdbMessage::Error { device, .. } => *device,
        }
    }

    fn kind(&self) -> u8 {
        match self {
            GdbMessage::RegistrationRequest { .. } => 0,
            GdbMessage::RegistrationResponse { .. } => 1,
            GdbMessage::ResourceRequest { .. } => 2,
            GdbMessage::ResourceGrant { .. } => 3,
            GdbMessage::PropagationQuery { .. } => 4,
            GdbMessage::PropagationReply { .. } => 5,
            GdbMessage::Error { .. } => 6,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        match self {
            GdbMessage::RegistrationRequest { record } => {
                body.extend_from_slice(&record.location.x.to_be_bytes());
                body.extend_from_slice(&record.location.y.to_be_bytes());
                body.extend_from_slice(&record.capabilities.tx_gain.to_be_bytes());
                let roles = record.capabilities.supported_roles.iter().fold(0u8, |m, r| {
                    m | match r {
                        Role::Gc => 1,
                        Role::Gm => 2,
                    }
                });
                body.push(roles);
                body.extend_from_slice(&record.registered_via.unwrap_or(NO_MASTER).to_be_bytes());
            }
            GdbMessage::RegistrationResponse { grant, .. } | GdbMessage::ResourceGrant { grant, .. } => {
                body.extend_from_slice(&grant.0.to_be_bytes());
            }
            GdbMessage::ResourceRequest { .. } => {}
            GdbMessage::PropagationQuery { peer, .. } => body.extend_from_slice(&peer.to_be_bytes()),
            GdbMessage::PropagationReply { peer, loss, .. } => {
                body.extend_from_slice(&peer.to_be_bytes());
                body.extend_from_slice(&loss.to_be_bytes());
            }
            GdbMessage::Error { code, .. } => body.push(*code),
        }
        let mut out = Vec::with_capacity(7 + body.len());
        out.push(self.kind());
        out.extend_from_slice(&self.device().to_be_bytes());
        out.extend_from_slice(&(body.len() as u16).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, GdbError> {
        let malformed = |offset, reason| GdbError::Malformed { offset, reason };
        if bytes.len() < 7 {
            return Err(malformed(bytes.len(), "header incomplete"));
        }
        let kind = bytes[0];
        let device = u32::from_be_bytes(bytes[1..5].try_into().unwrap());
        let len = u16::from_be_bytes([bytes[5], bytes[6]]) as usize;
        let body = &bytes[7..];
        if body.len() != len {
            return Err(malformed(7, "body length does not match the declared length"));
        }
        let want = |n: usize| if len == n { Ok(()) } else { Err(malformed(7, "unexpected body length")) };
        let u32_at = |o: usize| u32::from_be_bytes(body[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_be_bytes(body[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_be_bytes(body[o..o + 8].try_into().unwrap());
        Ok(match kind {
            0 => {
                want(29)?;
                let roles_bits = body[24];
                if roles_bits & !3 != 0 {
                    return Err(malformed(7 + 24, "unknown role bits"));
                }
                let mut supported_roles = BTreeSet::new();
                if roles_bits & 1 != 0 {
                    supported_roles.insert(Role::Gc);
                }
                if roles_bits & 2 != 0 {
                    supported_roles.insert(Role::Gm);
                }
                let via = u32_at(25);
                GdbMessage::RegistrationRequest {
                    record: RegistrationRecord {
                        device,
                        location: Position::new(f64_at(0), f64_at(8)),
                        capabilities: Capabilities { tx_gain: f64_at(16), supported_roles },
                        registered_via: (via != NO_MASTER).then_some(via),
                        resource_grant: None,
                    },
                }
            }
            1 => {
                want(8)?;
                GdbMessage::RegistrationResponse { device, grant: GrantToken(u64_at(0)) }
            }
            2 => {
                want(0)?;
                GdbMessage::ResourceRequest { device }
            }
            3 => {
                want(8)?;
                GdbMessage::ResourceGrant { device, grant: GrantToken(u64_at(0)) }
            }
            4 => {
                want(4)?;
                GdbMessage::PropagationQuery { device, peer: u32_at(0) }
            }
            5 => {
                want(12)?;
                GdbMessage::PropagationReply { device, peer: u32_at(0), loss: f64_at(4) }
            }
            6 => {
                want(1)?;
                GdbMessage::Error { device, code: body[0] }
            }
            _ => return Err(malformed(0, "unknown message kind")),
        })
    }
}

/// Devices in `partition` that have no registration record.
pub fn unregistered_members(gdb: &Gdb, partition: &Partition) -> HashSet<DeviceId> {
    partition
        .groups()
        .flat_map(|g| g.members.iter().copied())
        .filter(|d| gdb.record(*d).is_none())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::LinkBudget;
    use crate::clustering::CapacityKMeans;
    use crate::rng::stream;

    fn gdb(residual: f64) -> Gdb {
        let model = PathLossModel { shadowing_sigma: 4.0, ..Default::default() };
        Gdb::new(200.0, LinkModel::new(model, LinkBudget::default(), 7), residual, 7)
    }

    #[test]
    fn registration_happy_path_and_idempotence() {
        let mut g = gdb(1.0);
        let rec = RegistrationRecord::new(3, Position::new(10.0, 10.0));
        let a = g.register(rec.clone()).unwrap();
        assert!(a.resource_grant.is_some());
        let b = g.register(rec.clone()).unwrap();
        assert_eq!(a.resource_grant, b.resource_grant);
        let moved = RegistrationRecord::new(3, Position::new(11.0, 10.0));
        assert_eq!(g.register(moved), Err(GdbError::Conflict(3)));
        assert_eq!(g.register(RegistrationRecord::new(4, Position::new(-1.0, 0.0))), Err(GdbError::OutsideServiceArea(4)));
    }

    #[test]
    fn master_registers_slaves() {
        let mut g = gdb(1.0);
        g.register(RegistrationRecord::new(0, Position::new(5.0, 5.0))).unwrap();
        let slaves: Vec<_> = (1..4).map(|d| RegistrationRecord::new(d, Position::new(6.0, d as f64))).collect();
        let out = g.register_on_behalf(0, slaves.clone()).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|r| r.registered_via == Some(0) && r.resource_grant.is_some()));
        // A slave cannot act as MASTER.
        assert_eq!(g.register_on_behalf(1, vec![RegistrationRecord::new(9, Position::new(1.0, 1.0))]), Err(GdbError::UnauthorizedMaster(1)));
        assert!(g.record(9).is_none());
        assert_eq!(g.register_on_behalf(0, vec![]).unwrap(), vec![]);
    }

    #[test]
    fn unregistered_master_rejected() {
        let mut g = gdb(1.0);
        let r = g.register_on_behalf(42, vec![RegistrationRecord::new(1, Position::new(1.0, 1.0))]);
        assert_eq!(r, Err(GdbError::UnauthorizedMaster(42)));
        assert!(g.is_empty());
    }

    #[test]
    fn query_error_statistics() {
        let map = PropagationMap { residual_mae: 0.0, path_loss: PathLossModel::default() };
        let (a, b) = (Position::new(0.0, 0.0), Position::new(10.0, 0.0));
        let mut r = stream(1, "gdb");
        assert_eq!(map.query(&a, &b, 2.0, &mut r), 40.0 + 30.0 + 2.0);
        let map = PropagationMap { residual_mae: 1.0, ..map };
        let n = 100_000;
        let mae: f64 = (0..n).map(|_| (map.query(&a, &b, 2.0, &mut r) - 72.0).abs()).sum::<f64>() / n as f64;
        assert!((mae - 1.0).abs() < 0.02, "{mae}");
    }

    #[test]
    fn registered_queries_are_reciprocal() {
        let mut g = gdb(0.0);
        g.register(RegistrationRecord::new(1, Position::new(0.0, 0.0))).unwrap();
        g.register(RegistrationRecord::new(2, Position::new(30.0, 40.0))).unwrap();
        assert_eq!(g.query_registered(1, 2), g.query_registered(2, 1));
        assert!(g.query_registered(1, 3).is_none());
    }

    #[test]
    fn handle_round_trips_through_the_wire_format() {
        let mut g = gdb(1.0);
        let req = GdbMessage::RegistrationRequest { record: RegistrationRecord::new(5, Position::new(1.0, 2.0)) };
        let wire = req.encode();
        let resp = g.handle(GdbMessage::decode(&wire).unwrap());
        assert!(matches!(resp, GdbMessage::RegistrationResponse { device: 5, .. }));
        assert_eq!(GdbMessage::decode(&resp.encode()).unwrap(), resp);
        let grant = g.handle(GdbMessage::ResourceRequest { device: 5 });
        assert!(matches!(grant, GdbMessage::ResourceGrant { device: 5, .. }));
        assert!(matches!(g.handle(GdbMessage::ResourceRequest { device: 6 }), GdbMessage::Error { code: 4, .. }));
        assert!(GdbMessage::decode(&wire[..wire.len() - 1]).is_err());
    }

    #[test]
    fn bootstrap_picks_lowest_connected_id() {
        assert_eq!(bootstrap_master([5, 2, 9, 3], |d| d != 2), Some(3));
        assert_eq!(bootstrap_master([1], |_| false), None);
    }

    #[test]
    fn advice_honours_gc_capability() {
        let mut g = gdb(0.0);
        let mut rng = stream(2, "adv");
        for (i, (cx, cy)) in [(20.0, 20.0), (180.0, 180.0)].into_iter().enumerate() {
            for k in 0..4u32 {
                let id = i as u32 * 4 + k;
                let mut rec = RegistrationRecord::new(id, Position::new(cx + rng.gen_range(-3.0..3.0), cy + rng.gen_range(-3.0..3.0)));
                if k != 2 {
                    rec.capabilities.supported_roles = BTreeSet::from([Role::Gm]);
                }
                g.register(rec).unwrap();
            }
        }
        let p = g.advise_grouping(4, &GcHistory::default(), &GcPolicy::new(LinkBudget::default(), 10.0), &CapacityKMeans::default(), &mut rng);
        let gcs: BTreeSet<_> = p.groups().map(|gr| gr.gc).collect();
        assert_eq!(gcs, BTreeSet::from([2, 6]));
        let mut groups: Vec<BTreeSet<u32>> = p.groups().map(|gr| gr.members.iter().copied().collect()).collect();
        groups.sort();
        assert_eq!(groups, vec![BTreeSet::from([0, 1, 2, 3]), BTreeSet::from([4, 5, 6, 7])]);
        assert!(unregistered_members(&g, &p).is_empty());
    }
}
