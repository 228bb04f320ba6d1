use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;

use super::metrics::{GroupingStats, MetricsReport};
use super::queue::{Backoff, EventKind, EventQueue};
use super::{AccessMode, EngineError};
use crate::channel::{d2d_link_reliability, packet_error_rate, path_loss, CsiEstimator, D2dSlotBudget, LinkModel};
use crate::clustering::{global_group_update, CapacityKMeans, GcHistory, GcPolicy, Group, GroupId, Partition};
use crate::config::Config;
use crate::gdb::{bootstrap_master, Gdb, RegistrationRecord};
use crate::protocol::{
    advance_cycle, build_downlink_frame, handle_exception_command, AccessResult, AggregatedFrame, CycleAction, CycleInput,
    CyclePhase, D2dLinks, DataRecord, GroupCycleState, SignalingKind, SignalingMessage,
};
use crate::protocol::frame::HEADER_LEN;
use crate::rach::{eab_gate, next_sib, resolve_slot, retry_delay, GateDecision, RaAttempt, Requester, SlotOutcome};
use crate::rng::{self, stream, SimRng};
use crate::scenario::{build_scenario, draw_arrivals, step_mobility, DeviceId, DeviceProfile};
use crate::time::SimTime;

/// One message sent by its own device through the RACH.
#[derive(Debug, Clone, Copy)]
struct Access {
    device: DeviceId,
    arrival: SimTime,
    preambles_sent: u32,
}

#[derive(Debug, Clone, Copy)]
enum Tag {
    Access(u32),
    Group { generation: u32 },
}

struct GroupRuntime {
    state: GroupCycleState,
    /// Payloads held by the coordinator for the current cycle.
    staged: Vec<(DeviceId, SimTime)>,
    /// Base-station messages for the next downlink frame.
    downlink: Vec<SignalingMessage>,
    in_ra: bool,
    ra_request: SimTime,
    cycle_start: SimTime,
}

type ShadowCache = HashMap<(DeviceId, DeviceId), f64>;

fn shadowing(link: &LinkModel, cache: &mut ShadowCache, a: DeviceId, b: DeviceId) -> f64 {
    *cache.entry((a.min(b), a.max(b))).or_insert_with(|| link.shadowing(a, b))
}

fn true_per(link: &LinkModel, cache: &mut ShadowCache, devices: &[DeviceProfile], a: DeviceId, b: DeviceId) -> f64 {
    let (pa, pb) = (&devices[a as usize], &devices[b as usize]);
    let loss = path_loss(&link.path_loss, pa.position.distance(&pb.position), shadowing(link, cache, a, b));
    packet_error_rate(link.snr(loss), pa.traffic.payload)
}

struct Links<'a> {
    devices: &'a [DeviceProfile],
    link: &'a LinkModel,
    cache: &'a mut ShadowCache,
    budget: D2dSlotBudget,
    rng: &'a mut SimRng,
    ideal: bool,
    report: &'a mut MetricsReport,
}

impl D2dLinks for Links<'_> {
    fn exchange(&mut self, gm: DeviceId, gc: DeviceId, group_size: usize) -> bool {
        let ok = if self.ideal {
            true
        } else {
            let per = true_per(self.link, self.cache, self.devices, gm, gc);
            let worst = &mut self.report.worst_per[gm as usize];
            *worst = worst.max(per);
            self.rng.gen::<f64>() < d2d_link_reliability(per, &self.budget, group_size)
        };
        if ok {
            self.report.d2d_success += 1;
        } else {
            self.report.d2d_failure += 1;
        }
        ok
    }
}

fn d2d_budget(config: &Config) -> D2dSlotBudget {
    D2dSlotBudget { slot_duration: config.protocol.da, packet_airtime: config.channel.packet_airtime }
}

fn gc_policy(config: &Config) -> GcPolicy {
    GcPolicy::new(config.channel.link_budget(), config.clustering.snr_threshold)
}

/// Device-side CSI: true loss plus a frozen per-pair estimation error.
fn device_csi<'a>(
    devices: &'a [DeviceProfile],
    link: &'a LinkModel,
    estimator: &'a CsiEstimator,
) -> impl Fn(DeviceId, DeviceId) -> Option<f64> + 'a {
    move |a, b| {
        let (pa, pb) = (devices.get(a as usize)?, devices.get(b as usize)?);
        Some(link.true_loss(a, &pa.position, b, &pb.position) + estimator.error(a, b))
    }
}

fn first_partition(
    config: &Config,
    seed: u64,
    devices: &[DeviceProfile],
    link: &LinkModel,
    estimator: &CsiEstimator,
    history: &GcHistory,
    rng: &mut SimRng,
) -> Result<Partition, EngineError> {
    let policy = gc_policy(config);
    let max = config.clustering.max_group_size;
    if !config.gdb.enabled {
        let csi = device_csi(devices, link, estimator);
        return Ok(global_group_update(devices, &csi, max, history, &policy, &CapacityKMeans::default(), rng));
    }
    let mut gdb = Gdb::new(config.scenario.area_side, link.clone(), config.gdb.residual_mae, seed);
    if let Some(master) = bootstrap_master(devices.iter().map(|d| d.id), |_| true) {
        gdb.register(RegistrationRecord::new(master, devices[master as usize].position))?;
        let slaves = devices.iter().filter(|d| d.id != master).map(|d| RegistrationRecord::new(d.id, d.position)).collect();
        gdb.register_on_behalf(master, slaves)?;
    }
    Ok(gdb.advise_grouping(max, history, &policy, &CapacityKMeans::default(), rng))
}

fn grouping_stats(
    partition: &Partition,
    devices: &[DeviceProfile],
    link: &LinkModel,
    cache: &mut ShadowCache,
    budget: &D2dSlotBudget,
) -> GroupingStats {
    let mut stats = GroupingStats { groups: partition.group_count(), ..Default::default() };
    let (mut per_sum, mut rel_sum) = (0.0, 0.0);
    for g in partition.groups() {
        stats.members += g.len();
        for gm in g.members_except_gc() {
            let per = true_per(link, cache, devices, gm, g.gc);
            stats.links += 1;
            per_sum += per;
            rel_sum += d2d_link_reliability(per, budget, g.len());
            stats.worst_per = stats.worst_per.max(per);
        }
    }
    if stats.links > 0 {
        stats.mean_link_per = per_sum / stats.links as f64;
        stats.mean_link_reliability = rel_sum / stats.links as f64;
    } else {
        stats.mean_link_reliability = 1.0;
    }
    if stats.members > 0 {
        // Coordinators reach the base station directly.
        let direct = (stats.members - stats.links) as f64;
        stats.mean_per = per_sum / stats.members as f64;
        stats.mean_reliability = (rel_sum + direct) / stats.members as f64;
    } else {
        stats.mean_reliability = 1.0;
    }
    stats
}

/// The partition a grouped-RA run starts from and the true D2D quality of
/// its coordinator links, without simulating any traffic.
pub fn initial_grouping(config: &Config, seed: u64) -> Result<(Partition, GroupingStats), EngineError> {
    config.validate()?;
    let devices = build_scenario(&config.scenario, &mut stream(seed, rng::SCENARIO))?;
    let link = LinkModel::new(config.channel.path_loss_model(), config.channel.link_budget(), seed);
    let estimator = CsiEstimator::new(config.channel.csi_mae, seed, "csi");
    let mut rng = stream(seed, rng::CLUSTERING);
    let partition = first_partition(config, seed, &devices, &link, &estimator, &GcHistory::default(), &mut rng)?;
    let stats = grouping_stats(&partition, &devices, &link, &mut ShadowCache::new(), &d2d_budget(config));
    Ok((partition, stats))
}

struct Sim<'c> {
    cfg: &'c Config,
    mode: AccessMode,
    queue: EventQueue,
    horizon: SimTime,
    slot: SimTime,
    devices: Vec<DeviceProfile>,
    /// Per device, arrivals waiting for their group's next DA.
    pending: Vec<Vec<SimTime>>,
    accesses: Vec<Access>,
    open_accesses: BTreeSet<u32>,
    link: LinkModel,
    estimator: CsiEstimator,
    cache: ShadowCache,
    rach_rng: SimRng,
    protocol_rng: SimRng,
    mobility_rng: SimRng,
    clustering_rng: SimRng,
    slots: BTreeMap<u64, Vec<(RaAttempt, Tag)>>,
    sib_waiters: BTreeMap<SimTime, Vec<u32>>,
    partition: Partition,
    groups: BTreeMap<GroupId, GroupRuntime>,
    generation: u32,
    history: GcHistory,
    policy: GcPolicy,
    report: MetricsReport,
}

pub(super) fn simulate(config: &Config, mode: AccessMode, seed: u64) -> Result<MetricsReport, EngineError> {
    let n = config.scenario.device_count;
    let horizon = SimTime::from_secs(config.engine.horizon);
    if horizon == SimTime::ZERO {
        return Ok(MetricsReport::empty(seed, mode, n, config.engine.horizon));
    }
    let devices = build_scenario(&config.scenario, &mut stream(seed, rng::SCENARIO))?;
    let mut sim = Sim {
        cfg: config,
        mode,
        queue: EventQueue::new(),
        horizon,
        slot: config.rach.slot(),
        pending: vec![Vec::new(); devices.len()],
        accesses: Vec::new(),
        open_accesses: BTreeSet::new(),
        link: LinkModel::new(config.channel.path_loss_model(), config.channel.link_budget(), seed),
        estimator: CsiEstimator::new(config.channel.csi_mae, seed, "csi"),
        cache: ShadowCache::new(),
        rach_rng: stream(seed, rng::RACH),
        protocol_rng: stream(seed, rng::PROTOCOL),
        mobility_rng: stream(seed, rng::MOBILITY),
        clustering_rng: stream(seed, rng::CLUSTERING),
        slots: BTreeMap::new(),
        sib_waiters: BTreeMap::new(),
        partition: Partition::new(config.clustering.max_group_size),
        groups: BTreeMap::new(),
        generation: 0,
        history: GcHistory::default(),
        policy: gc_policy(config),
        report: MetricsReport::empty(seed, mode, n, config.engine.horizon),
        devices,
    };
    sim.report.worst_per = vec![0.0; sim.devices.len()];
    sim.schedule_arrivals(seed);
    if mode == AccessMode::GroupedRa {
        sim.start_grouping(seed)?;
    }
    tracing::debug!(seed, %mode, devices = n, events = sim.queue.len(), "run started");
    while let Some(event) = sim.queue.pop_before(horizon) {
        sim.dispatch(event.kind)?;
    }
    sim.finish();
    tracing::debug!(seed, %mode, delivered = sim.report.delivered, pending = sim.report.pending, "run finished");
    Ok(sim.report)
}

impl Sim<'_> {
    fn now(&self) -> SimTime {
        self.queue.now()
    }

    fn schedule_arrivals(&mut self, seed: u64) {
        let mut rng = stream(seed, rng::ARRIVALS);
        let horizon = self.cfg.engine.horizon;
        for d in &self.devices {
            for t in draw_arrivals(d, horizon, self.cfg.scenario.synchronized, &mut rng) {
                let t = SimTime::from_secs(t);
                if t < self.horizon {
                    self.queue.push(t, EventKind::Arrival { device: d.id });
                    self.report.arrivals += 1;
                }
            }
        }
    }

    fn start_grouping(&mut self, seed: u64) -> Result<(), EngineError> {
        self.partition =
            first_partition(self.cfg, seed, &self.devices, &self.link, &self.estimator, &self.history, &mut self.clustering_rng)?;
        let stats = grouping_stats(&self.partition, &self.devices, &self.link, &mut self.cache, &d2d_budget(self.cfg));
        self.report.initial_grouping = Some(stats);
        self.start_all_groups();
        let tick = SimTime::from_secs(self.cfg.engine.mobility_tick);
        self.queue.push(tick, EventKind::MobilityTick);
        self.queue.push(SimTime::from_secs(self.cfg.engine.update_interval), EventKind::GlobalUpdateTick);
        Ok(())
    }

    /// Starts a runtime for every group with a random offset into the cycle
    /// so that groups do not contend in lockstep.
    fn start_all_groups(&mut self) {
        let now = self.now();
        let nominal = (self.cfg.protocol.cycle_without_ra() + self.slot).as_micros();
        let groups: Vec<Group> = self.partition.groups().cloned().collect();
        for g in groups {
            let offset = SimTime::from_micros(self.protocol_rng.gen_range(0..nominal));
            self.start_group(&g, now + offset);
        }
        self.report.group_count.push((now.as_secs(), self.partition.group_count()));
    }

    fn start_group(&mut self, group: &Group, start: SimTime) {
        let state = GroupCycleState::new(group, start, &self.cfg.protocol);
        self.queue.push(state.phase_deadline, EventKind::PhaseDeadline { group: group.group_id, generation: self.generation });
        self.groups.insert(
            group.group_id,
            GroupRuntime { state, staged: Vec::new(), downlink: Vec::new(), in_ra: false, ra_request: start, cycle_start: start },
        );
    }

    fn drop_group(&mut self, id: GroupId) {
        if let Some(rt) = self.groups.remove(&id) {
            for (d, a) in rt.staged {
                self.pending[d as usize].push(a);
            }
            if rt.in_ra {
                self.report.unfinished_cycles += 1;
            }
        }
    }

    fn dispatch(&mut self, kind: EventKind) -> Result<(), EngineError> {
        match kind {
            EventKind::Arrival { device } => self.on_arrival(device),
            EventKind::RachSlot { slot } => self.on_rach_slot(slot)?,
            EventKind::SibBroadcast => self.on_sib(),
            EventKind::PhaseDeadline { group, generation } => self.on_phase_deadline(group, generation)?,
            EventKind::MobilityTick => self.on_mobility(),
            EventKind::GlobalUpdateTick => self.on_global_update(),
            EventKind::BackoffExpiry { target: Backoff::Barring { access } } => {
                let sib = next_sib(self.now(), &self.cfg.eab);
                let waiters = self.sib_waiters.entry(sib).or_default();
                if waiters.is_empty() {
                    self.queue.push(sib, EventKind::SibBroadcast);
                }
                waiters.push(access);
            }
            EventKind::BackoffExpiry { target: Backoff::Retry { access } } => {
                let now = self.now();
                self.enqueue_access(access, now);
            }
            EventKind::BackoffExpiry { target: Backoff::GroupRetry { group, generation } } => self.on_group_retry(group, generation),
        }
        Ok(())
    }

    fn on_arrival(&mut self, device: DeviceId) {
        let now = self.now();
        match self.mode {
            AccessMode::Eab => {
                let access = self.open_access(device, now);
                self.gate(access);
            }
            AccessMode::GroupedRa if self.partition.group_of(device).is_none() => {
                let access = self.open_access(device, now);
                self.enqueue_access(access, now);
            }
            AccessMode::GroupedRa => self.pending[device as usize].push(now),
        }
    }

    fn open_access(&mut self, device: DeviceId, arrival: SimTime) -> u32 {
        let id = self.accesses.len() as u32;
        self.accesses.push(Access { device, arrival, preambles_sent: 0 });
        self.open_accesses.insert(id);
        id
    }

    fn gate(&mut self, access: u32) {
        let now = self.now();
        let ac = self.devices[self.accesses[access as usize].device as usize].access_class;
        match eab_gate(ac, &self.cfg.eab, &mut self.rach_rng) {
            GateDecision::Pass => self.enqueue_access(access, now),
            GateDecision::Barred { backoff } => {
                let at = now + SimTime::from_secs(backoff);
                self.queue.push(at, EventKind::BackoffExpiry { target: Backoff::Barring { access } });
            }
        }
    }

    fn on_sib(&mut self) {
        let now = self.now();
        for access in self.sib_waiters.remove(&now).unwrap_or_default() {
            self.gate(access);
        }
    }

    fn enqueue_access(&mut self, access: u32, earliest: SimTime) {
        let a = &mut self.accesses[access as usize];
        a.preambles_sent += 1;
        let (device, arrival) = (a.device, a.arrival);
        self.enqueue_attempt(Requester::Device(device), arrival, earliest, Tag::Access(access));
    }

    /// Queues an attempt in the first slot starting at or after `earliest`.
    fn enqueue_attempt(&mut self, requester: Requester, request_epoch: SimTime, earliest: SimTime, tag: Tag) {
        let start = earliest.ceil_to(self.slot);
        let k = start.as_micros() / self.slot.as_micros();
        let attempts = self.slots.entry(k).or_default();
        if attempts.is_empty() {
            self.queue.push(start + self.slot, EventKind::RachSlot { slot: k });
        }
        attempts.push((RaAttempt::new(requester, request_epoch, start), tag));
    }

    fn retry_at(&mut self) -> SimTime {
        self.now() + retry_delay(&self.cfg.rach, &mut self.rach_rng)
    }

    fn group_is_live(&self, group: GroupId, generation: u32) -> bool {
        generation == self.generation && self.groups.contains_key(&group)
    }

    fn on_group_retry(&mut self, group: GroupId, generation: u32) {
        if !self.group_is_live(group, generation) {
            return;
        }
        let rt = &self.groups[&group];
        if rt.in_ra {
            let (request, now) = (rt.ra_request, self.now());
            self.enqueue_attempt(Requester::Group(group), request, now, Tag::Group { generation });
        }
    }

    fn on_rach_slot(&mut self, slot: u64) -> Result<(), EngineError> {
        let entries = self.slots.remove(&slot).unwrap_or_default();
        let (mut attempts, tags): (Vec<RaAttempt>, Vec<Tag>) = entries
            .into_iter()
            .filter(|(a, tag)| match (a.requester, tag) {
                (Requester::Group(g), Tag::Group { generation }) => self.group_is_live(g, *generation),
                _ => true,
            })
            .unzip();
        if attempts.is_empty() {
            return Ok(());
        }
        let outcomes = resolve_slot(&mut attempts, &self.cfg.rach, &mut self.rach_rng);
        self.report.preamble_attempts += attempts.len() as u64;
        for ((attempt, outcome), tag) in attempts.iter().zip(outcomes).zip(tags) {
            if outcome == SlotOutcome::Collision {
                self.report.preamble_collisions += 1;
            }
            match (attempt.requester, tag) {
                (Requester::Group(g), Tag::Group { generation }) => {
                    self.report.group_attempts += 1;
                    let result = match outcome {
                        SlotOutcome::Success => {
                            self.deliver_staged(g);
                            AccessResult::Granted
                        }
                        SlotOutcome::Collision => AccessResult::Collided,
                    };
                    self.step_group(g, generation, CycleInput::Access(result))?;
                }
                (_, Tag::Access(access)) => {
                    self.report.direct_attempts += 1;
                    self.resolve_access(access, outcome);
                }
                (Requester::Device(_), Tag::Group { .. }) => unreachable!("device attempts carry an access tag"),
            }
        }
        Ok(())
    }

    fn resolve_access(&mut self, access: u32, outcome: SlotOutcome) {
        let a = self.accesses[access as usize];
        match outcome {
            SlotOutcome::Success => {
                self.open_accesses.remove(&access);
                let delay = (self.now() - a.arrival).as_secs();
                self.report.record_delivery(&self.devices[a.device as usize], delay);
            }
            SlotOutcome::Collision => {
                let max = self.cfg.rach.preamble_trans_max;
                if max != 0 && a.preambles_sent >= max {
                    self.open_accesses.remove(&access);
                    self.report.failed += 1;
                } else {
                    let at = self.retry_at();
                    self.queue.push(at, EventKind::BackoffExpiry { target: Backoff::Retry { access } });
                }
            }
        }
    }

    fn deliver_staged(&mut self, group: GroupId) {
        let now = self.now();
        let rt = self.groups.get_mut(&group).expect("live group");
        for (d, a) in rt.staged.drain(..) {
            self.report.record_delivery(&self.devices[d as usize], (now - a).as_secs());
        }
    }

    fn on_phase_deadline(&mut self, group: GroupId, generation: u32) -> Result<(), EngineError> {
        if !self.group_is_live(group, generation) {
            return Ok(());
        }
        let now = self.now();
        let rt = self.groups.get_mut(&group).expect("live group");
        if rt.state.phase_deadline != now {
            return Ok(());
        }
        let input = match rt.state.phase {
            CyclePhase::DataAggregation => {
                let mut offers = Vec::new();
                for &m in &rt.state.members {
                    let payload = self.devices[m as usize].traffic.payload as usize;
                    offers.extend(self.pending[m as usize].iter().map(|_| DataRecord { device: m, payload: vec![0; payload] }));
                }
                CycleInput::Deadline { offers, downlink: None }
            }
            CyclePhase::Guard => {
                let (acks, commands): (Vec<_>, Vec<_>) = rt.downlink.drain(..).partition(|s| s.kind == SignalingKind::Ack);
                let frame = build_downlink_frame(group, rt.state.cycle_seq, acks, commands, Vec::new());
                CycleInput::Deadline { offers: Vec::new(), downlink: Some(frame) }
            }
            _ => CycleInput::deadline(),
        };
        self.step_group(group, generation, input)
    }

    fn step_group(&mut self, group: GroupId, generation: u32, input: CycleInput) -> Result<(), EngineError> {
        let now = self.now();
        let rt = self.groups.get_mut(&group).expect("live group");
        let mut links = Links {
            devices: &self.devices,
            link: &self.link,
            cache: &mut self.cache,
            budget: d2d_budget(self.cfg),
            rng: &mut self.protocol_rng,
            ideal: self.cfg.engine.ideal_d2d,
            report: &mut self.report,
        };
        let actions = advance_cycle(&mut rt.state, now, input, &mut links, &self.cfg.protocol)?;
        for action in actions {
            self.apply(group, generation, action);
        }
        Ok(())
    }

    fn apply(&mut self, group: GroupId, generation: u32, action: CycleAction) {
        let now = self.now();
        if !self.groups.contains_key(&group) {
            return;
        }
        match action {
            CycleAction::ScheduleDeadline(at) => self.queue.push(at, EventKind::PhaseDeadline { group, generation }),
            CycleAction::RequestAccess => {
                let rt = self.groups.get_mut(&group).expect("live group");
                rt.in_ra = true;
                rt.ra_request = now;
                self.report.ra_requests += 1;
                self.enqueue_attempt(Requester::Group(group), now, now, Tag::Group { generation });
            }
            CycleAction::RetryAccess => {
                let at = self.retry_at();
                self.queue.push(at, EventKind::BackoffExpiry { target: Backoff::GroupRetry { group, generation } });
            }
            CycleAction::Collected(d) => {
                let pending = std::mem::take(&mut self.pending[d as usize]);
                let rt = self.groups.get_mut(&group).expect("live group");
                rt.staged.extend(pending.into_iter().map(|a| (d, a)));
            }
            CycleAction::CollectionFailed(_) | CycleAction::ReserveProcessing { .. } | CycleAction::Distributed { .. } => {}
            CycleAction::Orphaned(d) => self.orphan(group, d),
            CycleAction::MacroLinkCollapse(gc) => tracing::warn!(group, gc, "coordinator lost its macro link"),
            CycleAction::UplinkDelivered(frame) => {
                self.count_bytes(&frame);
                for message in frame.signaling {
                    if message.kind == SignalingKind::LinkReport {
                        self.report.link_reports += 1;
                    }
                    self.handle_signaling(group, &message);
                }
            }
            CycleAction::DownlinkReceived(frame) => self.count_bytes(&frame),
            CycleAction::CycleCompleted { .. } => {
                self.report.completed_cycles += 1;
                let rt = self.groups.get_mut(&group).expect("live group");
                rt.in_ra = false;
                self.history.accrue(rt.state.gc, (now - rt.cycle_start).as_secs());
                rt.cycle_start = now;
            }
        }
    }

    fn count_bytes(&mut self, frame: &AggregatedFrame) {
        let signaling = frame.signaling_len();
        self.report.header_bytes += HEADER_LEN as u64;
        self.report.signaling_bytes += signaling as u64;
        self.report.data_bytes += (frame.encoded_len() - HEADER_LEN - signaling) as u64;
    }

    fn orphan(&mut self, group: GroupId, device: DeviceId) {
        self.report.orphans += 1;
        let left = {
            let csi = device_csi(&self.devices, &self.link, &self.estimator);
            self.partition.leave(device, &csi, &self.history, &self.policy)
        };
        self.reconcile(left.into_iter().collect());
        tracing::debug!(group, device, "member fell back to individual access");
        let now = self.now();
        for arrival in std::mem::take(&mut self.pending[device as usize]) {
            let access = self.open_access(device, arrival);
            self.enqueue_access(access, now);
        }
    }

    fn handle_signaling(&mut self, group: GroupId, message: &SignalingMessage) {
        let outcome = {
            let csi = device_csi(&self.devices, &self.link, &self.estimator);
            handle_exception_command(&mut self.partition, message, Some(group), &csi, &self.history, &self.policy)
        };
        let affected: BTreeSet<GroupId> = outcome.moves.iter().flat_map(|&(_, old, new)| old.into_iter().chain(new)).collect();
        self.reconcile(affected);
        for (g, m) in outcome.downlink {
            if let Some(rt) = self.groups.get_mut(&g) {
                rt.downlink.push(m);
            }
        }
    }

    /// Brings group runtimes in line with the partition for `ids`.
    fn reconcile(&mut self, ids: BTreeSet<GroupId>) {
        let now = self.now();
        for id in ids {
            match (self.partition.group(id).cloned(), self.groups.get_mut(&id)) {
                (Some(g), Some(rt)) => rt.state.sync(&g),
                (Some(g), None) => {
                    self.start_group(&g, now);
                    self.report.group_count.push((now.as_secs(), self.partition.group_count()));
                }
                (None, Some(_)) => {
                    self.drop_group(id);
                    self.report.group_count.push((now.as_secs(), self.partition.group_count()));
                }
                (None, None) => {}
            }
        }
    }

    fn on_mobility(&mut self) {
        let now = self.now();
        let dt = self.cfg.engine.mobility_tick;
        let s = &self.cfg.scenario;
        step_mobility(&mut self.devices, dt, s.speed_variance, s.area_side, &mut self.mobility_rng);
        self.queue.push(now + SimTime::from_secs(dt), EventKind::MobilityTick);
    }

    /// Regroups every device from current positions and device-side CSI.
    /// Cycles in progress are abandoned; payloads collected but not yet
    /// granted go back to their devices.
    fn on_global_update(&mut self) {
        let now = self.now();
        let ids: Vec<GroupId> = self.groups.keys().copied().collect();
        for id in ids {
            self.drop_group(id);
        }
        self.generation += 1;
        self.partition = {
            let csi = device_csi(&self.devices, &self.link, &self.estimator);
            global_group_update(
                &self.devices,
                &csi,
                self.cfg.clustering.max_group_size,
                &self.history,
                &self.policy,
                &CapacityKMeans::default(),
                &mut self.clustering_rng,
            )
        };
        self.start_all_groups();
        self.queue.push(now + SimTime::from_secs(self.cfg.engine.update_interval), EventKind::GlobalUpdateTick);
    }

    fn finish(&mut self) {
        for rt in self.groups.values() {
            if rt.in_ra {
                self.report.unfinished_cycles += 1;
            }
            for &(d, a) in &rt.staged {
                self.pending[d as usize].push(a);
            }
        }
        let horizon = self.horizon;
        let open = self.open_accesses.iter().map(|&a| self.accesses[a as usize].arrival);
        for a in self.pending.iter().flatten().copied().chain(open) {
            self.report.censored.add((horizon - a).as_secs());
        }
        self.report.pending = self.report.censored.count;
    }
}
