use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::exception::ExceptionDetector;
use super::frame::{AggregatedFrame, DataRecord, Direction, FrameHeader, SignalingKind, SignalingMessage};
use super::{D2dLinks, ProtocolConfig};
use crate::clustering::{Group, GroupId};
use crate::scenario::DeviceId;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CyclePhase {
    DataAggregation,
    RandomAccess,
    AggregatedUplink,
    Guard,
    AggregatedDownlink,
    DataDistribution,
}

impl CyclePhase {
    pub fn next(self) -> Self {
        use CyclePhase::*;
        match self {
            DataAggregation => RandomAccess,
            RandomAccess => AggregatedUplink,
            AggregatedUplink => Guard,
            Guard => AggregatedDownlink,
            AggregatedDownlink => DataDistribution,
            DataDistribution => DataAggregation,
        }
    }

    pub fn abbrev(self) -> &'static str {
        use CyclePhase::*;
        match self {
            DataAggregation => "DA",
            RandomAccess => "RA",
            AggregatedUplink => "AUT",
            Guard => "G",
            AggregatedDownlink => "ADT",
            DataDistribution => "DD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RaState {
    Idle,
    Contending,
    Granted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessResult {
    Granted,
    Collided,
    /// No response from the base station: the coordinator's macro link is down.
    NoResponse,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CycleInput {
    /// The current phase's deadline passed. `offers` are the payloads members
    /// hold at the end of DA; `downlink` is the base station's frame for
    /// this group at the end of G.
    Deadline { offers: Vec<DataRecord>, downlink: Option<AggregatedFrame> },
    Access(AccessResult),
}

impl CycleInput {
    pub fn deadline() -> Self {
        CycleInput::Deadline { offers: Vec::new(), downlink: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CycleAction {
    ScheduleDeadline(SimTime),
    /// Enqueue one RaAttempt for the coordinator.
    RequestAccess,
    /// Retry the pending attempt after the RACH retry delay.
    RetryAccess,
    /// Payload of `device` staged at the coordinator.
    Collected(DeviceId),
    /// `device` offered data but the D2D exchange failed; it keeps the data.
    CollectionFailed(DeviceId),
    /// GM went `fallback_cycles` cycles without service.
    Orphaned(DeviceId),
    /// No RA response for `fallback_cycles` cycles.
    MacroLinkCollapse(DeviceId),
    UplinkDelivered(AggregatedFrame),
    /// Base-station processing window for group management.
    ReserveProcessing { until: SimTime },
    DownlinkReceived(AggregatedFrame),
    Distributed { delivered: Vec<DeviceId>, failed: Vec<DeviceId> },
    CycleCompleted { cycle_seq: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("group {group}: {input} is not valid in phase {phase}")]
    UnexpectedInput { group: GroupId, phase: &'static str, input: &'static str },
    #[error("group {group}: {phase} without granted access")]
    NotGranted { group: GroupId, phase: &'static str },
}

/// Protocol state of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCycleState {
    pub group_id: GroupId,
    pub cycle_seq: u32,
    pub phase: CyclePhase,
    pub phase_deadline: SimTime,
    pub gc: DeviceId,
    pub members: Vec<DeviceId>,
    pub aggregated_uplink: Vec<DataRecord>,
    pub pending_signaling: Vec<SignalingMessage>,
    pub ra_state: RaState,
    pub downlink: Option<AggregatedFrame>,
    pub detector: ExceptionDetector,
    ra_silent_cycles: u32,
    ra_silence_reported: bool,
}

impl GroupCycleState {
    /// A fresh group entering DA at `start`.
    pub fn new(group: &Group, start: SimTime, config: &ProtocolConfig) -> Self {
        GroupCycleState {
            group_id: group.group_id,
            cycle_seq: 0,
            phase: CyclePhase::DataAggregation,
            phase_deadline: start + config.phase_length(CyclePhase::DataAggregation),
            gc: group.gc,
            members: group.members.iter().copied().collect(),
            aggregated_uplink: Vec::new(),
            pending_signaling: Vec::new(),
            ra_state: RaState::Idle,
            downlink: None,
            detector: ExceptionDetector::new(config.miss_threshold, config.fallback_cycles),
            ra_silent_cycles: 0,
            ra_silence_reported: false,
        }
    }

    /// Adopts the current membership and coordinator of `group`.
    pub fn sync(&mut self, group: &Group) {
        if group.gc != self.gc {
            self.ra_silent_cycles = 0;
            self.ra_silence_reported = false;
        }
        self.gc = group.gc;
        self.members = group.members.iter().copied().collect();
        self.detector.retain(|d| group.members.contains(&d) && d != group.gc);
    }

    pub fn group_size(&self) -> usize {
        self.members.len()
    }

    pub fn gms(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.members.iter().copied().filter(move |&m| m != self.gc)
    }

    fn unexpected(&self, input: &'static str) -> ProtocolError {
        ProtocolError::UnexpectedInput { group: self.group_id, phase: self.phase.abbrev(), input }
    }
}

/// Uplink frame: staged payloads in ascending device id (stable for one
/// device's multiple records), pending uplink signaling in arrival order.
pub fn build_uplink_frame(state: &GroupCycleState) -> Result<AggregatedFrame, ProtocolError> {
    if state.phase != CyclePhase::AggregatedUplink {
        return Err(state.unexpected("build_uplink_frame"));
    }
    if state.ra_state != RaState::Granted {
        return Err(ProtocolError::NotGranted { group: state.group_id, phase: "AUT" });
    }
    let mut data = state.aggregated_uplink.clone();
    data.sort_by_key(|r| r.device);
    let signaling = state
        .pending_signaling
        .iter()
        .filter(|s| s.kind.direction() == Direction::Uplink)
        .cloned()
        .collect();
    Ok(AggregatedFrame {
        header: FrameHeader { group_id: state.group_id, cycle_seq: state.cycle_seq, direction: Direction::Uplink },
        signaling,
        data,
    })
}

fn enter(state: &mut GroupCycleState, phase: CyclePhase, now: SimTime, config: &ProtocolConfig, actions: &mut Vec<CycleAction>) {
    state.phase = phase;
    if phase != CyclePhase::RandomAccess {
        state.phase_deadline = now + config.phase_length(phase);
        actions.push(CycleAction::ScheduleDeadline(state.phase_deadline));
    }
}

/// Drives one group's cycle by one step.
///
/// Deadlines advance DA, AUT, G, ADT and DD. The RA phase has no deadline
/// and only moves on an [`AccessResult`]; collisions stall it.
pub fn advance_cycle(
    state: &mut GroupCycleState,
    now: SimTime,
    input: CycleInput,
    links: &mut dyn D2dLinks,
    config: &ProtocolConfig,
) -> Result<Vec<CycleAction>, ProtocolError> {
    use CyclePhase::*;
    let mut actions = Vec::new();
    match (state.phase, input) {
        (DataAggregation, CycleInput::Deadline { offers, .. }) => {
            let size = state.group_size();
            let gms: Vec<DeviceId> = state.gms().collect();
            let mut received = Vec::with_capacity(gms.len());
            for &gm in &gms {
                if links.exchange(gm, state.gc, size) {
                    received.push(gm);
                }
            }
            for offer in offers {
                if offer.device == state.gc || received.binary_search(&offer.device).is_ok() {
                    actions.push(CycleAction::Collected(offer.device));
                    state.aggregated_uplink.push(offer);
                } else {
                    actions.push(CycleAction::CollectionFailed(offer.device));
                }
            }
            let (reports, orphans) = state.detector.observe(&gms, &received, state.gc);
            state.pending_signaling.extend(reports);
            actions.extend(orphans.into_iter().map(CycleAction::Orphaned));
            state.ra_state = RaState::Contending;
            enter(state, RandomAccess, now, config, &mut actions);
            actions.push(CycleAction::RequestAccess);
        }
        (RandomAccess, CycleInput::Access(result)) => match result {
            AccessResult::Granted => {
                state.ra_state = RaState::Granted;
                state.ra_silent_cycles = 0;
                state.ra_silence_reported = false;
                enter(state, AggregatedUplink, now, config, &mut actions);
            }
            AccessResult::Collided => actions.push(CycleAction::RetryAccess),
            AccessResult::NoResponse => {
                state.ra_silent_cycles += 1;
                if state.ra_silent_cycles >= config.fallback_cycles && !state.ra_silence_reported {
                    state.ra_silence_reported = true;
                    actions.push(CycleAction::MacroLinkCollapse(state.gc));
                }
                actions.push(CycleAction::RetryAccess);
            }
        },
        (AggregatedUplink, CycleInput::Deadline { .. }) => {
            let frame = build_uplink_frame(state)?;
            state.aggregated_uplink.clear();
            state.pending_signaling.retain(|s| s.kind.direction() != Direction::Uplink);
            actions.push(CycleAction::UplinkDelivered(frame));
            enter(state, Guard, now, config, &mut actions);
            actions.push(CycleAction::ReserveProcessing { until: state.phase_deadline });
        }
        (Guard, CycleInput::Deadline { downlink, .. }) => {
            let frame = downlink.unwrap_or_else(|| AggregatedFrame::empty(Direction::Downlink, state.group_id, state.cycle_seq));
            state.downlink = Some(frame);
            enter(state, AggregatedDownlink, now, config, &mut actions);
        }
        (AggregatedDownlink, CycleInput::Deadline { .. }) => {
            if state.ra_state != RaState::Granted {
                return Err(ProtocolError::NotGranted { group: state.group_id, phase: "ADT" });
            }
            let frame = state.downlink.clone().expect("downlink stored when entering ADT");
            actions.push(CycleAction::DownlinkReceived(frame));
            state.ra_state = RaState::Idle;
            enter(state, DataDistribution, now, config, &mut actions);
        }
        (DataDistribution, CycleInput::Deadline { .. }) => {
            let frame = state.downlink.take().unwrap_or_else(|| AggregatedFrame::empty(Direction::Downlink, state.group_id, state.cycle_seq));
            let mut targets: Vec<DeviceId> = frame
                .data
                .iter()
                .map(|d| d.device)
                .chain(frame.signaling.iter().filter(|s| s.kind != SignalingKind::Ack).map(|s| s.subject))
                .filter(|&d| d != state.gc && state.members.contains(&d))
                .collect();
            targets.sort_unstable();
            targets.dedup();
            let size = state.group_size();
            let (mut delivered, mut failed) = (Vec::new(), Vec::new());
            for gm in targets {
                if links.exchange(gm, state.gc, size) {
                    delivered.push(gm);
                } else {
                    failed.push(gm);
                }
            }
            actions.push(CycleAction::Distributed { delivered, failed });
            actions.push(CycleAction::CycleCompleted { cycle_seq: state.cycle_seq });
            state.cycle_seq = state.cycle_seq.wrapping_add(1);
            enter(state, DataAggregation, now, config, &mut actions);
        }
        (_, CycleInput::Access(_)) => return Err(state.unexpected("access result")),
        (RandomAccess, CycleInput::Deadline { .. }) => return Err(state.unexpected("deadline")),
    }
    Ok(actions)
}
