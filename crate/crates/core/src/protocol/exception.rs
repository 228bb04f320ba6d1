use std::collections::BTreeMap;

use super::frame::{SignalingKind, SignalingMessage};
use crate::clustering::{GcHistory, GcPolicy, GroupId, LossTable, Partition};
use crate::scenario::DeviceId;

/// Consecutive-miss bookkeeping for the GMs of one group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExceptionDetector {
    miss_threshold: u32,
    fallback_cycles: u32,
    misses: BTreeMap<DeviceId, u32>,
}

impl ExceptionDetector {
    pub fn new(miss_threshold: u32, fallback_cycles: u32) -> Self {
        ExceptionDetector { miss_threshold: miss_threshold.max(1), fallback_cycles: fallback_cycles.max(1), misses: BTreeMap::new() }
    }

    pub fn misses(&self, gm: DeviceId) -> u32 {
        self.misses.get(&gm).copied().unwrap_or(0)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(DeviceId) -> bool) {
        self.misses.retain(|&d, _| keep(d));
    }

    /// Updates counters for one DA round. Returns the link reports to queue
    /// (one per GM whose counter just reached the miss threshold) and the
    /// GMs whose counter just reached the fallback limit.
    pub fn observe(&mut self, expected: &[DeviceId], received: &[DeviceId], gc: DeviceId) -> (Vec<SignalingMessage>, Vec<DeviceId>) {
        let mut reports = Vec::new();
        let mut orphans = Vec::new();
        for &gm in expected {
            if received.contains(&gm) {
                self.misses.remove(&gm);
                continue;
            }
            let m = self.misses.entry(gm).or_insert(0);
            *m += 1;
            if *m == self.miss_threshold {
                reports.push(SignalingMessage::link_report(gm, gc, *m));
            }
            if *m == self.fallback_cycles {
                orphans.push(gm);
            }
        }
        (reports, orphans)
    }
}

/// One DA round of exception detection: link reports for GMs in
/// `expected \ received` whose miss counter reaches the threshold.
pub fn detect_d2d_exception(
    detector: &mut ExceptionDetector,
    expected: &[DeviceId],
    received: &[DeviceId],
    gc: DeviceId,
) -> Vec<SignalingMessage> {
    detector.observe(expected, received, gc).0
}

/// Effect of one signaling message on the partition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExceptionOutcome {
    /// Downlink messages to place in the next ADT of each group.
    pub downlink: Vec<(GroupId, SignalingMessage)>,
    /// `(device, left, joined)` for every membership change.
    pub moves: Vec<(DeviceId, Option<GroupId>, Option<GroupId>)>,
}

/// Applies a group-management message at the base station.
///
/// - `link_report`: the subject leaves its group and joins the best other
///   group; a `join_command` goes to that group and an `ack` to the
///   reporting one.
/// - `leave_request`: the subject leaves; its old group gets an `ack`.
/// - `join_request`: an unclustered subject joins; the receiving group gets
///   a `join_command`.
/// - `join_command` / `update_command`: applied to the partition directly
///   (subject moved into, or made coordinator of, the group in the detail).
///
/// A message about a device the partition does not know is logged and
/// ignored.
pub fn handle_exception_command(
    partition: &mut Partition,
    message: &SignalingMessage,
    sender: Option<GroupId>,
    csi: &dyn LossTable,
    history: &GcHistory,
    policy: &GcPolicy,
) -> ExceptionOutcome {
    let mut out = ExceptionOutcome::default();
    let subject = message.subject;
    if !partition.contains(subject) {
        tracing::warn!(subject, kind = ?message.kind, "group-management message for an unknown device");
        return out;
    }
    match message.kind {
        SignalingKind::LinkReport => {
            let old = partition.leave(subject, csi, history, policy);
            let new = partition.join_excluding(subject, old, csi, history, policy).ok();
            if let Some(g) = new {
                let gc = partition.group(g).map_or(subject, |g| g.gc);
                out.downlink.push((g, SignalingMessage::join_command(subject, g, gc)));
            }
            if let Some(s) = sender.or(old).filter(|g| partition.group(*g).is_some()) {
                out.downlink.push((s, SignalingMessage::ack(subject, SignalingKind::LinkReport)));
            }
            out.moves.push((subject, old, new));
        }
        SignalingKind::LeaveRequest => {
            let old = partition.leave(subject, csi, history, policy);
            if let Some(s) = sender.or(old).filter(|g| partition.group(*g).is_some()) {
                out.downlink.push((s, SignalingMessage::ack(subject, SignalingKind::LeaveRequest)));
            }
            out.moves.push((subject, old, None));
        }
        SignalingKind::JoinRequest => {
            if partition.group_of(subject).is_none() {
                if let Ok(g) = partition.join(subject, csi, history, policy) {
                    let gc = partition.group(g).map_or(subject, |g| g.gc);
                    out.downlink.push((g, SignalingMessage::join_command(subject, g, gc)));
                    out.moves.push((subject, None, Some(g)));
                }
            }
        }
        SignalingKind::JoinCommand => {
            let Some(target) = message.detail_u32() else {
                tracing::warn!(subject, "join_command without a group id");
                return out;
            };
            if partition.group_of(subject) == Some(target) {
                return out;
            }
            let old = partition.group_of(subject).and_then(|_| partition.leave(subject, csi, history, policy));
            if partition.assign(subject, target) {
                out.moves.push((subject, old, Some(target)));
            } else {
                tracing::warn!(subject, target, "join_command for a full or unknown group");
                out.moves.push((subject, old, None));
            }
        }
        SignalingKind::UpdateCommand => {
            let target = message.detail_u32().or(partition.group_of(subject));
            if let Some(g) = target {
                if !partition.set_gc(g, subject) {
                    tracing::warn!(subject, group = g, "update_command for a device outside the group");
                }
            }
        }
        SignalingKind::Ack => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::LinkBudget;
    use crate::clustering::CsiTable;
    use std::collections::BTreeSet;

    #[test]
    fn threshold_semantics() {
        let mut det = ExceptionDetector::new(2, 3);
        let expected = [1, 2, 3];
        assert!(detect_d2d_exception(&mut det, &expected, &expected, 0).is_empty());
        assert!(detect_d2d_exception(&mut det, &expected, &[1, 3], 0).is_empty());
        let r = detect_d2d_exception(&mut det, &expected, &[1, 3], 0);
        assert_eq!(r, vec![SignalingMessage::link_report(2, 0, 2)]);
        // Reported once; the third miss flags the orphan instead.
        let (r, orphans) = det.observe(&expected, &[1, 3], 0);
        assert!(r.is_empty());
        assert_eq!(orphans, vec![2]);
        // Receipt resets.
        detect_d2d_exception(&mut det, &expected, &expected, 0);
        assert_eq!(det.misses(2), 0);
    }

    fn fixture() -> (Partition, CsiTable, GcPolicy) {
        let mut csi = CsiTable::new();
        for a in 0..8u32 {
            for b in (a + 1)..8 {
                csi.insert(a, b, 60.0 + (a as f64 - b as f64).abs());
            }
        }
        let mut p = Partition::new(4);
        for d in 0..7 {
            p.add_unclustered(d);
        }
        let h = GcHistory::default();
        let pol = GcPolicy::new(LinkBudget::default(), 10.0);
        // Two groups: {0,1,2} and {3,4}.
        for d in [0, 1, 2] {
            p.join(d, &csi, &h, &pol).unwrap();
        }
        let g1 = p.join_excluding(3, Some(0), &csi, &h, &pol).unwrap();
        p.assign(4, g1);
        (p, csi, pol)
    }

    #[test]
    fn link_report_moves_member() {
        let (mut p, csi, pol) = fixture();
        let h = GcHistory::default();
        let old = p.group_of(2).unwrap();
        let out = handle_exception_command(&mut p, &SignalingMessage::link_report(2, 0, 2), Some(old), &csi, &h, &pol);
        let new = p.group_of(2).unwrap();
        assert_ne!(new, old);
        assert!(out.downlink.iter().any(|(g, m)| *g == new && m.kind == SignalingKind::JoinCommand && m.subject == 2));
        assert!(out.downlink.iter().any(|(g, m)| *g == old && m.kind == SignalingKind::Ack));
        let universe: BTreeSet<_> = (0..7).collect();
        p.check_invariants(&universe).unwrap();
    }

    #[test]
    fn unknown_subject_is_ignored() {
        let (mut p, csi, pol) = fixture();
        let before = p.clone();
        let out = handle_exception_command(&mut p, &SignalingMessage::link_report(99, 0, 2), None, &csi, &h(), &pol);
        assert_eq!(out, ExceptionOutcome::default());
        assert_eq!(p, before);
    }

    fn h() -> GcHistory {
        GcHistory::default()
    }

    #[test]
    fn commands_apply_directly() {
        let (mut p, csi, pol) = fixture();
        let g1 = p.group_of(3).unwrap();
        handle_exception_command(&mut p, &SignalingMessage::update_command(4, g1), None, &csi, &h(), &pol);
        assert_eq!(p.group(g1).unwrap().gc, 4);
        handle_exception_command(&mut p, &SignalingMessage::join_command(1, g1, 4), None, &csi, &h(), &pol);
        assert_eq!(p.group_of(1), Some(g1));
    }
}
