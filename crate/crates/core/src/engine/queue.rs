use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::clustering::GroupId;
use crate::scenario::DeviceId;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Arrival { device: DeviceId },
    /// Resolution of RACH slot `slot`, fired at the slot's end.
    RachSlot { slot: u64 },
    SibBroadcast,
    PhaseDeadline { group: GroupId, generation: u32 },
    MobilityTick,
    GlobalUpdateTick,
    BackoffExpiry { target: Backoff },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backoff {
    /// EAB barring ran out; the access re-gates at the next SIB.
    Barring { access: u32 },
    /// Collision retry delay of an individual access ran out.
    Retry { access: u32 },
    /// Collision retry delay of a group coordinator ran out.
    GroupRetry { group: GroupId, generation: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub epoch: SimTime,
    pub sequence: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap.
        (other.epoch, other.sequence).cmp(&(self.epoch, self.sequence))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue on `(epoch, sequence)`. Sequence numbers are handed out in
/// push order, so simultaneous events run first-scheduled first.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_sequence: u64,
    now: SimTime,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn push(&mut self, epoch: SimTime, kind: EventKind) {
        debug_assert!(epoch >= self.now, "event scheduled in the past");
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Event { epoch: epoch.max(self.now), sequence, kind });
    }

    /// Next event strictly before `horizon`.
    pub fn pop_before(&mut self, horizon: SimTime) -> Option<Event> {
        if self.heap.peek()?.epoch >= horizon {
            return None;
        }
        let e = self.heap.pop()?;
        self.now = e.epoch;
        Some(e)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
