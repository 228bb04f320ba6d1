//! Aggregated uplink/downlink frame codec.
//!
//! Layout (all multi-byte fields big-endian):
//!
//! ```text
//! header    group_id u32 | cycle_seq u32 | direction u8 | signaling_count u16 | data_count u16
//! signaling signaling_count x (kind u8 | subject u32 | detail_len u16 | detail)
//! data      data_count x (device u32 | payload_len u16 | payload)
//! ```
//!
//! Segments are length-prefixed, so a frame is exactly as long as its
//! declared contents. Direction 0 is uplink, 1 is downlink.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::DeviceId;

pub const HEADER_LEN: usize = 13;
pub const SIGNALING_OVERHEAD: usize = 7;
pub const DATA_OVERHEAD: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Uplink = 0,
    Downlink = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SignalingKind {
    LeaveRequest = 0,
    LinkReport = 1,
    JoinRequest = 2,
    Ack = 3,
    UpdateCommand = 4,
    JoinCommand = 5,
}

impl SignalingKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        use SignalingKind::*;
        Some(match b {
            0 => LeaveRequest,
            1 => LinkReport,
            2 => JoinRequest,
            3 => Ack,
            4 => UpdateCommand,
            5 => JoinCommand,
            _ => return None,
        })
    }

    /// The only direction this kind may travel in.
    pub fn direction(self) -> Direction {
        match self {
            SignalingKind::LeaveRequest | SignalingKind::LinkReport | SignalingKind::JoinRequest => Direction::Uplink,
            _ => Direction::Downlink,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalingMessage {
    pub kind: SignalingKind,
    pub subject: DeviceId,
    pub detail: Vec<u8>,
}

impl SignalingMessage {
    pub fn new(kind: SignalingKind, subject: DeviceId, detail: Vec<u8>) -> Self {
        SignalingMessage { kind, subject, detail }
    }

    /// GM `subject` lost its D2D link to coordinator `gc` for `missed` cycles.
    pub fn link_report(subject: DeviceId, gc: DeviceId, missed: u32) -> Self {
        let mut detail = gc.to_be_bytes().to_vec();
        detail.extend_from_slice(&missed.to_be_bytes());
        Self::new(SignalingKind::LinkReport, subject, detail)
    }

    pub fn ack(subject: DeviceId, acked: SignalingKind) -> Self {
        Self::new(SignalingKind::Ack, subject, vec![acked as u8])
    }

    /// Tells `subject` to move to `group` coordinated by `gc`.
    pub fn join_command(subject: DeviceId, group: u32, gc: DeviceId) -> Self {
        let mut detail = group.to_be_bytes().to_vec();
        detail.extend_from_slice(&gc.to_be_bytes());
        Self::new(SignalingKind::JoinCommand, subject, detail)
    }

    /// Announces that `subject` is the new coordinator of `group`.
    pub fn update_command(subject: DeviceId, group: u32) -> Self {
        Self::new(SignalingKind::UpdateCommand, subject, group.to_be_bytes().to_vec())
    }

    /// First big-endian u32 of the detail field, if present.
    pub fn detail_u32(&self) -> Option<u32> {
        self.detail.get(..4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn encoded_len(&self) -> usize {
        SIGNALING_OVERHEAD + self.detail.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRecord {
    pub device: DeviceId,
    pub payload: Vec<u8>,
}

impl DataRecord {
    pub fn encoded_len(&self) -> usize {
        DATA_OVERHEAD + self.payload.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub group_id: u32,
    pub cycle_seq: u32,
    pub direction: Direction,
}

/// One aggregated packet. Header counts are derived from the segment vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedFrame {
    pub header: FrameHeader,
    pub signaling: Vec<SignalingMessage>,
    pub data: Vec<DataRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameErrorKind {
    #[error("input ends early, {needed} more bytes needed")]
    Truncated { needed: usize },
    #[error("unknown direction byte {0:#04x}")]
    UnknownDirection(u8),
    #[error("unknown signaling kind byte {0:#04x}")]
    UnknownKind(u8),
    #[error("{kind:?} may not travel {direction:?}")]
    WrongDirection { kind: SignalingKind, direction: Direction },
    #[error("{0} trailing bytes after the declared contents")]
    TrailingBytes(usize),
    #[error("{what} does not fit a 16-bit field")]
    TooLarge { what: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("frame error at offset {offset}: {kind}")]
pub struct FrameError {
    pub offset: usize,
    pub kind: FrameErrorKind,
}

impl AggregatedFrame {
    pub fn empty(direction: Direction, group_id: u32, cycle_seq: u32) -> Self {
        AggregatedFrame {
            header: FrameHeader { group_id, cycle_seq, direction },
            signaling: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self.signaling.iter().map(SignalingMessage::encoded_len).sum::<usize>()
            + self.data.iter().map(DataRecord::encoded_len).sum::<usize>()
    }

    pub fn signaling_len(&self) -> usize {
        self.signaling.iter().map(SignalingMessage::encoded_len).sum()
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        let too_large = |what| FrameError { offset: 0, kind: FrameErrorKind::TooLarge { what } };
        let sig_count = u16::try_from(self.signaling.len()).map_err(|_| too_large("signaling_count"))?;
        let data_count = u16::try_from(self.data.len()).map_err(|_| too_large("data_count"))?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.header.group_id.to_be_bytes());
        out.extend_from_slice(&self.header.cycle_seq.to_be_bytes());
        out.push(self.header.direction as u8);
        out.extend_from_slice(&sig_count.to_be_bytes());
        out.extend_from_slice(&data_count.to_be_bytes());
        for s in &self.signaling {
            if s.kind.direction() != self.header.direction {
                return Err(FrameError {
                    offset: out.len(),
                    kind: FrameErrorKind::WrongDirection { kind: s.kind, direction: self.header.direction },
                });
            }
            let len = u16::try_from(s.detail.len()).map_err(|_| too_large("detail_len"))?;
            out.push(s.kind as u8);
            out.extend_from_slice(&s.subject.to_be_bytes());
            out.extend_from_slice(&len.to_be_bytes());
            out.extend_from_slice(&s.detail);
        }
        for d in &self.data {
            let len = u16::try_from(d.payload.len()).map_err(|_| too_large("payload_len"))?;
            out.extend_from_slice(&d.device.to_be_bytes());
            out.extend_from_slice(&len.to_be_bytes());
            out.extend_from_slice(&d.payload);
        }
        Ok(out)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(FrameError { offset: self.pos, kind: FrameErrorKind::Truncated { needed: n - rest } });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FrameError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, FrameError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Strict inverse of [`AggregatedFrame::encode`].
pub fn parse_frame(bytes: &[u8]) -> Result<AggregatedFrame, FrameError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < HEADER_LEN {
        return Err(FrameError { offset: bytes.len(), kind: FrameErrorKind::Truncated { needed: HEADER_LEN - bytes.len() } });
    }
    let group_id = r.u32()?;
    let cycle_seq = r.u32()?;
    let dir_at = r.pos;
    let direction = match r.u8()? {
        0 => Direction::Uplink,
        1 => Direction::Downlink,
        b => return Err(FrameError { offset: dir_at, kind: FrameErrorKind::UnknownDirection(b) }),
    };
    let sig_count = r.u16()?;
    let data_count = r.u16()?;

    let mut signaling = Vec::with_capacity(sig_count as usize);
    for _ in 0..sig_count {
        let at = r.pos;
        let byte = r.u8()?;
        let kind = SignalingKind::from_byte(byte).ok_or(FrameError { offset: at, kind: FrameErrorKind::UnknownKind(byte) })?;
        if kind.direction() != direction {
            return Err(FrameError { offset: at, kind: FrameErrorKind::WrongDirection { kind, direction } });
        }
        let subject = r.u32()?;
        let len = r.u16()? as usize;
        let detail = r.take(len)?.to_vec();
        signaling.push(SignalingMessage { kind, subject, detail });
    }
    let mut data = Vec::with_capacity(data_count as usize);
    for _ in 0..data_count {
        let device = r.u32()?;
        let len = r.u16()? as usize;
        let payload = r.take(len)?.to_vec();
        data.push(DataRecord { device, payload });
    }
    if r.pos != bytes.len() {
        return Err(FrameError { offset: r.pos, kind: FrameErrorKind::TrailingBytes(bytes.len() - r.pos) });
    }
    Ok(AggregatedFrame { header: FrameHeader { group_id, cycle_seq, direction }, signaling, data })
}

/// Downlink frame for one group: acknowledgments and commands first in the
/// given order, then downlink payloads.
pub fn build_downlink_frame(
    group_id: u32,
    cycle_seq: u32,
    acks: Vec<SignalingMessage>,
    commands: Vec<SignalingMessage>,
    payloads: Vec<DataRecord>,
) -> AggregatedFrame {
    let mut signaling = acks;
    signaling.extend(commands);
    AggregatedFrame {
        header: FrameHeader { group_id, cycle_seq, direction: Direction::Downlink },
        signaling,
        data: payloads,
    }
}
