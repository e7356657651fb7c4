//! Binary framing for sensing control messages.
//!
//! Every frame starts with a fixed 16-byte big-endian header:
//!
//! ```text
//! 0        1          2           3          4..8     8..12  12..16
//! version | msg_type | src_layer | reserved | dst_id | seq  | timestamp_ps_low32
//! ```
//!
//! followed by a body whose layout depends on `msg_type` (see `docs/wire-format.md`).
//! Decoding is strict: unknown types, non-zero reserved bits, trailing bytes and
//! out-of-range enumerations are rejected, so any accepted frame re-encodes to
//! the same bytes.

use thiserror::Error;

use crate::fscd::{check_windows, FscdState, ObscuringWindow};
use crate::sim::SimTime;

use super::{Layer, Policy};

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;
/// `device_id` value addressing every agent under the receiving controller.
pub const ALL_DEVICES: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
}

fn malformed<T>(msg: impl Into<String>) -> Result<T, CodecError> {
    Err(CodecError::MalformedFrame(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MsgType {
    PolicySet = 1,
    PolicyAck = 2,
    AlertPulse = 3,
    StateReport = 4,
    StateCmd = 5,
}

impl MsgType {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            1 => MsgType::PolicySet,
            2 => MsgType::PolicyAck,
            3 => MsgType::AlertPulse,
            4 => MsgType::StateReport,
            5 => MsgType::StateCmd,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum AckStatus {
    Applied = 0,
    Rejected = 1,
}

/// What a STATE_CMD asks the agent to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StateAction {
    Set(FscdState),
    /// Disable backscatter sensing, keeping the current SoP setting.
    BlockBls,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    PolicySet(Policy),
    PolicyAck { path_id: u32, acked_seq: u32, status: AckStatus },
    AlertPulse {
        device_id: u32,
        interrogator_id: u32,
        pulse_power_mdbm: i32,
        detected_at: SimTime,
        trigger_id: u32,
    },
    StateReport { device_id: u32, state: FscdState },
    StateCmd { device_id: u32, action: StateAction, origin: Layer, trigger_id: u32 },
}

impl Body {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Body::PolicySet(_) => MsgType::PolicySet,
            Body::PolicyAck { .. } => MsgType::PolicyAck,
            Body::AlertPulse { .. } => MsgType::AlertPulse,
            Body::StateReport { .. } => MsgType::StateReport,
            Body::StateCmd { .. } => MsgType::StateCmd,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlMessage {
    pub src_layer: Layer,
    pub dst_id: u32,
    pub seq: u32,
    /// Sender clock, truncated to 32 bits of picoseconds (wraps every ~4.3 ms).
    pub timestamp_ps_low32: u32,
    pub body: Body,
}

impl ControlMessage {
    pub fn stamp(t: SimTime) -> u32 {
        (t.as_ps() as u64 & 0xFFFF_FFFF) as u32
    }

    pub fn msg_type(&self) -> MsgType {
        self.body.msg_type()
    }
}

pub fn encode_message(msg: &ControlMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 32);
    out.push(WIRE_VERSION);
    out.push(msg.msg_type() as u8);
    out.push(msg.src_layer as u8);
    out.push(0);
    out.extend_from_slice(&msg.dst_id.to_be_bytes());
    out.extend_from_slice(&msg.seq.to_be_bytes());
    out.extend_from_slice(&msg.timestamp_ps_low32.to_be_bytes());
    match &msg.body {
        Body::PolicySet(p) => {
            out.extend_from_slice(&p.path_id.to_be_bytes());
            out.push(u8::from(p.sops_allowed) | (u8::from(p.bls_allowed) << 1));
            out.extend_from_slice(&(p.obscured_sections.len() as u16).to_be_bytes());
            for w in &p.obscured_sections {
                out.extend_from_slice(&(w.delay.as_ps() as u64).to_be_bytes());
                out.extend_from_slice(&(w.duration.as_ps() as u64).to_be_bytes());
            }
            out.extend_from_slice(&(p.interrogators.len() as u16).to_be_bytes());
            for i in &p.interrogators {
                out.extend_from_slice(&i.to_be_bytes());
            }
        }
        Body::PolicyAck { path_id, acked_seq, status } => {
            out.extend_from_slice(&path_id.to_be_bytes());
            out.extend_from_slice(&acked_seq.to_be_bytes());
            out.push(*status as u8);
        }
        Body::AlertPulse { device_id, interrogator_id, pulse_power_mdbm, detected_at, trigger_id } => {
            out.extend_from_slice(&device_id.to_be_bytes());
            out.extend_from_slice(&interrogator_id.to_be_bytes());
            out.extend_from_slice(&pulse_power_mdbm.to_be_bytes());
            out.extend_from_slice(&(detected_at.as_ps() as u64).to_be_bytes());
            out.extend_from_slice(&trigger_id.to_be_bytes());
        }
        Body::StateReport { device_id, state } => {
            out.extend_from_slice(&device_id.to_be_bytes());
            out.push(state.code());
        }
        Body::StateCmd { device_id, action, origin, trigger_id } => {
            out.extend_from_slice(&device_id.to_be_bytes());
            let (a, s) = match action {
                StateAction::Set(s) => (0u8, s.code()),
                StateAction::BlockBls => (1u8, 0u8),
            };
            out.push(a);
            out.push(s);
            out.push(*origin as u8);
            out.extend_from_slice(&trigger_id.to_be_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CodecError> {
        if self.buf.len() - self.pos < n {
            return malformed(format!("truncated {what}"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CodecError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn i32(&mut self, what: &str) -> Result<i32, CodecError> {
        Ok(i32::from_be_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn time(&mut self, what: &str) -> Result<SimTime, CodecError> {
        let v = u64::from_be_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        if v > i64::MAX as u64 {
            return malformed(format!("{what} out of range"));
        }
        Ok(SimTime::from_ps(v as i64))
    }

    fn finish(&self) -> Result<(), CodecError> {
        if self.pos != self.buf.len() {
            return malformed(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

fn state_from(code: u8) -> Result<FscdState, CodecError> {
    FscdState::from_code(code).ok_or_else(|| CodecError::MalformedFrame(format!("state {code}")))
}

fn layer_from(code: u8) -> Result<Layer, CodecError> {
    Layer::from_u8(code).ok_or_else(|| CodecError::MalformedFrame(format!("layer {code}")))
}

pub fn decode_message(bytes: &[u8]) -> Result<ControlMessage, CodecError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let version = r.u8("header")?;
    if bytes.len() < HEADER_LEN {
        return malformed("truncated header");
    }
    if version != WIRE_VERSION {
        return malformed(format!("unsupported version {version:#04x}"));
    }
    let raw_type = r.u8("header")?;
    let msg_type =
        MsgType::from_u8(raw_type).ok_or_else(|| CodecError::MalformedFrame(format!("msg_type {raw_type}")))?;
    let src_layer = layer_from(r.u8("header")?)?;
    if r.u8("header")? != 0 {
        return malformed("reserved byte set");
    }
    let dst_id = r.u32("header")?;
    let seq = r.u32("header")?;
    let timestamp_ps_low32 = r.u32("header")?;

    let body = match msg_type {
        MsgType::PolicySet => {
            let path_id = r.u32("policy")?;
            let flags = r.u8("policy flags")?;
            if flags & !0b11 != 0 {
                return malformed(format!("policy flags {flags:#04x}"));
            }
            let n_windows = r.u16("window count")?;
            let mut obscured_sections = Vec::with_capacity(n_windows as usize);
            for _ in 0..n_windows {
                let delay = r.time("window delay")?;
                let duration = r.time("window duration")?;
                obscured_sections.push(ObscuringWindow { delay, duration });
            }
            check_windows(&obscured_sections).map_err(CodecError::MalformedFrame)?;
            let n_ids = r.u16("interrogator count")?;
            let interrogators =
                (0..n_ids).map(|_| r.u32("interrogator")).collect::<Result<Vec<_>, _>>()?;
            Body::PolicySet(Policy {
                path_id,
                sops_allowed: flags & 1 != 0,
                bls_allowed: flags & 2 != 0,
                obscured_sections,
                interrogators,
            })
        }
        MsgType::PolicyAck => {
            let path_id = r.u32("ack")?;
            let acked_seq = r.u32("ack")?;
            let status = match r.u8("ack status")? {
                0 => AckStatus::Applied,
                1 => AckStatus::Rejected,
                s => return malformed(format!("ack status {s}")),
            };
            Body::PolicyAck { path_id, acked_seq, status }
        }
        MsgType::AlertPulse => Body::AlertPulse {
            device_id: r.u32("alert")?,
            interrogator_id: r.u32("alert")?,
            pulse_power_mdbm: r.i32("alert")?,
            detected_at: r.time("alert time")?,
            trigger_id: r.u32("alert")?,
        },
        MsgType::StateReport => Body::StateReport {
            device_id: r.u32("report")?,
            state: state_from(r.u8("report state")?)?,
        },
        MsgType::StateCmd => {
            let device_id = r.u32("command")?;
            let a = r.u8("command action")?;
            let s = r.u8("command state")?;
            let action = match a {
                0 => StateAction::Set(state_from(s)?),
                1 if s == 0 => StateAction::BlockBls,
                _ => return malformed(format!("command action {a} state {s}")),
            };
            let origin = layer_from(r.u8("command origin")?)?;
            let trigger_id = r.u32("command trigger")?;
            Body::StateCmd { device_id, action, origin, trigger_id }
        }
    };
    r.finish()?;
    Ok(ControlMessage { src_layer, dst_id, seq, timestamp_ps_low32, body })
}
