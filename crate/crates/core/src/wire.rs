//! 28-byte datagram exchanged between the plant and controller nodes.
//!
//! ```text
//! offset  size  field
//!      0     2  magic "NC" (0x4E 0x43)
//!      2     1  version (1)
//!      3     1  kind: 0 TICK, 1 SENSOR, 2 CONTROL, 3 DONE
//!      4     8  seq, u64 little-endian
//!     12     8  stamp, f64 little-endian (seconds of simulated time)
//!     20     8  value, f64 little-endian
//! ```

use thiserror::Error;

use crate::channel::Packet;

pub const WIRE_LEN: usize = 28;
pub const MAGIC: [u8; 2] = [0x4E, 0x43];
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum WireKind {
    Tick = 0,
    Sensor = 1,
    Control = 2,
    Done = 3,
}

impl TryFrom<u8> for WireKind {
    type Error = WireError;

    fn try_from(b: u8) -> Result<Self, WireError> {
        match b {
            0 => Ok(WireKind::Tick),
            1 => Ok(WireKind::Sensor),
            2 => Ok(WireKind::Control),
            3 => Ok(WireKind::Done),
            other => Err(WireError::UnknownKind(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WirePacket {
    pub kind: WireKind,
    pub seq: u64,
    pub stamp: f64,
    pub value: f64,
}

impl WirePacket {
    /// The master's per-period synchronization pulse.
    pub fn tick(period: u64, stamp: f64) -> Self {
        Self {
            kind: WireKind::Tick,
            seq: period,
            stamp,
            value: 0.0,
        }
    }

    pub fn done(seq: u64, stamp: f64) -> Self {
        Self {
            kind: WireKind::Done,
            seq,
            stamp,
            value: 0.0,
        }
    }

    pub fn from_packet(kind: WireKind, p: &Packet) -> Self {
        Self {
            kind,
            seq: p.seq,
            stamp: p.stamp,
            value: p.value,
        }
    }

    pub fn packet(&self) -> Packet {
        Packet {
            seq: self.seq,
            stamp: self.stamp,
            value: self.value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("bad length: {0} bytes, expected 28")]
    Length(usize),
    #[error("bad magic {0:02X?}")]
    Magic([u8; 2]),
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("unknown kind {0}")]
    UnknownKind(u8),
}

pub fn encode_wire(pkt: &WirePacket) -> [u8; WIRE_LEN] {
    let mut buf = [0u8; WIRE_LEN];
    buf[0..2].copy_from_slice(&MAGIC);
    buf[2] = VERSION;
    buf[3] = pkt.kind as u8;
    buf[4..12].copy_from_slice(&pkt.seq.to_le_bytes());
    buf[12..20].copy_from_slice(&pkt.stamp.to_le_bytes());
    buf[20..28].copy_from_slice(&pkt.value.to_le_bytes());
    buf
}

pub fn decode_wire(bytes: &[u8]) -> Result<WirePacket, WireError> {
    let buf: &[u8; WIRE_LEN] = bytes.try_into().map_err(|_| WireError::Length(bytes.len()))?;
    if buf[0..2] != MAGIC {
        return Err(WireError::Magic([buf[0], buf[1]]));
    }
    if buf[2] != VERSION {
        return Err(WireError::Version(buf[2]));
    }
    let kind = WireKind::try_from(buf[3])?;
    let word = |at: usize| -> [u8; 8] { buf[at..at + 8].try_into().expect("8-byte field") };
    Ok(WirePacket {
        kind,
        seq: u64::from_le_bytes(word(4)),
        stamp: f64::from_le_bytes(word(12)),
        value: f64::from_le_bytes(word(20)),
    })
}
