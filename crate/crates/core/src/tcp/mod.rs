//! TCP sender and receiver state machines.
//!
//! Four congestion-control variants share one sender implementation:
//!
//! * `Vanilla`: slow start, congestion avoidance, coarse retransmission
//!   timeout with go-back-N.
//! * `Reno`: adds fast retransmit and fast recovery with window inflation.
//!   Any new ACK ends recovery.
//! * `NewReno`: recovery lasts until everything sent before the loss was
//!   detected is acknowledged; each partial ACK retransmits the next hole.
//! * `Sack`: the receiver reports out-of-order blocks, the sender keeps a
//!   scoreboard and gates recovery transmissions on the `pipe` estimate.
//!
//! All quantities are bytes except the RTT estimator, which counts ticks of
//! the coarse retransmission clock.

mod receiver;
mod rtt;
mod scoreboard;
mod sender;

use std::fmt;
use std::str::FromStr;

use arrayvec::ArrayVec;

pub use receiver::{ReceiveOutcome, TcpReceiver};
pub use rtt::RttEstimator;
pub use scoreboard::Scoreboard;
pub use sender::{CwndChange, CwndEvent, SenderConfig, SenderStats, TcpSender};

use crate::adaptation::VcId;

/// Maximum SACK blocks carried by one ACK.
pub const MAX_SACK_BLOCKS: usize = 3;

/// Duplicate ACKs that trigger fast retransmit.
pub const DUPACK_THRESHOLD: u32 = 3;

pub type SackBlocks = ArrayVec<(u64, u64), MAX_SACK_BLOCKS>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TcpSegment {
    pub vc: VcId,
    /// Sequence number of the first data byte.
    pub seq: u64,
    pub data_len: u32,
    /// Cumulative acknowledgment (next byte expected by the sender of this
    /// segment). Only meaningful on ACKs.
    pub ack: u64,
    pub sack_blocks: SackBlocks,
}

impl TcpSegment {
    pub fn data(vc: VcId, seq: u64, data_len: u32) -> Self {
        TcpSegment {
            vc,
            seq,
            data_len,
            ack: 0,
            sack_blocks: SackBlocks::new(),
        }
    }

    pub fn ack(vc: VcId, ack: u64) -> Self {
        TcpSegment {
            vc,
            seq: 0,
            data_len: 0,
            ack,
            sack_blocks: SackBlocks::new(),
        }
    }

    pub fn end(&self) -> u64 {
        self.seq + self.data_len as u64
    }

    /// TCP option bytes on the wire: the SACK option is 2 + 8 per block,
    /// padded to a 4-byte boundary.
    pub fn option_bytes(&self) -> u64 {
        if self.sack_blocks.is_empty() {
            0
        } else {
            (2 + 8 * self.sack_blocks.len() as u64).next_multiple_of(4)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CcVariant {
    Vanilla,
    Reno,
    NewReno,
    Sack,
}

impl CcVariant {
    pub const ALL: [CcVariant; 4] = [CcVariant::Vanilla, CcVariant::Reno, CcVariant::NewReno, CcVariant::Sack];

    pub fn as_str(self) -> &'static str {
        match self {
            CcVariant::Vanilla => "vanilla",
            CcVariant::Reno => "reno",
            CcVariant::NewReno => "newreno",
            CcVariant::Sack => "sack",
        }
    }

    pub fn uses_fast_retransmit(self) -> bool {
        self != CcVariant::Vanilla
    }

    /// Whether recovery lasts until the `recover` point is acknowledged.
    pub fn uses_recover_point(self) -> bool {
        matches!(self, CcVariant::NewReno | CcVariant::Sack)
    }
}

impl fmt::Display for CcVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CcVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(CcVariant::Vanilla),
            "reno" => Ok(CcVariant::Reno),
            "newreno" => Ok(CcVariant::NewReno),
            "sack" => Ok(CcVariant::Sack),
            other => Err(format!("expected vanilla | reno | newreno | sack, got `{other}`")),
        }
    }
}
