//! Performance metrics and the per-run byte ledger.

use std::fmt;

use crate::adaptation::{CELL_BYTES, CELL_PAYLOAD_BYTES, FRAME_OVERHEAD_BYTES};
use crate::engine::SimTime;
use crate::error::SimError;

/// Maximum TCP goodput C in Mbps over a link of `link_mbps` when every
/// segment carries `mss` data bytes.
pub fn max_tcp_throughput(link_mbps: f64, mss: u32) -> f64 {
    assert!(mss > 0, "mss must be positive");
    let cells = (mss as u64 + FRAME_OVERHEAD_BYTES).div_ceil(CELL_PAYLOAD_BYTES);
    link_mbps * mss as f64 / (CELL_BYTES * cells) as f64
}

/// E = sum(x) / C.
pub fn efficiency(x: &[f64], c: f64) -> f64 {
    assert!(c > 0.0, "C must be positive");
    x.iter().sum::<f64>() / c
}

/// Jain's index over the ratios `x_i / e_i`. `None` when every `x_i` is
/// zero, where the index is undefined.
pub fn fairness_index(x: &[f64], e: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), e.len(), "throughput and fair-share vectors differ in length");
    assert!(e.iter().all(|&v| v > 0.0), "fair shares must be positive");
    if x.is_empty() || x.iter().all(|&v| v == 0.0) {
        return None;
    }
    let ratios: Vec<f64> = x.iter().zip(e).map(|(xi, ei)| xi / ei).collect();
    // Scaling by the largest ratio makes equal and single-winner vectors
    // sum in exact integers.
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let (sum, sum_sq) = ratios
        .iter()
        .map(|r| r / max)
        .fold((0.0, 0.0), |(s, q), r| (s + r, q + r * r));
    Some(sum * sum / (x.len() as f64 * sum_sq))
}

/// Fairness against equal shares of `c` among `x.len()` connections.
pub fn fairness_equal_share(x: &[f64], c: f64) -> Option<f64> {
    let e = vec![c / x.len().max(1) as f64; x.len()];
    fairness_index(x, &e)
}

/// Bound on SACK recovery round trips after losing `1/n` of the window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecoveryBound {
    Rtts(u32),
    /// The window doubles each round trip, no slower than slow start.
    SlowStart,
}

/// Above this many round trips the bound is no tighter than slow start
/// growing a one-segment pipe past any 32-bit window.
const SLOW_START_RTTS: u32 = 32;

/// `ceil(log2(n / (n - 2)))` for `2 < n <= 4`.
pub fn sack_recovery_bound(n: f64) -> Result<RecoveryBound, String> {
    if !(n > 2.0 && n <= 4.0) {
        return Err(format!("n = {n} is outside (2, 4]"));
    }
    let rtts = (n / (n - 2.0)).log2().ceil();
    if !rtts.is_finite() || rtts > SLOW_START_RTTS as f64 {
        return Ok(RecoveryBound::SlowStart);
    }
    Ok(RecoveryBound::Rtts(rtts as u32))
}

/// Byte accounting for one connection at the end of a run. Every data byte
/// handed to the adaptation layer ends in exactly one bucket.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VcLedger {
    pub emitted: u64,
    pub delivered: u64,
    pub held: u64,
    pub duplicate: u64,
    pub lost: u64,
    pub in_flight: u64,
}

impl VcLedger {
    pub fn accounted(&self) -> u64 {
        self.delivered + self.held + self.duplicate + self.lost + self.in_flight
    }
}

/// Cell accounting across the bottleneck port.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CellLedger {
    /// Cells that completed transmission on a source link.
    pub sent: u64,
    /// Cells queued at the source NICs or still on the source links.
    pub upstream: u64,
    pub accepted: u64,
    pub dropped: u64,
    pub queued: u64,
    /// Cells that left the port and reached reassembly.
    pub departed: u64,
    pub in_delivered_frames: u64,
    pub in_discarded_frames: u64,
    pub in_partial_frames: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ledger {
    pub vcs: Vec<VcLedger>,
    pub cells: CellLedger,
}

impl Ledger {
    pub fn check(&self) -> Result<(), SimError> {
        for (vc, l) in self.vcs.iter().enumerate() {
            if l.emitted != l.accounted() {
                return Err(SimError::Ledger(format!(
                    "vc {vc}: emitted {} != delivered {} + held {} + duplicate {} + lost {} + in flight {}",
                    l.emitted, l.delivered, l.held, l.duplicate, l.lost, l.in_flight
                )));
            }
        }
        let c = &self.cells;
        let checks = [
            ("sent = accepted + dropped", c.sent, c.accepted + c.dropped),
            ("accepted = departed + queued", c.accepted, c.departed + c.queued),
            (
                "departed = delivered + discarded + partial",
                c.departed,
                c.in_delivered_frames + c.in_discarded_frames + c.in_partial_frames,
            ),
        ];
        for (name, lhs, rhs) in checks {
            if lhs != rhs {
                return Err(SimError::Ledger(format!("cells: {name} violated ({lhs} != {rhs})")));
            }
        }
        Ok(())
    }
}

/// A fairness value that is either a number or explicitly undefined.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fairness(pub Option<f64>);

impl fmt::Display for Fairness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.6}"),
            None => f.write_str("NA"),
        }
    }
}

/// Outcome of one simulation run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub per_vc_delivered: Vec<u64>,
    pub duration: SimTime,
    /// Goodput per connection, Mbps.
    pub throughputs: Vec<f64>,
    /// Maximum TCP throughput used for normalisation, Mbps.
    pub max_throughput: f64,
    pub efficiency: f64,
    pub fairness: Fairness,
    pub max_queue: u64,
    pub wasted_bytes: u64,
    pub timeouts: u64,
    pub fast_retransmits: u64,
    pub cells_dropped: u64,
    pub ledger: Ledger,
}

impl RunReport {
    pub fn new(per_vc_delivered: Vec<u64>, duration: SimTime, max_throughput: f64) -> Self {
        let secs = duration.as_secs_f64();
        let throughputs: Vec<f64> = per_vc_delivered
            .iter()
            .map(|&b| if secs > 0.0 { b as f64 * 8.0 / secs / 1e6 } else { 0.0 })
            .collect();
        let efficiency = efficiency(&throughputs, max_throughput);
        let fairness = Fairness(fairness_equal_share(&throughputs, max_throughput));
        RunReport {
            per_vc_delivered,
            duration,
            throughputs,
            max_throughput,
            efficiency,
            fairness,
            max_queue: 0,
            wasted_bytes: 0,
            timeouts: 0,
            fast_retransmits: 0,
            cells_dropped: 0,
            ledger: Ledger::default(),
        }
    }
}
