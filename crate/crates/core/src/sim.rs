//! The N-source topology: N greedy TCP sources, each on its own access
//! link into switch 1; switch 1's output port feeds the trunk to switch 2,
//! which fans out to N destinations. All links run at the same rate with
//! the same propagation delay.
//!
//! Only switch 1's output port can queue. Data cells reach it cell by cell
//! from the source NICs and leave it one cell time apart. Downstream of the
//! port nothing contends (each destination link carries a single VC whose
//! cells arrive no faster than the trunk delivers them), so a cell that
//! starts transmission at `t` reaches its destination at `t + 2ct + 2d`.
//!
//! The port is drained lazily: a departure is processed when the next
//! arrival needs an accurate occupancy, or at the departure time of an
//! end-of-message cell, which is when a frame can complete.
//!
//! ACKs travel back over destination link, reverse trunk and source link,
//! each with its own serializer; they are never dropped.

use std::collections::VecDeque;

use crate::adaptation::{cells_for, Cell, Frame, FrameId, Reassembler};
use crate::engine::{ActorId, Engine, Event, Handler, SimTime};
use crate::error::{RunError, SimError};
use crate::metrics::{CellLedger, Ledger, RunReport, VcLedger};
use crate::scenario::{ScenarioConfig, TraceConfig};
use crate::switch::{DropReason, PolicyKind, SwitchQueue, Verdict};
use crate::tcp::{SenderConfig, TcpReceiver, TcpSegment, TcpSender};
use crate::trace::{QueueEventKind, Record, Schema, Sink, StreamSummary, TraceStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ev {
    /// Source starts sending.
    Start {
        vc: u32,
    },
    /// The NIC's current cell reaches switch 1.
    CellArrival {
        vc: u32,
    },
    /// An end-of-message cell starts leaving the port.
    PortDeparture,
    /// The oldest undelivered frame of `vc` reaches its destination.
    FrameDelivery {
        vc: u32,
    },
    /// The oldest ACK in flight to source `vc` arrives.
    AckArrival {
        vc: u32,
    },
    Timeout {
        vc: u32,
        epoch: u64,
    },
}

#[derive(Clone, Copy, Debug)]
struct NicFrame {
    emitted: u64,
    frame: FrameId,
    cells: u32,
}

#[derive(Debug)]
struct Source {
    sender: TcpSender,
    nic: VecDeque<NicFrame>,
    next_cell: u32,
    busy: bool,
    /// End of the last cell transmitted by the NIC.
    nic_free: u64,
    acks: VecDeque<TcpSegment>,
    /// Reverse access link into the source.
    ack_link_free: u64,
    next_frame: FrameId,
    emitted_data: u64,
}

#[derive(Debug)]
struct Dest {
    receiver: TcpReceiver,
    frames: VecDeque<TcpSegment>,
    ack_link_free: u64,
}

/// Optional output streams for one run.
#[derive(Debug, Default)]
pub struct TraceSinks {
    pub cwnd: Option<TraceStream>,
    pub queue: Option<TraceStream>,
    pub drops: Option<TraceStream>,
    pub admissions: Option<TraceStream>,
}

impl TraceSinks {
    pub fn none() -> Self {
        TraceSinks::default()
    }

    /// Opens every stream enabled in `cfg`, with sinks from `make`.
    pub fn for_config(
        cfg: &TraceConfig,
        hash: bool,
        mut make: impl FnMut(Schema) -> std::io::Result<Sink>,
    ) -> std::io::Result<Self> {
        let mut open = |on: bool, schema: Schema| -> std::io::Result<Option<TraceStream>> {
            Ok(if on {
                Some(TraceStream::new(schema, make(schema)?, hash))
            } else {
                None
            })
        };
        Ok(TraceSinks {
            cwnd: open(cfg.cwnd, Schema::Cwnd)?,
            queue: open(cfg.queue, Schema::Queue)?,
            drops: open(cfg.drops, Schema::Drop)?,
            admissions: open(cfg.admissions, Schema::Admission)?,
        })
    }

    /// Memory sinks for the streams enabled in `cfg`.
    pub fn in_memory(cfg: &TraceConfig) -> Self {
        Self::for_config(cfg, true, |_| Ok(Sink::Memory(Vec::new()))).expect("memory sinks cannot fail")
    }

    /// Digest-only sinks for the streams enabled in `cfg`.
    pub fn hashed(cfg: &TraceConfig) -> Self {
        Self::for_config(cfg, true, |_| Ok(Sink::Null)).expect("null sinks cannot fail")
    }

    fn finish(self) -> Result<Vec<StreamSummary>, SimError> {
        [self.cwnd, self.queue, self.drops, self.admissions]
            .into_iter()
            .flatten()
            .map(TraceStream::finish)
            .collect()
    }
}

/// A finished run.
#[derive(Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub traces: Vec<StreamSummary>,
}

impl RunOutput {
    pub fn trace(&self, schema: Schema) -> Option<&StreamSummary> {
        self.traces.iter().find(|t| t.schema == schema)
    }
}

struct World {
    ct: u64,
    delay: u64,
    tick: u64,
    sources: Vec<Source>,
    dests: Vec<Dest>,
    port: SwitchQueue,
    /// End of transmission of the last cell queued at the port.
    link_free: u64,
    trunk_ack_free: u64,
    reasm: Reassembler,
    traces: TraceSinks,
    queue_every: u32,
    queue_samples: u32,
    scratch: Vec<TcpSegment>,
    cells_sent: u64,
    cells_departed: u64,
    cells_in_delivered: u64,
    tail_drops: u64,
    policy_drops: u64,
}

impl World {
    fn queue_sample(&mut self, time: u64, kind: QueueEventKind) -> Result<(), SimError> {
        let Some(stream) = self.traces.queue.as_mut() else {
            return Ok(());
        };
        self.queue_samples += 1;
        if self.queue_samples < self.queue_every {
            return Ok(());
        }
        self.queue_samples = 0;
        stream.push(&Record::Queue {
            time: SimTime::from_nanos(time),
            occupancy: self.port.occupancy().min(u32::MAX as u64) as u32,
            kind,
            accepted: self.cells_sent - self.tail_drops - self.policy_drops,
            dropped_tail: self.tail_drops,
            dropped_policy: self.policy_drops,
        })
    }

    /// Releases every queued cell whose transmission has started by `now`.
    fn drain_port(&mut self, eng: &mut Engine<Ev>, now: u64) -> Result<(), SimError> {
        loop {
            let len = self.port.occupancy();
            if len == 0 {
                return Ok(());
            }
            let depart = self.link_free - len * self.ct;
            if depart > now {
                return Ok(());
            }
            let cell = self.port.dequeue().expect("non-empty");
            self.cells_departed += 1;
            self.queue_sample(depart, QueueEventKind::Departure)?;
            if let Some(frame) = self.reasm.reassemble(cell) {
                self.cells_in_delivered += frame.cell_count as u64;
                let vc = frame.vc;
                self.dests[vc as usize].frames.push_back(frame.segment);
                let at = depart + 2 * self.ct + 2 * self.delay;
                eng.schedule(SimTime::from_nanos(at), ActorId(vc), Ev::FrameDelivery { vc })?;
            }
        }
    }

    /// Hands the segments in `scratch` to source `vc`'s NIC, arms its timer
    /// and records window changes.
    fn after_sender(&mut self, eng: &mut Engine<Ev>, vc: u32) -> Result<(), SimError> {
        let now = eng.now().as_nanos();
        let v = vc as usize;
        let mut segs = std::mem::take(&mut self.scratch);
        let src = &mut self.sources[v];
        for seg in segs.drain(..) {
            let id = src.next_frame;
            src.next_frame += 1;
            src.emitted_data += seg.data_len as u64;
            let frame = Frame::new(id, seg);
            src.nic.push_back(NicFrame {
                emitted: now,
                frame: id,
                cells: frame.cell_count,
            });
            self.reasm.expect(frame);
        }
        self.scratch = segs;
        if !src.busy && !src.nic.is_empty() {
            src.busy = true;
            src.next_cell = 0;
            let at = now.max(src.nic_free) + self.ct + self.delay;
            eng.schedule(SimTime::from_nanos(at), ActorId(vc), Ev::CellArrival { vc })?;
        }
        if let Some((epoch, rto)) = src.sender.take_timer_request() {
            let at = (now / self.tick + 1 + rto as u64) * self.tick;
            eng.schedule(SimTime::from_nanos(at), ActorId(vc), Ev::Timeout { vc, epoch })?;
        }
        if let Some(stream) = self.traces.cwnd.as_mut() {
            for ch in src.sender.take_changes() {
                stream.push(&Record::Cwnd {
                    time: SimTime::from_nanos(now),
                    vc,
                    event: ch.event,
                    cwnd: ch.cwnd,
                    ssthresh: ch.ssthresh,
                })?;
            }
        }
        Ok(())
    }

    fn cell_arrival(&mut self, eng: &mut Engine<Ev>, vc: u32) -> Result<(), SimError> {
        let now = eng.now().as_nanos();
        self.drain_port(eng, now)?;
        let v = vc as usize;
        let head = *self.sources[v].nic.front().expect("busy NIC has a frame");
        let index = self.sources[v].next_cell;
        let cell = Cell {
            vc,
            frame: head.frame,
            index: index as u16,
            eom: index + 1 == head.cells,
        };
        self.cells_sent += 1;
        match self.port.admit(cell) {
            Verdict::Accept => {
                let depart = now.max(self.link_free);
                self.link_free = depart + self.ct;
                if cell.eom {
                    eng.schedule(SimTime::from_nanos(depart), ActorId(vc), Ev::PortDeparture)?;
                }
            }
            Verdict::Drop(reason) => {
                if reason == DropReason::Tail {
                    self.tail_drops += 1;
                } else {
                    self.policy_drops += 1;
                }
                if let Some(stream) = self.traces.drops.as_mut() {
                    stream.push(&Record::Drop {
                        time: SimTime::from_nanos(now),
                        vc,
                        frame: cell.frame,
                        index: cell.index,
                        reason,
                    })?;
                }
            }
        }
        if let Some(stream) = self.traces.admissions.as_mut() {
            for a in self.port.drain_admissions() {
                stream.push(&Record::Admission {
                    time: SimTime::from_nanos(now),
                    vc: a.vc,
                    verdict: a.verdict,
                    x: a.occupancy,
                    y: a.vc_occupancy,
                    n_active: a.active_vcs,
                })?;
            }
        }
        self.queue_sample(now, QueueEventKind::Arrival)?;

        let tx_end = now - self.delay;
        let src = &mut self.sources[v];
        src.next_cell += 1;
        if src.next_cell == head.cells {
            src.nic.pop_front();
            src.next_cell = 0;
        }
        match src.nic.front() {
            Some(next) => {
                let at = next.emitted.max(tx_end) + self.ct + self.delay;
                eng.schedule(SimTime::from_nanos(at), ActorId(vc), Ev::CellArrival { vc })?;
            }
            None => {
                src.busy = false;
                src.nic_free = tx_end;
            }
        }
        Ok(())
    }

    fn frame_delivery(&mut self, eng: &mut Engine<Ev>, vc: u32) -> Result<(), SimError> {
        let now = eng.now().as_nanos();
        let v = vc as usize;
        let dst = &mut self.dests[v];
        let seg = dst.frames.pop_front().expect("delivery event without a frame");
        let (ack, _) = dst.receiver.on_segment(&seg);
        let ser = cells_for(0, ack.option_bytes()) as u64 * self.ct;
        // cut-through at each switch: forwarding starts once the first cell is in
        let s1 = now.max(dst.ack_link_free);
        dst.ack_link_free = s1 + ser;
        let s2 = (s1 + self.ct + self.delay).max(self.trunk_ack_free);
        self.trunk_ack_free = s2 + ser;
        let src = &mut self.sources[v];
        let s3 = (s2 + self.ct + self.delay).max(src.ack_link_free);
        src.ack_link_free = s3 + ser;
        src.acks.push_back(ack);
        eng.schedule(
            SimTime::from_nanos(s3 + ser + self.delay),
            ActorId(vc),
            Ev::AckArrival { vc },
        )?;
        Ok(())
    }
}

impl Handler<Ev> for World {
    fn handle(&mut self, eng: &mut Engine<Ev>, ev: Event<Ev>) -> Result<(), SimError> {
        let now = eng.now();
        match ev.payload {
            Ev::Start { vc } => {
                self.sources[vc as usize].sender.try_send(now, &mut self.scratch);
                self.after_sender(eng, vc)
            }
            Ev::CellArrival { vc } => self.cell_arrival(eng, vc),
            Ev::PortDeparture => self.drain_port(eng, now.as_nanos()),
            Ev::FrameDelivery { vc } => self.frame_delivery(eng, vc),
            Ev::AckArrival { vc } => {
                let src = &mut self.sources[vc as usize];
                let ack = src.acks.pop_front().expect("ack event without an ack");
                src.sender.on_ack(&ack, now, &mut self.scratch)?;
                src.sender.try_send(now, &mut self.scratch);
                self.after_sender(eng, vc)
            }
            Ev::Timeout { vc, epoch } => {
                let src = &mut self.sources[vc as usize];
                if !src.sender.timer_is_current(epoch) {
                    return Ok(());
                }
                src.sender.on_timeout(now, &mut self.scratch);
                self.after_sender(eng, vc)
            }
        }
    }
}

/// A configured, not yet executed run.
pub struct Simulation {
    engine: Engine<Ev>,
    world: World,
    duration: SimTime,
    max_throughput: f64,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, traces: TraceSinks) -> Result<Self, RunError> {
        cfg.validate()?;
        let policy = cfg.drop_policy()?;
        let n = cfg.n_sources as usize;
        let mut port = SwitchQueue::new(cfg.buffer.capacity(), policy, n);
        port.record_admissions(traces.admissions.is_some() && cfg.policy != PolicyKind::TailDrop);
        let sender_cfg = SenderConfig {
            tick: cfg.timer_tick,
            initial_ssthresh: cfg.effective_initial_ssthresh(),
            ..SenderConfig::new(cfg.variant, cfg.mss, cfg.rcvwnd)
        };
        let sack = cfg.variant == crate::tcp::CcVariant::Sack;
        let sources = (0..n as u32)
            .map(|vc| {
                let mut sender = TcpSender::new(vc, sender_cfg.clone());
                sender.record_changes(traces.cwnd.is_some());
                Source {
                    sender,
                    nic: VecDeque::new(),
                    next_cell: 0,
                    busy: false,
                    nic_free: 0,
                    acks: VecDeque::new(),
                    ack_link_free: 0,
                    next_frame: 0,
                    emitted_data: 0,
                }
            })
            .collect();
        let dests = (0..n as u32)
            .map(|vc| Dest {
                receiver: TcpReceiver::new(vc, cfg.rcvwnd, sack),
                frames: VecDeque::new(),
                ack_link_free: 0,
            })
            .collect();
        let mut engine = Engine::new();
        for vc in 0..n as u32 {
            let at = SimTime::from_nanos(vc as u64 * cfg.start_stagger.as_nanos());
            engine.schedule(at, ActorId(vc), Ev::Start { vc })?;
        }
        let world = World {
            ct: cfg.cell_time().as_nanos(),
            delay: cfg.link_delay.as_nanos(),
            tick: cfg.timer_tick.as_nanos(),
            sources,
            dests,
            port,
            link_free: 0,
            trunk_ack_free: 0,
            reasm: Reassembler::new(n),
            traces,
            queue_every: cfg.trace.queue_every,
            queue_samples: 0,
            scratch: Vec::new(),
            cells_sent: 0,
            cells_departed: 0,
            cells_in_delivered: 0,
            tail_drops: 0,
            policy_drops: 0,
        };
        Ok(Simulation {
            engine,
            world,
            duration: cfg.duration,
            max_throughput: cfg.max_throughput(),
        })
    }

    /// Runs to the configured duration and checks the end-of-run ledger.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        self.engine.run_until(self.duration, &mut self.world)?;
        let end = self.duration.as_nanos();
        let mut w = self.world;
        // account for departures that nobody had to observe yet
        w.drain_port(&mut self.engine, end)?;
        w.port.check_accounting().map_err(SimError::QueueAccounting)?;

        let n = w.sources.len();
        let mut vcs = Vec::with_capacity(n);
        let mut upstream = 0;
        for v in 0..n {
            let src = &w.sources[v];
            let dst = &w.dests[v];
            let pending: u64 = dst.frames.iter().map(|s| s.data_len as u64).sum();
            vcs.push(VcLedger {
                emitted: src.emitted_data,
                delivered: dst.receiver.delivered_bytes(),
                held: dst.receiver.held_bytes(),
                duplicate: dst.receiver.duplicate_bytes(),
                lost: w.reasm.lost_data_bytes(v as u32),
                in_flight: w.reasm.in_transit_data_bytes(v as u32) + pending,
            });
            let queued: u64 = src.nic.iter().map(|f| f.cells as u64).sum();
            upstream += queued - src.next_cell as u64;
        }
        let (mut accepted, mut dropped) = (0, 0);
        for v in 0..n as u32 {
            let s = w.port.vc_stats(v);
            accepted += s.accepted;
            dropped += s.dropped;
        }
        let ledger = Ledger {
            vcs,
            cells: CellLedger {
                sent: w.cells_sent,
                upstream,
                accepted,
                dropped,
                queued: w.port.occupancy(),
                departed: w.cells_departed,
                in_delivered_frames: w.cells_in_delivered,
                in_discarded_frames: (0..n as u32).map(|v| w.reasm.vc(v).wasted_cells()).sum(),
                in_partial_frames: (0..n as u32).map(|v| w.reasm.vc(v).held_cells() as u64).sum(),
            },
        };
        ledger.check()?;

        let delivered = w.dests.iter().map(|d| d.receiver.delivered_bytes()).collect();
        let mut report = RunReport::new(delivered, self.duration, self.max_throughput);
        report.max_queue = w.port.max_occupancy();
        report.wasted_bytes = w.reasm.wasted_bytes();
        report.timeouts = w.sources.iter().map(|s| s.sender.stats().timeouts).sum();
        report.fast_retransmits = w.sources.iter().map(|s| s.sender.stats().fast_retransmits).sum();
        report.cells_dropped = dropped;
        report.ledger = ledger;
        Ok(RunOutput {
            report,
            traces: w.traces.finish()?,
        })
    }
}

/// Builds and runs `cfg` with the given trace sinks.
pub fn run_scenario(cfg: &ScenarioConfig, traces: TraceSinks) -> Result<RunOutput, RunError> {
    Ok(Simulation::new(cfg, traces)?.run()?)
}

/// Applies `job` to every item on a pool of `workers` threads. Each job is
/// independent, and results come back in input order whatever the
/// completion order.
pub fn run_batch<T, R, F>(items: &[T], workers: usize, job: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("worker pool");
    pool.install(|| items.par_iter().enumerate().map(|(i, t)| job(i, t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Buffer;
    use crate::tcp::CcVariant;

    fn short(mut cfg: ScenarioConfig, ms: u64) -> ScenarioConfig {
        cfg.duration = SimTime::from_millis(ms);
        cfg
    }

    #[test]
    fn batch_results_keep_input_order() {
        let cfgs: Vec<ScenarioConfig> = (1..=6)
            .map(|n| {
                short(
                    ScenarioConfig::lan().with(n, Buffer::Cells(1000), PolicyKind::Epd, CcVariant::Reno),
                    50,
                )
            })
            .collect();
        let serial = run_batch(&cfgs, 1, |_, c| run_scenario(c, TraceSinks::none()).unwrap().report);
        let parallel = run_batch(&cfgs, 4, |_, c| run_scenario(c, TraceSinks::none()).unwrap().report);
        assert_eq!(serial, parallel);
        for (r, c) in serial.iter().zip(&cfgs) {
            assert_eq!(r.per_vc_delivered.len(), c.n_sources as usize);
        }
    }

    #[test]
    fn single_source_fills_the_pipe() {
        let cfg = short(
            ScenarioConfig::lan().with(1, Buffer::Infinite, PolicyKind::TailDrop, CcVariant::Vanilla),
            1000,
        );
        let out = run_scenario(&cfg, TraceSinks::none()).unwrap();
        let r = &out.report;
        assert_eq!(r.cells_dropped, 0);
        // the rounded cell time runs the link 0.012% fast
        assert!(r.efficiency > 0.95 && r.efficiency <= 1.0002, "E = {}", r.efficiency);
        assert_eq!(r.fairness.0, Some(1.0));
        assert_eq!(r.timeouts, 0);
    }

    #[test]
    fn first_segment_timing() {
        // one segment: 12 cells on the access link, 2 more hops, then the ACK
        let cfg = short(
            ScenarioConfig::lan().with(1, Buffer::Infinite, PolicyKind::TailDrop, CcVariant::Vanilla),
            0,
        );
        let mut sim = Simulation::new(&cfg, TraceSinks::in_memory(&cfg.trace)).unwrap();
        let ct = cfg.cell_time().as_nanos();
        let d = cfg.link_delay.as_nanos();
        let first_ack = 18 * ct + 6 * d;
        sim.duration = SimTime::from_nanos(first_ack);
        let out = sim.run().unwrap();
        let cwnd: Vec<_> = out.report.ledger.vcs.iter().map(|l| l.delivered).collect();
        assert_eq!(cwnd, vec![512]);
        let bytes = out.trace(Schema::Cwnd).unwrap().bytes.clone().unwrap();
        let recs: Vec<Record> = crate::trace::TraceReader::new(&bytes[..])
            .unwrap()
            .map(Result::unwrap)
            .collect();
        match recs.last().unwrap() {
            Record::Cwnd { time, cwnd, .. } => {
                assert_eq!(time.as_nanos(), first_ack);
                assert_eq!(*cwnd, 1024);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let mut cfg = short(
            ScenarioConfig::lan().with(5, Buffer::Cells(1000), PolicyKind::SelectiveDrop, CcVariant::Reno),
            300,
        );
        cfg.trace.admissions = true;
        let a = run_scenario(&cfg, TraceSinks::hashed(&cfg.trace)).unwrap();
        let b = run_scenario(&cfg, TraceSinks::hashed(&cfg.trace)).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.traces, b.traces);
        assert!(a.report.cells_dropped > 0);
    }

    #[test]
    fn every_policy_and_variant_balances_its_ledger() {
        for policy in PolicyKind::ALL {
            for variant in CcVariant::ALL {
                let cfg = short(ScenarioConfig::lan().with(5, Buffer::Cells(1000), policy, variant), 200);
                let out = run_scenario(&cfg, TraceSinks::none()).unwrap();
                assert!(out.report.ledger.check().is_ok());
                assert!(out.report.max_queue <= 1000);
            }
        }
    }
}
