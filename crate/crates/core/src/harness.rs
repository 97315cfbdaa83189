//! Scripted-loss harness: one TCP connection over a lossless pipe with
//! chosen segments dropped on their first transmission.
//!
//! There is no switch. Data segments are serialized at the link rate as
//! AAL5 cell trains and arrive one propagation delay later; ACKs return
//! after one more delay. The harness records every recovery episode so
//! tests can check cwnd trajectories and count recovery round trips.

use std::collections::BTreeSet;

use crate::adaptation::{cells_for, CELL_BYTES};
use crate::engine::{serialization_time, ActorId, Engine, Event, Handler, SimTime};
use crate::error::SimError;
use crate::tcp::{CcVariant, CwndChange, CwndEvent, SenderConfig, TcpReceiver, TcpSegment, TcpSender};

#[derive(Clone, Debug)]
pub struct HarnessConfig {
    pub variant: CcVariant,
    pub mss: u32,
    pub rcvwnd: u64,
    pub initial_ssthresh: u64,
    pub link_rate_bps: u64,
    pub one_way_delay: SimTime,
    pub tick: SimTime,
    pub duration: SimTime,
    /// Segment indices (sequence number / mss) lost on first transmission.
    pub drops: BTreeSet<u64>,
}

impl HarnessConfig {
    /// 155.52 Mbps, 10 ms each way, a window far above the pipe, 5 s.
    pub fn new(variant: CcVariant) -> Self {
        HarnessConfig {
            variant,
            mss: 512,
            rcvwnd: 1 << 22,
            initial_ssthresh: 65535,
            link_rate_bps: 155_520_000,
            one_way_delay: SimTime::from_millis(10),
            tick: SimTime::from_millis(100),
            duration: SimTime::from_secs(5),
            drops: BTreeSet::new(),
        }
    }

    /// Drops `count` contiguous segments starting at index `first`.
    pub fn drop_block(mut self, first: u64, count: u64) -> Self {
        self.drops.extend(first..first + count);
        self
    }

    fn segment_time(&self) -> SimTime {
        let cells = cells_for(self.mss as u64, 0) as u64;
        SimTime::from_nanos(cells * serialization_time(CELL_BYTES * 8, self.link_rate_bps).as_nanos())
    }

    /// Round trip of an unqueued segment and its ACK.
    pub fn base_rtt(&self) -> SimTime {
        SimTime::from_nanos(self.segment_time().as_nanos() + 2 * self.one_way_delay.as_nanos())
    }
}

/// One fast-retransmit recovery, from the third duplicate ACK to the exit
/// from recovery (or the timeout that ended it).
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub start: SimTime,
    pub end: Option<SimTime>,
    pub cwnd_before: u64,
    pub ssthresh: u64,
    pub cwnd_after: Option<u64>,
    /// Retransmission rounds: a new round begins when a retransmission
    /// is sent after an earlier one of this episode was acknowledged.
    pub rounds: u32,
    /// Time of the last retransmission sent during the episode.
    pub last_retransmit: SimTime,
    pub ended_by_timeout: bool,
}

impl Episode {
    /// Episode length in units of `rtt`.
    pub fn duration_rtts(&self, rtt: SimTime) -> Option<f64> {
        self.end
            .map(|e| (e.as_nanos() - self.start.as_nanos()) as f64 / rtt.as_nanos() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeoutRecord {
    pub at: SimTime,
    pub cwnd_before: u64,
    pub cwnd_after: u64,
    pub ssthresh_after: u64,
}

#[derive(Clone, Debug, Default)]
pub struct HarnessOutcome {
    pub episodes: Vec<Episode>,
    pub timeouts: Vec<TimeoutRecord>,
    /// `(time, cwnd)` at the first transmission of each segment index.
    pub first_sends: Vec<(SimTime, u64)>,
    pub trajectory: Vec<(SimTime, CwndChange)>,
    pub fast_retransmits: u64,
    pub delivered_bytes: u64,
}

impl HarnessOutcome {
    /// cwnd when segment `index` was first sent.
    pub fn cwnd_at_send(&self, index: u64) -> Option<u64> {
        self.first_sends.get(index as usize).map(|&(_, c)| c)
    }
}

enum Ev {
    Data(TcpSegment),
    Ack(TcpSegment),
    Timeout(u64),
}

struct World {
    cfg: HarnessConfig,
    seg_time: u64,
    sender: TcpSender,
    receiver: TcpReceiver,
    link_free: u64,
    sent_once: BTreeSet<u64>,
    out: HarnessOutcome,
    open: Option<(Episode, Vec<u64>)>,
}

impl World {
    fn transmit(&mut self, eng: &mut Engine<Ev>, segs: Vec<TcpSegment>) -> Result<(), SimError> {
        let now = eng.now().as_nanos();
        let mss = self.cfg.mss as u64;
        for seg in segs {
            let index = seg.seq / mss;
            let first = self.sent_once.insert(index);
            if first {
                debug_assert_eq!(index as usize, self.out.first_sends.len());
                self.out.first_sends.push((eng.now(), self.sender.cwnd()));
            } else if let Some((ep, round)) = self.open.as_mut() {
                if round.iter().any(|&s| s < self.sender.snd_una()) {
                    ep.rounds += 1;
                    round.clear();
                }
                round.push(seg.seq);
                ep.last_retransmit = eng.now();
            }
            self.link_free = self.link_free.max(now) + self.seg_time;
            if first && self.cfg.drops.contains(&index) {
                continue;
            }
            let at = self.link_free + self.cfg.one_way_delay.as_nanos();
            eng.schedule(SimTime::from_nanos(at), ActorId(0), Ev::Data(seg))?;
        }
        if let Some((epoch, rto)) = self.sender.take_timer_request() {
            let tick = self.cfg.tick.as_nanos();
            let at = (now / tick + 1 + rto as u64) * tick;
            eng.schedule(SimTime::from_nanos(at), ActorId(0), Ev::Timeout(epoch))?;
        }
        Ok(())
    }

    fn note_changes(&mut self, now: SimTime, cwnd_before: u64) {
        let changes: Vec<CwndChange> = self.sender.take_changes().collect();
        for ch in changes {
            match ch.event {
                CwndEvent::FastRetransmit => {
                    self.out.fast_retransmits += 1;
                    let ep = Episode {
                        start: now,
                        end: None,
                        cwnd_before,
                        ssthresh: ch.ssthresh,
                        cwnd_after: None,
                        rounds: 1,
                        last_retransmit: now,
                        ended_by_timeout: false,
                    };
                    self.open = Some((ep, vec![self.sender.snd_una()]));
                }
                CwndEvent::RecoveryExit => {
                    if let Some((mut ep, _)) = self.open.take() {
                        ep.end = Some(now);
                        ep.cwnd_after = Some(ch.cwnd);
                        self.out.episodes.push(ep);
                    }
                }
                CwndEvent::Timeout => {
                    if let Some((mut ep, _)) = self.open.take() {
                        ep.end = Some(now);
                        ep.ended_by_timeout = true;
                        self.out.episodes.push(ep);
                    }
                }
                _ => {}
            }
            self.out.trajectory.push((now, ch));
        }
    }
}

impl Handler<Ev> for World {
    fn handle(&mut self, eng: &mut Engine<Ev>, event: Event<Ev>) -> Result<(), SimError> {
        let now = eng.now();
        let mut segs = Vec::new();
        match event.payload {
            Ev::Data(seg) => {
                let (ack, _) = self.receiver.on_segment(&seg);
                eng.schedule_in(self.cfg.one_way_delay, ActorId(0), Ev::Ack(ack))?;
                return Ok(());
            }
            Ev::Ack(ack) => {
                let before = self.sender.cwnd();
                self.sender.on_ack(&ack, now, &mut segs)?;
                self.sender.try_send(now, &mut segs);
                self.note_changes(now, before);
            }
            Ev::Timeout(epoch) => {
                if !self.sender.timer_is_current(epoch) {
                    return Ok(());
                }
                let before = self.sender.cwnd();
                self.sender.on_timeout(now, &mut segs);
                self.sender.try_send(now, &mut segs);
                self.out.timeouts.push(TimeoutRecord {
                    at: now,
                    cwnd_before: before,
                    cwnd_after: self.sender.cwnd(),
                    ssthresh_after: self.sender.ssthresh(),
                });
                self.note_changes(now, before);
            }
        }
        self.transmit(eng, segs)
    }
}

/// Runs the scripted connection for `cfg.duration`.
pub fn run(cfg: &HarnessConfig) -> Result<HarnessOutcome, SimError> {
    let sender_cfg = SenderConfig {
        initial_ssthresh: cfg.initial_ssthresh,
        tick: cfg.tick,
        ..SenderConfig::new(cfg.variant, cfg.mss, cfg.rcvwnd)
    };
    let mut sender = TcpSender::new(0, sender_cfg);
    sender.record_changes(true);
    let mut world = World {
        seg_time: cfg.segment_time().as_nanos(),
        receiver: TcpReceiver::new(0, cfg.rcvwnd, cfg.variant == CcVariant::Sack),
        sender,
        link_free: 0,
        sent_once: BTreeSet::new(),
        out: HarnessOutcome::default(),
        open: None,
        cfg: cfg.clone(),
    };
    let mut eng = Engine::new();
    let mut segs = Vec::new();
    world.sender.try_send(SimTime::ZERO, &mut segs);
    world.transmit(&mut eng, segs)?;
    eng.run_until(cfg.duration, &mut world)?;
    let mut out = world.out;
    out.delivered_bytes = world.receiver.delivered_bytes();
    Ok(out)
}
