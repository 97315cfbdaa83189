use super::{CcVariant, RttEstimator, Scoreboard, TcpSegment, DUPACK_THRESHOLD};
use crate::adaptation::VcId;
use crate::engine::SimTime;
use crate::error::SimError;

#[derive(Clone, Debug)]
pub struct SenderConfig {
    pub variant: CcVariant,
    pub mss: u32,
    /// Peer's advertised window, fixed for the run.
    pub rcvwnd: u64,
    pub initial_ssthresh: u64,
    /// Granularity of the retransmission clock.
    pub tick: SimTime,
    /// Timeout used before the first RTT sample.
    pub initial_rto_ticks: u32,
    pub max_rto_ticks: u32,
}

impl SenderConfig {
    pub fn new(variant: CcVariant, mss: u32, rcvwnd: u64) -> Self {
        SenderConfig {
            variant,
            mss,
            rcvwnd,
            initial_ssthresh: 65535,
            tick: SimTime::from_millis(100),
            initial_rto_ticks: 30,
            max_rto_ticks: 64,
        }
    }
}

/// Why the congestion state changed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CwndEvent {
    Init = 0,
    NewAck = 1,
    DupAck = 2,
    FastRetransmit = 3,
    PartialAck = 4,
    RecoveryExit = 5,
    Timeout = 6,
}

impl CwndEvent {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => CwndEvent::Init,
            1 => CwndEvent::NewAck,
            2 => CwndEvent::DupAck,
            3 => CwndEvent::FastRetransmit,
            4 => CwndEvent::PartialAck,
            5 => CwndEvent::RecoveryExit,
            6 => CwndEvent::Timeout,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CwndEvent::Init => "init",
            CwndEvent::NewAck => "new_ack",
            CwndEvent::DupAck => "dup_ack",
            CwndEvent::FastRetransmit => "fast_retransmit",
            CwndEvent::PartialAck => "partial_ack",
            CwndEvent::RecoveryExit => "recovery_exit",
            CwndEvent::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CwndChange {
    pub event: CwndEvent,
    pub cwnd: u64,
    pub ssthresh: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SenderStats {
    pub segments_sent: u64,
    /// Data bytes handed to the network, retransmissions included.
    pub bytes_sent: u64,
    pub bytes_retransmitted: u64,
    pub timeouts: u64,
    pub fast_retransmits: u64,
    pub partial_acks: u64,
}

/// Sending side of a greedy connection with unlimited application data.
#[derive(Clone, Debug)]
pub struct TcpSender {
    vc: VcId,
    cfg: SenderConfig,
    cwnd: u64,
    ssthresh: u64,
    snd_una: u64,
    snd_nxt: u64,
    snd_max: u64,
    dupacks: u32,
    in_recovery: bool,
    recover: u64,
    pipe: u64,
    scoreboard: Scoreboard,
    rtt: RttEstimator,
    /// (end of timed segment, tick at which it was sent)
    timed: Option<(u64, u64)>,
    timer_epoch: u64,
    timer_armed: bool,
    timer_request: Option<u64>,
    stats: SenderStats,
    record_changes: bool,
    changes: Vec<CwndChange>,
}

impl TcpSender {
    pub fn new(vc: VcId, cfg: SenderConfig) -> Self {
        let mss = cfg.mss;
        let rtt = RttEstimator::new(cfg.initial_rto_ticks, cfg.max_rto_ticks);
        TcpSender {
            vc,
            cwnd: mss as u64,
            ssthresh: cfg.initial_ssthresh.max(2 * mss as u64),
            cfg,
            snd_una: 0,
            snd_nxt: 0,
            snd_max: 0,
            dupacks: 0,
            in_recovery: false,
            recover: 0,
            pipe: 0,
            scoreboard: Scoreboard::new(mss),
            rtt,
            timed: None,
            timer_epoch: 0,
            timer_armed: false,
            timer_request: None,
            stats: SenderStats::default(),
            record_changes: false,
            changes: Vec::new(),
        }
    }

    /// Enables buffering of [`CwndChange`] records, drained with
    /// [`TcpSender::take_changes`]. The initial state is recorded first.
    pub fn record_changes(&mut self, on: bool) {
        self.record_changes = on;
        if on {
            self.note(CwndEvent::Init);
        }
    }

    pub fn take_changes(&mut self) -> std::vec::Drain<'_, CwndChange> {
        self.changes.drain(..)
    }

    fn note(&mut self, event: CwndEvent) {
        if self.record_changes {
            self.changes.push(CwndChange {
                event,
                cwnd: self.cwnd,
                ssthresh: self.ssthresh,
            });
        }
    }

    pub fn vc(&self) -> VcId {
        self.vc
    }
    pub fn config(&self) -> &SenderConfig {
        &self.cfg
    }
    pub fn cwnd(&self) -> u64 {
        self.cwnd
    }
    pub fn ssthresh(&self) -> u64 {
        self.ssthresh
    }
    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }
    pub fn snd_nxt(&self) -> u64 {
        self.snd_nxt
    }
    /// One past the highest byte ever sent.
    pub fn snd_max(&self) -> u64 {
        self.snd_max
    }
    pub fn dupacks(&self) -> u32 {
        self.dupacks
    }
    pub fn in_recovery(&self) -> bool {
        self.in_recovery
    }
    pub fn recover(&self) -> u64 {
        self.recover
    }
    pub fn pipe(&self) -> u64 {
        self.pipe
    }
    pub fn scoreboard(&self) -> &Scoreboard {
        &self.scoreboard
    }
    pub fn rtt(&self) -> &RttEstimator {
        &self.rtt
    }
    pub fn stats(&self) -> &SenderStats {
        &self.stats
    }
    pub fn timer_epoch(&self) -> u64 {
        self.timer_epoch
    }

    fn mss(&self) -> u64 {
        self.cfg.mss as u64
    }

    fn tick_of(&self, now: SimTime) -> u64 {
        now.as_nanos() / self.cfg.tick.as_nanos()
    }

    /// Usable window outside SACK recovery: cwnd (inflated during Reno-style
    /// recovery) capped by the receiver window.
    pub fn window(&self) -> u64 {
        self.cwnd.min(self.cfg.rcvwnd)
    }

    fn restart_timer(&mut self) {
        self.timer_epoch += 1;
        self.timer_armed = true;
        self.timer_request = Some(self.timer_epoch);
    }

    fn stop_timer(&mut self) {
        self.timer_epoch += 1;
        self.timer_armed = false;
        self.timer_request = None;
    }

    /// Returns `(epoch, rto_ticks)` when the caller must schedule a timeout
    /// event. Events carrying an older epoch are to be ignored.
    pub fn take_timer_request(&mut self) -> Option<(u64, u32)> {
        self.timer_request.take().map(|e| (e, self.rtt.rto()))
    }

    /// Whether a timeout carrying `epoch` is still live.
    pub fn timer_is_current(&self, epoch: u64) -> bool {
        self.timer_armed && epoch == self.timer_epoch
    }

    fn emit(&mut self, seq: u64, now: SimTime, out: &mut Vec<TcpSegment>) {
        let len = self.cfg.mss;
        let retransmission = seq < self.snd_max;
        if retransmission {
            self.stats.bytes_retransmitted += len as u64;
            // Karn: no sample may be taken across a retransmission.
            self.timed = None;
            self.scoreboard.mark_retransmitted(seq);
        } else {
            debug_assert_eq!(seq, self.snd_max);
            self.scoreboard.push_sent(seq);
            self.snd_max = seq + len as u64;
            if self.timed.is_none() {
                self.timed = Some((self.snd_max, self.tick_of(now)));
            }
        }
        self.stats.segments_sent += 1;
        self.stats.bytes_sent += len as u64;
        if !self.timer_armed {
            self.restart_timer();
        }
        out.push(TcpSegment::data(self.vc, seq, len));
    }

    /// Emits every segment the current window allows.
    pub fn try_send(&mut self, now: SimTime, out: &mut Vec<TcpSegment>) {
        let mss = self.mss();
        if self.cfg.variant == CcVariant::Sack && self.in_recovery {
            while self.pipe < self.cwnd {
                let seq = match self.scoreboard.next_hole() {
                    Some(hole) => hole,
                    None if self.snd_max + mss - self.snd_una <= self.cfg.rcvwnd => self.snd_max,
                    None => break,
                };
                self.emit(seq, now, out);
                self.snd_nxt = self.snd_nxt.max(self.snd_max);
                self.pipe += mss;
            }
            return;
        }
        loop {
            if self.cfg.variant == CcVariant::Sack {
                while self.snd_nxt < self.snd_max && self.scoreboard.is_sacked(self.snd_nxt) {
                    self.snd_nxt += mss;
                }
            }
            if self.snd_nxt + mss - self.snd_una > self.window() {
                break;
            }
            let seq = self.snd_nxt;
            self.emit(seq, now, out);
            self.snd_nxt += mss;
        }
    }

    /// Processes an ACK. Retransmissions it triggers are pushed to `out`;
    /// call [`TcpSender::try_send`] afterwards for window-opened data.
    pub fn on_ack(&mut self, seg: &TcpSegment, now: SimTime, out: &mut Vec<TcpSegment>) -> Result<(), SimError> {
        let ack = seg.ack;
        if ack > self.snd_max {
            return Err(SimError::AckBeyondSent {
                vc: self.vc,
                ack,
                snd_max: self.snd_max,
            });
        }
        if self.cfg.variant == CcVariant::Sack {
            for &(l, r) in &seg.sack_blocks {
                self.scoreboard.mark_sacked(l, r);
            }
        }
        if ack > self.snd_una {
            self.on_new_ack(ack, now, out);
        } else if ack == self.snd_una && self.snd_max > self.snd_una && seg.data_len == 0 {
            self.on_dup_ack(now, out);
        }
        Ok(())
    }

    fn on_new_ack(&mut self, ack: u64, now: SimTime, out: &mut Vec<TcpSegment>) {
        let mss = self.mss();
        let acked = ack - self.snd_una;
        if let Some((end, sent_tick)) = self.timed {
            if ack >= end {
                self.rtt.sample(self.tick_of(now) - sent_tick);
                self.timed = None;
            }
        }
        self.snd_una = ack;
        if self.snd_nxt < ack {
            self.snd_nxt = ack;
        }
        self.scoreboard.advance(ack);

        if self.in_recovery {
            let full = !self.cfg.variant.uses_recover_point() || ack >= self.recover;
            if full {
                self.in_recovery = false;
                self.cwnd = self.ssthresh;
                self.pipe = 0;
                self.dupacks = 0;
                self.note(CwndEvent::RecoveryExit);
            } else {
                self.stats.partial_acks += 1;
                match self.cfg.variant {
                    CcVariant::NewReno => {
                        // Deflate by what was acknowledged, keep one segment
                        // for the retransmission.
                        self.cwnd = self.cwnd.saturating_sub(acked).max(mss) + mss;
                        self.emit(ack, now, out);
                    }
                    CcVariant::Sack => {
                        self.pipe = self.pipe.saturating_sub(2 * mss);
                    }
                    _ => unreachable!("only recover-point variants see partial ACKs"),
                }
                self.note(CwndEvent::PartialAck);
            }
        } else {
            self.dupacks = 0;
            if self.cwnd < self.ssthresh {
                self.cwnd += mss;
            } else {
                self.cwnd += (mss * mss / self.cwnd).max(1);
            }
            self.note(CwndEvent::NewAck);
        }

        if self.snd_una < self.snd_max {
            self.restart_timer();
        } else {
            self.stop_timer();
        }
    }

    fn on_dup_ack(&mut self, now: SimTime, out: &mut Vec<TcpSegment>) {
        let mss = self.mss();
        self.dupacks += 1;
        if !self.cfg.variant.uses_fast_retransmit() {
            return;
        }
        if self.in_recovery {
            match self.cfg.variant {
                CcVariant::Sack => self.pipe = self.pipe.saturating_sub(mss),
                _ => self.cwnd += mss,
            }
            self.note(CwndEvent::DupAck);
            return;
        }
        if self.dupacks != DUPACK_THRESHOLD {
            return;
        }
        let window = self.window();
        self.ssthresh = (window / 2).max(2 * mss);
        self.recover = self.snd_max;
        self.in_recovery = true;
        self.stats.fast_retransmits += 1;
        match self.cfg.variant {
            CcVariant::Sack => {
                self.pipe = window.saturating_sub(DUPACK_THRESHOLD as u64 * mss);
                self.cwnd = self.ssthresh;
            }
            _ => self.cwnd = self.ssthresh + DUPACK_THRESHOLD as u64 * mss,
        }
        let seq = self.snd_una;
        self.emit(seq, now, out);
        self.note(CwndEvent::FastRetransmit);
    }

    /// Handles expiry of the retransmission timer: collapse to one segment
    /// and go back to the first unacknowledged byte.
    pub fn on_timeout(&mut self, now: SimTime, out: &mut Vec<TcpSegment>) {
        let mss = self.mss();
        self.ssthresh = (self.cwnd / 2).min(self.cfg.rcvwnd).max(2 * mss);
        self.cwnd = mss;
        self.snd_nxt = self.snd_una;
        self.in_recovery = false;
        self.dupacks = 0;
        self.pipe = 0;
        self.timed = None;
        self.scoreboard.reset();
        self.rtt.back_off();
        self.stats.timeouts += 1;
        self.note(CwndEvent::Timeout);
        self.timer_armed = false;
        self.try_send(now, out);
        if !self.timer_armed {
            self.restart_timer();
        }
    }
}
