//! Deterministic discrete-event core.
//!
//! Events are ordered by `(fire_at, seq)`, where `seq` is issued at scheduling
//! time. Two events scheduled for the same instant are therefore delivered in
//! the order they were scheduled. There is no cancellation: actors that need
//! to invalidate a pending event (retransmission timers) carry a generation
//! counter in the payload and ignore stale deliveries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, Sub};

use crate::error::SimError;

/// Simulation time in integer nanoseconds since the start of the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Time to serialize `bits` onto a link of `bits_per_sec`, rounded half up to
/// whole nanoseconds. A 53-byte cell on a 155.52 Mbps link is 2726.337 ns and
/// rounds to 2726 ns.
pub fn serialization_time(bits: u64, bits_per_sec: u64) -> SimTime {
    let num = bits as u128 * 1_000_000_000;
    let den = bits_per_sec as u128;
    SimTime(((2 * num + den) / (2 * den)) as u64)
}

/// Identifies the actor an event is addressed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ActorId(pub u32);

#[derive(Debug)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: ActorId,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest (fire_at, seq).
impl<P> Ord for Event<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        other.fire_at.cmp(&self.fire_at).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Receives events popped by [`Engine::run_until`].
pub trait Handler<P> {
    fn handle(&mut self, engine: &mut Engine<P>, event: Event<P>) -> Result<(), SimError>;
}

impl<P, F> Handler<P> for F
where
    F: FnMut(&mut Engine<P>, Event<P>) -> Result<(), SimError>,
{
    fn handle(&mut self, engine: &mut Engine<P>, event: Event<P>) -> Result<(), SimError> {
        self(engine, event)
    }
}

pub struct Engine<P> {
    now: SimTime,
    next_seq: u64,
    pending: BinaryHeap<Event<P>>,
    delivered: u64,
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Engine<P> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            pending: BinaryHeap::new(),
            delivered: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events delivered so far.
    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Queues `payload` for `target` at `fire_at` and returns the sequence
    /// number assigned to it. Scheduling before the current clock is a logic
    /// error in the caller and aborts the run.
    pub fn schedule(&mut self, fire_at: SimTime, target: ActorId, payload: P) -> Result<u64, SimError> {
        if fire_at < self.now {
            return Err(SimError::ScheduleInPast { now: self.now, fire_at });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.push(Event {
            fire_at,
            seq,
            target,
            payload,
        });
        Ok(seq)
    }

    /// Schedules `payload` `delay` after the current clock.
    pub fn schedule_in(&mut self, delay: SimTime, target: ActorId, payload: P) -> Result<u64, SimError> {
        let at = self.now + delay;
        self.schedule(at, target, payload)
    }

    /// Delivers every event with `fire_at <= t_end` in `(fire_at, seq)` order
    /// and leaves the clock at `t_end`.
    pub fn run_until<H: Handler<P>>(&mut self, t_end: SimTime, handler: &mut H) -> Result<(), SimError> {
        while let Some(head) = self.pending.peek() {
            if head.fire_at > t_end {
                break;
            }
            let event = self.pending.pop().expect("peeked");
            self.now = event.fire_at;
            self.delivered += 1;
            handler.handle(self, event)?;
        }
        if t_end > self.now {
            self.now = t_end;
        }
        Ok(())
    }

    /// Removes and returns all pending events in delivery order without
    /// advancing the clock.
    pub fn drain_pending(&mut self) -> Vec<Event<P>> {
        let mut out = Vec::with_capacity(self.pending.len());
        while let Some(ev) = self.pending.pop() {
            out.push(ev);
        }
        out
    }

    /// Visits pending events in no particular order.
    pub fn iter_pending(&self) -> impl Iterator<Item = &Event<P>> {
        self.pending.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collect(engine: &mut Engine<u32>, t_end: SimTime) -> Vec<(u64, u32)> {
        let mut seen = Vec::new();
        let mut h = |e: &mut Engine<u32>, ev: Event<u32>| {
            assert_eq!(e.now(), ev.fire_at);
            seen.push((ev.fire_at.as_nanos(), ev.payload));
            Ok(())
        };
        engine.run_until(t_end, &mut h).unwrap();
        seen
    }

    #[test]
    fn schedule_at_zero_is_delivered_first() {
        let mut e = Engine::new();
        e.schedule(SimTime::from_millis(1), ActorId(0), 2).unwrap();
        e.schedule(SimTime::ZERO, ActorId(0), 1).unwrap();
        assert_eq!(collect(&mut e, SimTime::from_secs(1)), vec![(0, 1), (1_000_000, 2)]);
    }

    #[test]
    fn equal_times_keep_scheduling_order() {
        let mut e = Engine::new();
        for i in 0..5 {
            e.schedule(SimTime::from_micros(7), ActorId(0), i).unwrap();
        }
        let order: Vec<u32> = collect(&mut e, SimTime::from_secs(1))
            .into_iter()
            .map(|x| x.1)
            .collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn later_scheduled_earlier_time_goes_first() {
        let mut e = Engine::new();
        e.schedule(SimTime::from_millis(5), ActorId(0), 5).unwrap();
        e.schedule(SimTime::from_millis(3), ActorId(0), 3).unwrap();
        let order: Vec<u32> = collect(&mut e, SimTime::from_secs(1))
            .into_iter()
            .map(|x| x.1)
            .collect();
        assert_eq!(order, vec![3, 5]);
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut e: Engine<u32> = Engine::new();
        assert_eq!(e.now(), SimTime::ZERO);
        assert!(collect(&mut e, SimTime::from_secs(10)).is_empty());
        assert_eq!(e.now(), SimTime::from_secs(10));
        assert_eq!(e.delivered(), 0);
    }

    #[test]
    fn only_events_up_to_end_are_delivered() {
        let mut e = Engine::new();
        for ms in [1, 2, 3, 11] {
            e.schedule(SimTime::from_millis(ms), ActorId(0), ms as u32).unwrap();
        }
        assert_eq!(collect(&mut e, SimTime::from_millis(10)).len(), 3);
        assert_eq!(e.pending(), 1);
        assert_eq!(e.now(), SimTime::from_millis(10));
        // inclusive bound
        assert_eq!(collect(&mut e, SimTime::from_millis(11)).len(), 1);
    }

    #[test]
    fn past_scheduling_is_rejected() {
        let mut e = Engine::new();
        e.schedule(SimTime::from_millis(5), ActorId(0), 0u32).unwrap();
        let mut h =
            |e: &mut Engine<u32>, _ev: Event<u32>| e.schedule(SimTime::from_millis(1), ActorId(0), 1).map(|_| ());
        let err = e.run_until(SimTime::from_secs(1), &mut h).unwrap_err();
        assert!(matches!(err, SimError::ScheduleInPast { .. }));
    }

    #[test]
    fn handler_sees_event_time_and_can_chain() {
        let mut e = Engine::new();
        e.schedule(SimTime::ZERO, ActorId(1), 0u32).unwrap();
        let mut times = Vec::new();
        let mut h = |e: &mut Engine<u32>, ev: Event<u32>| {
            times.push(e.now().as_nanos());
            if ev.payload < 3 {
                e.schedule_in(SimTime::from_nanos(10), ev.target, ev.payload + 1)?;
            }
            Ok(())
        };
        e.run_until(SimTime::from_secs(1), &mut h).unwrap();
        assert_eq!(times, vec![0, 10, 20, 30]);
    }

    #[test]
    fn cell_time_rounding() {
        assert_eq!(serialization_time(53 * 8, 155_520_000), SimTime::from_nanos(2726));
        // exact half rounds up
        assert_eq!(serialization_time(3, 2_000_000_000), SimTime::from_nanos(2));
        assert_eq!(serialization_time(1, 1_000_000_000), SimTime::from_nanos(1));
    }
}
