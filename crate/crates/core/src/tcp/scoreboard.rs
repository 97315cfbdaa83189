use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Entry {
    sacked: bool,
    retransmitted: bool,
}

/// Table of segments sent but not yet cumulatively acknowledged.
///
/// All segments are `mss` bytes and aligned to `mss`, so the table is a
/// dense run of entries starting at `base` (the first unacknowledged byte).
#[derive(Clone, Debug)]
pub struct Scoreboard {
    mss: u64,
    base: u64,
    entries: VecDeque<Entry>,
    high_sacked: u64,
    hole_cursor: u64,
}

impl Scoreboard {
    pub fn new(mss: u32) -> Self {
        Scoreboard {
            mss: mss as u64,
            base: 0,
            entries: VecDeque::new(),
            high_sacked: 0,
            hole_cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One past the last byte tracked.
    pub fn end(&self) -> u64 {
        self.base + self.entries.len() as u64 * self.mss
    }

    /// Highest right edge reported by any SACK block since the last reset.
    pub fn high_sacked(&self) -> u64 {
        self.high_sacked
    }

    fn index(&self, seq: u64) -> Option<usize> {
        if seq < self.base {
            return None;
        }
        let i = ((seq - self.base) / self.mss) as usize;
        (i < self.entries.len()).then_some(i)
    }

    /// Records a newly sent segment starting at `seq`, which must equal
    /// [`Scoreboard::end`].
    pub fn push_sent(&mut self, seq: u64) {
        debug_assert_eq!(seq, self.end());
        self.entries.push_back(Entry::default());
    }

    /// Drops entries below the cumulative ACK.
    pub fn advance(&mut self, ack: u64) {
        while ack >= self.base + self.mss && !self.entries.is_empty() {
            self.entries.pop_front();
            self.base += self.mss;
        }
        if self.entries.is_empty() && ack > self.base {
            self.base = ack;
        }
        self.high_sacked = self.high_sacked.max(self.base);
        self.hole_cursor = self.hole_cursor.max(self.base);
    }

    /// Marks every whole segment inside `[left, right)` as SACKed.
    pub fn mark_sacked(&mut self, left: u64, right: u64) {
        let mut seq = left.max(self.base);
        while seq + self.mss <= right {
            match self.index(seq) {
                Some(i) => self.entries[i].sacked = true,
                None => break,
            }
            seq += self.mss;
        }
        self.high_sacked = self.high_sacked.max(right.min(self.end()));
    }

    pub fn mark_retransmitted(&mut self, seq: u64) {
        if let Some(i) = self.index(seq) {
            self.entries[i].retransmitted = true;
        }
    }

    pub fn is_sacked(&self, seq: u64) -> bool {
        self.index(seq).is_some_and(|i| self.entries[i].sacked)
    }

    pub fn is_retransmitted(&self, seq: u64) -> bool {
        self.index(seq).is_some_and(|i| self.entries[i].retransmitted)
    }

    /// First segment below the highest SACKed byte that is neither SACKed
    /// nor already retransmitted.
    pub fn next_hole(&mut self) -> Option<u64> {
        let mut seq = self.hole_cursor.max(self.base);
        while seq + self.mss <= self.high_sacked {
            let i = self.index(seq)?;
            let e = self.entries[i];
            if !e.sacked && !e.retransmitted {
                self.hole_cursor = seq;
                return Some(seq);
            }
            seq += self.mss;
        }
        self.hole_cursor = seq;
        None
    }

    /// Forgets all SACK and retransmission marks; entries stay tracked.
    pub fn reset(&mut self) {
        for e in self.entries.iter_mut() {
            *e = Entry::default();
        }
        self.high_sacked = self.base;
        self.hole_cursor = self.base;
    }

    /// Bytes currently marked SACKed.
    pub fn sacked_bytes(&self) -> u64 {
        self.entries.iter().filter(|e| e.sacked).count() as u64 * self.mss
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn board(n: u64) -> Scoreboard {
        let mut s = Scoreboard::new(512);
        for i in 0..n {
            s.push_sent(i * 512);
        }
        s
    }

    #[test]
    fn holes_are_found_below_highest_sack() {
        let mut s = board(8);
        s.mark_sacked(1024, 2048);
        s.mark_sacked(3072, 3584);
        assert_eq!(s.high_sacked(), 3584);
        assert_eq!(s.next_hole(), Some(0));
        s.mark_retransmitted(0);
        assert_eq!(s.next_hole(), Some(512));
        s.mark_retransmitted(512);
        assert_eq!(s.next_hole(), Some(2048));
        s.mark_retransmitted(2048);
        assert_eq!(s.next_hole(), Some(2560));
        s.mark_retransmitted(2560);
        assert_eq!(s.next_hole(), None);
    }

    #[test]
    fn advance_and_reset() {
        let mut s = board(4);
        s.mark_sacked(1024, 1536);
        s.mark_retransmitted(0);
        s.advance(512);
        assert_eq!(s.len(), 3);
        assert!(s.is_sacked(1024));
        s.reset();
        assert!(!s.is_sacked(1024));
        assert_eq!(s.sacked_bytes(), 0);
        assert_eq!(s.next_hole(), None);
        s.advance(2048);
        assert!(s.is_empty());
        assert_eq!(s.end(), 2048);
        s.push_sent(2048);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn blocks_outside_window_are_clipped() {
        let mut s = board(2);
        s.mark_sacked(512, 4096);
        assert!(s.is_sacked(512));
        assert_eq!(s.high_sacked(), 1024);
    }
}
