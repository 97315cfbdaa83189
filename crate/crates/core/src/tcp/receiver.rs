use super::{TcpSegment, MAX_SACK_BLOCKS};
use crate::adaptation::VcId;

#[derive(Clone, Copy, Debug)]
struct Block {
    start: u64,
    end: u64,
    stamp: u64,
}

/// What happened to the data of an arriving segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReceiveOutcome {
    /// Data was new and in order; `rcv_nxt` advanced (possibly by more than
    /// the segment when it filled a gap).
    InOrder,
    /// Data was new but above `rcv_nxt`; held until the gap fills.
    Held,
    /// All of the data had already been received.
    Duplicate,
}

/// Destination side of a connection. Every data segment is acknowledged
/// immediately (no delayed ACKs).
#[derive(Clone, Debug)]
pub struct TcpReceiver {
    vc: VcId,
    rcv_nxt: u64,
    rcvwnd: u64,
    sack: bool,
    blocks: Vec<Block>,
    clock: u64,
    duplicate_bytes: u64,
}

impl TcpReceiver {
    pub fn new(vc: VcId, rcvwnd: u64, sack: bool) -> Self {
        TcpReceiver {
            vc,
            rcv_nxt: 0,
            rcvwnd,
            sack,
            blocks: Vec::new(),
            clock: 0,
            duplicate_bytes: 0,
        }
    }

    pub fn rcv_nxt(&self) -> u64 {
        self.rcv_nxt
    }

    pub fn rcvwnd(&self) -> u64 {
        self.rcvwnd
    }

    /// Bytes delivered in order to the application.
    pub fn delivered_bytes(&self) -> u64 {
        self.rcv_nxt
    }

    /// Bytes held above `rcv_nxt` waiting for a gap to fill.
    pub fn held_bytes(&self) -> u64 {
        self.blocks.iter().map(|b| b.end - b.start).sum()
    }

    /// Bytes received that had already been received before.
    pub fn duplicate_bytes(&self) -> u64 {
        self.duplicate_bytes
    }

    /// Out-of-order blocks in sequence order.
    pub fn ooo_blocks(&self) -> Vec<(u64, u64)> {
        self.blocks.iter().map(|b| (b.start, b.end)).collect()
    }

    /// Processes a data segment and returns the ACK to send back.
    pub fn on_segment(&mut self, seg: &TcpSegment) -> (TcpSegment, ReceiveOutcome) {
        self.clock += 1;
        let (start, end) = (seg.seq, seg.end());
        let outcome = if end <= self.rcv_nxt {
            self.duplicate_bytes += seg.data_len as u64;
            ReceiveOutcome::Duplicate
        } else if start <= self.rcv_nxt {
            self.rcv_nxt = end;
            while let Some(first) = self.blocks.first() {
                if first.start > self.rcv_nxt {
                    break;
                }
                self.rcv_nxt = self.rcv_nxt.max(first.end);
                self.blocks.remove(0);
            }
            ReceiveOutcome::InOrder
        } else {
            self.insert(start, end, seg.data_len as u64)
        };

        let mut ack = TcpSegment::ack(self.vc, self.rcv_nxt);
        if self.sack && !self.blocks.is_empty() {
            let mut order: Vec<&Block> = self.blocks.iter().collect();
            order.sort_by_key(|b| std::cmp::Reverse(b.stamp));
            for b in order.into_iter().take(MAX_SACK_BLOCKS) {
                ack.sack_blocks.push((b.start, b.end));
            }
        }
        (ack, outcome)
    }

    fn insert(&mut self, start: u64, end: u64, len: u64) -> ReceiveOutcome {
        let stamp = self.clock;
        let pos = self.blocks.partition_point(|b| b.end < start);
        if let Some(b) = self.blocks.get_mut(pos) {
            if b.start <= start && end <= b.end {
                self.duplicate_bytes += len;
                b.stamp = stamp;
                return ReceiveOutcome::Duplicate;
            }
        }
        // merge every block that touches [start, end)
        let mut merged = Block { start, end, stamp };
        let i = pos;
        while i < self.blocks.len() && self.blocks[i].start <= merged.end {
            let b = self.blocks.remove(i);
            merged.start = merged.start.min(b.start);
            merged.end = merged.end.max(b.end);
        }
        self.blocks.insert(pos, merged);
        ReceiveOutcome::Held
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(seq: u64) -> TcpSegment {
        TcpSegment::data(0, seq, 512)
    }

    #[test]
    fn in_order_segment_acks_without_blocks() {
        let mut r = TcpReceiver::new(0, 65535, true);
        let (ack, o) = r.on_segment(&data(0));
        assert_eq!(ack.ack, 512);
        assert!(ack.sack_blocks.is_empty());
        assert_eq!(o, ReceiveOutcome::InOrder);
    }

    #[test]
    fn gap_produces_dup_ack_with_block() {
        let mut r = TcpReceiver::new(0, 65535, true);
        r.on_segment(&data(0));
        let (ack, o) = r.on_segment(&data(1024));
        assert_eq!(o, ReceiveOutcome::Held);
        assert_eq!(ack.ack, 512);
        assert_eq!(ack.sack_blocks.as_slice(), &[(1024, 1536)]);
    }

    #[test]
    fn gap_fill_merges_cumulatively() {
        let mut r = TcpReceiver::new(0, 65535, true);
        r.on_segment(&data(0));
        r.on_segment(&data(1024));
        let (ack, o) = r.on_segment(&data(512));
        assert_eq!(o, ReceiveOutcome::InOrder);
        assert_eq!(ack.ack, 1536);
        assert!(ack.sack_blocks.is_empty());
        assert_eq!(r.held_bytes(), 0);
    }

    #[test]
    fn most_recent_block_first_and_at_most_three() {
        let mut r = TcpReceiver::new(0, 65535, true);
        for seq in [1024, 2048, 3072, 4096] {
            r.on_segment(&data(seq));
        }
        // extend the oldest block
        let (ack, _) = r.on_segment(&data(1536));
        assert_eq!(ack.ack, 0);
        assert_eq!(ack.sack_blocks.as_slice(), &[(1024, 2560), (4096, 4608), (3072, 3584)]);
        assert_eq!(r.ooo_blocks(), vec![(1024, 2560), (3072, 3584), (4096, 4608)]);
    }

    #[test]
    fn non_sack_receiver_sends_plain_dup_acks() {
        let mut r = TcpReceiver::new(0, 65535, false);
        let (ack, _) = r.on_segment(&data(1024));
        assert_eq!(ack.ack, 0);
        assert!(ack.sack_blocks.is_empty());
        assert_eq!(r.held_bytes(), 512);
    }

    #[test]
    fn duplicates_are_counted() {
        let mut r = TcpReceiver::new(0, 65535, true);
        r.on_segment(&data(0));
        let (_, o) = r.on_segment(&data(0));
        assert_eq!(o, ReceiveOutcome::Duplicate);
        r.on_segment(&data(2048));
        let (_, o) = r.on_segment(&data(2048));
        assert_eq!(o, ReceiveOutcome::Duplicate);
        assert_eq!(r.duplicate_bytes(), 1024);
        assert_eq!(r.delivered_bytes() + r.held_bytes(), 1024);
    }
}
