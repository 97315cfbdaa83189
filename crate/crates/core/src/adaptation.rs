//! AAL5-style segmentation of TCP segments into ATM cells and per-VC
//! reassembly at the destination.
//!
//! Only the framing is modelled: cells carry the VC, the frame they belong
//! to, their position in it and the end-of-message flag. Payload bytes are
//! not materialised; the enclosed [`TcpSegment`] travels alongside the frame.

use crate::tcp::TcpSegment;

/// Bytes of an ATM cell on the wire.
pub const CELL_BYTES: u64 = 53;
/// Payload bytes carried per cell.
pub const CELL_PAYLOAD_BYTES: u64 = 48;
pub const TCP_HEADER_BYTES: u64 = 20;
pub const IP_HEADER_BYTES: u64 = 20;
pub const LLC_HEADER_BYTES: u64 = 8;
pub const AAL5_TRAILER_BYTES: u64 = 8;
/// Fixed per-segment overhead carried inside the AAL5 frame.
pub const FRAME_OVERHEAD_BYTES: u64 = TCP_HEADER_BYTES + IP_HEADER_BYTES + LLC_HEADER_BYTES + AAL5_TRAILER_BYTES;

pub type VcId = u32;
pub type FrameId = u32;

/// Number of cells needed for a frame whose AAL5 PDU (before padding) is
/// `data_len + options + 56` bytes.
pub fn cells_for(data_len: u64, option_bytes: u64) -> u32 {
    let pdu = data_len + option_bytes + FRAME_OVERHEAD_BYTES;
    pdu.div_ceil(CELL_PAYLOAD_BYTES) as u32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub vc: VcId,
    pub frame: FrameId,
    pub index: u16,
    pub eom: bool,
}

impl Cell {
    pub fn is_frame_start(&self) -> bool {
        self.index == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub vc: VcId,
    pub frame: FrameId,
    pub segment: TcpSegment,
    pub cell_count: u32,
}

impl Frame {
    pub fn new(frame: FrameId, segment: TcpSegment) -> Self {
        let cell_count = cells_for(segment.data_len as u64, segment.option_bytes());
        Frame {
            vc: segment.vc,
            frame,
            segment,
            cell_count,
        }
    }

    pub fn wire_bytes(&self) -> u64 {
        self.cell_count as u64 * CELL_BYTES
    }

    /// The `index`-th cell of this frame.
    pub fn cell(&self, index: u32) -> Cell {
        debug_assert!(index < self.cell_count);
        Cell {
            vc: self.vc,
            frame: self.frame,
            index: index as u16,
            eom: index + 1 == self.cell_count,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.cell_count).map(|i| self.cell(i))
    }
}

/// Segments `segment` into the cells of frame `frame`.
pub fn segment_to_cells(frame: FrameId, segment: &TcpSegment) -> Vec<Cell> {
    Frame::new(frame, segment.clone()).cells().collect()
}

/// A frame whose cells all arrived in order up to and including the
/// end-of-message cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompletedFrame {
    pub vc: VcId,
    pub frame: FrameId,
    pub cell_count: u32,
}

#[derive(Clone, Copy, Debug, Default)]
struct Partial {
    frame: FrameId,
    next_index: u16,
    cells: u32,
    damaged: bool,
}

/// Reassembly state for one VC.
#[derive(Clone, Debug, Default)]
pub struct VcReassembly {
    current: Option<Partial>,
    delivered_frames: u64,
    discarded_frames: u64,
    wasted_cells: u64,
}

impl VcReassembly {
    /// Feeds one cell. Returns the completed frame when `cell` is the
    /// end-of-message cell of a frame that arrived intact. A frame missing
    /// any cell is discarded either when its end-of-message cell arrives or,
    /// if that cell was lost, when a cell of a later frame shows up.
    pub fn push(&mut self, cell: Cell) -> Option<CompletedFrame> {
        if let Some(p) = self.current {
            if p.frame != cell.frame {
                self.discard(p);
                self.current = None;
            }
        }
        let p = self.current.get_or_insert(Partial {
            frame: cell.frame,
            next_index: 0,
            cells: 0,
            damaged: false,
        });
        if cell.index != p.next_index {
            p.damaged = true;
        }
        p.next_index = cell.index.wrapping_add(1);
        p.cells += 1;
        if !cell.eom {
            return None;
        }
        let p = self.current.take().expect("just inserted");
        if p.damaged {
            self.discard(p);
            None
        } else {
            self.delivered_frames += 1;
            Some(CompletedFrame {
                vc: cell.vc,
                frame: p.frame,
                cell_count: p.cells,
            })
        }
    }

    fn discard(&mut self, p: Partial) {
        self.discarded_frames += 1;
        self.wasted_cells += p.cells as u64;
    }

    pub fn delivered_frames(&self) -> u64 {
        self.delivered_frames
    }

    pub fn discarded_frames(&self) -> u64 {
        self.discarded_frames
    }

    /// Cells that belonged to discarded frames.
    pub fn wasted_cells(&self) -> u64 {
        self.wasted_cells
    }

    pub fn wasted_bytes(&self) -> u64 {
        self.wasted_cells * CELL_BYTES
    }

    /// Cells of an unfinished frame still held.
    pub fn held_cells(&self) -> u32 {
        self.current.map_or(0, |p| p.cells)
    }
}

/// Reassembly for a destination that pairs completed cell sequences with the
/// segments they carry.
#[derive(Clone, Debug, Default)]
pub struct Reassembler {
    vcs: Vec<VcReassembly>,
    in_transit: Vec<std::collections::VecDeque<Frame>>,
    lost_data: Vec<u64>,
}

impl Reassembler {
    pub fn new(n_vcs: usize) -> Self {
        Reassembler {
            vcs: vec![VcReassembly::default(); n_vcs],
            in_transit: vec![Default::default(); n_vcs],
            lost_data: vec![0; n_vcs],
        }
    }

    /// Registers a frame handed to the network so its segment can be
    /// recovered when its cells complete. Frames must be registered in
    /// increasing frame order per VC.
    pub fn expect(&mut self, frame: Frame) {
        self.in_transit[frame.vc as usize].push_back(frame);
    }

    /// Feeds one cell and returns the reassembled frame, if this cell
    /// completed one.
    pub fn reassemble(&mut self, cell: Cell) -> Option<Frame> {
        let done = self.vcs[cell.vc as usize].push(cell)?;
        let v = cell.vc as usize;
        while let Some(f) = self.in_transit[v].pop_front() {
            if f.frame == done.frame {
                return Some(f);
            }
            self.lost_data[v] += f.segment.data_len as u64;
        }
        None
    }

    /// Data bytes of registered frames known to be lost, i.e. older than a
    /// frame that has since completed.
    pub fn lost_data_bytes(&self, vc: VcId) -> u64 {
        self.lost_data[vc as usize]
    }

    /// Data bytes of registered frames not yet resolved.
    pub fn in_transit_data_bytes(&self, vc: VcId) -> u64 {
        self.in_transit[vc as usize]
            .iter()
            .map(|f| f.segment.data_len as u64)
            .sum()
    }

    pub fn vc(&self, vc: VcId) -> &VcReassembly {
        &self.vcs[vc as usize]
    }

    pub fn wasted_bytes(&self) -> u64 {
        self.vcs.iter().map(|v| v.wasted_bytes()).sum()
    }
}
