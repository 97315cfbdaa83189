//! Binary trace streams.
//!
//! Every stream starts with a 16-byte header followed by fixed-width
//! little-endian records:
//!
//! ```text
//! offset  size  field
//!      0     8  magic "UBRTRACE"
//!      8     2  format version (1)
//!     10     2  schema id
//!     12     2  record length in bytes
//!     14     2  reserved, zero
//! ```
//!
//! Record layouts by schema (`pad` bytes are zero):
//!
//! ```text
//! 1 cwnd       (32)  time_ns u64 | vc u32 | event u8 | pad 3 | cwnd u64 | ssthresh u64
//! 2 queue      (40)  time_ns u64 | occupancy u32 | kind u8 | pad 3 |
//!                    accepted u64 | dropped_tail u64 | dropped_policy u64
//! 3 drop       (24)  time_ns u64 | vc u32 | frame u32 | index u16 | reason u8 | pad 5
//! 4 admission  (40)  time_ns u64 | vc u32 | verdict u8 | pad 3 | x u64 | y u64 | n_active u64
//! ```
//!
//! Queue `kind` is 0 for an arrival and 1 for a departure; the counters are
//! cumulative. Admission `verdict` is 0 for accept and `1 + reason` for a
//! drop, with reasons numbered as in [`DropReason`].

use std::fmt;
use std::io::{self, Read, Write};

use sha2::{Digest, Sha256};

use crate::engine::SimTime;
use crate::error::SimError;
use crate::switch::{DropReason, Verdict};
use crate::tcp::CwndEvent;

pub const MAGIC: [u8; 8] = *b"UBRTRACE";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u16)]
pub enum Schema {
    Cwnd = 1,
    Queue = 2,
    Drop = 3,
    Admission = 4,
}

impl Schema {
    pub const ALL: [Schema; 4] = [Schema::Cwnd, Schema::Queue, Schema::Drop, Schema::Admission];

    pub fn from_u16(v: u16) -> Option<Self> {
        Schema::ALL.into_iter().find(|s| *s as u16 == v)
    }

    pub fn record_len(self) -> usize {
        match self {
            Schema::Cwnd => 32,
            Schema::Queue => 40,
            Schema::Drop => 24,
            Schema::Admission => 40,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Schema::Cwnd => "cwnd",
            Schema::Queue => "queue",
            Schema::Drop => "drop",
            Schema::Admission => "admission",
        }
    }

    /// Default file name inside an output directory.
    pub fn file_name(self) -> &'static str {
        match self {
            Schema::Cwnd => "cwnd.trace",
            Schema::Queue => "queue.trace",
            Schema::Drop => "drops.trace",
            Schema::Admission => "admissions.trace",
        }
    }

    pub fn csv_header(self) -> &'static [&'static str] {
        match self {
            Schema::Cwnd => &["time_ns", "vc", "event", "cwnd_bytes", "ssthresh_bytes"],
            Schema::Queue => &[
                "time_ns",
                "occupancy",
                "kind",
                "accepted",
                "dropped_tail",
                "dropped_policy",
            ],
            Schema::Drop => &["time_ns", "vc", "frame", "index", "reason"],
            Schema::Admission => &["time_ns", "vc", "verdict", "x", "y", "n_active"],
        }
    }

    pub fn header(self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[..8].copy_from_slice(&MAGIC);
        h[8..10].copy_from_slice(&VERSION.to_le_bytes());
        h[10..12].copy_from_slice(&(self as u16).to_le_bytes());
        h[12..14].copy_from_slice(&(self.record_len() as u16).to_le_bytes());
        h
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueueEventKind {
    Arrival = 0,
    Departure = 1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Record {
    Cwnd {
        time: SimTime,
        vc: u32,
        event: CwndEvent,
        cwnd: u64,
        ssthresh: u64,
    },
    Queue {
        time: SimTime,
        occupancy: u32,
        kind: QueueEventKind,
        accepted: u64,
        dropped_tail: u64,
        dropped_policy: u64,
    },
    Drop {
        time: SimTime,
        vc: u32,
        frame: u32,
        index: u16,
        reason: DropReason,
    },
    Admission {
        time: SimTime,
        vc: u32,
        verdict: Verdict,
        x: u64,
        y: u64,
        n_active: u64,
    },
}

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Accept => 0,
        Verdict::Drop(r) => 1 + r as u8,
    }
}

fn verdict_from(code: u8) -> Option<Verdict> {
    match code {
        0 => Some(Verdict::Accept),
        c => DropReason::from_u8(c - 1).map(Verdict::Drop),
    }
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Accept => "accept",
        Verdict::Drop(r) => r.as_str(),
    }
}

struct Enc<'a> {
    buf: &'a mut [u8],
    at: usize,
}

impl Enc<'_> {
    fn put(&mut self, bytes: &[u8]) {
        self.buf[self.at..self.at + bytes.len()].copy_from_slice(bytes);
        self.at += bytes.len();
    }
    fn u64(&mut self, v: u64) {
        self.put(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.put(&v.to_le_bytes());
    }
    fn u16(&mut self, v: u16) {
        self.put(&v.to_le_bytes());
    }
    fn u8(&mut self, v: u8) {
        self.put(&[v]);
    }
    fn pad(&mut self, n: usize) {
        self.at += n;
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Dec<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.buf[self.at..self.at + N].try_into().expect("in bounds");
        self.at += N;
        out
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn pad(&mut self, n: usize) {
        self.at += n;
    }
}

impl Record {
    pub fn schema(&self) -> Schema {
        match self {
            Record::Cwnd { .. } => Schema::Cwnd,
            Record::Queue { .. } => Schema::Queue,
            Record::Drop { .. } => Schema::Drop,
            Record::Admission { .. } => Schema::Admission,
        }
    }

    /// Writes the record into `buf`, which must be exactly
    /// `schema().record_len()` zeroed bytes.
    pub fn encode(&self, buf: &mut [u8]) {
        debug_assert_eq!(buf.len(), self.schema().record_len());
        let mut e = Enc { buf, at: 0 };
        match *self {
            Record::Cwnd {
                time,
                vc,
                event,
                cwnd,
                ssthresh,
            } => {
                e.u64(time.as_nanos());
                e.u32(vc);
                e.u8(event as u8);
                e.pad(3);
                e.u64(cwnd);
                e.u64(ssthresh);
            }
            Record::Queue {
                time,
                occupancy,
                kind,
                accepted,
                dropped_tail,
                dropped_policy,
            } => {
                e.u64(time.as_nanos());
                e.u32(occupancy);
                e.u8(kind as u8);
                e.pad(3);
                e.u64(accepted);
                e.u64(dropped_tail);
                e.u64(dropped_policy);
            }
            Record::Drop {
                time,
                vc,
                frame,
                index,
                reason,
            } => {
                e.u64(time.as_nanos());
                e.u32(vc);
                e.u32(frame);
                e.u16(index);
                e.u8(reason as u8);
                e.pad(5);
            }
            Record::Admission {
                time,
                vc,
                verdict,
                x,
                y,
                n_active,
            } => {
                e.u64(time.as_nanos());
                e.u32(vc);
                e.u8(verdict_code(verdict));
                e.pad(3);
                e.u64(x);
                e.u64(y);
                e.u64(n_active);
            }
        }
    }

    pub fn decode(schema: Schema, buf: &[u8]) -> Result<Record, String> {
        if buf.len() != schema.record_len() {
            return Err(format!(
                "{schema} record must be {} bytes, got {}",
                schema.record_len(),
                buf.len()
            ));
        }
        let mut d = Dec { buf, at: 0 };
        let time = SimTime::from_nanos(d.u64());
        Ok(match schema {
            Schema::Cwnd => {
                let vc = d.u32();
                let code = d.u8();
                let event = CwndEvent::from_u8(code).ok_or_else(|| format!("unknown cwnd event {code}"))?;
                d.pad(3);
                Record::Cwnd {
                    time,
                    vc,
                    event,
                    cwnd: d.u64(),
                    ssthresh: d.u64(),
                }
            }
            Schema::Queue => {
                let occupancy = d.u32();
                let kind = match d.u8() {
                    0 => QueueEventKind::Arrival,
                    1 => QueueEventKind::Departure,
                    k => return Err(format!("unknown queue event kind {k}")),
                };
                d.pad(3);
                Record::Queue {
                    time,
                    occupancy,
                    kind,
                    accepted: d.u64(),
                    dropped_tail: d.u64(),
                    dropped_policy: d.u64(),
                }
            }
            Schema::Drop => {
                let vc = d.u32();
                let frame = d.u32();
                let index = d.u16();
                let code = d.u8();
                let reason = DropReason::from_u8(code).ok_or_else(|| format!("unknown drop reason {code}"))?;
                Record::Drop {
                    time,
                    vc,
                    frame,
                    index,
                    reason,
                }
            }
            Schema::Admission => {
                let vc = d.u32();
                let code = d.u8();
                let verdict = verdict_from(code).ok_or_else(|| format!("unknown verdict {code}"))?;
                d.pad(3);
                Record::Admission {
                    time,
                    vc,
                    verdict,
                    x: d.u64(),
                    y: d.u64(),
                    n_active: d.u64(),
                }
            }
        })
    }

    pub fn csv_fields(&self) -> Vec<String> {
        match *self {
            Record::Cwnd {
                time,
                vc,
                event,
                cwnd,
                ssthresh,
            } => vec![
                time.as_nanos().to_string(),
                vc.to_string(),
                event.as_str().to_string(),
                cwnd.to_string(),
                ssthresh.to_string(),
            ],
            Record::Queue {
                time,
                occupancy,
                kind,
                accepted,
                dropped_tail,
                dropped_policy,
            } => vec![
                time.as_nanos().to_string(),
                occupancy.to_string(),
                match kind {
                    QueueEventKind::Arrival => "arrival",
                    QueueEventKind::Departure => "departure",
                }
                .to_string(),
                accepted.to_string(),
                dropped_tail.to_string(),
                dropped_policy.to_string(),
            ],
            Record::Drop {
                time,
                vc,
                frame,
                index,
                reason,
            } => vec![
                time.as_nanos().to_string(),
                vc.to_string(),
                frame.to_string(),
                index.to_string(),
                reason.as_str().to_string(),
            ],
            Record::Admission {
                time,
                vc,
                verdict,
                x,
                y,
                n_active,
            } => vec![
                time.as_nanos().to_string(),
                vc.to_string(),
                verdict_str(verdict).to_string(),
                x.to_string(),
                y.to_string(),
                n_active.to_string(),
            ],
        }
    }
}

/// Where encoded bytes go.
pub enum Sink {
    /// Count records only.
    Null,
    Memory(Vec<u8>),
    Writer(Box<dyn Write + Send>),
}

impl fmt::Debug for Sink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sink::Null => f.write_str("Null"),
            Sink::Memory(b) => write!(f, "Memory({} bytes)", b.len()),
            Sink::Writer(_) => f.write_str("Writer"),
        }
    }
}

const FLUSH_AT: usize = 1 << 16;

/// One open trace stream. Bytes are staged in a buffer and handed to the
/// sink and the optional digest in chunks.
#[derive(Debug)]
pub struct TraceStream {
    schema: Schema,
    sink: Sink,
    hasher: Option<Sha256>,
    staged: Vec<u8>,
    records: u64,
}

/// What a finished stream produced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamSummary {
    pub schema: Schema,
    pub records: u64,
    /// SHA-256 of the complete stream, header included.
    pub digest: Option<[u8; 32]>,
    /// Complete stream bytes for memory sinks.
    pub bytes: Option<Vec<u8>>,
}

impl StreamSummary {
    pub fn digest_hex(&self) -> Option<String> {
        self.digest.map(|d| d.iter().map(|b| format!("{b:02x}")).collect())
    }
}

impl TraceStream {
    pub fn new(schema: Schema, sink: Sink, hash: bool) -> Self {
        let mut staged = Vec::with_capacity(FLUSH_AT + 64);
        staged.extend_from_slice(&schema.header());
        TraceStream {
            schema,
            sink,
            hasher: hash.then(Sha256::new),
            staged,
            records: 0,
        }
    }

    pub fn schema(&self) -> Schema {
        self.schema
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn push(&mut self, rec: &Record) -> Result<(), SimError> {
        debug_assert_eq!(rec.schema(), self.schema);
        self.records += 1;
        if matches!(self.sink, Sink::Null) && self.hasher.is_none() {
            return Ok(());
        }
        let len = self.schema.record_len();
        let at = self.staged.len();
        self.staged.resize(at + len, 0);
        rec.encode(&mut self.staged[at..]);
        if self.staged.len() >= FLUSH_AT {
            self.flush_staged()?;
        }
        Ok(())
    }

    fn flush_staged(&mut self) -> Result<(), SimError> {
        if let Some(h) = self.hasher.as_mut() {
            h.update(&self.staged);
        }
        match &mut self.sink {
            Sink::Null => {}
            Sink::Memory(v) => v.extend_from_slice(&self.staged),
            Sink::Writer(w) => w
                .write_all(&self.staged)
                .map_err(|e| SimError::Trace(format!("{} stream: {e}", self.schema)))?,
        }
        self.staged.clear();
        Ok(())
    }

    pub fn finish(mut self) -> Result<StreamSummary, SimError> {
        self.flush_staged()?;
        if let Sink::Writer(w) = &mut self.sink {
            w.flush()
                .map_err(|e| SimError::Trace(format!("{} stream: {e}", self.schema)))?;
        }
        Ok(StreamSummary {
            schema: self.schema,
            records: self.records,
            digest: self.hasher.map(|h| h.finalize().into()),
            bytes: match self.sink {
                Sink::Memory(v) => Some(v),
                _ => None,
            },
        })
    }
}

/// Reads a header and returns the schema it announces.
pub fn read_header<R: Read>(r: &mut R) -> Result<Schema, String> {
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h).map_err(|e| format!("trace header: {e}"))?;
    if h[..8] != MAGIC {
        return Err("not a trace file (bad magic)".into());
    }
    let version = u16::from_le_bytes([h[8], h[9]]);
    if version != VERSION {
        return Err(format!("unsupported trace version {version}"));
    }
    let id = u16::from_le_bytes([h[10], h[11]]);
    let schema = Schema::from_u16(id).ok_or_else(|| format!("unknown schema id {id}"))?;
    let len = u16::from_le_bytes([h[12], h[13]]) as usize;
    if len != schema.record_len() {
        return Err(format!(
            "{schema} records are {} bytes, header says {len}",
            schema.record_len()
        ));
    }
    Ok(schema)
}

/// Iterates over the records of a trace stream.
pub struct TraceReader<R> {
    inner: R,
    schema: Schema,
    buf: Vec<u8>,
}

impl<R: Read> TraceReader<R> {
    pub fn new(mut inner: R) -> Result<Self, String> {
        let schema = read_header(&mut inner)?;
        Ok(TraceReader {
            inner,
            schema,
            buf: vec![0; schema.record_len()],
        })
    }

    pub fn schema(&self) -> Schema {
        self.schema
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<Record, String>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut filled = 0;
        while filled < self.buf.len() {
            match self.inner.read(&mut self.buf[filled..]) {
                Ok(0) if filled == 0 => return None,
                Ok(0) => return Some(Err(format!("truncated {} record", self.schema))),
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Some(Err(e.to_string())),
            }
        }
        Some(Record::decode(self.schema, &self.buf))
    }
}

/// Converts a binary trace into CSV with a header row. Returns the record
/// count.
pub fn dump_csv<R: Read, W: Write>(input: R, output: W) -> Result<u64, String> {
    let reader = TraceReader::new(input)?;
    let schema = reader.schema();
    let mut w = csv::Writer::from_writer(output);
    w.write_record(schema.csv_header()).map_err(|e| e.to_string())?;
    let mut n = 0;
    for rec in reader {
        w.write_record(rec?.csv_fields()).map_err(|e| e.to_string())?;
        n += 1;
    }
    w.flush().map_err(|e| e.to_string())?;
    Ok(n)
}
