//! Cell-level simulation of greedy TCP connections sharing an ATM UBR
//! switch port.
//!
//! The crate is organised bottom-up:
//!
//! * [`engine`]: integer-nanosecond clock and ordered event queue.
//! * [`adaptation`]: segmentation of TCP segments into 53-byte cells and
//!   reassembly at the destination.
//! * [`tcp`]: sender/receiver state machines (Vanilla, Reno, New Reno, SACK).
//! * [`switch`]: bounded FIFO with Tail Drop, EPD, Selective Drop and FBA.
//! * [`metrics`]: efficiency, fairness, maximum TCP throughput.
//! * [`scenario`]: configuration, presets and sweeps.
//! * [`sim`]: the N-source topology that wires everything together.
//! * [`trace`] and [`report`]: binary trace streams, CSV rows and tables.

pub mod adaptation;
pub mod engine;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod switch;
pub mod tcp;
pub mod trace;

pub use error::{ConfigError, ReportError, RunError, SimError};
