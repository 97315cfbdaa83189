use thiserror::Error;

use crate::engine::SimTime;

/// A runtime invariant violation. Any of these aborts the run.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled in the past (now {now}, fire_at {fire_at})")]
    ScheduleInPast { now: SimTime, fire_at: SimTime },
    #[error("vc {vc}: ack {ack} is beyond the highest byte sent ({snd_max})")]
    AckBeyondSent { vc: u32, ack: u64, snd_max: u64 },
    #[error("switch occupancy invariant violated: {0}")]
    QueueAccounting(String),
    #[error("byte conservation ledger does not balance: {0}")]
    Ledger(String),
    #[error("trace output failed: {0}")]
    Trace(String),
}

impl SimError {
    /// Short name of the violated invariant, used in diagnostics.
    pub fn invariant(&self) -> &'static str {
        match self {
            SimError::ScheduleInPast { .. } => "schedule-not-in-past",
            SimError::AckBeyondSent { .. } => "ack-within-sent-data",
            SimError::QueueAccounting(_) => "queue-accounting",
            SimError::Ledger(_) => "byte-conservation",
            SimError::Trace(_) => "trace-io",
        }
    }
}

/// A configuration or sweep file that could not be parsed or validated.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for key `{key}`: {reason}")]
    InvalidValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("table cell ({row}, {column}) has no matching run")]
    MissingCell { row: String, column: String },
    #[error("table cell ({row}, {column}) matches more than one run")]
    AmbiguousCell { row: String, column: String },
    #[error("{0}")]
    Invalid(String),
}

/// Why a scenario could not produce a report.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invariant `{}` violated: {0}", .0.invariant())]
    Sim(#[from] SimError),
}
