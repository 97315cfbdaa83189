//! Experiment configuration: the flat `key = value` file format, LAN/WAN
//! presets, and sweep expansion.
//!
//! A configuration file holds one assignment per line. `#` starts a
//! comment. Keys:
//!
//! | key | value |
//! |---|---|
//! | `name` | free-form scenario id (default: derived from the parameters) |
//! | `preset` | `lan` or `wan`; supplies delay, window and duration defaults |
//! | `n_sources` | number of TCP connections |
//! | `policy` | `tail`, `epd`, `selective_drop` or `fba` |
//! | `variant` | `vanilla`, `reno`, `newreno` or `sack` |
//! | `buffer_cells` | switch buffer K in cells, or `infinite` |
//! | `r_fraction` | Selective Drop / FBA threshold as a fraction of K |
//! | `z` | Selective Drop / FBA load-ratio parameter |
//! | `epd_headroom_cells` | EPD threshold is K minus this many cells |
//! | `rcvwnd_bytes` | receiver window |
//! | `initial_ssthresh_bytes` | starting slow-start threshold, or `auto` for the larger of 64K and the window |
//! | `duration_ms` | simulated time |
//! | `link_rate_mbps` | rate of every link |
//! | `link_delay_us` | one-way propagation delay of every link |
//! | `mss_bytes` | segment payload size |
//! | `timer_tick_ms` | retransmission timer granularity |
//! | `start_stagger_us` | source i starts at i times this offset |
//! | `sonet_overhead` | normalise efficiency by the SONET payload rate |
//! | `trace_cwnd`, `trace_queue`, `trace_drops`, `trace_admissions` | enable a trace stream |
//! | `trace_queue_every` | keep one queue sample in this many |
//!
//! Explicit keys override preset values regardless of their position. In a
//! sweep file any value may be a comma-separated list; the cross product is
//! taken over the listed keys in the order they appear, the last one varying
//! fastest.

use std::fmt;
use std::str::FromStr;

use crate::engine::{serialization_time, SimTime};
use crate::error::ConfigError;
use crate::metrics::max_tcp_throughput;
use crate::switch::{DropPolicy, PolicyKind, Ratio};
use crate::tcp::CcVariant;

/// Buffer size meaning "never overflows".
pub const INFINITE_BUFFER_CELLS: u64 = 1 << 32;

/// SONET STS-3c payload rate.
pub const SONET_PAYLOAD_MBPS: f64 = 149.76;

/// The unscaled 64K slow-start threshold.
pub const DEFAULT_SSTHRESH: u64 = 65535;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    Lan,
    Wan,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Lan => "lan",
            Preset::Wan => "wan",
        }
    }

    pub fn link_delay(self) -> SimTime {
        match self {
            Preset::Lan => SimTime::from_micros(5),
            Preset::Wan => SimTime::from_millis(5),
        }
    }

    pub fn rcvwnd(self) -> u64 {
        match self {
            Preset::Lan => 65535,
            Preset::Wan => 600_000,
        }
    }

    pub fn duration(self) -> SimTime {
        match self {
            Preset::Lan => SimTime::from_secs(10),
            Preset::Wan => SimTime::from_secs(20),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lan" => Ok(Preset::Lan),
            "wan" => Ok(Preset::Wan),
            other => Err(format!("expected lan | wan, got `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Buffer {
    Cells(u64),
    Infinite,
}

impl Buffer {
    pub fn capacity(self) -> u64 {
        match self {
            Buffer::Cells(k) => k,
            Buffer::Infinite => INFINITE_BUFFER_CELLS,
        }
    }
}

impl fmt::Display for Buffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Buffer::Cells(k) => write!(f, "{k}"),
            Buffer::Infinite => f.write_str("infinite"),
        }
    }
}

impl FromStr for Buffer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "infinite" {
            return Ok(Buffer::Infinite);
        }
        match s.parse::<u64>() {
            Ok(0) => Err("buffer must hold at least one cell".into()),
            Ok(k) => Ok(Buffer::Cells(k)),
            Err(_) => Err(format!("expected a cell count or `infinite`, got `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TraceConfig {
    pub cwnd: bool,
    pub queue: bool,
    pub queue_every: u32,
    pub drops: bool,
    pub admissions: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            cwnd: true,
            queue: true,
            queue_every: 1,
            drops: true,
            admissions: false,
        }
    }
}

impl TraceConfig {
    pub const NONE: TraceConfig = TraceConfig {
        cwnd: false,
        queue: false,
        queue_every: 1,
        drops: false,
        admissions: false,
    };
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ScenarioConfig {
    pub name: Option<String>,
    pub preset: Preset,
    pub n_sources: u32,
    pub policy: PolicyKind,
    pub variant: CcVariant,
    pub buffer: Buffer,
    pub r_fraction: Ratio,
    pub z: Ratio,
    pub epd_headroom_cells: u64,
    pub rcvwnd: u64,
    /// `None` scales the 64K default with the window.
    pub initial_ssthresh: Option<u64>,
    pub duration: SimTime,
    pub link_rate_bps: u64,
    pub link_delay: SimTime,
    pub mss: u32,
    pub timer_tick: SimTime,
    pub start_stagger: SimTime,
    pub sonet_overhead: bool,
    pub trace: TraceConfig,
}

impl ScenarioConfig {
    /// Defaults for `preset`: 5 Vanilla sources, tail drop, infinite buffer.
    pub fn preset(preset: Preset) -> Self {
        ScenarioConfig {
            name: None,
            preset,
            n_sources: 5,
            policy: PolicyKind::TailDrop,
            variant: CcVariant::Vanilla,
            buffer: Buffer::Infinite,
            r_fraction: Ratio::new(9, 10),
            z: Ratio::new(4, 5),
            epd_headroom_cells: 200,
            rcvwnd: preset.rcvwnd(),
            initial_ssthresh: None,
            duration: preset.duration(),
            link_rate_bps: 155_520_000,
            link_delay: preset.link_delay(),
            mss: 512,
            timer_tick: SimTime::from_millis(100),
            start_stagger: SimTime::ZERO,
            sonet_overhead: false,
            trace: TraceConfig::default(),
        }
    }

    pub fn lan() -> Self {
        Self::preset(Preset::Lan)
    }

    pub fn wan() -> Self {
        Self::preset(Preset::Wan)
    }

    pub fn with(mut self, n_sources: u32, buffer: Buffer, policy: PolicyKind, variant: CcVariant) -> Self {
        self.n_sources = n_sources;
        self.buffer = buffer;
        self.policy = policy;
        self.variant = variant;
        self
    }

    /// Slow-start threshold at connection start. A window-scaled connection
    /// starts with the threshold at its full window, so it can reach that
    /// window by slow start.
    pub fn effective_initial_ssthresh(&self) -> u64 {
        self.initial_ssthresh.unwrap_or(DEFAULT_SSTHRESH.max(self.rcvwnd))
    }

    /// Time to put one 53-byte cell on a link.
    pub fn cell_time(&self) -> SimTime {
        serialization_time(crate::adaptation::CELL_BYTES * 8, self.link_rate_bps)
    }

    pub fn link_rate_mbps(&self) -> f64 {
        self.link_rate_bps as f64 / 1e6
    }

    /// Round-trip propagation delay: three links each way.
    pub fn rtt_propagation(&self) -> SimTime {
        SimTime::from_nanos(6 * self.link_delay.as_nanos())
    }

    /// Maximum TCP throughput C used to normalise efficiency.
    pub fn max_throughput(&self) -> f64 {
        let rate = if self.sonet_overhead {
            SONET_PAYLOAD_MBPS
        } else {
            self.link_rate_mbps()
        };
        max_tcp_throughput(rate, self.mss)
    }

    /// The drop policy with thresholds resolved to cells.
    pub fn drop_policy(&self) -> Result<DropPolicy, ConfigError> {
        let k = self.buffer.capacity();
        let policy = match self.policy {
            PolicyKind::TailDrop => DropPolicy::TailDrop,
            PolicyKind::Epd => DropPolicy::Epd {
                r: k.saturating_sub(self.epd_headroom_cells),
            },
            PolicyKind::SelectiveDrop => DropPolicy::SelectiveDrop {
                r: self.r_fraction.floor_mul(k),
                z: self.z,
            },
            PolicyKind::Fba => DropPolicy::Fba {
                r: self.r_fraction.floor_mul(k),
                z: self.z,
            },
        };
        policy.validate(k).map_err(|e| {
            ConfigError::Invalid(format!("policy = {}, buffer_cells = {}: {e}", self.policy, self.buffer))
        })?;
        Ok(policy)
    }

    /// Checks cross-field constraints.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.n_sources == 0 {
            return bad("n_sources must be at least 1".into());
        }
        if self.mss == 0 {
            return bad("mss_bytes must be positive".into());
        }
        if self.rcvwnd < self.mss as u64 {
            return bad(format!("rcvwnd_bytes = {} is smaller than one segment", self.rcvwnd));
        }
        if self.link_rate_bps == 0 {
            return bad("link_rate_mbps must be positive".into());
        }
        if self.timer_tick == SimTime::ZERO {
            return bad("timer_tick_ms must be positive".into());
        }
        if self.buffer == Buffer::Infinite && self.policy != PolicyKind::TailDrop {
            return bad(format!(
                "buffer_cells = infinite requires policy = tail, got policy = {}",
                self.policy
            ));
        }
        if matches!(self.policy, PolicyKind::SelectiveDrop | PolicyKind::Fba) {
            if self.r_fraction.num() == 0 || self.r_fraction.num() >= self.r_fraction.den() {
                return bad(format!("r_fraction = {} must lie in (0, 1)", self.r_fraction));
            }
            if self.z.num() == 0 || self.z > Ratio::new(2, 1) {
                return bad(format!("z = {} must lie in (0, 2]", self.z));
            }
        }
        if self.trace.queue_every == 0 {
            return bad("trace_queue_every must be at least 1".into());
        }
        self.drop_policy().map(|_| ())
    }

    /// Stable identifier used in reports.
    pub fn scenario_id(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        let mut id = format!(
            "{}-{}-{}-n{}-k{}",
            self.preset, self.variant, self.policy, self.n_sources, self.buffer
        );
        match self.policy {
            PolicyKind::TailDrop => {}
            PolicyKind::Epd => id.push_str(&format!("-h{}", self.epd_headroom_cells)),
            PolicyKind::SelectiveDrop | PolicyKind::Fba => id.push_str(&format!("-r{}-z{}", self.r_fraction, self.z)),
        }
        id
    }

    /// Renders the configuration in the file format, every key explicit.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        if let Some(name) = &self.name {
            kv("name", name.clone());
        }
        kv("preset", self.preset.to_string());
        kv("n_sources", self.n_sources.to_string());
        kv("policy", self.policy.to_string());
        kv("variant", self.variant.to_string());
        kv("buffer_cells", self.buffer.to_string());
        kv("r_fraction", self.r_fraction.to_string());
        kv("z", self.z.to_string());
        kv("epd_headroom_cells", self.epd_headroom_cells.to_string());
        kv("rcvwnd_bytes", self.rcvwnd.to_string());
        kv(
            "initial_ssthresh_bytes",
            self.initial_ssthresh
                .map_or_else(|| "auto".to_string(), |v| v.to_string()),
        );
        kv("duration_ms", format_ms(self.duration));
        kv("link_rate_mbps", format_mbps(self.link_rate_bps));
        kv("link_delay_us", format_us(self.link_delay));
        kv("mss_bytes", self.mss.to_string());
        kv("timer_tick_ms", format_ms(self.timer_tick));
        kv("start_stagger_us", format_us(self.start_stagger));
        kv("sonet_overhead", self.sonet_overhead.to_string());
        kv("trace_cwnd", self.trace.cwnd.to_string());
        kv("trace_queue", self.trace.queue.to_string());
        kv("trace_queue_every", self.trace.queue_every.to_string());
        kv("trace_drops", self.trace.drops.to_string());
        kv("trace_admissions", self.trace.admissions.to_string());
        s
    }
}

fn format_ms(t: SimTime) -> String {
    Ratio::new(t.as_nanos(), 1_000_000).to_string()
}

fn format_us(t: SimTime) -> String {
    Ratio::new(t.as_nanos(), 1_000).to_string()
}

fn format_mbps(bps: u64) -> String {
    Ratio::new(bps, 1_000_000).to_string()
}

const KEYS: &[&str] = &[
    "name",
    "preset",
    "n_sources",
    "policy",
    "variant",
    "buffer_cells",
    "r_fraction",
    "z",
    "epd_headroom_cells",
    "rcvwnd_bytes",
    "initial_ssthresh_bytes",
    "duration_ms",
    "link_rate_mbps",
    "link_delay_us",
    "mss_bytes",
    "timer_tick_ms",
    "start_stagger_us",
    "sonet_overhead",
    "trace_cwnd",
    "trace_queue",
    "trace_queue_every",
    "trace_drops",
    "trace_admissions",
];

/// One `key = value` line; `values` has more than one entry only in sweeps.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Entry {
    line: usize,
    key: String,
    values: Vec<String>,
}

fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                msg: "missing key before `=`".into(),
            });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
        let values: Vec<String> = value.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(|v| v.is_empty()) {
            return Err(ConfigError::InvalidValue {
                line,
                key: key.to_string(),
                value: value.trim().to_string(),
                reason: "empty value".into(),
            });
        }
        entries.push(Entry {
            line,
            key: key.to_string(),
            values,
        });
    }
    Ok(entries)
}

fn parse_decimal_scaled(v: &str, scale: u64, unit: &str) -> Result<u64, String> {
    let r: Ratio = v.parse()?;
    let scaled = r.num() as u128 * scale as u128;
    if !scaled.is_multiple_of(r.den() as u128) {
        return Err(format!("`{v}` is finer than one {unit}"));
    }
    u64::try_from(scaled / r.den() as u128).map_err(|_| format!("`{v}` is too large"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(format!("expected true | false, got `{other}`")),
    }
}

fn parse_int<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("expected a non-negative integer, got `{v}`"))
}

/// Applies one assignment to `cfg`.
fn apply(cfg: &mut ScenarioConfig, key: &str, v: &str) -> Result<(), String> {
    match key {
        "name" => cfg.name = Some(v.to_string()),
        "preset" => {} // applied first
        "n_sources" => cfg.n_sources = parse_int(v)?,
        "policy" => cfg.policy = v.parse()?,
        "variant" => cfg.variant = v.parse()?,
        "buffer_cells" => cfg.buffer = v.parse()?,
        "r_fraction" => cfg.r_fraction = v.parse()?,
        "z" => cfg.z = v.parse()?,
        "epd_headroom_cells" => cfg.epd_headroom_cells = parse_int(v)?,
        "rcvwnd_bytes" => cfg.rcvwnd = parse_int(v)?,
        "initial_ssthresh_bytes" => cfg.initial_ssthresh = if v == "auto" { None } else { Some(parse_int(v)?) },
        "duration_ms" => cfg.duration = SimTime::from_nanos(parse_decimal_scaled(v, 1_000_000, "nanosecond")?),
        "link_rate_mbps" => cfg.link_rate_bps = parse_decimal_scaled(v, 1_000_000, "bit/s")?,
        "link_delay_us" => cfg.link_delay = SimTime::from_nanos(parse_decimal_scaled(v, 1_000, "nanosecond")?),
        "mss_bytes" => cfg.mss = parse_int(v)?,
        "timer_tick_ms" => cfg.timer_tick = SimTime::from_nanos(parse_decimal_scaled(v, 1_000_000, "nanosecond")?),
        "start_stagger_us" => cfg.start_stagger = SimTime::from_nanos(parse_decimal_scaled(v, 1_000, "nanosecond")?),
        "sonet_overhead" => cfg.sonet_overhead = parse_bool(v)?,
        "trace_cwnd" => cfg.trace.cwnd = parse_bool(v)?,
        "trace_queue" => cfg.trace.queue = parse_bool(v)?,
        "trace_queue_every" => cfg.trace.queue_every = parse_int(v)?,
        "trace_drops" => cfg.trace.drops = parse_bool(v)?,
        "trace_admissions" => cfg.trace.admissions = parse_bool(v)?,
        other => unreachable!("key `{other}` passed the key check"),
    }
    Ok(())
}

/// Builds a config from single-valued assignments.
fn build_config(assignments: &[(usize, &str, &str)]) -> Result<ScenarioConfig, ConfigError> {
    let invalid = |line: usize, key: &str, value: &str, reason: String| ConfigError::InvalidValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        reason,
    };
    let preset = match assignments.iter().find(|(_, k, _)| *k == "preset") {
        Some(&(line, key, v)) => v.parse().map_err(|e| invalid(line, key, v, e))?,
        None => Preset::Lan,
    };
    let mut cfg = ScenarioConfig::preset(preset);
    for &(line, key, v) in assignments {
        apply(&mut cfg, key, v).map_err(|e| invalid(line, key, v, e))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioConfig {
    /// Parses a single-scenario configuration file.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let entries = parse_entries(text)?;
        if let Some(e) = entries.iter().find(|e| e.values.len() > 1) {
            return Err(ConfigError::InvalidValue {
                line: e.line,
                key: e.key.clone(),
                value: e.values.join(", "),
                reason: "value lists are only allowed in sweep files".into(),
            });
        }
        let assignments: Vec<(usize, &str, &str)> = entries
            .iter()
            .map(|e| (e.line, e.key.as_str(), e.values[0].as_str()))
            .collect();
        build_config(&assignments)
    }
}

impl FromStr for ScenarioConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioConfig::parse(s)
    }
}

/// A cross product of configuration values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepSpec {
    entries: Vec<Entry>,
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let spec = SweepSpec {
            entries: parse_entries(text)?,
        };
        // surface bad values with their line before any expansion
        for e in &spec.entries {
            for v in &e.values {
                let mut scratch = ScenarioConfig::lan();
                if e.key == "preset" {
                    v.parse::<Preset>().map(|_| ())
                } else {
                    apply(&mut scratch, &e.key, v)
                }
                .map_err(|reason| ConfigError::InvalidValue {
                    line: e.line,
                    key: e.key.clone(),
                    value: v.clone(),
                    reason,
                })?;
            }
        }
        Ok(spec)
    }

    /// Keys that take more than one value, in declaration order.
    pub fn axes(&self) -> Vec<(&str, usize)> {
        self.entries
            .iter()
            .filter(|e| e.values.len() > 1)
            .map(|e| (e.key.as_str(), e.values.len()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All member configurations, the last declared key varying fastest.
    /// Members with a `name` get a `-NNN` suffix.
    pub fn expand(&self) -> Result<Vec<ScenarioConfig>, ConfigError> {
        let total = self.len();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; self.entries.len()];
        for member in 0..total {
            let assignments: Vec<(usize, &str, &str)> = self
                .entries
                .iter()
                .zip(&idx)
                .map(|(e, &i)| (e.line, e.key.as_str(), e.values[i].as_str()))
                .collect();
            let mut cfg = build_config(&assignments).map_err(|e| match e {
                ConfigError::Invalid(m) => ConfigError::Invalid(format!("sweep member {member}: {m}")),
                other => other,
            })?;
            if total > 1 {
                if let Some(name) = &cfg.name {
                    cfg.name = Some(format!("{name}-{member:03}"));
                }
            }
            out.push(cfg);
            for (d, e) in self.entries.iter().enumerate().rev() {
                idx[d] += 1;
                if idx[d] < e.values.len() {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(out)
    }
}
