//! Result rows and the table renderer.
//!
//! Every run becomes one CSV row whose columns carry the full experiment
//! identity, so a table can be rebuilt from CSV files alone. [`tabulate`]
//! arranges rows as `(preset, N, K)` by policy or by variant, with one
//! "Column Average" row closing each preset block.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ReportError;
use crate::metrics::RunReport;
use crate::scenario::{Buffer, Preset, ScenarioConfig};
use crate::switch::{DropPolicy, PolicyKind, Ratio};
use crate::tcp::CcVariant;

/// Column order of result files.
pub const CSV_COLUMNS: [&str; 13] = [
    "scenario_id",
    "preset",
    "variant",
    "policy",
    "n_sources",
    "buffer_cells",
    "r",
    "z",
    "efficiency",
    "fairness",
    "max_queue_cells",
    "wasted_bytes",
    "duration_ms",
];

/// One result row. `r` is the resolved threshold in cells and is empty for
/// tail drop; `z` is empty unless the policy uses it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scenario_id: String,
    pub preset: String,
    pub variant: String,
    pub policy: String,
    pub n_sources: u32,
    pub buffer_cells: String,
    pub r: String,
    pub z: String,
    pub efficiency: String,
    pub fairness: String,
    pub max_queue_cells: u64,
    pub wasted_bytes: u64,
    pub duration_ms: String,
}

impl CsvRow {
    pub fn new(cfg: &ScenarioConfig, report: &RunReport) -> Self {
        let policy = cfg.drop_policy().ok();
        let r = policy
            .as_ref()
            .and_then(DropPolicy::threshold)
            .map_or_else(String::new, |r| r.to_string());
        let z = policy
            .as_ref()
            .and_then(DropPolicy::z)
            .map_or_else(String::new, |z| z.to_string());
        CsvRow {
            scenario_id: cfg.scenario_id(),
            preset: cfg.preset.to_string(),
            variant: cfg.variant.to_string(),
            policy: cfg.policy.to_string(),
            n_sources: cfg.n_sources,
            buffer_cells: cfg.buffer.to_string(),
            r,
            z,
            efficiency: format!("{:.6}", report.efficiency),
            fairness: report.fairness.to_string(),
            max_queue_cells: report.max_queue,
            wasted_bytes: report.wasted_bytes,
            duration_ms: Ratio::new(cfg.duration.as_nanos(), 1_000_000).to_string(),
        }
    }
}

/// Writes a header and `rows` as CSV.
pub fn write_csv<W: Write>(out: W, rows: &[CsvRow]) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_csv`]; the header must match exactly.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<CsvRow>, ReportError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_COLUMNS) {
        return Err(ReportError::Invalid(format!(
            "unexpected CSV header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    r.deserialize().map(|row| row.map_err(ReportError::from)).collect()
}

pub fn read_csv_file(path: &Path) -> Result<Vec<CsvRow>, ReportError> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnAxis {
    Policy,
    Variant,
}

impl FromStr for ColumnAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "policy" => Ok(ColumnAxis::Policy),
            "variant" => Ok(ColumnAxis::Variant),
            other => Err(format!("unknown column axis `{other}` (expected policy | variant)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Efficiency,
    Fairness,
    MaxQueue,
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "efficiency" => Ok(Metric::Efficiency),
            "fairness" => Ok(Metric::Fairness),
            "max_queue" => Ok(Metric::MaxQueue),
            other => Err(format!(
                "unknown metric `{other}` (expected efficiency | fairness | max_queue)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TableFormat {
    /// Tab-separated text.
    #[default]
    Text,
    Csv,
}

impl FromStr for TableFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(TableFormat::Text),
            "csv" => Ok(TableFormat::Csv),
            other => Err(format!("unknown table format `{other}` (expected text | csv)")),
        }
    }
}

/// Which rows feed a table and how they are laid out. Rows not matching a
/// set filter are ignored; each remaining `(preset, N, K, column)` must
/// occur exactly once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableSpec {
    pub columns: ColumnAxis,
    pub metric: Metric,
    pub preset: Option<Preset>,
    pub policy: Option<PolicyKind>,
    pub variant: Option<CcVariant>,
    pub format: TableFormat,
}

impl TableSpec {
    pub fn new(columns: ColumnAxis, metric: Metric) -> Self {
        TableSpec {
            columns,
            metric,
            preset: None,
            policy: None,
            variant: None,
            format: TableFormat::Text,
        }
    }
}

/// Rounds to `places` decimals, ties to even. A value within 1e-9 of a
/// tie counts as a tie, so decimal inputs such as 0.345 that have no exact
/// binary form still round as written.
pub fn round_half_even(x: f64, places: u32) -> f64 {
    let scale = 10f64.powi(places as i32);
    let scaled = x * scale;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let rounded = if (frac - 0.5).abs() < 1e-9 {
        if floor % 2.0 == 0.0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        scaled.round()
    };
    rounded / scale
}

/// Mean of `values`, or `None` if any value is undefined or there are none.
pub fn column_average(values: &[Option<f64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let sum: Option<f64> = values.iter().copied().sum();
    sum.map(|s| s / values.len() as f64)
}

fn format_metric(metric: Metric, v: Option<f64>) -> String {
    match v {
        None => "NA".to_string(),
        Some(v) if metric == Metric::MaxQueue => format!("{}", round_half_even(v, 0)),
        Some(v) => format!("{:.2}", round_half_even(v, 2)),
    }
}

fn parse_metric(metric: Metric, row: &CsvRow) -> Result<Option<f64>, ReportError> {
    let text = match metric {
        Metric::Efficiency => row.efficiency.as_str(),
        Metric::Fairness => row.fairness.as_str(),
        Metric::MaxQueue => return Ok(Some(row.max_queue_cells as f64)),
    };
    if text == "NA" {
        return Ok(None);
    }
    text.parse::<f64>()
        .map(Some)
        .map_err(|_| ReportError::Invalid(format!("{}: bad metric value `{text}`", row.scenario_id)))
}

fn column_label(axis: ColumnAxis, key: &str) -> &'static str {
    match (axis, key) {
        (ColumnAxis::Policy, "tail") => "UBR",
        (ColumnAxis::Policy, "epd") => "EPD",
        (ColumnAxis::Policy, "selective_drop") => "Selective Drop",
        (ColumnAxis::Policy, "fba") => "FBA",
        (ColumnAxis::Variant, "vanilla") => "Vanilla TCP",
        (ColumnAxis::Variant, "reno") => "Reno TCP",
        (ColumnAxis::Variant, "newreno") => "New Reno TCP",
        (ColumnAxis::Variant, "sack") => "SACK TCP",
        _ => "?",
    }
}

/// Sort key for a buffer column value: finite sizes ascending, then infinite.
fn buffer_key(b: &str) -> Result<u64, ReportError> {
    match b.parse::<Buffer>() {
        Ok(Buffer::Cells(k)) => Ok(k),
        Ok(Buffer::Infinite) => Ok(u64::MAX),
        Err(e) => Err(ReportError::Invalid(format!("bad buffer_cells `{b}`: {e}"))),
    }
}

fn preset_rank(p: &str) -> Result<u8, ReportError> {
    match p.parse::<Preset>() {
        Ok(Preset::Lan) => Ok(0),
        Ok(Preset::Wan) => Ok(1),
        Err(e) => Err(ReportError::Invalid(format!("bad preset `{p}`: {e}"))),
    }
}

fn column_rank(axis: ColumnAxis, key: &str) -> Result<usize, ReportError> {
    let rank = match axis {
        ColumnAxis::Policy => key.parse::<PolicyKind>().map(|p| p as usize),
        ColumnAxis::Variant => key.parse::<CcVariant>().map(|v| v as usize),
    };
    rank.map_err(|e| ReportError::Invalid(format!("bad column value `{key}`: {e}")))
}

/// Renders `rows` as a table laid out by `spec`.
pub fn tabulate(rows: &[CsvRow], spec: &TableSpec) -> Result<String, ReportError> {
    type RowKey = (u8, String, u32, u64, String);
    let mut cells: BTreeMap<RowKey, BTreeMap<usize, Vec<&CsvRow>>> = BTreeMap::new();
    let mut columns: BTreeMap<usize, String> = BTreeMap::new();
    for row in rows {
        if spec.preset.is_some_and(|p| p.to_string() != row.preset)
            || spec.policy.is_some_and(|p| p.to_string() != row.policy)
            || spec.variant.is_some_and(|v| v.to_string() != row.variant)
        {
            continue;
        }
        let col = match spec.columns {
            ColumnAxis::Policy => &row.policy,
            ColumnAxis::Variant => &row.variant,
        };
        let rank = column_rank(spec.columns, col)?;
        columns.insert(rank, col.clone());
        let key = (
            preset_rank(&row.preset)?,
            row.preset.clone(),
            row.n_sources,
            buffer_key(&row.buffer_cells)?,
            row.buffer_cells.clone(),
        );
        cells.entry(key).or_default().entry(rank).or_default().push(row);
    }
    if cells.is_empty() {
        return Err(ReportError::Invalid("no rows match the table filters".into()));
    }

    let sep = match spec.format {
        TableFormat::Text => "\t",
        TableFormat::Csv => ",",
    };
    let mut out = String::new();
    let mut header = vec!["Configuration", "Number of Sources", "Buffer Size (cells)"];
    header.extend(columns.values().map(|c| column_label(spec.columns, c)));
    writeln!(out, "{}", header.join(sep)).unwrap();

    let mut block: Vec<Vec<Option<f64>>> = Vec::new();
    let mut block_preset: Option<String> = None;
    let flush = |out: &mut String, block: &mut Vec<Vec<Option<f64>>>| {
        if block.is_empty() {
            return;
        }
        let mut line = vec!["Column Average".to_string(), String::new(), String::new()];
        for c in 0..columns.len() {
            let col: Vec<Option<f64>> = block.iter().map(|r| r[c]).collect();
            line.push(format_metric(spec.metric, column_average(&col)));
        }
        writeln!(out, "{}", line.join(sep)).unwrap();
        block.clear();
    };
    for ((_, preset, n, _, buffer), by_col) in &cells {
        if block_preset.as_deref() != Some(preset) {
            flush(&mut out, &mut block);
            block_preset = Some(preset.clone());
        }
        let row_name = format!("{} {} {}", preset.to_uppercase(), n, buffer);
        let mut line = vec![preset.to_uppercase(), n.to_string(), buffer.clone()];
        let mut values = Vec::with_capacity(columns.len());
        for (rank, col) in &columns {
            let matches = by_col.get(rank).map_or(&[][..], Vec::as_slice);
            let row = match matches {
                [one] => *one,
                [] => {
                    return Err(ReportError::MissingCell {
                        row: row_name,
                        column: col.clone(),
                    })
                }
                _ => {
                    return Err(ReportError::AmbiguousCell {
                        row: row_name,
                        column: col.clone(),
                    })
                }
            };
            let v = parse_metric(spec.metric, row)?;
            line.push(format_metric(spec.metric, v));
            values.push(v);
        }
        writeln!(out, "{}", line.join(sep)).unwrap();
        block.push(values);
    }
    flush(&mut out, &mut block);
    Ok(out)
}
