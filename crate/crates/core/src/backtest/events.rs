//! CSV ingestion of swaps, liquidity events and oracle ticks.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BacktestError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapEvent {
    pub timestamp_ms: i64,
    pub delta_y: f64,
    pub delta_x: f64,
    /// Pool rate after the trade (X per Y).
    pub rate: f64,
    pub depth: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpEvent {
    pub timestamp_ms: i64,
    pub tick_lower: f64,
    pub tick_upper: f64,
    pub liquidity_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleTick {
    pub timestamp_ms: i64,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Swap(SwapEvent),
    Lp(LpEvent),
    Oracle(OracleTick),
}

impl Event {
    pub fn timestamp_ms(&self) -> i64 {
        match self {
            Event::Swap(e) => e.timestamp_ms,
            Event::Lp(e) => e.timestamp_ms,
            Event::Oracle(e) => e.timestamp_ms,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub swap_rows: usize,
    pub lp_rows: usize,
    pub oracle_rows: usize,
    /// `(file, line)` of rows whose timestamp went backwards; they were
    /// stably re-sorted.
    pub non_monotone: Vec<(String, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventDataset {
    pub swaps: Vec<SwapEvent>,
    pub lp_events: Vec<LpEvent>,
    pub oracle: Vec<OracleTick>,
    pub report: ParseReport,
}

impl EventDataset {
    /// All events in timestamp order; at equal timestamps swaps come first,
    /// then liquidity events, then oracle ticks.
    pub fn events(&self) -> Vec<Event> {
        let mut out: Vec<Event> = self
            .swaps
            .iter()
            .map(|e| Event::Swap(*e))
            .chain(self.lp_events.iter().map(|e| Event::Lp(*e)))
            .chain(self.oracle.iter().map(|e| Event::Oracle(*e)))
            .collect();
        out.sort_by_key(Event::timestamp_ms);
        out
    }

    pub fn is_empty(&self) -> bool {
        self.swaps.is_empty() && self.lp_events.is_empty() && self.oracle.is_empty()
    }

    /// First and last timestamp over all streams.
    pub fn span_ms(&self) -> Option<(i64, i64)> {
        let ts = self.swaps.iter().map(|e| e.timestamp_ms).chain(self.oracle.iter().map(|e| e.timestamp_ms));
        let (lo, hi) = ts.fold((i64::MAX, i64::MIN), |(a, b), t| (a.min(t), b.max(t)));
        (lo <= hi).then_some((lo, hi))
    }

    /// Last oracle rate strictly before `ts`.
    pub fn oracle_before(&self, ts: i64) -> Option<f64> {
        let i = self.oracle.partition_point(|o| o.timestamp_ms < ts);
        (i > 0).then(|| self.oracle[i - 1].rate)
    }

    /// Index of the first swap at or after `ts`.
    pub fn swap_index_at(&self, ts: i64) -> usize {
        self.swaps.partition_point(|s| s.timestamp_ms < ts)
    }
}

pub const SWAP_HEADER: [&str; 5] = ["timestamp_ms", "delta_y", "delta_x", "rate", "depth"];
pub const LP_HEADER: [&str; 4] = ["timestamp_ms", "tick_lower", "tick_upper", "liquidity_delta"];
pub const ORACLE_HEADER: [&str; 2] = ["timestamp_ms", "rate"];

struct Row<'a> {
    file: &'a str,
    line: usize,
    header: &'a [&'a str],
    rec: csv::StringRecord,
}

impl Row<'_> {
    fn err(&self, col: usize, message: String) -> BacktestError {
        BacktestError::Parse { file: self.file.into(), row: self.line, column: self.header[col].into(), message }
    }

    fn raw(&self, col: usize) -> &str {
        self.rec.get(col).unwrap_or("").trim()
    }

    fn int(&self, col: usize) -> Result<i64> {
        self.raw(col).parse().map_err(|_| self.err(col, format!("expected an integer, got {:?}", self.raw(col))))
    }

    fn num(&self, col: usize) -> Result<f64> {
        match self.raw(col).parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(col, format!("expected a finite number, got {:?}", self.raw(col)))),
        }
    }

    fn positive(&self, col: usize) -> Result<f64> {
        let v = self.num(col)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.err(col, format!("must be positive, got {v}")))
        }
    }
}

fn read_rows<R: Read, T>(
    input: R,
    file: &str,
    header: &[&str],
    mut parse: impl FnMut(&Row<'_>) -> Result<T>,
) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut out = Vec::new();
    let mut records = rdr.records();
    match records.next() {
        None => return Ok(out),
        Some(first) => {
            let first = first?;
            let got: Vec<&str> = first.iter().map(str::trim).collect();
            if got != header {
                return Err(BacktestError::Parse {
                    file: file.into(),
                    row: 1,
                    column: String::new(),
                    message: format!("header {got:?}, expected {header:?}"),
                });
            }
        }
    }
    for (i, rec) in records.enumerate() {
        let row = Row { file, line: i + 2, header, rec: rec? };
        if row.rec.len() != header.len() {
            return Err(BacktestError::Parse {
                file: file.into(),
                row: row.line,
                column: String::new(),
                message: format!("{} fields, expected {}", row.rec.len(), header.len()),
            });
        }
        out.push(parse(&row)?);
    }
    Ok(out)
}

/// Flags rows whose timestamp is below the previous one, then stably sorts.
fn order<T>(rows: &mut [T], ts: impl Fn(&T) -> i64, file: &str, report: &mut ParseReport) {
    let mut bad = false;
    for i in 1..rows.len() {
        if ts(&rows[i]) < ts(&rows[i - 1]) {
            report.non_monotone.push((file.into(), i + 2));
            bad = true;
        }
    }
    if bad {
        rows.sort_by_key(|r| ts(r));
    }
}

pub fn parse_swaps<R: Read>(input: R, file: &str) -> Result<Vec<SwapEvent>> {
    read_rows(input, file, &SWAP_HEADER, |r| {
        let depth = match r.raw(4) {
            "" => None,
            _ => Some(r.positive(4)?),
        };
        Ok(SwapEvent { timestamp_ms: r.int(0)?, delta_y: r.num(1)?, delta_x: r.num(2)?, rate: r.positive(3)?, depth })
    })
}

pub fn parse_lp_events<R: Read>(input: R, file: &str) -> Result<Vec<LpEvent>> {
    read_rows(input, file, &LP_HEADER, |r| {
        let (lo, hi) = (r.positive(1)?, r.positive(2)?);
        if lo >= hi {
            return Err(r.err(2, format!("tick_upper {hi} must exceed tick_lower {lo}")));
        }
        Ok(LpEvent { timestamp_ms: r.int(0)?, tick_lower: lo, tick_upper: hi, liquidity_delta: r.num(3)? })
    })
}

pub fn parse_oracle<R: Read>(input: R, file: &str) -> Result<Vec<OracleTick>> {
    read_rows(input, file, &ORACLE_HEADER, |r| Ok(OracleTick { timestamp_ms: r.int(0)?, rate: r.positive(1)? }))
}

impl EventDataset {
    /// Builds a dataset from parsed streams, sorting and flagging disorder.
    pub fn from_parts(mut swaps: Vec<SwapEvent>, mut lp_events: Vec<LpEvent>, mut oracle: Vec<OracleTick>) -> Self {
        let mut report =
            ParseReport { swap_rows: swaps.len(), lp_rows: lp_events.len(), oracle_rows: oracle.len(), non_monotone: Vec::new() };
        order(&mut swaps, |e| e.timestamp_ms, "swaps", &mut report);
        order(&mut lp_events, |e| e.timestamp_ms, "lp_events", &mut report);
        order(&mut oracle, |e| e.timestamp_ms, "oracle", &mut report);
        Self { swaps, lp_events, oracle, report }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| BacktestError::Io(format!("{}: {e}", path.display())))
}

/// Loads the three CSV files. The liquidity file is optional.
pub fn load_events(swap_path: &Path, lp_path: Option<&Path>, oracle_path: &Path) -> Result<EventDataset> {
    let name = |p: &Path| p.display().to_string();
    let swaps = parse_swaps(open(swap_path)?, &name(swap_path))?;
    let lp = match lp_path {
        Some(p) => parse_lp_events(open(p)?, &name(p))?,
        None => Vec::new(),
    };
    let oracle = parse_oracle(open(oracle_path)?, &name(oracle_path))?;
    Ok(EventDataset::from_parts(swaps, lp, oracle))
}

pub fn write_swaps<W: std::io::Write>(swaps: &[SwapEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWAP_HEADER)?;
    for s in swaps {
        let depth = s.depth.map(|d| d.to_string()).unwrap_or_default();
        w.write_record([s.timestamp_ms.to_string(), s.delta_y.to_string(), s.delta_x.to_string(), s.rate.to_string(), depth])?;
    }
    w.flush().map_err(|e| BacktestError::Io(e.to_string()))
}

pub fn write_oracle<W: std::io::Write>(ticks: &[OracleTick], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ORACLE_HEADER)?;
    for o in ticks {
        w.write_record([o.timestamp_ms.to_string(), o.rate.to_string()])?;
    }
    w.flush().map_err(|e| BacktestError::Io(e.to_string()))
}
