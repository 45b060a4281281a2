use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] = [
    "run_id",
    "method",
    "testbed",
    "instance_id",
    "seed",
    "iteration",
    "metric_name",
    "value",
];

/// `instance_id` of rows that summarize a whole suite.
pub const SUITE_INSTANCE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Objective,
    NmseDb,
    RelativeLossComponent,
    MetaLoss,
    WallclockMs,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Objective,
        Metric::NmseDb,
        Metric::RelativeLossComponent,
        Metric::MetaLoss,
        Metric::WallclockMs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Objective => "objective",
            Metric::NmseDb => "nmse_db",
            Metric::RelativeLossComponent => "relative_loss_component",
            Metric::MetaLoss => "meta_loss",
            Metric::WallclockMs => "wallclock_ms",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Format {
                offset: 0,
                message: format!("unknown metric {s:?}"),
            })
    }
}

/// One measured value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub method: String,
    pub testbed: String,
    pub instance_id: i64,
    pub seed: u64,
    pub iteration: u64,
    pub metric: Metric,
    pub value: f64,
}

impl RunRecord {
    /// Canonical row order: method, seed, instance, iteration, metric.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        (&self.method, self.seed, self.instance_id, self.iteration, self.metric, &self.run_id).cmp(&(
            &other.method,
            other.seed,
            other.instance_id,
            other.iteration,
            other.metric,
            &other.run_id,
        ))
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

/// Sorts `records` canonically and writes them with a header row.
pub fn write_records<W: Write>(out: W, records: &mut [RunRecord]) -> Result<()> {
    records.sort_by(RunRecord::canonical_cmp);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records.iter() {
        w.write_record([
            r.run_id.as_str(),
            r.method.as_str(),
            r.testbed.as_str(),
            &r.instance_id.to_string(),
            &r.seed.to_string(),
            &r.iteration.to_string(),
            r.metric.name(),
            &format_float(r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Format {
            offset: 0,
            message: format!("unexpected CSV header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let at = row.position().map_or(0, |p| p.byte());
        let bad = |what: &str| Error::Format {
            offset: at,
            message: format!("bad {what} in row {:?}", row.iter().collect::<Vec<_>>()),
        };
        let field = |i: usize| row.get(i).ok_or_else(|| bad("field count"));
        out.push(RunRecord {
            run_id: field(0)?.to_string(),
            method: field(1)?.to_string(),
            testbed: field(2)?.to_string(),
            instance_id: field(3)?.parse().map_err(|_| bad("instance_id"))?,
            seed: field(4)?.parse().map_err(|_| bad("seed"))?,
            iteration: field(5)?.parse().map_err(|_| bad("iteration"))?,
            metric: field(6)?.parse().map_err(|_| bad("metric_name"))?,
            value: field(7)?.parse().map_err(|_| bad("value"))?,
        });
    }
    Ok(out)
}

/// Iterations `0..=last` thinned to 1–9, 10–90, 100–900, … plus `last`.
pub fn log_grid(last: usize) -> Vec<usize> {
    let mut grid = vec![0];
    let mut step = 1;
    let mut k = 1;
    while k <= last {
        grid.push(k);
        if k >= 10 * step {
            step *= 10;
        }
        k += step;
    }
    if *grid.last().expect("grid starts at 0") != last {
        grid.push(last);
    }
    grid
}
