use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::records::{format_float, read_records, Metric, RunRecord};

/// Method name of the rows carrying the per-instance LASSO reference optimum.
pub const REFERENCE_METHOD: &str = "reference";

/// Slack below `E[f*]` within which a negative numerator counts as rounding.
pub const REFERENCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeLoss {
    pub value: f64,
    /// Set when a tiny negative numerator was clamped to zero.
    pub clamped: bool,
}

/// `E[f − f*] / E[f*]` over a suite (a ratio of means, not a mean of ratios).
pub fn relative_loss(f: &[f64], f_star: &[f64]) -> Result<RelativeLoss> {
    if f.is_empty() || f_star.is_empty() {
        return Err(Error::contract("relative loss of an empty suite"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ef, es) = (mean(f), mean(f_star));
    if !(es > 0.0) {
        return Err(Error::contract(format!("relative loss needs E[f*] > 0, got {es}")));
    }
    let num = ef - es;
    if num < 0.0 && num >= -REFERENCE_TOLERANCE * es {
        return Ok(RelativeLoss { value: 0.0, clamped: true });
    }
    Ok(RelativeLoss {
        value: num / es,
        clamped: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub testbed: String,
    pub method: String,
    pub metric: String,
    pub iteration: u64,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Mean and standard error (sample standard deviation over `√n`; 0 for one sample).
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-(testbed, method, metric, iteration) aggregates.
///
/// LASSO components are first reduced to one relative loss per seed (metric
/// `relative_loss`) using the seed's reference rows; every other metric pools
/// all matching rows.
pub fn aggregate(records: &[RunRecord]) -> Vec<SummaryRow> {
    type Key = (String, String, String, u64);
    let mut pooled: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    let mut components: BTreeMap<(String, String, u64, u64), Vec<f64>> = BTreeMap::new();
    let mut reference: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for r in records {
        if r.metric == Metric::RelativeLossComponent {
            components
                .entry((r.testbed.clone(), r.method.clone(), r.seed, r.iteration))
                .or_default()
                .push(r.value);
            continue;
        }
        if r.method == REFERENCE_METHOD && r.metric == Metric::Objective {
            reference.entry((r.testbed.clone(), r.seed)).or_default().push(r.value);
        }
        pooled
            .entry((r.testbed.clone(), r.method.clone(), r.metric.name().to_string(), r.iteration))
            .or_default()
            .push(r.value);
    }
    for ((testbed, method, seed, it), comps) in components {
        let Some(f_star) = reference.get(&(testbed.clone(), seed)) else {
            continue;
        };
        let es = f_star.iter().sum::<f64>() / f_star.len() as f64;
        let num = comps.iter().sum::<f64>() / comps.len() as f64;
        let value = if num < 0.0 && num >= -REFERENCE_TOLERANCE * es { 0.0 } else { num / es };
        pooled
            .entry((testbed, method, "relative_loss".to_string(), it))
            .or_default()
            .push(value);
    }
    pooled
        .into_iter()
        .map(|((testbed, method, metric, iteration), v)| {
            let (mean, stderr) = mean_stderr(&v);
            SummaryRow {
                testbed,
                method,
                metric,
                iteration,
                n: v.len(),
                mean,
                stderr,
            }
        })
        .collect()
}

/// Metrics a complete run of `testbed` is expected to contain.
fn expected_metrics(testbed: &str) -> &'static [&'static str] {
    match testbed {
        "sparse_recovery" => &["nmse_db"],
        "lasso" => &["relative_loss"],
        "rastrigin" | "mlp" => &["objective"],
        _ => &[],
    }
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["testbed", "method", "metric", "iteration", "n", "mean", "stderr"])?;
    for r in rows {
        w.write_record([
            r.testbed.as_str(),
            r.method.as_str(),
            r.metric.as_str(),
            &r.iteration.to_string(),
            &r.n.to_string(),
            &format_float(r.mean),
            &format_float(r.stderr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table of the last iteration of every (method, metric); a
/// missing expected metric shows as `-`.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut last: BTreeMap<(String, String, String), &SummaryRow> = BTreeMap::new();
    let mut methods: BTreeSet<(String, String)> = BTreeSet::new();
    for r in rows {
        methods.insert((r.testbed.clone(), r.method.clone()));
        let key = (r.testbed.clone(), r.method.clone(), r.metric.clone());
        if last.get(&key).is_none_or(|prev| prev.iteration <= r.iteration) {
            last.insert(key, r);
        }
    }
    let mut lines = vec![format!(
        "{:<16} {:<14} {:<24} {:>9} {:>5} {:>14} {:>12}",
        "testbed", "method", "metric", "iteration", "n", "mean", "stderr"
    )];
    for (testbed, method) in &methods {
        if method == REFERENCE_METHOD {
            continue;
        }
        let mut metrics: BTreeSet<String> = expected_metrics(testbed).iter().map(|s| s.to_string()).collect();
        metrics.extend(
            last.keys()
                .filter(|(t, m, _)| t == testbed && m == method)
                .map(|(_, _, metric)| metric.clone()),
        );
        for metric in metrics {
            match last.get(&(testbed.clone(), method.clone(), metric.clone())) {
                Some(r) => lines.push(format!(
                    "{:<16} {:<14} {:<24} {:>9} {:>5} {:>14.6e} {:>12.3e}",
                    testbed, method, metric, r.iteration, r.n, r.mean, r.stderr
                )),
                None => lines.push(format!(
                    "{:<16} {:<14} {:<24} {:>9} {:>5} {:>14} {:>12}",
                    testbed, method, metric, "-", "-", "-", "-"
                )),
            }
        }
    }
    lines.join("\n") + "\n"
}

/// Reads `records.csv` from `input` and writes `summary.csv` and
/// `summary.txt` to `output`.
pub fn report(input: &Path, output: &Path) -> Result<Vec<SummaryRow>> {
    let file = std::fs::File::open(input.join("records.csv"))?;
    let records = read_records(file)?;
    let rows = aggregate(&records);
    std::fs::create_dir_all(output)?;
    write_summary_csv(std::fs::File::create(output.join("summary.csv"))?, &rows)?;
    std::fs::write(output.join("summary.txt"), summary_table(&rows))?;
    Ok(rows)
}
