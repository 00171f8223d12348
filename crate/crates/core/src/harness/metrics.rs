//! Metric records and their CSV files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::config::Method;
use crate::ldensf::FilterRun;

pub use crate::ldnet::relative_rmse;

/// Relative errors of one method at one noise level and step, averaged
/// over the filtered trajectories. Absent entries do not apply to the
/// method.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub method: Method,
    pub noise: f64,
    pub step: usize,
    pub latent_rmse: Option<f64>,
    pub param_rmse: Option<f64>,
    pub state_rmse: Option<f64>,
    /// Dimension of the filtered state.
    pub dim: usize,
}

/// Wall-clock totals of one method over a trajectory, in milliseconds.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingRecord {
    pub method: Method,
    pub members: usize,
    /// Evolution of the dynamics.
    pub t_d: f64,
    /// Filter update.
    pub t_f: f64,
    /// Reconstruction of the final full state.
    pub t_r: f64,
    pub dim: usize,
    pub steps: usize,
}

pub type TimingTable = Vec<TimingRecord>;

const METRICS_HEADER: &str = "method,noise,step,latent_rmse,param_rmse,state_rmse,dim";
const SUMMARY_HEADER: &str = "method,noise,steps,latent_rmse,param_rmse,state_rmse";
const TIMING_HEADER: &str = "method,members,t_d_ms,t_f_ms,t_r_ms,dim,steps";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Format(format!("bad number {s:?}")))
}

fn parse_field<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("bad field {s:?}")))
}

fn rows<'a>(text: &'a str, header: &str) -> Result<Vec<Vec<&'a str>>> {
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(Error::Format(format!("expected header {header:?}")));
    }
    let width = header.split(',').count();
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != width {
                return Err(Error::Format(format!("row {l:?} has {} columns, expected {width}", cols.len())));
            }
            Ok(cols)
        })
        .collect()
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method,
            r.noise,
            r.step,
            opt(r.latent_rmse),
            opt(r.param_rmse),
            opt(r.state_rmse),
            r.dim
        );
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    rows(text, METRICS_HEADER)?
        .into_iter()
        .map(|c| {
            Ok(MetricsRecord {
                method: c[0].parse().map_err(|e: Error| Error::Format(e.to_string()))?,
                noise: parse_field(c[1])?,
                step: parse_field(c[2])?,
                latent_rmse: parse_opt(c[3])?,
                param_rmse: parse_opt(c[4])?,
                state_rmse: parse_opt(c[5])?,
                dim: parse_field(c[6])?,
            })
        })
        .collect()
}

/// Mean of each metric over the last quarter (rounded up) of steps.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub noise: f64,
    pub steps: usize,
    pub latent_rmse: Option<f64>,
    pub param_rmse: Option<f64>,
    pub state_rmse: Option<f64>,
}

pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Method, u64), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.method, r.noise.to_bits())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, bits), mut rs)| {
            rs.sort_by_key(|r| r.step);
            let n = rs.len();
            let tail = &rs[n - n.div_ceil(4)..];
            let mean = |f: fn(&MetricsRecord) -> Option<f64>| -> Option<f64> {
                let v: Option<Vec<f64>> = tail.iter().map(|r| f(r)).collect();
                v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
            };
            SummaryRow {
                method,
                noise: f64::from_bits(bits),
                steps: n,
                latent_rmse: mean(|r| r.latent_rmse),
                param_rmse: mean(|r| r.param_rmse),
                state_rmse: mean(|r| r.state_rmse),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method,
            r.noise,
            r.steps,
            opt(r.latent_rmse),
            opt(r.param_rmse),
            opt(r.state_rmse)
        );
    }
    out
}

pub fn parse_summary(text: &str) -> Result<Vec<SummaryRow>> {
    rows(text, SUMMARY_HEADER)?
        .into_iter()
        .map(|c| {
            Ok(SummaryRow {
                method: c[0].parse().map_err(|e: Error| Error::Format(e.to_string()))?,
                noise: parse_field(c[1])?,
                steps: parse_field(c[2])?,
                latent_rmse: parse_opt(c[3])?,
                param_rmse: parse_opt(c[4])?,
                state_rmse: parse_opt(c[5])?,
            })
        })
        .collect()
}

/// Summary file written next to a metrics file.
pub fn summary_path(metrics: &Path) -> PathBuf {
    let stem = metrics.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    metrics.with_file_name(format!("{stem}_summary.csv"))
}

/// Writes `path` and its summary companion.
pub fn emit_metrics(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Contract("refusing to write an empty metrics file".into()));
    }
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(records))?;
    std::fs::write(summary_path(path), summary_csv(&summarize(records)))?;
    Ok(())
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    parse_metrics(&std::fs::read_to_string(path)?)
}

pub fn timing_csv(table: &[TimingRecord]) -> String {
    let mut out = String::from(TIMING_HEADER);
    out.push('\n');
    for r in table {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.method, r.members, r.t_d, r.t_f, r.t_r, r.dim, r.steps);
    }
    out
}

pub fn parse_timing(text: &str) -> Result<TimingTable> {
    rows(text, TIMING_HEADER)?
        .into_iter()
        .map(|c| {
            Ok(TimingRecord {
                method: c[0].parse().map_err(|e: Error| Error::Format(e.to_string()))?,
                members: parse_field(c[1])?,
                t_d: parse_field(c[2])?,
                t_f: parse_field(c[3])?,
                t_r: parse_field(c[4])?,
                dim: parse_field(c[5])?,
                steps: parse_field(c[6])?,
            })
        })
        .collect()
}

pub fn emit_timing(table: &[TimingRecord], path: impl AsRef<Path>) -> Result<()> {
    if table.is_empty() {
        return Err(Error::Contract("refusing to write an empty timing file".into()));
    }
    std::fs::write(path, timing_csv(table))?;
    Ok(())
}

const FILTER_HEADER: &str = "step,latent_rmse,param_rmse,state_rmse,wall_ms_predict,wall_ms_update";

/// Per-step metrics and timings of one filter run.
pub fn filter_run_csv(run: &FilterRun) -> String {
    let mut out = String::from(FILTER_HEADER);
    out.push('\n');
    for (m, t) in run.metrics.iter().zip(&run.timings) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            m.step,
            m.latent_rmse,
            m.param_rmse,
            opt(m.state_rmse),
            t.ms_predict,
            t.ms_update
        );
    }
    out
}
