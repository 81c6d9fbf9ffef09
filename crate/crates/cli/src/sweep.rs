//! Sweeps of one config axis, run in parallel.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use biloop_core::SchemeId;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Algorithm, ExperimentConfig};
use crate::experiment::{format_table, run_experiment, SummaryRow};

/// Caps the number of sweep worker threads.
pub const THREADS_ENV: &str = "BILOOP_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    N,
    Q,
    Scheme,
}

impl FromStr for Axis {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, SweepError> {
        match s {
            "N" | "n" => Ok(Axis::N),
            "Q" | "q" => Ok(Axis::Q),
            "scheme" => Ok(Axis::Scheme),
            other => Err(SweepError::Axis(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum AxisValue {
    Count(usize),
    Scheme(SchemeId),
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Count(v) => write!(f, "{v}"),
            AxisValue::Scheme(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SweepError {
    #[error("unknown sweep axis `{0}` (expected N, Q or scheme)")]
    Axis(String),
    #[error("invalid value `{value}` for axis {axis}: {message}")]
    Value {
        axis: String,
        value: String,
        message: String,
    },
    #[error("building thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: AxisValue,
    pub result: Result<SummaryRow, String>,
}

/// Parses the comma-separated value list; an empty list is allowed.
pub fn parse_values(axis: Axis, base: &ExperimentConfig, list: &str) -> Result<Vec<AxisValue>, SweepError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let fail = |message: String| SweepError::Value {
                axis: format!("{axis:?}"),
                value: s.into(),
                message,
            };
            match axis {
                Axis::N | Axis::Q => s
                    .parse::<usize>()
                    .map_err(|e| fail(e.to_string()))
                    .and_then(|v| if v == 0 { Err(fail("must be positive".into())) } else { Ok(AxisValue::Count(v)) }),
                Axis::Scheme => s
                    .parse::<SchemeId>()
                    .or_else(|_| {
                        SchemeId::parse(base.algorithm.name(), s).ok_or_else(|| format!("unknown scheme `{s}`"))
                    })
                    .map(AxisValue::Scheme)
                    .map_err(fail),
            }
        })
        .collect()
}

/// The base config with one axis value applied.
pub fn apply(base: &ExperimentConfig, axis: Axis, value: &AxisValue) -> ExperimentConfig {
    let mut c = base.clone();
    match (axis, value) {
        (Axis::N, AxisValue::Count(v)) => c.n = Some(*v),
        (Axis::Q, AxisValue::Count(v)) => c.q = Some(*v),
        (_, AxisValue::Scheme(s)) => {
            c.scheme = Some(*s);
            c.algorithm = if s.is_aid() { Algorithm::Aid } else { Algorithm::Itd };
            c.n = None;
            c.q = None;
        }
        _ => unreachable!("axis values are parsed per axis"),
    }
    c.output = base.output.as_ref().map(|p| suffixed(p, axis, value));
    c
}

fn suffixed(path: &std::path::Path, axis: Axis, value: &AxisValue) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tag = match value {
        AxisValue::Count(v) => format!("{axis:?}{v}"),
        AxisValue::Scheme(s) => format!("{}_{}", s.algorithm(), s.name()),
    };
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{tag}"),
    };
    path.with_file_name(name)
}

fn thread_count() -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(cores, |cap| cap.min(cores))
}

/// One run per value; rows come back sorted by axis value. Failed runs
/// become error rows.
pub fn sweep(base: &ExperimentConfig, axis: Axis, values: &[AxisValue]) -> Result<Vec<SweepRow>, SweepError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        values
            .par_iter()
            .map(|v| SweepRow {
                value: v.clone(),
                result: run_experiment(&apply(base, axis, v))
                    .map(|(_, row)| row)
                    .map_err(|e| e.to_string()),
            })
            .collect()
    });
    rows.sort_by(|a, b| a.value.cmp(&b.value));
    Ok(rows)
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let labelled: Vec<_> = rows
        .iter()
        .map(|r| (r.value.to_string(), r.result.clone()))
        .collect();
    format_table(&labelled)
}
