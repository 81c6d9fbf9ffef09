//! Single runs: hyperparameter resolution, CSV traces and summary rows.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use biloop_core::{
    default_hyperparams, run_aid, run_itd, BilevelOracle, DenseVector, Hyperparams, ItdConfig,
    LoopConfig, OptimError, RunTrace, TraceOptions,
};
use thiserror::Error;

use crate::config::{Algorithm, ConfigError, ExperimentConfig, Step};

pub const CSV_HEADER: [&str; 6] = [
    "k",
    "grad_est_norm_sq",
    "grad_true_norm_sq",
    "gc_cum",
    "mv_cum",
    "wall_ms",
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("writing trace: {0}")]
    Csv(#[from] csv::Error),
    #[error("writing trace: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// One line of a summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub n: usize,
    /// `None` for ITD.
    pub q: Option<usize>,
    /// First `k` with `‖∇Φ(x_k)‖² ≤ ε`.
    pub k_to_eps: Option<usize>,
    /// `‖∇Φ(x_K)‖²`, or the last recorded value when `x_K` has no reference.
    pub final_grad_norm_sq: Option<f64>,
    pub min_grad_norm_sq: Option<f64>,
    pub mean_grad_norm_sq: Option<f64>,
    /// Cumulative costs at `k_to_eps`, or of the whole run if not reached.
    pub gc: u64,
    pub mv: u64,
}

impl SummaryRow {
    pub fn from_trace(label: String, hp: &Hyperparams, algorithm: Algorithm, trace: &RunTrace<ExperimentConfig>, epsilon: f64) -> Self {
        let hit = trace.first_reaching(epsilon);
        let (gc, mv) = match hit {
            Some(r) => (r.gc_cum, r.mv_cum),
            None => (trace.counters.gc, trace.counters.mv),
        };
        let final_grad_norm_sq = trace
            .final_grad_true_norm_sq
            .or_else(|| trace.records.iter().rev().find_map(|r| r.grad_true_norm_sq));
        Self {
            label,
            n: hp.n,
            q: (algorithm == Algorithm::Aid).then_some(hp.q),
            k_to_eps: hit.map(|r| r.k),
            final_grad_norm_sq,
            min_grad_norm_sq: trace.min_grad_true_norm_sq(),
            mean_grad_norm_sq: trace.mean_grad_true_norm_sq(),
            gc,
            mv,
        }
    }

    pub fn k_to_eps_text(&self) -> String {
        self.k_to_eps.map_or_else(|| "not reached".into(), |k| k.to_string())
    }
}

fn opt_text(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6e}"))
}

pub const TABLE_COLUMNS: [&str; 9] = [
    "label", "N", "Q", "K_to_eps", "final", "min", "mean", "Gc", "MV",
];

/// Aligned plain-text table; `Err` rows print their message.
pub fn format_table(rows: &[(String, std::result::Result<SummaryRow, String>)]) -> String {
    let mut cells: Vec<Vec<String>> = vec![TABLE_COLUMNS.iter().map(|s| s.to_string()).collect()];
    for (label, row) in rows {
        cells.push(match row {
            Ok(r) => vec![
                label.clone(),
                r.n.to_string(),
                r.q.map_or("-".into(), |q| q.to_string()),
                r.k_to_eps_text(),
                opt_text(r.final_grad_norm_sq),
                opt_text(r.min_grad_norm_sq),
                opt_text(r.mean_grad_norm_sq),
                r.gc.to_string(),
                r.mv.to_string(),
            ],
            Err(e) => vec![label.clone(), format!("error: {e}")],
        });
    }
    let mut widths = vec![0; TABLE_COLUMNS.len()];
    for row in cells.iter().filter(|r| r.len() == TABLE_COLUMNS.len()) {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// Loop sizes and stepsizes after applying scheme defaults and overrides.
pub fn resolve_hyperparams(config: &ExperimentConfig, oracle: &dyn BilevelOracle) -> Hyperparams {
    let defaults = config
        .scheme
        .map(|s| default_hyperparams(s, &oracle.constants(), config.epsilon, config.c_beta));
    // Without a scheme every used field was checked to be explicit.
    let pick = |step: Step, default: Option<f64>| match step {
        Step::Value(v) => v,
        Step::Corollary => default.unwrap_or(0.0),
    };
    Hyperparams {
        n: config.n.or(defaults.map(|d| d.n)).unwrap_or(0),
        q: config.q.or(defaults.map(|d| d.q)).unwrap_or(0),
        alpha: pick(config.alpha, defaults.map(|d| d.alpha)),
        eta: pick(config.eta, defaults.map(|d| d.eta)),
        beta: pick(config.beta, defaults.map(|d| d.beta)),
    }
}

/// Runs the configured experiment, writing the trace CSV if a path is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(RunTrace<ExperimentConfig>, SummaryRow)> {
    config.validate()?;
    let oracle = config.problem.build()?;
    let hp = resolve_hyperparams(config, oracle.as_ref());
    let trace_opts = TraceOptions {
        stride: config.trace_stride,
        reference_tol: config.reference_tol,
        wall_time: config.wall_time,
        iterates: false,
    };
    let x0 = config.x0.clone().map(DenseVector::from);
    let trace = match config.algorithm {
        Algorithm::Aid => {
            let mut c = LoopConfig::new(hp.n, hp.q, hp.alpha, hp.eta, hp.beta, config.k);
            c.warm_start_y = config.warm_start_y;
            c.warm_start_v = config.warm_start_v;
            c.x0 = x0;
            c.trace = trace_opts;
            run_aid(oracle.as_ref(), &c)?.with_config(config.clone())
        }
        Algorithm::Itd => {
            let mut c = ItdConfig::new(hp.n, hp.alpha, hp.beta, config.k);
            c.warm_start_y = config.warm_start_y;
            c.x0 = x0;
            c.trace = trace_opts;
            run_itd(oracle.as_ref(), &c)?.with_config(config.clone())
        }
    };
    if let Some(path) = &config.output {
        write_trace_csv(&trace, path)?;
    }
    let row = SummaryRow::from_trace(config.label(), &hp, config.algorithm, &trace, config.epsilon);
    Ok((trace, row))
}

pub fn write_trace_csv<C>(trace: &RunTrace<C>, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    write_trace(trace, file)
}

/// Absent values are written as empty fields.
pub fn write_trace<C, W: Write>(trace: &RunTrace<C>, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for r in &trace.records {
        w.write_record([
            r.k.to_string(),
            r.grad_est_norm_sq.to_string(),
            r.grad_true_norm_sq.map_or(String::new(), |g| g.to_string()),
            r.gc_cum.to_string(),
            r.mv_cum.to_string(),
            r.wall_ms.map_or(String::new(), |t| t.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
