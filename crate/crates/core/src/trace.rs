//! Cost accounting, run traces and the outer descent loop shared by both
//! optimizers.

use std::fmt;
use std::time::Instant;

use thiserror::Error;

use crate::analysis::{exact_hypergradient, AnalysisError};
use crate::numerics::DenseVector;
use crate::problems::BilevelOracle;

/// Running oracle tallies.
///
/// `gc` counts gradient evaluations (`∇_y g`, `∇_y f`, `∇_x f`); `mv` counts
/// Hessian- and Jacobian-vector products.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CostCounters {
    pub gc: u64,
    pub mv: u64,
}

/// Which sub-computation produced a non-finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Inner,
    LinearSystem,
    Hypergradient,
    Outer,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Inner => "inner gradient descent",
            Stage::LinearSystem => "linear-system descent",
            Stage::Hypergradient => "hypergradient",
            Stage::Outer => "outer update",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{stage} produced a non-finite value at step {step}{}", iteration_suffix(*.iteration))]
    Diverged {
        stage: Stage,
        step: usize,
        iteration: Option<usize>,
    },
    #[error("trajectory was recorded at a different outer point or stepsize")]
    TrajectoryMismatch,
    #[error("reference hypergradient failed at iteration {iteration}: {source}")]
    Reference {
        iteration: usize,
        #[source]
        source: AnalysisError,
    },
}

fn iteration_suffix(iteration: Option<usize>) -> String {
    iteration
        .map(|k| format!(" of outer iteration {k}"))
        .unwrap_or_default()
}

impl OptimError {
    pub(crate) fn at_iteration(self, k: usize) -> Self {
        match self {
            OptimError::Diverged { stage, step, .. } => OptimError::Diverged {
                stage,
                step,
                iteration: Some(k),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// What to record alongside each iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceOptions {
    /// Reference gradients are computed on iterations divisible by this
    /// when the problem has no exact oracle.
    pub stride: usize,
    /// Inner tolerance of the computed reference; `None` disables it.
    pub reference_tol: Option<f64>,
    /// Stores elapsed milliseconds per record. Off by default so that
    /// traces are reproducible byte for byte.
    pub wall_time: bool,
    /// Stores a copy of every iterate.
    pub iterates: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            reference_tol: Some(1e-10),
            wall_time: false,
            iterates: false,
        }
    }
}

impl TraceOptions {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(OptimError::InvalidConfig("trace stride must be positive".into()));
        }
        if let Some(tol) = self.reference_tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(OptimError::InvalidConfig(format!(
                    "reference tolerance must be positive (got {tol})"
                )));
            }
        }
        Ok(())
    }
}

/// Metrics of outer iteration `k`, measured at `x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub x_norm: f64,
    /// `‖∇̂Φ(x_k)‖²`
    pub grad_est_norm_sq: f64,
    /// `‖∇Φ(x_k)‖²`, absent when no reference was computed at `k`.
    pub grad_true_norm_sq: Option<f64>,
    /// Cumulative costs after iteration `k`.
    pub gc_cum: u64,
    pub mv_cum: u64,
    pub wall_ms: Option<f64>,
    pub x: Option<DenseVector>,
}

/// Outcome of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<C> {
    pub config: C,
    pub records: Vec<TraceRecord>,
    /// `x_K`, the iterate after the last update.
    pub final_x: DenseVector,
    /// `‖∇Φ(x_K)‖²` when a reference is available.
    pub final_grad_true_norm_sq: Option<f64>,
    pub counters: CostCounters,
}

impl<C> RunTrace<C> {
    /// Replaces the echoed configuration.
    pub fn with_config<D>(self, config: D) -> RunTrace<D> {
        RunTrace {
            config,
            records: self.records,
            final_x: self.final_x,
            final_grad_true_norm_sq: self.final_grad_true_norm_sq,
            counters: self.counters,
        }
    }

    /// First record whose true gradient norm² is at most `eps`.
    pub fn first_reaching(&self, eps: f64) -> Option<&TraceRecord> {
        self.records
            .iter()
            .find(|r| r.grad_true_norm_sq.is_some_and(|g| g <= eps))
    }

    pub fn min_grad_true_norm_sq(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.grad_true_norm_sq)
            .reduce(f64::min)
    }

    /// `(1/K) Σ_k ‖∇Φ(x_k)‖²` over records that carry the value.
    pub fn mean_grad_true_norm_sq(&self) -> Option<f64> {
        let values: Vec<f64> = self.records.iter().filter_map(|r| r.grad_true_norm_sq).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub(crate) fn check_finite(v: &DenseVector, stage: Stage, step: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(OptimError::Diverged {
            stage,
            step,
            iteration: None,
        })
    }
}

pub(crate) fn check_dim(what: &'static str, v: &DenseVector, expected: usize) -> Result<()> {
    if v.dim() == expected {
        Ok(())
    } else {
        Err(OptimError::DimensionMismatch {
            what,
            expected,
            got: v.dim(),
        })
    }
}

pub(crate) fn check_stepsize(name: &str, value: f64, l: f64) -> Result<()> {
    // Relative slack so that 1/L computed elsewhere still passes.
    if value > 0.0 && value.is_finite() && value * l <= 1.0 + 1e-12 {
        Ok(())
    } else {
        Err(OptimError::InvalidConfig(format!(
            "{name} must lie in (0, 1/L] with L = {l} (got {value})"
        )))
    }
}

pub(crate) fn check_outer_stepsize(beta: f64) -> Result<()> {
    if beta >= 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(OptimError::InvalidConfig(format!(
            "beta must be a non-negative number (got {beta})"
        )))
    }
}

/// The reference `∇Φ(x)`, if one is available at iteration `k`.
fn reference<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &DenseVector,
    k: usize,
    opts: &TraceOptions,
) -> Result<Option<DenseVector>> {
    if let Some(exact) = oracle.exact() {
        return Ok(Some(exact.grad_phi(x)));
    }
    match opts.reference_tol {
        Some(tol) if k.is_multiple_of(opts.stride) => exact_hypergradient(oracle, x, tol)
            .map(Some)
            .map_err(|source| OptimError::Reference { iteration: k, source }),
        _ => Ok(None),
    }
}

/// Runs `x_{k+1} = x_k − β·estimate(x_k)` for `iterations` steps.
pub(crate) fn outer_loop<O, C, F>(
    oracle: &O,
    config: C,
    x0: DenseVector,
    iterations: usize,
    beta: f64,
    opts: &TraceOptions,
    mut estimate: F,
) -> Result<RunTrace<C>>
where
    O: BilevelOracle + ?Sized,
    F: FnMut(usize, &DenseVector, &mut CostCounters) -> Result<DenseVector>,
{
    let start = Instant::now();
    let mut counters = CostCounters::default();
    let mut records = Vec::with_capacity(iterations);
    let mut x = x0;
    for k in 0..iterations {
        let est = estimate(k, &x, &mut counters).map_err(|e| e.at_iteration(k))?;
        check_finite(&est, Stage::Hypergradient, 0).map_err(|e| e.at_iteration(k))?;
        let truth = reference(oracle, &x, k, opts)?;
        records.push(TraceRecord {
            k,
            x_norm: x.norm(),
            grad_est_norm_sq: est.norm_sq(),
            grad_true_norm_sq: truth.map(|g| g.norm_sq()),
            gc_cum: counters.gc,
            mv_cum: counters.mv,
            wall_ms: opts
                .wall_time
                .then(|| start.elapsed().as_secs_f64() * 1e3),
            x: opts.iterates.then(|| x.clone()),
        });
        x.axpy(-beta, &est);
        check_finite(&x, Stage::Outer, k).map_err(|e| e.at_iteration(k))?;
    }
    // The final point always gets a reference when one can be computed.
    let final_opts = TraceOptions {
        stride: 1,
        ..opts.clone()
    };
    let final_truth = reference(oracle, &x, iterations, &final_opts)?;
    Ok(RunTrace {
        config,
        records,
        final_x: x,
        final_grad_true_norm_sq: final_truth.map(|g| g.norm_sq()),
        counters,
    })
}
