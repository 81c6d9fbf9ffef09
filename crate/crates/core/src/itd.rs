//! ITD-BiO: differentiate `f(x, y^N(x))` through the recorded inner
//! gradient-descent trajectory by reverse accumulation.

use crate::numerics::DenseVector;
use crate::problems::BilevelOracle;
use crate::trace::{
    check_dim, check_finite, check_outer_stepsize, check_stepsize, outer_loop, CostCounters,
    OptimError, Result, RunTrace, Stage, TraceOptions,
};

/// Settings of one ITD run.
#[derive(Debug, Clone, PartialEq)]
pub struct ItdConfig {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: usize,
    pub warm_start_y: bool,
    pub x0: Option<DenseVector>,
    pub y0: Option<DenseVector>,
    pub trace: TraceOptions,
}

impl ItdConfig {
    pub fn new(n: usize, alpha: f64, beta: f64, k: usize) -> Self {
        Self {
            n,
            alpha,
            beta,
            k,
            warm_start_y: true,
            x0: None,
            y0: None,
            trace: TraceOptions::default(),
        }
    }

    pub fn validate<O: BilevelOracle + ?Sized>(&self, oracle: &O) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(OptimError::InvalidConfig(format!(
                "N and K must be positive (got N={}, K={})",
                self.n, self.k
            )));
        }
        check_stepsize("alpha", self.alpha, oracle.constants().l)?;
        check_outer_stepsize(self.beta)?;
        self.trace.validate()?;
        if let Some(x0) = &self.x0 {
            check_dim("x0", x0, oracle.outer_dim())?;
        }
        if let Some(y0) = &self.y0 {
            check_dim("y0", y0, oracle.inner_dim())?;
        }
        Ok(())
    }
}

/// The inner iterates `y^0, …, y^N` at a fixed outer point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    x: DenseVector,
    alpha: f64,
    points: Vec<DenseVector>,
}

impl Trajectory {
    pub fn points(&self) -> &[DenseVector] {
        &self.points
    }

    /// Number of gradient steps, `N`.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn last(&self) -> &DenseVector {
        self.points.last().expect("trajectory holds y^0")
    }

    pub fn x(&self) -> &DenseVector {
        &self.x
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Inner gradient descent keeping every iterate. Charges `N` gradients.
pub fn inner_gd_with_trajectory<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &DenseVector,
    y0: &DenseVector,
    n: usize,
    alpha: f64,
    counters: &mut CostCounters,
) -> Result<Trajectory> {
    check_stepsize("alpha", alpha, oracle.constants().l)?;
    check_dim("x", x, oracle.outer_dim())?;
    check_dim("y0", y0, oracle.inner_dim())?;
    let mut points = Vec::with_capacity(n + 1);
    points.push(y0.clone());
    for t in 1..=n {
        let prev = &points[t - 1];
        let mut next = prev.clone();
        next.axpy(-alpha, &oracle.grad_y_g(x, prev));
        counters.gc += 1;
        check_finite(&next, Stage::Inner, t)?;
        points.push(next);
    }
    Ok(Trajectory {
        x: x.clone(),
        alpha,
        points,
    })
}

/// Reverse-mode hypergradient through the trajectory:
///
/// ```text
/// ∇_x f(x, y^N) − α Σ_{t<N} ∇_x∇_y g(x, y^t) Π_{j=t+1}^{N−1} (I − α∇²_y g(x, y^j)) ∇_y f(x, y^N)
/// ```
///
/// The start point `y^0` is treated as independent of `x`.
///
/// Charges two gradients and `2N` products: `N` JVPs, the `N − 1` HVPs the
/// recursion needs, and one HVP for the propagation past `t = 0` whose
/// result is never used. The last one is counted, not computed, so the
/// tally matches `2N` per iteration.
pub fn itd_hypergradient<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &DenseVector,
    traj: &Trajectory,
    alpha: f64,
    counters: &mut CostCounters,
) -> Result<DenseVector> {
    if traj.x != *x || traj.alpha.to_bits() != alpha.to_bits() {
        return Err(OptimError::TrajectoryMismatch);
    }
    let y_n = traj.last();
    let mut est = oracle.grad_x_f(x, y_n);
    let mut u = oracle.grad_y_f(x, y_n);
    counters.gc += 2;
    let mut acc = DenseVector::zeros(oracle.outer_dim());
    let n = traj.steps();
    for t in (0..n).rev() {
        let y_t = &traj.points[t];
        acc.axpy(1.0, &oracle.jvp_xy_g(x, y_t, &u));
        counters.mv += 1;
        if t > 0 {
            u.axpy(-alpha, &oracle.hvp_yy_g(x, y_t, &u));
            counters.mv += 1;
            check_finite(&u, Stage::Hypergradient, t)?;
        }
    }
    if n > 0 {
        counters.mv += 1;
    }
    est.axpy(-alpha, &acc);
    Ok(est)
}

/// Runs ITD-BiO for `config.k` outer iterations.
pub fn run_itd<O: BilevelOracle + ?Sized>(
    oracle: &O,
    config: &ItdConfig,
) -> Result<RunTrace<ItdConfig>> {
    config.validate(oracle)?;
    let x0 = config.x0.clone().unwrap_or_else(|| oracle.default_x0());
    let y_init = config.y0.clone().unwrap_or_else(|| oracle.default_y0());
    let mut y = y_init.clone();
    outer_loop(
        oracle,
        config.clone(),
        x0,
        config.k,
        config.beta,
        &config.trace,
        |_, x, counters| {
            let start = if config.warm_start_y { &y } else { &y_init };
            let traj = inner_gd_with_trajectory(oracle, x, start, config.n, config.alpha, counters)?;
            let est = itd_hypergradient(oracle, x, &traj, config.alpha, counters)?;
            y = traj.last().clone();
            Ok(est)
        },
    )
}
