//! AID-BiO: warm-started inner gradient descent, gradient descent on the
//! linear system `∇²_y g · v = ∇_y f`, and the implicit hypergradient
//! estimate `∇_x f − ∇_x∇_y g · v`.

use crate::numerics::DenseVector;
use crate::problems::BilevelOracle;
use crate::trace::{
    check_dim, check_finite, check_outer_stepsize, check_stepsize, outer_loop, CostCounters,
    OptimError, Result, RunTrace, Stage, TraceOptions,
};

/// Settings of one AID run.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    /// Inner gradient steps per outer iteration.
    pub n: usize,
    /// Linear-system gradient steps per outer iteration.
    pub q: usize,
    pub alpha: f64,
    pub eta: f64,
    pub beta: f64,
    /// Outer iterations.
    pub k: usize,
    pub warm_start_y: bool,
    /// When false every linear solve starts from zero.
    pub warm_start_v: bool,
    /// Starting points; `None` takes the problem's defaults (zero for `v`).
    pub x0: Option<DenseVector>,
    pub y0: Option<DenseVector>,
    pub v0: Option<DenseVector>,
    pub trace: TraceOptions,
}

impl LoopConfig {
    pub fn new(n: usize, q: usize, alpha: f64, eta: f64, beta: f64, k: usize) -> Self {
        Self {
            n,
            q,
            alpha,
            eta,
            beta,
            k,
            warm_start_y: true,
            warm_start_v: true,
            x0: None,
            y0: None,
            v0: None,
            trace: TraceOptions::default(),
        }
    }

    pub fn validate<O: BilevelOracle + ?Sized>(&self, oracle: &O) -> Result<()> {
        if self.n == 0 || self.q == 0 || self.k == 0 {
            return Err(OptimError::InvalidConfig(format!(
                "N, Q and K must be positive (got N={}, Q={}, K={})",
                self.n, self.q, self.k
            )));
        }
        let l = oracle.constants().l;
        check_stepsize("alpha", self.alpha, l)?;
        check_stepsize("eta", self.eta, l)?;
        check_outer_stepsize(self.beta)?;
        self.trace.validate()?;
        let (p, q) = (oracle.outer_dim(), oracle.inner_dim());
        if let Some(x0) = &self.x0 {
            check_dim("x0", x0, p)?;
        }
        if let Some(y0) = &self.y0 {
            check_dim("y0", y0, q)?;
        }
        if let Some(v0) = &self.v0 {
            check_dim("v0", v0, q)?;
        }
        Ok(())
    }
}

/// `N` steps of `y ← y − α∇_y g(x, y)`. Charges `N` gradient evaluations.
pub fn inner_gd<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &DenseVector,
    y0: &DenseVector,
    n: usize,
    alpha: f64,
    counters: &mut CostCounters,
) -> Result<DenseVector> {
    check_stepsize("alpha", alpha, oracle.constants().l)?;
    check_dim("x", x, oracle.outer_dim())?;
    check_dim("y0", y0, oracle.inner_dim())?;
    let mut y = y0.clone();
    for t in 1..=n {
        let g = oracle.grad_y_g(x, &y);
        counters.gc += 1;
        y.axpy(-alpha, &g);
        check_finite(&y, Stage::Inner, t)?;
    }
    Ok(y)
}

/// `Q` steps of `v ← v − η(∇²_y g(x, y^N) v − ∇_y f(x, y^N))`.
///
/// `∇_y f` is evaluated once and reused. Charges one gradient evaluation and
/// `Q` Hessian-vector products.
pub fn linear_system_gd<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &DenseVector,
    y_n: &DenseVector,
    v0: &DenseVector,
    q: usize,
    eta: f64,
    counters: &mut CostCounters,
) -> Result<DenseVector> {
    check_stepsize("eta", eta, oracle.constants().l)?;
    check_dim("x", x, oracle.outer_dim())?;
    check_dim("y", y_n, oracle.inner_dim())?;
    check_dim("v0", v0, oracle.inner_dim())?;
    let b = oracle.grad_y_f(x, y_n);
    counters.gc += 1;
    let mut v = v0.clone();
    for step in 1..=q {
        let mut r = oracle.hvp_yy_g(x, y_n, &v);
        counters.mv += 1;
        r.axpy(-1.0, &b);
        v.axpy(-eta, &r);
        check_finite(&v, Stage::LinearSystem, step)?;
    }
    Ok(v)
}

/// `∇_x f(x, y) − ∇_x∇_y g(x, y) · v`. Charges one gradient and one JVP.
pub fn aid_hypergradient<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &DenseVector,
    y: &DenseVector,
    v: &DenseVector,
    counters: &mut CostCounters,
) -> Result<DenseVector> {
    check_dim("x", x, oracle.outer_dim())?;
    check_dim("y", y, oracle.inner_dim())?;
    check_dim("v", v, oracle.inner_dim())?;
    let mut est = oracle.grad_x_f(x, y);
    counters.gc += 1;
    est.axpy(-1.0, &oracle.jvp_xy_g(x, y, v));
    counters.mv += 1;
    Ok(est)
}

/// Runs AID-BiO for `config.k` outer iterations.
pub fn run_aid<O: BilevelOracle + ?Sized>(
    oracle: &O,
    config: &LoopConfig,
) -> Result<RunTrace<LoopConfig>> {
    config.validate(oracle)?;
    let x0 = config.x0.clone().unwrap_or_else(|| oracle.default_x0());
    let y_init = config.y0.clone().unwrap_or_else(|| oracle.default_y0());
    let v_init = config
        .v0
        .clone()
        .unwrap_or_else(|| DenseVector::zeros(oracle.inner_dim()));
    let zero_v = DenseVector::zeros(oracle.inner_dim());
    let mut y = y_init.clone();
    let mut v = v_init;
    outer_loop(
        oracle,
        config.clone(),
        x0,
        config.k,
        config.beta,
        &config.trace,
        |_, x, counters| {
            let y_start = if config.warm_start_y { &y } else { &y_init };
            let y_n = inner_gd(oracle, x, y_start, config.n, config.alpha, counters)?;
            let v_start = if config.warm_start_v { &v } else { &zero_v };
            let v_q = linear_system_gd(oracle, x, &y_n, v_start, config.q, config.eta, counters)?;
            let est = aid_hypergradient(oracle, x, &y_n, &v_q, counters)?;
            y = y_n;
            v = v_q;
            Ok(est)
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::smoothness_constant;
    use crate::numerics::{solve_spd, DenseMatrix};
    use crate::problems::{
        make_lower_bound_instance, make_quadratic, Coupling, ExactOracle, RandomQuadratic,
    };
    use proptest::prelude::*;

    fn diag_quadratic(h: &[f64]) -> crate::problems::QuadraticBilevel {
        let q = h.len();
        make_quadratic(
            DenseMatrix::diag(h),
            DenseMatrix::identity(q),
            DenseVector::zeros(q),
            DenseMatrix::identity(q),
            DenseVector::zeros(q),
        )
        .unwrap()
    }

    #[test]
    fn inner_gd_identity_one_step() {
        let prob = diag_quadratic(&[1.0, 1.0]);
        let mut c = CostCounters::default();
        let y = inner_gd(&prob, &[1.0, 1.0].into(), &DenseVector::zeros(2), 1, 1.0, &mut c).unwrap();
        assert_eq!(y, DenseVector::from([1.0, 1.0]));
        assert_eq!(c, CostCounters { gc: 1, mv: 0 });
    }

    #[test]
    fn inner_gd_diagonal_one_step() {
        // B = I, so y* = H⁻¹x; pick x = H·(1,1).
        let prob = diag_quadratic(&[2.0, 1.0]);
        let x = DenseVector::from([2.0, 1.0]);
        let mut c = CostCounters::default();
        let y = inner_gd(&prob, &x, &DenseVector::zeros(2), 1, 0.25, &mut c).unwrap();
        assert_eq!(y, DenseVector::from([0.5, 0.25]));
    }

    #[test]
    fn inner_gd_rejects_large_stepsize() {
        let prob = diag_quadratic(&[2.0, 1.0]);
        let mut c = CostCounters::default();
        let err = inner_gd(&prob, &DenseVector::zeros(2), &DenseVector::zeros(2), 1, 0.6, &mut c);
        assert!(matches!(err, Err(OptimError::InvalidConfig(_))));
    }

    #[test]
    fn linear_system_examples() {
        // ∇_y f = y − d = y when d = 0; y = (1, 1) gives b = (1, 1).
        let prob = diag_quadratic(&[2.0, 1.0]);
        let x = DenseVector::zeros(2);
        let y = DenseVector::from([1.0, 1.0]);
        let v0 = DenseVector::zeros(2);
        let mut c = CostCounters::default();
        let v1 = linear_system_gd(&prob, &x, &y, &v0, 1, 0.25, &mut c).unwrap();
        assert_eq!(v1, DenseVector::from([0.25, 0.25]));
        assert_eq!(c, CostCounters { gc: 1, mv: 1 });
        let v2 = linear_system_gd(&prob, &x, &y, &v0, 2, 0.25, &mut c).unwrap();
        assert_eq!(v2, DenseVector::from([0.375, 0.4375]));
        let v200 = linear_system_gd(&prob, &x, &y, &v0, 200, 0.25, &mut c).unwrap();
        assert!(v200.max_abs_diff(&DenseVector::from([0.5, 1.0])) <= 1e-8);
    }

    #[test]
    fn aid_hypergradient_with_exact_v_on_lower_bound() {
        let lb = make_lower_bound_instance(2.0, 1.0, 1.0).unwrap();
        let mut c = CostCounters::default();
        let x = DenseVector::zeros(2);
        let v = DenseVector::from([0.5, 1.0]);
        for y in [DenseVector::zeros(2), DenseVector::from([3.0, -7.0])] {
            let g = aid_hypergradient(&lb, &x, &y, &v, &mut c).unwrap();
            assert_eq!(g, DenseVector::from([1.0, 2.0]));
        }
        assert_eq!(c, CostCounters { gc: 2, mv: 2 });
    }

    #[test]
    fn aid_hypergradient_zero_v_is_grad_x_f() {
        let prob = RandomQuadratic::new(3, 4, 5.0, 1).generate().unwrap();
        let x = DenseVector::from([0.1, 0.2, 0.3]);
        let y = DenseVector::from([1.0, -1.0, 0.5, 2.0]);
        let mut c = CostCounters::default();
        let g = aid_hypergradient(&prob, &x, &y, &DenseVector::zeros(4), &mut c).unwrap();
        assert_eq!(g, prob.grad_x_f(&x, &y));
    }

    #[test]
    fn aid_hypergradient_exact_inputs_match_grad_phi() {
        let prob = RandomQuadratic::new(5, 5, 10.0, 2).generate().unwrap();
        let x = DenseVector::from([0.3, -0.2, 0.5, 1.0, -1.0]);
        let mut c = CostCounters::default();
        let g = aid_hypergradient(&prob, &x, &prob.y_star(&x), &prob.v_star(&x), &mut c).unwrap();
        let truth = prob.grad_phi(&x);
        assert!(g.sub(&truth).norm() <= 1e-12 * truth.norm().max(1.0));
    }

    #[test]
    fn zero_outer_stepsize_keeps_x() {
        let prob = RandomQuadratic::new(2, 3, 4.0, 3).generate().unwrap();
        let l = prob.constants().l;
        let mut cfg = LoopConfig::new(2, 2, 1.0 / l, 1.0 / l, 0.0, 1);
        cfg.x0 = Some(DenseVector::from([1.0, 2.0]));
        let trace = run_aid(&prob, &cfg).unwrap();
        assert_eq!(trace.final_x, DenseVector::from([1.0, 2.0]));
        assert_eq!(trace.records.len(), 1);
    }

    #[test]
    fn lower_bound_aid_converges_to_stationarity() {
        // The estimate here does not depend on y and the warm-started v
        // tends to v*, so AID has no residual floor on this instance.
        let lb = make_lower_bound_instance(2.0, 1.0, 1.0).unwrap();
        let beta = 1.0 / (2.0 * smoothness_constant(&lb.constants()));
        let cfg = LoopConfig::new(1, 50, 0.25, 0.25, beta, 5000);
        let trace = run_aid(&lb, &cfg).unwrap();
        assert!(trace.final_grad_true_norm_sq.unwrap() <= 1e-12);
        assert_eq!(trace.counters, CostCounters { gc: 5000 * 3, mv: 5000 * 51 });
    }

    #[test]
    fn quadratic_corollary_run_converges() {
        // Coupling into the slow inner modes keeps the outer problem well
        // conditioned relative to L_Φ.
        let prob = RandomQuadratic::new(2, 6, 10.0, 4)
            .with_coupling(Coupling::SlowEigenspace)
            .generate()
            .unwrap();
        let c = prob.constants();
        let kappa = c.kappa();
        let n = (kappa * kappa.ln()).ceil() as usize;
        let beta = 0.5 / smoothness_constant(&c);
        let cfg = LoopConfig::new(n, n, 1.0 / c.l, 1.0 / c.l, beta, 2000);
        let trace = run_aid(&prob, &cfg).unwrap();
        assert!(trace.min_grad_true_norm_sq().unwrap() <= 1e-8);
    }

    #[test]
    fn divergence_names_iteration() {
        let prob = RandomQuadratic::new(2, 2, 2.0, 5).generate().unwrap();
        let l = prob.constants().l;
        let mut cfg = LoopConfig::new(1, 1, 1.0 / l, 1.0 / l, 1e300, 10);
        cfg.x0 = Some(DenseVector::from([1e10, 1e10]));
        match run_aid(&prob, &cfg) {
            Err(OptimError::Diverged {
                iteration: Some(_), ..
            }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn warm_starts_chain_bit_exactly() {
        let prob = RandomQuadratic::new(3, 3, 5.0, 6).generate().unwrap();
        let l = prob.constants().l;
        let cfg = LoopConfig::new(3, 4, 1.0 / l, 1.0 / l, 0.05, 4);
        let trace = run_aid(
            &prob,
            &LoopConfig {
                trace: TraceOptions {
                    iterates: true,
                    ..Default::default()
                },
                ..cfg.clone()
            },
        )
        .unwrap();
        // Replay by hand with explicit warm starts.
        let mut c = CostCounters::default();
        let mut x = prob.default_x0();
        let mut y = prob.default_y0();
        let mut v = DenseVector::zeros(3);
        for rec in &trace.records {
            assert_eq!(rec.x.as_ref().unwrap(), &x);
            y = inner_gd(&prob, &x, &y, cfg.n, cfg.alpha, &mut c).unwrap();
            v = linear_system_gd(&prob, &x, &y, &v, cfg.q, cfg.eta, &mut c).unwrap();
            let g = aid_hypergradient(&prob, &x, &y, &v, &mut c).unwrap();
            x.axpy(-cfg.beta, &g);
        }
        assert_eq!(trace.final_x, x);
    }

    #[test]
    fn deterministic_traces() {
        let prob = RandomQuadratic::new(3, 5, 8.0, 7).generate().unwrap();
        let l = prob.constants().l;
        let cfg = LoopConfig::new(5, 5, 1.0 / l, 1.0 / l, 0.01, 50);
        assert_eq!(run_aid(&prob, &cfg).unwrap(), run_aid(&prob, &cfg).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn counter_identity(n in 1usize..6, q in 1usize..6, k in 1usize..12, seed in 0u64..1000) {
            let prob = RandomQuadratic::new(2, 3, 5.0, seed).generate().unwrap();
            let l = prob.constants().l;
            let cfg = LoopConfig::new(n, q, 1.0 / l, 1.0 / l, 0.01, k);
            let trace = run_aid(&prob, &cfg).unwrap();
            let (n, q, k) = (n as u64, q as u64, k as u64);
            prop_assert_eq!(trace.counters, CostCounters { gc: k * (n + 2), mv: k * (q + 1) });
            for w in trace.records.windows(2) {
                prop_assert!(w[1].gc_cum > w[0].gc_cum && w[1].mv_cum > w[0].mv_cum);
            }
        }

        #[test]
        fn inner_gd_contracts(n in 0usize..40, seed in 0u64..1000) {
            let prob = RandomQuadratic::new(3, 4, 10.0, seed).generate().unwrap();
            let c = prob.constants();
            let alpha = 1.0 / c.l;
            let x = DenseVector::from([0.5, -1.0, 2.0]);
            let y0 = DenseVector::from([1.0, 1.0, -1.0, 0.0]);
            let ystar = solve_spd(prob.inner_hessian(), &prob.grad_y_g(&x, &DenseVector::zeros(4)).scale(-1.0)).unwrap();
            let mut counters = CostCounters::default();
            let y = inner_gd(&prob, &x, &y0, n, alpha, &mut counters).unwrap();
            let bound = (1.0 - alpha * c.mu).powi(n as i32) * y0.sub(&ystar).norm_sq() + 1e-12;
            prop_assert!(y.sub(&ystar).norm_sq() <= bound);
            prop_assert_eq!(counters.gc, n as u64);
        }
    }
}
