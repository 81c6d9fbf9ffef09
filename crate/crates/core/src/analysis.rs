//! Reference hypergradients, the smoothness constants from the convergence
//! analysis, default stepsizes per loop scheme, and the ITD residual floor.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::numerics::{solve_spd, DenseMatrix, DenseVector, NumericsError};
use crate::problems::{minimize_inner, BilevelOracle, ProblemConstants};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("inner problem did not reach gradient norm {tol} within {max_iter} steps")]
    NotConverged { tol: f64, max_iter: usize },
    #[error("finite-difference step must lie in [1e-7, 1e-3] (got {0})")]
    InvalidStep(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Step cap for the long inner solves behind the reference oracles.
pub const REFERENCE_MAX_ITER: usize = 2_000_000;

/// Problem constants together with the derived quantities of the analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperConstants {
    pub l: f64,
    pub mu: f64,
    pub rho: f64,
    pub m: f64,
    pub kappa: f64,
    /// Lipschitz constant of `∇Φ`.
    pub l_phi: f64,
}

impl From<ProblemConstants> for PaperConstants {
    fn from(c: ProblemConstants) -> Self {
        Self {
            l: c.l,
            mu: c.mu,
            rho: c.rho,
            m: c.m,
            kappa: c.kappa(),
            l_phi: smoothness_constant(&c),
        }
    }
}

impl PaperConstants {
    pub fn c_q(&self, q: usize, eta: f64) -> f64 {
        cq_constant(
            q,
            eta,
            &ProblemConstants {
                l: self.l,
                mu: self.mu,
                rho: self.rho,
                m: self.m,
            },
        )
    }
}

/// `L_Φ = L + (2L² + ρM²)/μ + (2ρLM + L³)/μ² + ρL²M/μ³`
pub fn smoothness_constant(c: &ProblemConstants) -> f64 {
    let ProblemConstants { l, mu, rho, m } = *c;
    l + (2.0 * l * l + rho * m * m) / mu
        + (2.0 * rho * l * m + l.powi(3)) / (mu * mu)
        + rho * l * l * m / mu.powi(3)
}

/// Error constant of the `Q`-step linear solve:
///
/// ```text
/// C_Q = Q(1−ημ)^{Q−1} ρMη/μ + (1 − (1−ημ)^Q (1 + ηQμ)) ρM/μ² + (1 − (1−ημ)^Q) L/μ
/// ```
pub fn cq_constant(q: usize, eta: f64, c: &ProblemConstants) -> f64 {
    let ProblemConstants { l, mu, rho, m } = *c;
    let qf = q as f64;
    let r = 1.0 - eta * mu;
    let first = if q == 0 {
        0.0
    } else {
        qf * r.powi(q as i32 - 1) * rho * m * eta / mu
    };
    let rq = r.powi(q as i32);
    first + (1.0 - rq * (1.0 + eta * qf * mu)) * rho * m / (mu * mu) + (1.0 - rq) * l / mu
}

/// `L²M² [(1 − αL)^{2N}/L² + (1 − αμ)^{2N}/μ²]`, the value of
/// `L²M²‖(I − αZ)^N Z⁻¹1‖²` on the two-dimensional worst-case instance.
pub fn itd_floor(l: f64, mu: f64, m: f64, alpha: f64, n: usize) -> f64 {
    let two_n = 2 * n as i32;
    l * l * m * m * ((1.0 - alpha * l).powi(two_n) / (l * l) + (1.0 - alpha * mu).powi(two_n) / (mu * mu))
}

/// Loop schemes: how `N` and `Q` scale with the condition number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SchemeId {
    AidNQLoop,
    AidNLoop,
    AidQLoop,
    AidNoLoop,
    ItdNNLoop,
    ItdNoLoop,
}

impl SchemeId {
    pub const AID: [SchemeId; 4] = [
        SchemeId::AidNQLoop,
        SchemeId::AidNLoop,
        SchemeId::AidQLoop,
        SchemeId::AidNoLoop,
    ];
    pub const ITD: [SchemeId; 2] = [SchemeId::ItdNNLoop, SchemeId::ItdNoLoop];

    pub fn is_aid(self) -> bool {
        Self::AID.contains(&self)
    }

    /// Scheme name without the algorithm, as used in configs.
    pub fn name(self) -> &'static str {
        match self {
            SchemeId::AidNQLoop => "N_Q_LOOP",
            SchemeId::AidNLoop => "N_LOOP",
            SchemeId::AidQLoop => "Q_LOOP",
            SchemeId::AidNoLoop | SchemeId::ItdNoLoop => "NO_LOOP",
            SchemeId::ItdNNLoop => "NN_LOOP",
        }
    }

    pub fn algorithm(self) -> &'static str {
        if self.is_aid() {
            "aid"
        } else {
            "itd"
        }
    }

    /// Resolves a scheme name for the given algorithm (`aid` or `itd`).
    pub fn parse(algorithm: &str, name: &str) -> Option<Self> {
        let candidates: &[SchemeId] = match algorithm {
            "aid" => &Self::AID,
            "itd" => &Self::ITD,
            _ => return None,
        };
        candidates
            .iter()
            .copied()
            .find(|s| s.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.algorithm(), self.name())
    }
}

impl FromStr for SchemeId {
    type Err = String;

    /// Accepts `aid:N_LOOP` style labels.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (alg, name) = s
            .split_once(':')
            .ok_or_else(|| format!("scheme label `{s}` must look like aid:N_LOOP"))?;
        Self::parse(alg, name).ok_or_else(|| format!("unknown scheme `{s}`"))
    }
}

/// Loop sizes and stepsizes. For ITD schemes `q` is 0 and `eta` is unused.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub n: usize,
    pub q: usize,
    pub alpha: f64,
    pub eta: f64,
    pub beta: f64,
}

fn ceil_count(v: f64) -> usize {
    (v.ceil() as usize).max(1)
}

/// Defaults prescribed for each scheme, with unit constants in the orders.
///
/// `N = ⌈κ ln κ⌉` or `⌈κ ln(κ/ε)⌉`, `Q` likewise or 1. The outer stepsize
/// is `c_β/L_Φ` scaled by `κ^{3−s}` where `κ^{−s}` is the order the scheme
/// prescribes (`s = 3` for N-Q-loop and ITD, 4 for N-loop and Q-loop, 6
/// for AID No-loop).
pub fn default_hyperparams(
    scheme: SchemeId,
    constants: &ProblemConstants,
    epsilon: f64,
    c_beta: f64,
) -> Hyperparams {
    let kappa = constants.kappa();
    let l = constants.l;
    let n_kappa = ceil_count(kappa * kappa.ln());
    let n_eps = ceil_count(kappa * (kappa / epsilon).ln());
    let base_beta = c_beta / smoothness_constant(constants);
    match scheme {
        SchemeId::AidNQLoop => Hyperparams {
            n: n_kappa,
            q: n_eps,
            alpha: 1.0 / l,
            eta: 1.0 / l,
            beta: base_beta,
        },
        SchemeId::AidNLoop => Hyperparams {
            n: n_kappa,
            q: 1,
            alpha: 1.0 / l,
            eta: 1.0 / l,
            beta: base_beta / kappa,
        },
        SchemeId::AidQLoop => Hyperparams {
            n: 1,
            q: n_eps,
            alpha: 1.0 / l,
            eta: 1.0 / l,
            beta: base_beta / kappa,
        },
        SchemeId::AidNoLoop => {
            let (alpha, q, mu) = (1.0 / l, 1usize, constants.mu);
            let qf = q as f64;
            let eta = (alpha * mu * mu / (128.0 * qf * qf * l * l))
                .min(alpha / 4.0)
                .min(1.0 / (mu * qf));
            Hyperparams {
                n: 1,
                q,
                alpha,
                eta,
                beta: base_beta / kappa.powi(3),
            }
        }
        SchemeId::ItdNNLoop => Hyperparams {
            n: n_eps,
            q: 0,
            alpha: 1.0 / (2.0 * l),
            eta: 1.0 / (2.0 * l),
            beta: base_beta,
        },
        SchemeId::ItdNoLoop => Hyperparams {
            n: 1,
            q: 0,
            alpha: 1.0 / (2.0 * l),
            eta: 1.0 / (2.0 * l),
            beta: base_beta,
        },
    }
}

/// Cost of reference computations, kept apart from the algorithm tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReferenceCost {
    pub gc: u64,
    pub mv: u64,
}

fn inner_solution<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &DenseVector,
    y0: &DenseVector,
    tol: f64,
) -> Result<DenseVector> {
    match oracle.exact() {
        Some(exact) => Ok(exact.y_star(x)),
        None => minimize_inner(oracle, x, y0, tol, REFERENCE_MAX_ITER).ok_or(
            AnalysisError::NotConverged {
                tol,
                max_iter: REFERENCE_MAX_ITER,
            },
        ),
    }
}

/// `∇Φ(x) = ∇_x f − ∇_x∇_y g · v*` with `v*` from a direct solve against
/// the Hessian assembled from `q` HVP probes.
///
/// `y*` comes from the exact oracle when present, otherwise from gradient
/// descent run until `‖∇_y g‖ ≤ tol`.
pub fn exact_hypergradient<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &DenseVector,
    tol: f64,
) -> Result<DenseVector> {
    exact_hypergradient_counted(oracle, x, tol, &mut ReferenceCost::default())
}

pub fn exact_hypergradient_counted<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &DenseVector,
    tol: f64,
    cost: &mut ReferenceCost,
) -> Result<DenseVector> {
    let y = inner_solution(oracle, x, &oracle.default_y0(), tol)?;
    let q = oracle.inner_dim();
    let columns: Vec<DenseVector> = (0..q)
        .map(|i| oracle.hvp_yy_g(x, &y, &DenseVector::unit(q, i)))
        .collect();
    cost.mv += q as u64;
    let hess = DenseMatrix::from_columns(&columns)?.symmetrize()?;
    let v = solve_spd(&hess, &oracle.grad_y_f(x, &y))?;
    let mut grad = oracle.grad_x_f(x, &y);
    grad.axpy(-1.0, &oracle.jvp_xy_g(x, &y, &v));
    cost.gc += 2;
    cost.mv += 1;
    Ok(grad)
}

/// Central differences of `Φ(x) = f(x, y*(x))` with step `h`.
///
/// Without an exact oracle the inner problem is solved to `min(tol, h²)`,
/// warm-started from `y*(x)`.
pub fn finite_difference_hypergradient<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &DenseVector,
    h: f64,
    tol: f64,
) -> Result<DenseVector> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(AnalysisError::InvalidStep(h));
    }
    let tol = tol.min(h * h);
    let center = inner_solution(oracle, x, &oracle.default_y0(), tol)?;
    let phi = |xx: &DenseVector| -> Result<f64> {
        let y = inner_solution(oracle, xx, &center, tol)?;
        Ok(oracle.outer_value(xx, &y))
    };
    let mut grad = DenseVector::zeros(x.dim());
    for i in 0..x.dim() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        grad[i] = (phi(&xp)? - phi(&xm)?) / (2.0 * h);
    }
    Ok(grad)
}

/// Dense assembly of the ITD estimate along `traj`:
///
/// ```text
/// ∇_x f(x, y^N) − α Σ_{t<N} J_t Π_{j=t+1}^{N−1} (I − αH_j) ∇_y f(x, y^N)
/// ```
///
/// with `H_j` and `J_t` built column by column from unit probes. Cubic in
/// `q`; meant as a referee for small instances.
pub fn itd_closed_form<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &DenseVector,
    traj: &crate::itd::Trajectory,
    alpha: f64,
) -> Result<DenseVector> {
    let q = oracle.inner_dim();
    let points = traj.points();
    let n = traj.steps();
    let y_n = traj.last();
    let probe = |f: &dyn Fn(&DenseVector) -> DenseVector| {
        DenseMatrix::from_columns(&(0..q).map(|i| f(&DenseVector::unit(q, i))).collect::<Vec<_>>())
    };
    let mut sum = DenseVector::zeros(oracle.outer_dim());
    for t in 0..n {
        let mut prod = DenseMatrix::identity(q);
        for y_j in &points[t + 1..n] {
            let hess = probe(&|e| oracle.hvp_yy_g(x, y_j, e))?;
            prod = prod.matmul(&DenseMatrix::identity(q).sub(&hess.scale(alpha))?)?;
        }
        let cross = probe(&|e| oracle.jvp_xy_g(x, &points[t], e))?;
        sum.axpy(1.0, &cross.matmul(&prod)?.matvec(&oracle.grad_y_f(x, y_n))?);
    }
    let mut est = oracle.grad_x_f(x, y_n);
    est.axpy(-alpha, &sum);
    Ok(est)
}

/// Central differences of `x ↦ f(x, y^N(x))`, where `y^N(x)` is `N` plain
/// gradient steps from the fixed start `y0`.
pub fn unrolled_finite_difference<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &DenseVector,
    y0: &DenseVector,
    n: usize,
    alpha: f64,
    h: f64,
) -> Result<DenseVector> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(AnalysisError::InvalidStep(h));
    }
    let value = |xx: &DenseVector| {
        let mut y = y0.clone();
        for _ in 0..n {
            let g = oracle.grad_y_g(xx, &y);
            y.axpy(-alpha, &g);
        }
        oracle.outer_value(xx, &y)
    };
    let mut grad = DenseVector::zeros(x.dim());
    for i in 0..x.dim() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        grad[i] = (value(&xp) - value(&xm)) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{
        make_hyper_cleaning, make_hyper_representation, make_lower_bound_instance,
        make_quadratic, rng_from_seed, ExactOracle, HyperCleaningDims, HyperRepresentationDims,
        RandomQuadratic,
    };
    use proptest::prelude::*;

    fn consts(l: f64, mu: f64, rho: f64, m: f64) -> ProblemConstants {
        ProblemConstants { l, mu, rho, m }
    }

    #[test]
    fn smoothness_constant_unit_case() {
        assert_eq!(smoothness_constant(&consts(1.0, 1.0, 0.0, 1.0)), 4.0);
        let pc = PaperConstants::from(consts(2.0, 1.0, 0.5, 1.0));
        assert!(pc.l_phi >= pc.l && pc.kappa == 2.0);
    }

    #[test]
    fn cq_limits() {
        let c = consts(2.0, 0.5, 0.0, 1.0);
        assert_eq!(cq_constant(0, 0.5, &c), 0.0);
        let big = cq_constant(10_000, 1.0 / c.l, &c);
        assert!((big - c.l / c.mu).abs() < 1e-12);
        let with_rho = consts(2.0, 0.5, 0.3, 1.5);
        assert_eq!(cq_constant(0, 0.5, &with_rho), 0.0);
    }

    #[test]
    fn cq_monotone_in_q_without_hessian_drift() {
        for (eta, c) in [
            (0.5, consts(2.0, 0.5, 0.0, 1.5)),
            (0.1, consts(10.0, 0.1, 0.0, 3.0)),
            (1.0, consts(1.0, 1.0, 0.0, 1.0)),
        ] {
            let values: Vec<f64> = (0..=200).map(|q| cq_constant(q, eta, &c)).collect();
            for w in values.windows(2) {
                assert!(w[1] >= w[0], "{w:?}");
            }
        }
    }

    #[test]
    fn cq_is_not_monotone_when_rho_m_is_positive() {
        // The first term Q(1−ημ)^{Q−1} peaks and decays; with ρM > 0 it
        // can outweigh the growth of the other two.
        let c = consts(1.0, 1.0, 1.0, 1.0);
        assert_eq!(cq_constant(1, 1.0, &c), 3.0);
        assert_eq!(cq_constant(2, 1.0, &c), 2.0);
    }

    #[test]
    fn floor_values() {
        let lb = itd_floor(2.0, 1.0, 1.0, 0.25, 1);
        assert!((lb - 2.5).abs() < 1e-15);
        // α = 1/L removes the first coordinate.
        let n5 = itd_floor(2.0, 1.0, 1.0, 0.5, 5);
        assert_eq!(n5, 4.0 * 0.5f64.powi(10));
        assert!(itd_floor(2.0, 1.0, 1.0, 0.25, 60) < 1e-10);
        assert!(itd_floor(2.0, 1.0, 1.0, 0.25, 10_000) == 0.0);
    }

    #[test]
    fn scheme_defaults() {
        let c = consts(1.0, 0.1, 0.0, 1.0);
        let n_loop = default_hyperparams(SchemeId::AidNLoop, &c, 1e-4, 0.5);
        assert_eq!((n_loop.n, n_loop.q), (24, 1));
        assert_eq!((n_loop.alpha, n_loop.eta), (1.0, 1.0));
        let no_loop = default_hyperparams(SchemeId::AidNoLoop, &c, 1e-4, 0.5);
        assert_eq!((no_loop.n, no_loop.q), (1, 1));
        assert!(no_loop.eta <= no_loop.alpha / 4.0);
        let nn = default_hyperparams(SchemeId::ItdNNLoop, &c, 1e-4, 0.5);
        assert_eq!(nn.n, 116);
        assert_eq!(nn.alpha, 0.5);
        let big = consts(1.0, 0.01, 0.0, 1.0);
        assert_eq!(default_hyperparams(SchemeId::ItdNNLoop, &big, 1e-6, 0.5).n, 1843);
        let nq = default_hyperparams(SchemeId::AidNQLoop, &c, 1e-4, 0.5);
        assert_eq!(nq.beta, 0.5 / smoothness_constant(&c));
    }

    #[test]
    fn scheme_labels_round_trip() {
        for s in SchemeId::AID.iter().chain(SchemeId::ITD.iter()) {
            assert_eq!(s.to_string().parse::<SchemeId>().unwrap(), *s);
        }
        assert_eq!(SchemeId::parse("itd", "n_loop"), None);
        assert_eq!(SchemeId::parse("aid", "no_loop"), Some(SchemeId::AidNoLoop));
    }

    #[test]
    fn exact_hypergradient_examples() {
        let lb = make_lower_bound_instance(2.0, 1.0, 1.0).unwrap();
        let g = exact_hypergradient(&lb, &DenseVector::zeros(2), 1e-12).unwrap();
        assert!(g.max_abs_diff(&DenseVector::from([1.0, 2.0])) < 1e-14);

        let id = make_quadratic(
            DenseMatrix::identity(2),
            DenseMatrix::identity(2),
            DenseVector::zeros(2),
            DenseMatrix::identity(2),
            DenseVector::zeros(2),
        )
        .unwrap();
        let g = exact_hypergradient(&id, &DenseVector::from([1.0, 1.0]), 1e-12).unwrap();
        assert!(g.max_abs_diff(&DenseVector::from([2.0, 2.0])) < 1e-14);

        let m0 = make_lower_bound_instance(2.0, 1.0, 0.0).unwrap();
        let x = DenseVector::from([0.3, -2.0]);
        let g = exact_hypergradient(&m0, &x, 1e-12).unwrap();
        assert_eq!(g, DenseVector::from([0.6, -2.0]));
    }

    #[test]
    fn exact_hypergradient_counts_separately() {
        let prob = RandomQuadratic::new(3, 4, 5.0, 0).generate().unwrap();
        let mut cost = ReferenceCost::default();
        exact_hypergradient_counted(&prob, &DenseVector::zeros(3), 1e-10, &mut cost).unwrap();
        assert_eq!(cost, ReferenceCost { gc: 2, mv: 5 });
    }

    #[test]
    fn lower_bound_formula_matches_general_route() {
        let lb = make_lower_bound_instance(3.0, 0.5, 2.0).unwrap();
        let mut rng = rng_from_seed(3);
        for _ in 0..20 {
            let x = lb.sample_outer(&mut rng);
            let general = exact_hypergradient(&lb, &x, 1e-12).unwrap();
            assert!(general.max_abs_diff(&lb.grad_phi(&x)) <= 1e-12);
        }
    }

    #[test]
    fn fd_matches_exact_on_problems_with_oracles() {
        let quad = RandomQuadratic::new(4, 5, 10.0, 9).generate().unwrap();
        let lb = make_lower_bound_instance(2.0, 1.0, 1.0).unwrap();
        let hr = make_hyper_representation(&HyperRepresentationDims::default(), 1.0, 3).unwrap();
        let problems: [&dyn BilevelOracle; 3] = [&quad, &lb, &hr];
        let mut rng = rng_from_seed(17);
        for prob in problems {
            for _ in 0..20 {
                let x = prob.sample_outer(&mut rng);
                let exact = exact_hypergradient(prob, &x, 1e-12).unwrap();
                let fd = finite_difference_hypergradient(prob, &x, 1e-5, 1e-12).unwrap();
                assert!(
                    fd.sub(&exact).norm() <= 1e-5 * exact.norm().max(1e-3),
                    "{}: {exact:?} vs {fd:?}",
                    prob.name()
                );
            }
        }
    }

    #[test]
    fn fd_on_data_problem_without_oracle() {
        let hc = make_hyper_cleaning(&HyperCleaningDims::default(), 0.2, 1).unwrap();
        let x = DenseVector::from([0.5]);
        let exact = exact_hypergradient(&hc, &x, 1e-11).unwrap();
        let fd = finite_difference_hypergradient(&hc, &x, 1e-4, 1e-11).unwrap();
        assert!(fd.sub(&exact).norm() <= 1e-4 * exact.norm().max(1e-6));
    }

    #[test]
    fn fd_is_exact_on_linear_phi() {
        // A = 0 would not be SPD; a tiny outer Hessian times zero inner
        // coupling leaves Φ affine up to a negligible quadratic term.
        let prob = make_quadratic(
            DenseMatrix::identity(2),
            DenseMatrix::zeros(2, 2),
            DenseVector::from([1.0, 2.0]),
            DenseMatrix::identity(2).scale(1e-300),
            DenseVector::zeros(2),
        )
        .unwrap();
        let x = DenseVector::from([0.4, -0.1]);
        let fd = finite_difference_hypergradient(&prob, &x, 1e-4, 1e-12).unwrap();
        assert!(fd.max_abs_diff(&prob.grad_phi(&x)) <= 1e-9);
    }

    #[test]
    fn fd_error_is_second_order() {
        // Φ is cubic-free for quadratics, so use the logistic problem.
        let hc = make_hyper_cleaning(&HyperCleaningDims::default(), 0.1, 2).unwrap();
        let x = DenseVector::from([0.3]);
        let exact = exact_hypergradient(&hc, &x, 1e-13).unwrap();
        let err = |h: f64| {
            let fd = finite_difference_hypergradient(&hc, &x, h, 1e-13).unwrap();
            (fd[0] - exact[0]).abs()
        };
        let ratio = err(5e-4) / err(1e-3);
        assert!((0.2..=0.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn fd_rejects_bad_step() {
        let lb = make_lower_bound_instance(2.0, 1.0, 1.0).unwrap();
        assert_eq!(
            finite_difference_hypergradient(&lb, &DenseVector::zeros(2), 1e-2, 1e-10),
            Err(AnalysisError::InvalidStep(1e-2))
        );
    }

    proptest! {
        #[test]
        fn paper_constants_invariants(
            mu in 0.01f64..1.0,
            ratio in 1.0f64..50.0,
            rho in 0.0f64..5.0,
            m in 0.0f64..5.0,
            q in 0usize..50,
        ) {
            let c = consts(mu * ratio, mu, rho, m);
            let pc = PaperConstants::from(c);
            prop_assert!(pc.kappa >= 1.0 - 1e-12);
            prop_assert!(pc.l_phi >= pc.l);
            prop_assert!(pc.c_q(q, 1.0 / c.l) >= 0.0);
        }
    }
}
