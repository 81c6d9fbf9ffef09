//! Randomized probes of the regularity assumptions behind the analysis.
//!
//! Each probe draws outer points with [`BilevelOracle::sample_outer`] and
//! inner points near the inner solution, then checks one inequality. The
//! Lipschitz probes are block-wise: a map `F(x, y)` passes with constant
//! `c` when `‖F(x, y) − F(x′, y′)‖ ≤ c (‖x − x′‖ + ‖y − y′‖)`.

use rand::RngCore;

use crate::numerics::DenseVector;

use super::{gaussian_vector, minimize_inner, rng_from_seed, BilevelOracle};

/// Slack for the symmetry probe.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Absolute slack for the coercivity probe.
pub const COERCIVITY_TOL: f64 = 1e-8;
/// Absolute slack for the Lipschitz probes.
pub const LIPSCHITZ_TOL: f64 = 1e-6;

/// Result of one probe family.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub name: &'static str,
    pub trials: usize,
    /// Largest observed violation; a non-positive value means the probe passed.
    pub worst_violation: f64,
}

impl ProbeOutcome {
    pub fn passed(&self) -> bool {
        self.worst_violation <= 0.0
    }
}

struct Sampler<'a, O: BilevelOracle + ?Sized> {
    oracle: &'a O,
    rng: Box<dyn RngCore>,
}

impl<O: BilevelOracle + ?Sized> Sampler<'_, O> {
    fn x(&mut self) -> DenseVector {
        self.oracle.sample_outer(&mut *self.rng)
    }

    /// A point within half a unit of `y*(x)`.
    fn y(&mut self, x: &DenseVector) -> DenseVector {
        let center = match self.oracle.exact() {
            Some(exact) => exact.y_star(x),
            None => minimize_inner(self.oracle, x, &self.oracle.default_y0(), 1e-9, 200_000)
                .unwrap_or_else(|| self.oracle.default_y0()),
        };
        let dir = gaussian_vector(&mut *self.rng, self.oracle.inner_dim(), 1.0);
        let r = 0.5 * unit(&mut *self.rng);
        let mut y = center;
        y.axpy(r / dir.norm().max(f64::MIN_POSITIVE), &dir);
        y
    }

    fn v(&mut self) -> DenseVector {
        gaussian_vector(&mut *self.rng, self.oracle.inner_dim(), 1.0)
    }
}

fn unit(rng: &mut dyn RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn sampler<O: BilevelOracle + ?Sized>(oracle: &O, seed: u64) -> Sampler<'_, O> {
    Sampler {
        oracle,
        rng: Box::new(rng_from_seed(seed)),
    }
}

/// `⟨u, Hv⟩ = ⟨v, Hu⟩` up to [`SYMMETRY_TOL`] relative to `‖u‖‖v‖L`.
pub fn probe_hvp_symmetry<O: BilevelOracle + ?Sized>(
    oracle: &O,
    trials: usize,
    seed: u64,
) -> ProbeOutcome {
    let mut s = sampler(oracle, seed);
    let l = oracle.constants().l;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let x = s.x();
        let y = s.y(&x);
        let (u, v) = (s.v(), s.v());
        let gap = (u.dot(&oracle.hvp_yy_g(&x, &y, &v)) - v.dot(&oracle.hvp_yy_g(&x, &y, &u))).abs();
        worst = worst.max(gap - SYMMETRY_TOL * l.max(1.0) * u.norm() * v.norm());
    }
    ProbeOutcome {
        name: "hvp symmetry",
        trials,
        worst_violation: worst,
    }
}

/// `⟨v, Hv⟩ ≥ μ‖v‖² − COERCIVITY_TOL`.
pub fn probe_coercivity<O: BilevelOracle + ?Sized>(
    oracle: &O,
    trials: usize,
    seed: u64,
) -> ProbeOutcome {
    let mut s = sampler(oracle, seed);
    let mu = oracle.constants().mu;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let x = s.x();
        let y = s.y(&x);
        let v = s.v();
        let curv = v.dot(&oracle.hvp_yy_g(&x, &y, &v));
        worst = worst.max(mu * v.norm_sq() - COERCIVITY_TOL - curv);
    }
    ProbeOutcome {
        name: "strong convexity",
        trials,
        worst_violation: worst,
    }
}

fn probe_pairs<O, F>(
    oracle: &O,
    trials: usize,
    seed: u64,
    name: &'static str,
    constant: f64,
    mut eval: F,
) -> ProbeOutcome
where
    O: BilevelOracle + ?Sized,
    F: FnMut(&DenseVector, &DenseVector, &DenseVector) -> DenseVector,
{
    let mut s = sampler(oracle, seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let x1 = s.x();
        let y1 = s.y(&x1);
        // Nearby second point: Lipschitz bounds are local on data problems.
        let x2 = {
            let mut x2 = x1.clone();
            let step = gaussian_vector(&mut *s.rng, x1.dim(), 0.1);
            x2.axpy(1.0, &step);
            // Stay inside the sampling region by mixing with a fresh sample.
            let fresh = s.x();
            let t = 0.5 * unit(&mut *s.rng);
            x2.scale(1.0 - t).add(&fresh.scale(t))
        };
        let y2 = s.y(&x2);
        let v = s.v();
        let v = v.scale(1.0 / v.norm());
        let gap = eval(&x1, &y1, &v).sub(&eval(&x2, &y2, &v)).norm();
        let dist = x1.sub(&x2).norm() + y1.sub(&y2).norm();
        worst = worst.max(gap - constant * dist - LIPSCHITZ_TOL);
    }
    ProbeOutcome {
        name,
        trials,
        worst_violation: worst,
    }
}

/// `∇_y g` is `L`-Lipschitz, `‖∇²_y g‖ ≤ L` and `‖∇_x∇_y g‖ ≤ L`.
pub fn probe_smoothness<O: BilevelOracle + ?Sized>(
    oracle: &O,
    trials: usize,
    seed: u64,
) -> Vec<ProbeOutcome> {
    let l = oracle.constants().l;
    let grad = probe_pairs(oracle, trials, seed, "grad_y g Lipschitz", l, |x, y, _| {
        oracle.grad_y_g(x, y)
    });
    let mut s = sampler(oracle, seed ^ 0x5eed);
    let mut worst_h = f64::NEG_INFINITY;
    let mut worst_j = f64::NEG_INFINITY;
    for _ in 0..trials {
        let x = s.x();
        let y = s.y(&x);
        let v = s.v();
        worst_h = worst_h.max(oracle.hvp_yy_g(&x, &y, &v).norm() - l * v.norm() - LIPSCHITZ_TOL);
        worst_j = worst_j.max(oracle.jvp_xy_g(&x, &y, &v).norm() - l * v.norm() - LIPSCHITZ_TOL);
    }
    vec![
        grad,
        ProbeOutcome {
            name: "hvp bound",
            trials,
            worst_violation: worst_h,
        },
        ProbeOutcome {
            name: "jvp bound",
            trials,
            worst_violation: worst_j,
        },
    ]
}

/// The second-order blocks are `ρ`-Lipschitz.
pub fn probe_second_order<O: BilevelOracle + ?Sized>(
    oracle: &O,
    trials: usize,
    seed: u64,
) -> Vec<ProbeOutcome> {
    let rho = oracle.constants().rho;
    vec![
        probe_pairs(oracle, trials, seed, "hvp Lipschitz", rho, |x, y, v| {
            oracle.hvp_yy_g(x, y, v)
        }),
        probe_pairs(oracle, trials, seed ^ 1, "jvp Lipschitz", rho, |x, y, v| {
            oracle.jvp_xy_g(x, y, v)
        }),
    ]
}

/// Every probe above.
pub fn probe_all<O: BilevelOracle + ?Sized>(
    oracle: &O,
    trials: usize,
    seed: u64,
) -> Vec<ProbeOutcome> {
    let mut out = vec![
        probe_hvp_symmetry(oracle, trials, seed),
        probe_coercivity(oracle, trials, seed.wrapping_add(1)),
    ];
    out.extend(probe_smoothness(oracle, trials, seed.wrapping_add(2)));
    out.extend(probe_second_order(oracle, trials, seed.wrapping_add(3)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{
        make_hyper_cleaning, make_hyper_representation, make_lower_bound_instance,
        HyperCleaningDims, HyperRepresentationDims, ProblemConstants, RandomQuadratic,
    };

    fn assert_all_pass(outcomes: &[ProbeOutcome], problem: &str) {
        for o in outcomes {
            assert!(o.passed(), "{problem}: {} violated by {}", o.name, o.worst_violation);
        }
    }

    #[test]
    fn analytic_problems_pass() {
        let lb = make_lower_bound_instance(2.0, 1.0, 1.0).unwrap();
        assert_all_pass(&probe_all(&lb, 100, 1), "lower bound");
        let quad = RandomQuadratic::new(4, 6, 10.0, 7).generate().unwrap();
        assert_all_pass(&probe_all(&quad, 100, 2), "quadratic");
    }

    #[test]
    fn data_problems_pass() {
        let hr = make_hyper_representation(&HyperRepresentationDims::default(), 1.0, 4).unwrap();
        assert_all_pass(&probe_all(&hr, 100, 3), "hyper-representation");
        let hc = make_hyper_cleaning(&HyperCleaningDims::default(), 0.2, 5).unwrap();
        assert_all_pass(&probe_all(&hc, 100, 4), "hyper-cleaning");
    }

    /// Wraps an oracle and lies about its constants.
    struct Misreported<O>(O, ProblemConstants);

    impl<O: BilevelOracle> BilevelOracle for Misreported<O> {
        fn name(&self) -> &str {
            "misreported"
        }
        fn outer_dim(&self) -> usize {
            self.0.outer_dim()
        }
        fn inner_dim(&self) -> usize {
            self.0.inner_dim()
        }
        fn constants(&self) -> ProblemConstants {
            self.1
        }
        fn outer_value(&self, x: &DenseVector, y: &DenseVector) -> f64 {
            self.0.outer_value(x, y)
        }
        fn inner_value(&self, x: &DenseVector, y: &DenseVector) -> f64 {
            self.0.inner_value(x, y)
        }
        fn grad_x_f(&self, x: &DenseVector, y: &DenseVector) -> DenseVector {
            self.0.grad_x_f(x, y)
        }
        fn grad_y_f(&self, x: &DenseVector, y: &DenseVector) -> DenseVector {
            self.0.grad_y_f(x, y)
        }
        fn grad_y_g(&self, x: &DenseVector, y: &DenseVector) -> DenseVector {
            self.0.grad_y_g(x, y)
        }
        fn hvp_yy_g(&self, x: &DenseVector, y: &DenseVector, v: &DenseVector) -> DenseVector {
            self.0.hvp_yy_g(x, y, v)
        }
        fn jvp_xy_g(&self, x: &DenseVector, y: &DenseVector, v: &DenseVector) -> DenseVector {
            self.0.jvp_xy_g(x, y, v)
        }
    }

    #[test]
    fn overstated_mu_and_understated_l_are_caught() {
        let lb = make_lower_bound_instance(2.0, 1.0, 1.0).unwrap();
        let honest = lb.constants();
        let bad_mu = Misreported(lb.clone(), ProblemConstants { mu: 1.5, ..honest });
        assert!(!probe_coercivity(&bad_mu, 100, 0).passed());
        let bad_l = Misreported(lb, ProblemConstants { l: 1.5, ..honest });
        assert!(probe_smoothness(&bad_l, 100, 0).iter().any(|o| !o.passed()));
    }
}
