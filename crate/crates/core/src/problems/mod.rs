//! Bilevel problems: the oracle contract and four concrete instances.
//!
//! A problem is `min_x Φ(x) = f(x, y*(x))` with `y*(x) = argmin_y g(x, y)`.
//! The optimizers only ever see the first-order callbacks plus Hessian- and
//! Jacobian-vector products of `g`; problems that admit closed forms also
//! expose an [`ExactOracle`] used as a referee.

mod hyper_cleaning;
mod hyper_representation;
mod lower_bound;
mod quadratic;
pub mod validity;

pub use hyper_cleaning::{make_hyper_cleaning, HyperCleaning, HyperCleaningDims};
pub use hyper_representation::{
    make_hyper_representation, HyperRepresentation, HyperRepresentationDims,
};
pub use lower_bound::{make_lower_bound_instance, LowerBoundInstance};
pub use quadratic::{make_quadratic, Coupling, QuadraticBilevel, RandomQuadratic};

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

use crate::numerics::{DenseVector, NumericsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("invalid problem parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, ProblemError>;

/// Regularity constants of a problem.
///
/// `l` bounds the Lipschitz constant of `∇_y g` in `y` and the norms of
/// `∇²_y g` and `∇_x∇_y g`; `mu` is the strong-convexity modulus of `g` in
/// `y`; `rho` is the Lipschitz constant of the second-order blocks; `m`
/// bounds `‖∇_y f(x, y*(x))‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    pub l: f64,
    pub mu: f64,
    pub rho: f64,
    pub m: f64,
}

impl ProblemConstants {
    pub fn kappa(&self) -> f64 {
        self.l / self.mu
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.l > 0.0
            && self.mu > 0.0
            && self.mu <= self.l
            && self.rho >= 0.0
            && self.m >= 0.0
            && [self.l, self.mu, self.rho, self.m].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(ProblemError::InvalidParameter(format!(
                "constants must satisfy 0 < mu <= L, rho >= 0, M >= 0 (got {self:?})"
            )))
        }
    }
}

/// Closed-form reference quantities.
pub trait ExactOracle {
    fn y_star(&self, x: &DenseVector) -> DenseVector;
    /// Solution of `∇²_y g(x, y*) v = ∇_y f(x, y*)`.
    fn v_star(&self, x: &DenseVector) -> DenseVector;
    /// The true hypergradient `∇Φ(x)`.
    fn grad_phi(&self, x: &DenseVector) -> DenseVector;
}

/// First- and second-order access to a bilevel problem.
///
/// All callbacks are pure. Dimensions: `x ∈ ℝ^p`, `y, v ∈ ℝ^q`.
pub trait BilevelOracle: Send + Sync {
    fn name(&self) -> &str;
    fn outer_dim(&self) -> usize;
    fn inner_dim(&self) -> usize;
    fn constants(&self) -> ProblemConstants;

    fn outer_value(&self, x: &DenseVector, y: &DenseVector) -> f64;
    fn inner_value(&self, x: &DenseVector, y: &DenseVector) -> f64;

    fn grad_x_f(&self, x: &DenseVector, y: &DenseVector) -> DenseVector;
    fn grad_y_f(&self, x: &DenseVector, y: &DenseVector) -> DenseVector;
    fn grad_y_g(&self, x: &DenseVector, y: &DenseVector) -> DenseVector;
    /// `∇²_y g(x, y) · v`
    fn hvp_yy_g(&self, x: &DenseVector, y: &DenseVector, v: &DenseVector) -> DenseVector;
    /// `∇_x∇_y g(x, y) · v`, a vector in `ℝ^p`.
    fn jvp_xy_g(&self, x: &DenseVector, y: &DenseVector, v: &DenseVector) -> DenseVector;

    fn exact(&self) -> Option<&dyn ExactOracle> {
        None
    }

    fn default_x0(&self) -> DenseVector {
        DenseVector::zeros(self.outer_dim())
    }

    fn default_y0(&self) -> DenseVector {
        DenseVector::zeros(self.inner_dim())
    }

    /// Draws an outer point from the region where the constants are valid.
    fn sample_outer(&self, rng: &mut dyn RngCore) -> DenseVector {
        gaussian_vector(rng, self.outer_dim(), 1.0)
    }
}

pub fn rng_from_seed(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub(crate) fn gaussian_vector(rng: &mut dyn RngCore, dim: usize, scale: f64) -> DenseVector {
    (0..dim)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
        .into()
}

/// Plain gradient descent on `g(x, ·)` until `‖∇_y g‖ ≤ tol`.
///
/// Returns `None` when `max_iter` steps do not reach the tolerance or the
/// iterate stops being finite.
pub fn minimize_inner<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &DenseVector,
    y0: &DenseVector,
    tol: f64,
    max_iter: usize,
) -> Option<DenseVector> {
    let alpha = 1.0 / oracle.constants().l;
    let mut y = y0.clone();
    for _ in 0..=max_iter {
        let grad = oracle.grad_y_g(x, &y);
        if !grad.is_finite() {
            return None;
        }
        if grad.norm() <= tol {
            return Some(y);
        }
        y.axpy(-alpha, &grad);
    }
    None
}

/// Estimates `M` as twice the largest `‖∇_y f(x, y*(x))‖` over sampled `x`.
pub(crate) fn estimate_m<F>(samples: &[DenseVector], mut grad_y_f_at_opt: F) -> f64
where
    F: FnMut(&DenseVector) -> f64,
{
    let max = samples
        .iter()
        .map(&mut grad_y_f_at_opt)
        .fold(0.0_f64, f64::max);
    (2.0 * max).max(f64::MIN_POSITIVE)
}

pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
