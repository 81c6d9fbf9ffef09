use crate::numerics::DenseVector;

use super::{BilevelOracle, ExactOracle, ProblemConstants, ProblemError, Result};

/// Two-dimensional worst case for small-`N` iterative differentiation.
///
/// With `Z = diag(L, μ)`:
///
/// ```text
/// f(x, y) = ½ xᵀZx + M·1ᵀy
/// g(x, y) = ½ yᵀZy − L·xᵀy + 1ᵀy
/// ```
///
/// so `y*(x) = Z⁻¹(Lx − 1)` and `∇Φ(x) = Zx + LM·Z⁻¹1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundInstance {
    l: f64,
    mu: f64,
    m: f64,
}

pub fn make_lower_bound_instance(l: f64, mu: f64, m: f64) -> Result<LowerBoundInstance> {
    LowerBoundInstance::new(l, mu, m)
}

impl LowerBoundInstance {
    pub fn new(l: f64, mu: f64, m: f64) -> Result<Self> {
        if !(l.is_finite() && mu.is_finite() && m.is_finite()) || l <= 0.0 || mu <= 0.0 {
            return Err(ProblemError::InvalidParameter(format!(
                "lower-bound instance needs finite L > 0 and mu > 0 (got L={l}, mu={mu})"
            )));
        }
        if mu > l {
            return Err(ProblemError::InvalidParameter(format!(
                "mu must not exceed L (got L={l}, mu={mu})"
            )));
        }
        // M = 0 is allowed: it decouples the outer objective from y.
        if m < 0.0 {
            return Err(ProblemError::InvalidParameter(format!(
                "M must be non-negative (got {m})"
            )));
        }
        Ok(Self { l, mu, m })
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    fn z(&self) -> [f64; 2] {
        [self.l, self.mu]
    }

    fn z_times(&self, v: &DenseVector) -> DenseVector {
        let z = self.z();
        DenseVector::from([z[0] * v[0], z[1] * v[1]])
    }
}

impl BilevelOracle for LowerBoundInstance {
    fn name(&self) -> &str {
        "lower_bound"
    }

    fn outer_dim(&self) -> usize {
        2
    }

    fn inner_dim(&self) -> usize {
        2
    }

    fn constants(&self) -> ProblemConstants {
        ProblemConstants {
            l: self.l,
            mu: self.mu,
            rho: 0.0,
            m: self.m,
        }
    }

    fn outer_value(&self, x: &DenseVector, y: &DenseVector) -> f64 {
        0.5 * x.dot(&self.z_times(x)) + self.m * (y[0] + y[1])
    }

    fn inner_value(&self, x: &DenseVector, y: &DenseVector) -> f64 {
        0.5 * y.dot(&self.z_times(y)) - self.l * x.dot(y) + y[0] + y[1]
    }

    fn grad_x_f(&self, x: &DenseVector, _y: &DenseVector) -> DenseVector {
        self.z_times(x)
    }

    fn grad_y_f(&self, _x: &DenseVector, _y: &DenseVector) -> DenseVector {
        DenseVector::filled(2, self.m)
    }

    fn grad_y_g(&self, x: &DenseVector, y: &DenseVector) -> DenseVector {
        let z = self.z();
        DenseVector::from([
            z[0] * y[0] - self.l * x[0] + 1.0,
            z[1] * y[1] - self.l * x[1] + 1.0,
        ])
    }

    fn hvp_yy_g(&self, _x: &DenseVector, _y: &DenseVector, v: &DenseVector) -> DenseVector {
        self.z_times(v)
    }

    fn jvp_xy_g(&self, _x: &DenseVector, _y: &DenseVector, v: &DenseVector) -> DenseVector {
        v.scale(-self.l)
    }

    fn exact(&self) -> Option<&dyn ExactOracle> {
        Some(self)
    }

    /// The all-ones start used by the lower-bound construction.
    fn default_x0(&self) -> DenseVector {
        DenseVector::filled(2, 1.0)
    }
}

impl ExactOracle for LowerBoundInstance {
    fn y_star(&self, x: &DenseVector) -> DenseVector {
        let z = self.z();
        DenseVector::from([
            (self.l * x[0] - 1.0) / z[0],
            (self.l * x[1] - 1.0) / z[1],
        ])
    }

    fn v_star(&self, _x: &DenseVector) -> DenseVector {
        let z = self.z();
        DenseVector::from([self.m / z[0], self.m / z[1]])
    }

    fn grad_phi(&self, x: &DenseVector) -> DenseVector {
        let z = self.z();
        let lm = self.l * self.m;
        DenseVector::from([z[0] * x[0] + lm / z[0], z[1] * x[1] + lm / z[1]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance() -> LowerBoundInstance {
        make_lower_bound_instance(2.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn y_star_at_origin() {
        let y = instance().y_star(&DenseVector::zeros(2));
        assert_eq!(y, DenseVector::from([-0.5, -1.0]));
    }

    #[test]
    fn grad_phi_at_origin() {
        let g = instance().grad_phi(&DenseVector::zeros(2));
        assert_eq!(g, DenseVector::from([1.0, 2.0]));
        assert_eq!(g.norm_sq(), 5.0);
    }

    #[test]
    fn zero_coupling_kills_outer_y_term() {
        let inst = make_lower_bound_instance(1.0, 1.0, 0.0).unwrap();
        assert_eq!(inst.grad_phi(&DenseVector::zeros(2)), DenseVector::zeros(2));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_lower_bound_instance(1.0, 2.0, 1.0).is_err());
        assert!(make_lower_bound_instance(0.0, 0.0, 1.0).is_err());
        assert!(make_lower_bound_instance(2.0, -1.0, 1.0).is_err());
        assert!(make_lower_bound_instance(2.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn inner_gradient_vanishes_at_y_star() {
        let inst = instance();
        let x = DenseVector::from([0.3, -1.7]);
        let g = inst.grad_y_g(&x, &inst.y_star(&x));
        assert!(g.norm() < 1e-14);
    }
}
