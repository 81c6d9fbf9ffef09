use rand::RngCore;

use crate::numerics::{solve_spd, DenseMatrix, DenseVector};

use super::{
    estimate_m, gaussian_vector, rng_from_seed, BilevelOracle, ExactOracle, ProblemConstants,
    ProblemError, Result,
};

/// Sizes and noise level for a synthetic hyper-representation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperRepresentationDims {
    /// Training rows.
    pub train: usize,
    /// Validation rows.
    pub val: usize,
    /// Raw feature count `m`.
    pub features: usize,
    /// Representation width `d`; the outer variable is an `m × d` matrix.
    pub rep_dim: usize,
    /// Standard deviation of the additive response noise.
    pub noise: f64,
    /// Frobenius radius of the representation ball the constants are valid
    /// on. Defaults to twice the norm of the initial representation, at
    /// least 1.
    pub radius: Option<f64>,
}

impl Default for HyperRepresentationDims {
    fn default() -> Self {
        Self {
            train: 60,
            val: 60,
            features: 8,
            rep_dim: 3,
            noise: 0.01,
            radius: None,
        }
    }
}

/// Ridge regression on a learned linear representation.
///
/// Outer variable: `Λ ∈ ℝ^{m×d}` flattened row-major. Inner variable:
/// `w ∈ ℝ^d`. With `h(X; Λ) = XΛ`:
///
/// ```text
/// g(Λ, w) = ‖X_T Λ w − Y_T‖² / (2 n_T) + γ/2 ‖w‖²
/// f(Λ, w) = ‖X_V Λ w − Y_V‖² / (2 n_V)
/// ```
///
/// Data are Gaussian: `X ~ N(0, 1)` entries, targets from a planted
/// representation `Y = X Λ₀ w₀ + noise`.
#[derive(Debug, Clone)]
pub struct HyperRepresentation {
    x_train: DenseMatrix,
    y_train: DenseVector,
    x_val: DenseMatrix,
    y_val: DenseVector,
    gamma: f64,
    rep_dim: usize,
    gram_train: DenseMatrix,
    xty_train: DenseVector,
    x0: DenseVector,
    radius: f64,
    constants: ProblemConstants,
}

pub fn make_hyper_representation(
    dims: &HyperRepresentationDims,
    gamma: f64,
    seed: u64,
) -> Result<HyperRepresentation> {
    if dims.train == 0 || dims.val == 0 || dims.features == 0 || dims.rep_dim == 0 {
        return Err(ProblemError::InvalidParameter(format!(
            "hyper-representation dimensions must be positive (got {dims:?})"
        )));
    }
    if !(dims.noise >= 0.0 && dims.noise.is_finite()) {
        return Err(ProblemError::InvalidParameter(format!(
            "noise must be a non-negative number (got {})",
            dims.noise
        )));
    }
    let (m, d) = (dims.features, dims.rep_dim);
    let mut rng = rng_from_seed(seed);
    let x_train = DenseMatrix::new(
        dims.train,
        m,
        gaussian_vector(&mut rng, dims.train * m, 1.0).into_vec(),
    )?;
    let x_val = DenseMatrix::new(
        dims.val,
        m,
        gaussian_vector(&mut rng, dims.val * m, 1.0).into_vec(),
    )?;
    let planted = gaussian_vector(&mut rng, m * d, 1.0 / (m as f64).sqrt());
    let w_planted = gaussian_vector(&mut rng, d, 1.0);
    let signal = representation(&planted, m, d).matvec_unchecked(&w_planted);
    let respond = |x: &DenseMatrix, rng: &mut dyn RngCore| {
        let mut y = x.matvec_unchecked(&signal);
        y.axpy(1.0, &gaussian_vector(rng, x.rows(), dims.noise));
        y
    };
    let y_train = respond(&x_train, &mut rng);
    let y_val = respond(&x_val, &mut rng);
    let x0 = gaussian_vector(&mut rng, m * d, 1.0 / (m as f64).sqrt());
    HyperRepresentation::from_data(x_train, y_train, x_val, y_val, d, gamma, x0, dims.radius)
}

/// View a flattened outer vector as the `m × d` representation matrix.
fn representation(lambda: &DenseVector, m: usize, d: usize) -> DenseMatrix {
    DenseMatrix::new(m, d, lambda.as_slice().to_vec()).expect("outer vector has m*d entries")
}

impl HyperRepresentation {
    #[allow(clippy::too_many_arguments)]
    pub fn from_data(
        x_train: DenseMatrix,
        y_train: DenseVector,
        x_val: DenseMatrix,
        y_val: DenseVector,
        rep_dim: usize,
        gamma: f64,
        x0: DenseVector,
        radius: Option<f64>,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(ProblemError::InvalidParameter(format!(
                "gamma must be positive (got {gamma})"
            )));
        }
        let m = x_train.cols();
        if x_val.cols() != m
            || y_train.dim() != x_train.rows()
            || y_val.dim() != x_val.rows()
            || x0.dim() != m * rep_dim
            || rep_dim == 0
        {
            return Err(ProblemError::InvalidParameter(
                "inconsistent hyper-representation data dimensions".into(),
            ));
        }
        let radius = radius.unwrap_or_else(|| (2.0 * x0.norm()).max(1.0));
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(ProblemError::InvalidParameter(format!(
                "radius must be positive (got {radius})"
            )));
        }
        let n_train = x_train.rows() as f64;
        let gram_train = x_train.transpose().matmul(&x_train)?.symmetrize()?;
        let xty_train = x_train.matvec_t_unchecked(&y_train);
        let gram_norm = gram_train.spectral_norm();

        // On ‖Λ‖_F ≤ R and ‖w‖ ≤ ‖w*‖max + 1, with ‖w*‖ ≤ R‖Xᵀy‖/(nγ).
        let w_bound = radius * xty_train.norm() / (n_train * gamma) + 1.0;
        let hess_bound = gram_norm * radius * radius / n_train + gamma;
        let cross_bound = (2.0 * gram_norm * radius * w_bound + xty_train.norm()) / n_train;
        let l = hess_bound.max(cross_bound);
        let rho = 2.0 * gram_norm * (w_bound + radius) / n_train;
        let mut problem = Self {
            x_train,
            y_train,
            x_val,
            y_val,
            gamma,
            rep_dim,
            gram_train,
            xty_train,
            x0,
            radius,
            constants: ProblemConstants {
                l,
                mu: gamma,
                rho,
                m: 0.0,
            },
        };
        let mut rng = rng_from_seed(0x4d5f_5341_4d50);
        let samples: Vec<DenseVector> = (0..16).map(|_| problem.sample_outer(&mut rng)).collect();
        problem.constants.m = estimate_m(&samples, |x| {
            let y = problem.y_star(x);
            problem.grad_y_f(x, &y).norm()
        });
        problem.constants.validate()?;
        Ok(problem)
    }

    pub fn features(&self) -> usize {
        self.x_train.cols()
    }

    pub fn rep_dim(&self) -> usize {
        self.rep_dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn train_data(&self) -> (&DenseMatrix, &DenseVector) {
        (&self.x_train, &self.y_train)
    }

    /// Validation loss at the ridge solution, `Φ(Λ)`.
    pub fn validation_loss(&self, x: &DenseVector) -> f64 {
        self.outer_value(x, &self.y_star(x))
    }

    fn lambda(&self, x: &DenseVector) -> DenseMatrix {
        representation(x, self.features(), self.rep_dim)
    }

    fn n_train(&self) -> f64 {
        self.x_train.rows() as f64
    }

    fn n_val(&self) -> f64 {
        self.x_val.rows() as f64
    }

    /// `ΛᵀGΛ/n + γI`
    fn inner_hessian(&self, x: &DenseVector) -> DenseMatrix {
        let lam = self.lambda(x);
        let h = lam
            .transpose()
            .matmul(&self.gram_train.matmul(&lam).expect("dims"))
            .expect("dims")
            .scale(1.0 / self.n_train());
        h.add(&DenseMatrix::identity(self.rep_dim).scale(self.gamma))
            .expect("dims")
            .symmetrize()
            .expect("square")
    }

    fn val_residual(&self, lam: &DenseMatrix, y: &DenseVector) -> DenseVector {
        self.x_val
            .matvec_unchecked(&lam.matvec_unchecked(y))
            .sub(&self.y_val)
    }
}

impl BilevelOracle for HyperRepresentation {
    fn name(&self) -> &str {
        "hyper_representation"
    }

    fn outer_dim(&self) -> usize {
        self.features() * self.rep_dim
    }

    fn inner_dim(&self) -> usize {
        self.rep_dim
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn outer_value(&self, x: &DenseVector, y: &DenseVector) -> f64 {
        let lam = self.lambda(x);
        self.val_residual(&lam, y).norm_sq() / (2.0 * self.n_val())
    }

    fn inner_value(&self, x: &DenseVector, y: &DenseVector) -> f64 {
        let lam = self.lambda(x);
        let r = self
            .x_train
            .matvec_unchecked(&lam.matvec_unchecked(y))
            .sub(&self.y_train);
        r.norm_sq() / (2.0 * self.n_train()) + 0.5 * self.gamma * y.norm_sq()
    }

    fn grad_x_f(&self, x: &DenseVector, y: &DenseVector) -> DenseVector {
        // X_Vᵀ r wᵀ / n_V
        let lam = self.lambda(x);
        let xtr = self.x_val.matvec_t_unchecked(&self.val_residual(&lam, y));
        outer(&xtr, y).scale(1.0 / self.n_val())
    }

    fn grad_y_f(&self, x: &DenseVector, y: &DenseVector) -> DenseVector {
        let lam = self.lambda(x);
        let xtr = self.x_val.matvec_t_unchecked(&self.val_residual(&lam, y));
        lam.matvec_t_unchecked(&xtr).scale(1.0 / self.n_val())
    }

    fn grad_y_g(&self, x: &DenseVector, y: &DenseVector) -> DenseVector {
        let lam = self.lambda(x);
        let glw = self.gram_train.matvec_unchecked(&lam.matvec_unchecked(y));
        let mut g = lam
            .matvec_t_unchecked(&glw.sub(&self.xty_train))
            .scale(1.0 / self.n_train());
        g.axpy(self.gamma, y);
        g
    }

    fn hvp_yy_g(&self, x: &DenseVector, _y: &DenseVector, v: &DenseVector) -> DenseVector {
        let lam = self.lambda(x);
        let glv = self.gram_train.matvec_unchecked(&lam.matvec_unchecked(v));
        let mut out = lam.matvec_t_unchecked(&glv).scale(1.0 / self.n_train());
        out.axpy(self.gamma, v);
        out
    }

    fn jvp_xy_g(&self, x: &DenseVector, y: &DenseVector, v: &DenseVector) -> DenseVector {
        // [GΛ(w vᵀ + v wᵀ) − XᵀY vᵀ] / n_T
        let lam = self.lambda(x);
        let glw = self.gram_train.matvec_unchecked(&lam.matvec_unchecked(y));
        let glv = self.gram_train.matvec_unchecked(&lam.matvec_unchecked(v));
        let mut out = outer(&glw, v);
        out.axpy(1.0, &outer(&glv, y));
        out.axpy(-1.0, &outer(&self.xty_train, v));
        out.scale(1.0 / self.n_train())
    }

    fn exact(&self) -> Option<&dyn ExactOracle> {
        Some(self)
    }

    fn default_x0(&self) -> DenseVector {
        self.x0.clone()
    }

    /// Uniform direction, radius up to `R` inside the Frobenius ball.
    fn sample_outer(&self, rng: &mut dyn RngCore) -> DenseVector {
        let dir = gaussian_vector(rng, self.outer_dim(), 1.0);
        let r = self.radius * (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        dir.scale(r / dir.norm())
    }
}

impl ExactOracle for HyperRepresentation {
    /// Ridge closed form `(ΛᵀGΛ/n + γI)⁻¹ ΛᵀXᵀY / n`.
    fn y_star(&self, x: &DenseVector) -> DenseVector {
        let lam = self.lambda(x);
        let rhs = lam
            .matvec_t_unchecked(&self.xty_train)
            .scale(1.0 / self.n_train());
        solve_spd(&self.inner_hessian(x), &rhs).expect("ridge system is SPD for gamma > 0")
    }

    fn v_star(&self, x: &DenseVector) -> DenseVector {
        let y = self.y_star(x);
        solve_spd(&self.inner_hessian(x), &self.grad_y_f(x, &y))
            .expect("ridge system is SPD for gamma > 0")
    }

    fn grad_phi(&self, x: &DenseVector) -> DenseVector {
        let y = self.y_star(x);
        let v = self.v_star(x);
        self.grad_x_f(x, &y).sub(&self.jvp_xy_g(x, &y, &v))
    }
}

/// Row-major flattening of `a bᵀ`.
fn outer(a: &DenseVector, b: &DenseVector) -> DenseVector {
    let mut out = Vec::with_capacity(a.dim() * b.dim());
    for &ai in a.iter() {
        out.extend(b.iter().map(|bj| ai * bj));
    }
    out.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::minimize_inner;

    fn small() -> HyperRepresentation {
        let dims = HyperRepresentationDims {
            train: 20,
            val: 15,
            features: 4,
            rep_dim: 2,
            noise: 0.1,
            radius: None,
        };
        make_hyper_representation(&dims, 1.0, 11).unwrap()
    }

    #[test]
    fn zero_targets_give_zero_ridge_solution() {
        let base = small();
        let (x_t, y_t) = base.train_data();
        let zero = HyperRepresentation::from_data(
            x_t.clone(),
            DenseVector::zeros(y_t.dim()),
            base.x_val.clone(),
            base.y_val.clone(),
            2,
            1.0,
            base.default_x0(),
            None,
        )
        .unwrap();
        let mut rng = rng_from_seed(5);
        for _ in 0..5 {
            let x = gaussian_vector(&mut rng, 8, 1.0);
            assert!(zero.y_star(&x).norm() == 0.0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = small();
        let b = small();
        assert_eq!(a.x_train, b.x_train);
        assert_eq!(a.x_val, b.x_val);
        assert_eq!(a.y_train, b.y_train);
        assert_eq!(a.default_x0(), b.default_x0());
    }

    #[test]
    fn ridge_closed_form_matches_long_gradient_descent() {
        let hr = small();
        let x = hr.default_x0();
        let alpha = 1.0 / hr.constants().l;
        let mut y = DenseVector::zeros(2);
        for _ in 0..10_000 {
            let g = hr.grad_y_g(&x, &y);
            y.axpy(-alpha, &g);
        }
        assert!(y.sub(&hr.y_star(&x)).norm() <= 1e-8);
        let solved = minimize_inner(&hr, &x, &DenseVector::zeros(2), 1e-12, 100_000).unwrap();
        assert!(solved.sub(&hr.y_star(&x)).norm() <= 1e-10);
    }

    #[test]
    fn rejects_degenerate_dimensions() {
        let dims = HyperRepresentationDims {
            rep_dim: 0,
            ..Default::default()
        };
        assert!(make_hyper_representation(&dims, 1.0, 0).is_err());
        assert!(make_hyper_representation(&HyperRepresentationDims::default(), 0.0, 0).is_err());
    }

    fn fd<F: Fn(&DenseVector) -> f64>(f: F, x: &DenseVector, h: f64) -> DenseVector {
        (0..x.dim())
            .map(|i| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect::<Vec<f64>>()
            .into()
    }

    #[test]
    fn callbacks_match_finite_differences() {
        let hr = small();
        let mut rng = rng_from_seed(9);
        let x = hr.sample_outer(&mut rng);
        let y = gaussian_vector(&mut rng, 2, 1.0);
        let v = gaussian_vector(&mut rng, 2, 1.0);
        let h = 1e-6;
        let gx = fd(|xx| hr.outer_value(xx, &y), &x, h);
        assert!(gx.max_abs_diff(&hr.grad_x_f(&x, &y)) < 1e-6);
        let gy = fd(|yy| hr.outer_value(&x, yy), &y, h);
        assert!(gy.max_abs_diff(&hr.grad_y_f(&x, &y)) < 1e-6);
        let gg = fd(|yy| hr.inner_value(&x, yy), &y, h);
        assert!(gg.max_abs_diff(&hr.grad_y_g(&x, &y)) < 1e-6);
        // ∇_x ⟨∇_y g(x, y), v⟩
        let jv = fd(|xx| hr.grad_y_g(xx, &y).dot(&v), &x, h);
        assert!(jv.max_abs_diff(&hr.jvp_xy_g(&x, &y, &v)) < 1e-6);
        // ∇_y ⟨∇_y g(x, y), v⟩
        let hv = fd(|yy| hr.grad_y_g(&x, yy).dot(&v), &y, h);
        assert!(hv.max_abs_diff(&hr.hvp_yy_g(&x, &y, &v)) < 1e-6);
    }

    #[test]
    fn grad_phi_matches_finite_differences_of_validation_loss() {
        let hr = small();
        let x = hr.default_x0();
        let fd_grad = fd(|xx| hr.validation_loss(xx), &x, 1e-5);
        let exact = hr.grad_phi(&x);
        assert!(exact.sub(&fd_grad).norm() / exact.norm() < 1e-6);
    }
}
