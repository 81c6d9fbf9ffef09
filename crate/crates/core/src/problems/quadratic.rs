use crate::numerics::{solve_spd, solve_spd_matrix, DenseMatrix, DenseVector};

use super::{
    gaussian_vector, rng_from_seed, BilevelOracle, ExactOracle, ProblemConstants, ProblemError,
    Result,
};

/// Strongly convex quadratic bilevel problem.
///
/// ```text
/// g(x, y) = ½ yᵀHy − xᵀBᵀy + cᵀy
/// f(x, y) = ½ xᵀAx + ½‖y − d‖²
/// ```
///
/// `y*(x) = H⁻¹(Bx − c)`. Second derivatives are constant, so `ρ = 0`.
#[derive(Debug, Clone)]
pub struct QuadraticBilevel {
    h: DenseMatrix,
    b: DenseMatrix,
    c: DenseVector,
    a: DenseMatrix,
    d: DenseVector,
    // H⁻¹B and H⁻¹c, used by the matrix-form reference gradient.
    h_inv_b: DenseMatrix,
    h_inv_c: DenseVector,
    constants: ProblemConstants,
}

pub fn make_quadratic(
    h: DenseMatrix,
    b: DenseMatrix,
    c: DenseVector,
    a: DenseMatrix,
    d: DenseVector,
) -> Result<QuadraticBilevel> {
    QuadraticBilevel::new(h, b, c, a, d)
}

fn min_max_eigen(m: &DenseMatrix, what: &str) -> Result<(f64, f64)> {
    let ev = m.symmetric_eigenvalues()?;
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if lo <= 0.0 {
        return Err(ProblemError::InvalidParameter(format!(
            "{what} must be symmetric positive definite (smallest eigenvalue {lo})"
        )));
    }
    Ok((lo, hi))
}

fn dim_err(what: &str, expected: usize, got: usize) -> ProblemError {
    ProblemError::InvalidParameter(format!("{what}: expected dimension {expected}, got {got}"))
}

impl QuadraticBilevel {
    pub fn new(
        h: DenseMatrix,
        b: DenseMatrix,
        c: DenseVector,
        a: DenseMatrix,
        d: DenseVector,
    ) -> Result<Self> {
        let q = h.rows();
        if h.cols() != q {
            return Err(dim_err("H columns", q, h.cols()));
        }
        let p = b.cols();
        if b.rows() != q {
            return Err(dim_err("B rows", q, b.rows()));
        }
        if a.rows() != p || a.cols() != p {
            return Err(dim_err("A", p, a.rows().max(a.cols())));
        }
        if c.dim() != q {
            return Err(dim_err("c", q, c.dim()));
        }
        if d.dim() != q {
            return Err(dim_err("d", q, d.dim()));
        }
        let h = h.symmetrize()?;
        let a = a.symmetrize()?;
        let (mu, h_max) = min_max_eigen(&h, "H")?;
        let (_, a_max) = min_max_eigen(&a, "A")?;
        let b_norm = b.spectral_norm();
        let l = h_max.max(a_max).max(b_norm).max(1.0);

        let h_inv_b = solve_spd_matrix(&h, &b)?;
        let h_inv_c = solve_spd(&h, &c)?;
        // ‖y*(x) − d‖ over the unit box ‖x‖∞ ≤ 1.
        let m = (h_inv_b.spectral_norm() * (p as f64).sqrt() + h_inv_c.add(&d).norm())
            .max(f64::MIN_POSITIVE);
        let constants = ProblemConstants {
            l,
            mu,
            rho: 0.0,
            m,
        };
        constants.validate()?;
        Ok(Self {
            h,
            b,
            c,
            a,
            d,
            h_inv_b,
            h_inv_c,
            constants,
        })
    }

    pub fn inner_hessian(&self) -> &DenseMatrix {
        &self.h
    }

    pub fn coupling(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn outer_hessian(&self) -> &DenseMatrix {
        &self.a
    }

    /// `Φ(x)` evaluated through the closed-form minimizer.
    pub fn phi(&self, x: &DenseVector) -> f64 {
        self.outer_value(x, &self.y_star(x))
    }
}

impl BilevelOracle for QuadraticBilevel {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn outer_dim(&self) -> usize {
        self.b.cols()
    }

    fn inner_dim(&self) -> usize {
        self.h.rows()
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn outer_value(&self, x: &DenseVector, y: &DenseVector) -> f64 {
        0.5 * x.dot(&self.a.matvec_unchecked(x)) + 0.5 * y.sub(&self.d).norm_sq()
    }

    fn inner_value(&self, x: &DenseVector, y: &DenseVector) -> f64 {
        0.5 * y.dot(&self.h.matvec_unchecked(y)) - self.b.matvec_unchecked(x).dot(y)
            + self.c.dot(y)
    }

    fn grad_x_f(&self, x: &DenseVector, _y: &DenseVector) -> DenseVector {
        self.a.matvec_unchecked(x)
    }

    fn grad_y_f(&self, _x: &DenseVector, y: &DenseVector) -> DenseVector {
        y.sub(&self.d)
    }

    fn grad_y_g(&self, x: &DenseVector, y: &DenseVector) -> DenseVector {
        let mut g = self.h.matvec_unchecked(y);
        g.axpy(-1.0, &self.b.matvec_unchecked(x));
        g.axpy(1.0, &self.c);
        g
    }

    fn hvp_yy_g(&self, _x: &DenseVector, _y: &DenseVector, v: &DenseVector) -> DenseVector {
        self.h.matvec_unchecked(v)
    }

    fn jvp_xy_g(&self, _x: &DenseVector, _y: &DenseVector, v: &DenseVector) -> DenseVector {
        self.b.matvec_t_unchecked(v).scale(-1.0)
    }

    fn exact(&self) -> Option<&dyn ExactOracle> {
        Some(self)
    }
}

impl ExactOracle for QuadraticBilevel {
    fn y_star(&self, x: &DenseVector) -> DenseVector {
        self.h_inv_b.matvec_unchecked(x).sub(&self.h_inv_c)
    }

    fn v_star(&self, x: &DenseVector) -> DenseVector {
        let y = self.y_star(x);
        solve_spd(&self.h, &self.grad_y_f(x, &y)).expect("H is SPD by construction")
    }

    /// `∇Φ(x) = Ax + (H⁻¹B)ᵀ(y*(x) − d)`, differentiated from the closed
    /// form of `Φ` rather than assembled from the linear-system solution.
    fn grad_phi(&self, x: &DenseVector) -> DenseVector {
        let resid = self.y_star(x).sub(&self.d);
        let mut g = self.a.matvec_unchecked(x);
        g.axpy(1.0, &self.h_inv_b.matvec_t_unchecked(&resid));
        g
    }
}

/// How the coupling matrix `B` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coupling {
    /// Gaussian entries, rescaled to unit spectral norm.
    #[default]
    Dense,
    /// Columns spanning the eigenvectors of the `p` smallest eigenvalues of
    /// `H`, so every outer direction excites the slowest inner modes.
    SlowEigenspace,
}

/// Seeded generator for [`QuadraticBilevel`] instances with a prescribed
/// inner condition number.
///
/// `H = U·diag(s)·Uᵀ` with a random orthogonal `U` and `s` log-spaced on
/// `[1/κ, 1]` unless `spectrum` is given; `A` has eigenvalues in `[½, 1]`;
/// `B` has unit spectral norm; `c`, `d` are standard Gaussian. The resulting
/// constants are `L = 1`, `μ = 1/κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomQuadratic {
    pub p: usize,
    pub q: usize,
    pub kappa: f64,
    pub seed: u64,
    pub spectrum: Option<Vec<f64>>,
    pub coupling: Coupling,
}

impl RandomQuadratic {
    pub fn new(p: usize, q: usize, kappa: f64, seed: u64) -> Self {
        Self {
            p,
            q,
            kappa,
            seed,
            spectrum: None,
            coupling: Coupling::Dense,
        }
    }

    pub fn with_spectrum(mut self, spectrum: Vec<f64>) -> Self {
        self.spectrum = Some(spectrum);
        self
    }

    pub fn with_coupling(mut self, coupling: Coupling) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn generate(&self) -> Result<QuadraticBilevel> {
        let (p, q) = (self.p, self.q);
        if p == 0 || q == 0 {
            return Err(ProblemError::InvalidParameter(
                "quadratic dimensions must be positive".into(),
            ));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(ProblemError::InvalidParameter(format!(
                "kappa must be a finite value >= 1 (got {})",
                self.kappa
            )));
        }
        if self.coupling == Coupling::SlowEigenspace && p > q {
            return Err(ProblemError::InvalidParameter(
                "slow-eigenspace coupling needs p <= q".into(),
            ));
        }
        let mut spectrum = match &self.spectrum {
            Some(s) if s.len() == q => s.clone(),
            Some(s) => return Err(dim_err("spectrum", q, s.len())),
            None if q == 1 => vec![1.0 / self.kappa],
            None => (0..q)
                .map(|i| self.kappa.powf(i as f64 / (q - 1) as f64 - 1.0))
                .collect(),
        };
        spectrum.sort_by(f64::total_cmp);

        let mut rng = rng_from_seed(self.seed);
        let u = random_orthogonal(&mut rng, q)?;
        let h = u
            .matmul(&DenseMatrix::diag(&spectrum))?
            .matmul(&u.transpose())?
            .symmetrize()?;

        let b = match self.coupling {
            Coupling::Dense => {
                let g = DenseMatrix::new(q, p, gaussian_vector(&mut rng, q * p, 1.0).into_vec())?;
                let n = g.spectral_norm();
                g.scale(1.0 / n)
            }
            Coupling::SlowEigenspace => {
                let r = random_orthogonal(&mut rng, p)?;
                let mut slow = DenseMatrix::zeros(q, p);
                for i in 0..q {
                    for j in 0..p {
                        slow.set(i, j, u.get(i, j));
                    }
                }
                slow.matmul(&r)?
            }
        };

        let v = random_orthogonal(&mut rng, p)?;
        let a_diag: Vec<f64> = (0..p)
            .map(|i| if p == 1 { 1.0 } else { 0.5 + 0.5 * i as f64 / (p - 1) as f64 })
            .collect();
        let a = v
            .matmul(&DenseMatrix::diag(&a_diag))?
            .matmul(&v.transpose())?
            .symmetrize()?;
        let c = gaussian_vector(&mut rng, q, 1.0);
        let d = gaussian_vector(&mut rng, q, 1.0);
        QuadraticBilevel::new(h, b, c, a, d)
    }
}

fn random_orthogonal(rng: &mut dyn rand::RngCore, n: usize) -> Result<DenseMatrix> {
    let g = DenseMatrix::new(n, n, gaussian_vector(rng, n * n, 1.0).into_vec())?;
    Ok(g.orthogonal_factor()?)
}
