use rand::{Rng, RngCore};

use crate::numerics::{DenseMatrix, DenseVector};

use super::{
    estimate_m, gaussian_vector, minimize_inner, rng_from_seed, sigmoid, softplus, BilevelOracle,
    ProblemConstants, ProblemError, Result,
};

/// Sizes and outer range for a synthetic hyper-cleaning problem.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCleaningDims {
    pub samples: usize,
    pub features: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    /// Starting value of the raw regularization parameter.
    pub lambda_init: f64,
    /// Box on the raw parameter over which the constants hold.
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for HyperCleaningDims {
    fn default() -> Self {
        Self {
            samples: 200,
            features: 10,
            train_frac: 0.5,
            val_frac: 0.5,
            lambda_init: 0.0,
            lambda_min: -1.0,
            lambda_max: 2.0,
        }
    }
}

/// Regularized logistic regression with a learned ridge weight.
///
/// The outer variable is a scalar `λ`; the effective weight is
/// `softplus(λ)`, so the inner problem is strongly convex for every real
/// `λ`:
///
/// ```text
/// g(λ, w) = mean_train ℓ(b_i a_iᵀw) + softplus(λ)/2 ‖w‖²
/// f(λ, w) = mean_val ℓ(b_i a_iᵀw)
/// ```
///
/// with `ℓ(z) = log(1 + e^{−z})`. Training labels are flipped at rate
/// `noise_frac`; validation labels are clean.
#[derive(Debug, Clone)]
pub struct HyperCleaning {
    x_train: DenseMatrix,
    b_train: DenseVector,
    x_val: DenseMatrix,
    b_val: DenseVector,
    lambda_init: f64,
    lambda_range: (f64, f64),
    flipped: usize,
    constants: ProblemConstants,
}

pub fn make_hyper_cleaning(
    dims: &HyperCleaningDims,
    noise_frac: f64,
    seed: u64,
) -> Result<HyperCleaning> {
    if !(0.0..0.5).contains(&noise_frac) {
        return Err(ProblemError::InvalidParameter(format!(
            "noise_frac must lie in [0, 0.5) (got {noise_frac})"
        )));
    }
    let fracs_ok = dims.train_frac > 0.0
        && dims.val_frac > 0.0
        && dims.train_frac + dims.val_frac <= 1.0 + 1e-12;
    if dims.samples == 0 || dims.features == 0 || !fracs_ok {
        return Err(ProblemError::InvalidParameter(format!(
            "degenerate hyper-cleaning dimensions {dims:?}"
        )));
    }
    let n_train = (dims.train_frac * dims.samples as f64).round() as usize;
    let n_val = ((dims.val_frac * dims.samples as f64).round() as usize)
        .min(dims.samples.saturating_sub(n_train));
    if n_train == 0 || n_val == 0 {
        return Err(ProblemError::InvalidParameter(format!(
            "split of {} samples leaves an empty train or validation set",
            dims.samples
        )));
    }
    let (lo, hi) = (dims.lambda_min, dims.lambda_max);
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) || !(lo..=hi).contains(&dims.lambda_init)
    {
        return Err(ProblemError::InvalidParameter(format!(
            "need lambda_min <= lambda_init <= lambda_max (got {lo}, {}, {hi})",
            dims.lambda_init
        )));
    }

    let m = dims.features;
    let mut rng = rng_from_seed(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let planted = gaussian_vector(&mut rng, m, 1.0);
    let draw = |n: usize, rng: &mut dyn RngCore| {
        let x = DenseMatrix::new(n, m, gaussian_vector(rng, n * m, scale).into_vec())
            .expect("n*m entries");
        let b: DenseVector = x
            .matvec_unchecked(&planted)
            .iter()
            .map(|&z| if z >= 0.0 { 1.0 } else { -1.0 })
            .collect::<Vec<f64>>()
            .into();
        (x, b)
    };
    let (x_train, mut b_train) = draw(n_train, &mut rng);
    let (x_val, b_val) = draw(n_val, &mut rng);
    let mut flipped = 0;
    for i in 0..n_train {
        if rng.gen::<f64>() < noise_frac {
            b_train[i] = -b_train[i];
            flipped += 1;
        }
    }
    HyperCleaning::from_data(x_train, b_train, x_val, b_val, dims.lambda_init, (lo, hi), flipped)
}

impl HyperCleaning {
    fn from_data(
        x_train: DenseMatrix,
        b_train: DenseVector,
        x_val: DenseMatrix,
        b_val: DenseVector,
        lambda_init: f64,
        lambda_range: (f64, f64),
        flipped: usize,
    ) -> Result<Self> {
        let (lo, hi) = lambda_range;
        let n = x_train.rows() as f64;
        let gram = x_train.transpose().matmul(&x_train)?.symmetrize()?;
        let a_max = (0..x_train.rows())
            .chain(0..x_val.rows())
            .enumerate()
            .map(|(k, i)| {
                let row = if k < x_train.rows() {
                    x_train.row(i)
                } else {
                    x_val.row(i)
                };
                row.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .fold(0.0_f64, f64::max);
        let mu = softplus(lo);
        // ‖w*‖ ≤ max‖a‖/μ; one unit of slack for iterates near it.
        let w_bound = a_max / mu + 1.0;
        let hess_bound = gram.spectral_norm() / (4.0 * n) + softplus(hi);
        let cross_bound = sigmoid(hi) * w_bound;
        let l = hess_bound.max(cross_bound);
        // |ℓ'''| ≤ 1/(6√3); σ' ≤ 1/4.
        let rho = a_max.powi(3) / (6.0 * 3f64.sqrt()) + 1.0 + 0.25 * w_bound;
        let mut problem = Self {
            x_train,
            b_train,
            x_val,
            b_val,
            lambda_init,
            lambda_range,
            flipped,
            constants: ProblemConstants {
                l,
                mu,
                rho,
                m: 0.0,
            },
        };
        let samples: Vec<DenseVector> = (0..9)
            .map(|k| DenseVector::from([lo + (hi - lo) * k as f64 / 8.0]))
            .collect();
        let w0 = problem.default_y0();
        problem.constants.m = estimate_m(&samples, |x| {
            let y = minimize_inner(&problem, x, &w0, 1e-10, 200_000)
                .expect("strongly convex inner problem converges");
            problem.grad_y_f(x, &y).norm()
        });
        problem.constants.validate()?;
        Ok(problem)
    }

    /// Number of flipped training labels.
    pub fn flipped(&self) -> usize {
        self.flipped
    }

    pub fn lambda_range(&self) -> (f64, f64) {
        self.lambda_range
    }

    pub fn train_size(&self) -> usize {
        self.x_train.rows()
    }

    pub fn val_size(&self) -> usize {
        self.x_val.rows()
    }

    /// Mean logistic loss and its gradient in `w`.
    fn logistic(x: &DenseMatrix, b: &DenseVector, w: &DenseVector) -> (f64, DenseVector) {
        let z = x.matvec_unchecked(w);
        let n = x.rows() as f64;
        let mut loss = 0.0;
        let coef: DenseVector = z
            .iter()
            .zip(b.iter())
            .map(|(&zi, &bi)| {
                loss += softplus(-bi * zi);
                -bi * sigmoid(-bi * zi) / n
            })
            .collect::<Vec<f64>>()
            .into();
        (loss / n, x.matvec_t_unchecked(&coef))
    }
}

impl BilevelOracle for HyperCleaning {
    fn name(&self) -> &str {
        "hyper_cleaning"
    }

    fn outer_dim(&self) -> usize {
        1
    }

    fn inner_dim(&self) -> usize {
        self.x_train.cols()
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn outer_value(&self, _x: &DenseVector, y: &DenseVector) -> f64 {
        Self::logistic(&self.x_val, &self.b_val, y).0
    }

    fn inner_value(&self, x: &DenseVector, y: &DenseVector) -> f64 {
        Self::logistic(&self.x_train, &self.b_train, y).0 + 0.5 * softplus(x[0]) * y.norm_sq()
    }

    fn grad_x_f(&self, _x: &DenseVector, _y: &DenseVector) -> DenseVector {
        DenseVector::zeros(1)
    }

    fn grad_y_f(&self, _x: &DenseVector, y: &DenseVector) -> DenseVector {
        Self::logistic(&self.x_val, &self.b_val, y).1
    }

    fn grad_y_g(&self, x: &DenseVector, y: &DenseVector) -> DenseVector {
        let mut g = Self::logistic(&self.x_train, &self.b_train, y).1;
        g.axpy(softplus(x[0]), y);
        g
    }

    fn hvp_yy_g(&self, x: &DenseVector, y: &DenseVector, v: &DenseVector) -> DenseVector {
        let z = self.x_train.matvec_unchecked(y);
        let av = self.x_train.matvec_unchecked(v);
        let n = self.x_train.rows() as f64;
        let weighted: DenseVector = z
            .iter()
            .zip(av.iter())
            .map(|(&zi, &ai)| {
                let s = sigmoid(zi);
                s * (1.0 - s) * ai / n
            })
            .collect::<Vec<f64>>()
            .into();
        let mut out = self.x_train.matvec_t_unchecked(&weighted);
        out.axpy(softplus(x[0]), v);
        out
    }

    fn jvp_xy_g(&self, x: &DenseVector, y: &DenseVector, v: &DenseVector) -> DenseVector {
        DenseVector::from([sigmoid(x[0]) * y.dot(v)])
    }

    fn default_x0(&self) -> DenseVector {
        DenseVector::from([self.lambda_init])
    }

    fn sample_outer(&self, rng: &mut dyn RngCore) -> DenseVector {
        let (lo, hi) = self.lambda_range;
        let u: f64 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        DenseVector::from([lo + (hi - lo) * u])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> HyperCleaning {
        let dims = HyperCleaningDims {
            samples: 80,
            features: 5,
            ..Default::default()
        };
        make_hyper_cleaning(&dims, noise, 3).unwrap()
    }

    #[test]
    fn deterministic_and_no_exact_oracle() {
        let a = small(0.2);
        let b = small(0.2);
        assert_eq!(a.x_train, b.x_train);
        assert_eq!(a.b_train, b.b_train);
        assert!(a.exact().is_none());
        assert!(a.flipped() > 0);
        assert_eq!(small(0.0).flipped(), 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let dims = HyperCleaningDims::default();
        assert!(make_hyper_cleaning(&dims, 0.5, 0).is_err());
        assert!(make_hyper_cleaning(&dims, -0.1, 0).is_err());
        let empty = HyperCleaningDims {
            features: 0,
            ..dims.clone()
        };
        assert!(make_hyper_cleaning(&empty, 0.1, 0).is_err());
        let bad_split = HyperCleaningDims {
            train_frac: 0.8,
            val_frac: 0.5,
            ..dims
        };
        assert!(make_hyper_cleaning(&bad_split, 0.1, 0).is_err());
    }

    #[test]
    fn callbacks_match_finite_differences() {
        let hc = small(0.1);
        let mut rng = rng_from_seed(1);
        let x = hc.sample_outer(&mut rng);
        let y = gaussian_vector(&mut rng, 5, 1.0);
        let v = gaussian_vector(&mut rng, 5, 1.0);
        let h = 1e-6;
        let mut fd_g = DenseVector::zeros(5);
        let mut fd_h = DenseVector::zeros(5);
        let mut fd_f = DenseVector::zeros(5);
        for i in 0..5 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += h;
            ym[i] -= h;
            fd_g[i] = (hc.inner_value(&x, &yp) - hc.inner_value(&x, &ym)) / (2.0 * h);
            fd_f[i] = (hc.outer_value(&x, &yp) - hc.outer_value(&x, &ym)) / (2.0 * h);
            fd_h[i] = (hc.grad_y_g(&x, &yp).dot(&v) - hc.grad_y_g(&x, &ym).dot(&v)) / (2.0 * h);
        }
        assert!(fd_g.max_abs_diff(&hc.grad_y_g(&x, &y)) < 1e-7);
        assert!(fd_f.max_abs_diff(&hc.grad_y_f(&x, &y)) < 1e-7);
        assert!(fd_h.max_abs_diff(&hc.hvp_yy_g(&x, &y, &v)) < 1e-7);
        let xp = DenseVector::from([x[0] + h]);
        let xm = DenseVector::from([x[0] - h]);
        let fd_j = (hc.grad_y_g(&xp, &y).dot(&v) - hc.grad_y_g(&xm, &y).dot(&v)) / (2.0 * h);
        assert!((fd_j - hc.jvp_xy_g(&x, &y, &v)[0]).abs() < 1e-7);
    }

    #[test]
    fn strong_convexity_modulus_is_softplus_of_lower_bound() {
        let hc = small(0.1);
        assert!((hc.constants().mu - softplus(-1.0)).abs() < 1e-15);
        assert!(hc.constants().m > 0.0);
    }
}
