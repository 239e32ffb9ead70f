//! Objective oracles: the trait consumed by the solver and diagnostics, plus
//! small analytic test functions with known solution sets.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A smooth objective exposed through exact evaluations.
///
/// Implementations must be pure and safe to call from several threads at
/// once; an oracle is immutable after construction. `eval_hess` returns the
/// dense symmetric Hessian (the subproblem solver eigendecomposes it), and
/// `eval_hvp`, when provided, must agree with the dense form. Problems whose
/// critical manifold is known analytically also report the distance to it,
/// which drives the distance-based diagnostics; when the distance is absent
/// those diagnostics are skipped rather than estimated.
pub trait ProblemOracle: Sync {
    fn dim(&self) -> usize;

    fn eval_f(&self, x: &DVector<f64>) -> f64;

    fn eval_grad(&self, x: &DVector<f64>) -> DVector<f64>;

    fn eval_hess(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Hessian-vector product, if implemented independently of `eval_hess`.
    fn eval_hvp(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    /// Distance from `x` to the set of second-order critical points, when
    /// that set is known in closed form.
    fn dist_to_solution_set(&self, _x: &DVector<f64>) -> Option<f64> {
        None
    }

    /// Normalization used to turn distances into relative errors (the norm of
    /// the ground truth for the recovery problems). Defaults to 1.
    fn solution_scale(&self) -> Option<f64> {
        None
    }
}

/// f(x) = (‖x‖² − 1)². Its second-order critical points form the unit
/// sphere; the origin is a strict saddle. Distance to the sphere is
/// |‖x‖ − 1|, gradient 4(‖x‖²−1)x, Hessian 8xxᵀ + 4(‖x‖²−1)I.
pub struct SphereQuartic {
    n: usize,
}

/// Build the sphere quartic on ℝⁿ.
pub fn sphere_quartic(n: usize) -> Result<SphereQuartic> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    Ok(SphereQuartic { n })
}

impl ProblemOracle for SphereQuartic {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval_f(&self, x: &DVector<f64>) -> f64 {
        let s = x.norm_squared() - 1.0;
        s * s
    }

    fn eval_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let s = x.norm_squared() - 1.0;
        x * (4.0 * s)
    }

    fn eval_hess(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let s = x.norm_squared() - 1.0;
        let mut h = DMatrix::from_diagonal_element(self.n, self.n, 4.0 * s);
        h.ger(8.0, x, x, 1.0);
        h
    }

    fn eval_hvp(&self, x: &DVector<f64>, v: &DVector<f64>) -> Option<DVector<f64>> {
        let s = x.norm_squared() - 1.0;
        Some(x * (8.0 * x.dot(v)) + v * (4.0 * s))
    }

    fn dist_to_solution_set(&self, x: &DVector<f64>) -> Option<f64> {
        Some((x.norm() - 1.0).abs())
    }

    fn solution_scale(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// f(x) = ½xᵀHx + gᵀx with H ≻ 0; unique minimizer −H⁻¹g.
pub struct ConvexQuadratic {
    h: DMatrix<f64>,
    g: DVector<f64>,
    x_star: DVector<f64>,
}

/// Build a strictly convex quadratic. Rejects non-positive-definite `h`
/// (detected by Cholesky failure) and asymmetric input.
pub fn convex_quadratic(h: DMatrix<f64>, g: DVector<f64>) -> Result<ConvexQuadratic> {
    let n = g.len();
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: h.nrows(),
        });
    }
    let asym = (&h - h.transpose()).norm();
    if asym > 1e-12 * h.norm().max(1.0) {
        return Err(Error::InvalidArgument("Hessian must be symmetric".into()));
    }
    let chol = Cholesky::new(h.clone())
        .ok_or_else(|| Error::InvalidArgument("Hessian must be positive definite".into()))?;
    let x_star = -chol.solve(&g);
    Ok(ConvexQuadratic { h, g, x_star })
}

impl ProblemOracle for ConvexQuadratic {
    fn dim(&self) -> usize {
        self.g.len()
    }

    fn eval_f(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    fn eval_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x + &self.g
    }

    fn eval_hess(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.h.clone()
    }

    fn eval_hvp(&self, _x: &DVector<f64>, v: &DVector<f64>) -> Option<DVector<f64>> {
        Some(&self.h * v)
    }

    fn dist_to_solution_set(&self, x: &DVector<f64>) -> Option<f64> {
        Some((x - &self.x_star).norm())
    }
}

/// A convex quadratic with a rank-deficient positive-semidefinite Hessian:
/// f(x) = ½ Σᵢ μᵢxᵢ² with μᵢ > 0 on the first `dim − null_dim` coordinates
/// and μᵢ = 0 on the rest. The solution set is the kernel subspace, so the
/// minimizers are non-isolated, yet f is gradient dominated of degree 2
/// (f − f* ≤ ‖∇f‖²/(2·min μ₊)) and grows quadratically away from the kernel.
/// Useful for rate measurements in the degenerate-but-benign regime.
pub struct GradientDominatedDemo {
    mu: DVector<f64>,
    active: usize,
}

/// Build the rank-deficient quadratic demo with `null_dim` flat directions.
/// The positive curvatures are spread linearly over [1, 4].
pub fn gradient_dominated_demo(dim: usize, null_dim: usize) -> Result<GradientDominatedDemo> {
    if dim == 0 || null_dim >= dim {
        return Err(Error::InvalidArgument(
            "need dim ≥ 1 and null_dim < dim".into(),
        ));
    }
    let active = dim - null_dim;
    let mut mu = DVector::zeros(dim);
    for i in 0..active {
        let t = if active == 1 {
            0.0
        } else {
            i as f64 / (active - 1) as f64
        };
        mu[i] = 1.0 + 3.0 * t;
    }
    Ok(GradientDominatedDemo { mu, active })
}

impl ProblemOracle for GradientDominatedDemo {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn eval_f(&self, x: &DVector<f64>) -> f64 {
        0.5 * x
            .iter()
            .zip(self.mu.iter())
            .map(|(xi, mi)| mi * xi * xi)
            .sum::<f64>()
    }

    fn eval_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_mul(&self.mu)
    }

    fn eval_hess(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.mu)
    }

    fn eval_hvp(&self, _x: &DVector<f64>, v: &DVector<f64>) -> Option<DVector<f64>> {
        Some(v.component_mul(&self.mu))
    }

    fn dist_to_solution_set(&self, x: &DVector<f64>) -> Option<f64> {
        Some(x.rows(0, self.active).norm())
    }
}

/// Serializable description of a shipped test function, for harness configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunctionSpec {
    SphereQuartic {
        dim: usize,
    },
    /// Diagonal strictly convex quadratic; `diag` defaults to all ones and
    /// `g` to zero.
    ConvexQuadratic {
        dim: usize,
        #[serde(default)]
        diag: Option<Vec<f64>>,
        #[serde(default)]
        g: Option<Vec<f64>>,
    },
    GradientDominatedDemo {
        dim: usize,
        null_dim: usize,
    },
}

impl TestFunctionSpec {
    pub fn dim(&self) -> usize {
        match self {
            TestFunctionSpec::SphereQuartic { dim }
            | TestFunctionSpec::ConvexQuadratic { dim, .. }
            | TestFunctionSpec::GradientDominatedDemo { dim, .. } => *dim,
        }
    }

    pub fn build(&self) -> Result<Box<dyn ProblemOracle>> {
        match self {
            TestFunctionSpec::SphereQuartic { dim } => Ok(Box::new(sphere_quartic(*dim)?)),
            TestFunctionSpec::ConvexQuadratic { dim, diag, g } => {
                let d = match diag {
                    Some(v) if v.len() != *dim => {
                        return Err(Error::DimensionMismatch {
                            expected: *dim,
                            found: v.len(),
                        })
                    }
                    Some(v) => DVector::from_column_slice(v),
                    None => DVector::from_element(*dim, 1.0),
                };
                let g = match g {
                    Some(v) if v.len() != *dim => {
                        return Err(Error::DimensionMismatch {
                            expected: *dim,
                            found: v.len(),
                        })
                    }
                    Some(v) => DVector::from_column_slice(v),
                    None => DVector::zeros(*dim),
                };
                Ok(Box::new(convex_quadratic(DMatrix::from_diagonal(&d), g)?))
            }
            TestFunctionSpec::GradientDominatedDemo { dim, null_dim } => {
                Ok(Box::new(gradient_dominated_demo(*dim, *null_dim)?))
            }
        }
    }
}

/// Outcome of a central finite-difference cross-check of the oracle's
/// derivatives. Errors are relative to max(1, norm of the exact quantity).
#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub grad_rel_err: f64,
    pub hess_rel_err: f64,
    /// Set when the oracle produced a non-finite value, naming the entry.
    pub failure: Option<String>,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.failure.is_none() && self.grad_rel_err <= tol && self.hess_rel_err <= tol
    }
}

/// Compare `eval_grad` against central differences of `eval_f`, and
/// `eval_hess` against central differences of `eval_grad`, with step `h`.
pub fn finite_diff_report(
    oracle: &dyn ProblemOracle,
    x: &DVector<f64>,
    h: f64,
) -> Result<FdReport> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument(
            "finite-difference step must be positive".into(),
        ));
    }
    let n = oracle.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x.len(),
        });
    }
    let grad = oracle.eval_grad(x);
    let hess = oracle.eval_hess(x);
    let mut fd_grad = DVector::zeros(n);
    let mut fd_hess = DMatrix::zeros(n, n);
    let mut failure = None;
    for i in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let (fp, fm) = (oracle.eval_f(&xp), oracle.eval_f(&xm));
        if !fp.is_finite() || !fm.is_finite() {
            failure.get_or_insert_with(|| format!("f non-finite at x ± h·e_{i}"));
        }
        fd_grad[i] = (fp - fm) / (2.0 * h);
        let (gp, gm) = (oracle.eval_grad(&xp), oracle.eval_grad(&xm));
        for j in 0..n {
            if !gp[j].is_finite() || !gm[j].is_finite() {
                failure.get_or_insert_with(|| format!("∇f entry {j} non-finite at x ± h·e_{i}"));
            }
            fd_hess[(j, i)] = (gp[j] - gm[j]) / (2.0 * h);
        }
    }
    let grad_rel_err = (&fd_grad - &grad).norm() / grad.norm().max(1.0);
    let hess_rel_err = (&fd_hess - &hess).norm() / hess.norm().max(1.0);
    Ok(FdReport {
        grad_rel_err,
        hess_rel_err,
        failure,
    })
}
