//! Exact global minimization of the cubic-regularized quadratic model
//!
//! ```text
//! m(d) = gᵀd + ½ dᵀHd + (σ/6)‖d‖³.
//! ```
//!
//! In the eigenbasis of H (eigenvalues λ₁ ≤ … ≤ λₙ, g̃ = Qᵀg) every global
//! minimizer satisfies dᵢ = −g̃ᵢ/(λᵢ + σr/2) with r = ‖d‖, so the problem
//! collapses to the scalar secular equation φ(r) = r, where
//!
//! ```text
//! φ(r) = ‖(Λ + (σr/2)I)⁻¹ g̃‖   over coordinates with λᵢ + σr/2 > 0.
//! ```
//!
//! φ is strictly decreasing on (max(0, −2λ₁/σ), ∞), so ψ(r) = 1/φ(r) − 1/r is
//! increasing and a safeguarded Newton iteration on ψ converges fast and
//! never escapes its bracket. The identity
//!
//! ```text
//! ‖g + Hd(r) + (σ/2)‖d(r)‖ d(r)‖ = (σ/2) · φ(r) · |φ(r) − r|
//! ```
//!
//! converts the secular gap directly into a stationarity certificate, which
//! is what the stopping rule measures.
//!
//! The *hard case* occurs when g̃ carries (numerically) zero weight on the
//! bottom eigenspace and φ(−2λ₁/σ) < −2λ₁/σ: no interior root exists, the
//! multiplier sticks at the left boundary, and the minimizer gains a free
//! component along a bottom eigenvector, scaled so that ‖d‖ = −2λ₁/σ
//! exactly. Among the continuum of global minimizers this module
//! deterministically picks the eigenvector whose first nonzero component is
//! positive, so traces reproduce bit-for-bit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Noise floor for deciding that the rotated gradient has no weight on the
/// bottom eigenspace, relative to ‖g‖.
const HARD_CASE_MASS_RTOL: f64 = 1e-12;

/// Data of the cubic model m(d) = gᵀd + ½dᵀHd + (σ/6)‖d‖³.
#[derive(Debug, Clone)]
pub struct CubicModel {
    pub g: DVector<f64>,
    pub h: DMatrix<f64>,
    pub sigma: f64,
}

impl CubicModel {
    /// Validates dimensions, finiteness, symmetry of `h`, and σ > 0.
    pub fn new(g: DVector<f64>, h: DMatrix<f64>, sigma: f64) -> Result<Self> {
        let n = g.len();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "model dimension must be positive".into(),
            ));
        }
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: h.nrows().max(h.ncols()),
            });
        }
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::InvalidArgument(
                "sigma must be positive and finite".into(),
            ));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model gradient".into()));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model Hessian".into()));
        }
        if (&h - h.transpose()).norm() > 1e-12 * h.norm().max(1.0) {
            return Err(Error::InvalidArgument(
                "model Hessian must be symmetric".into(),
            ));
        }
        Ok(CubicModel { g, h, sigma })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }
}

/// A certified global minimizer of a cubic model.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    /// The minimizing step.
    pub d: DVector<f64>,
    /// ‖d‖.
    pub r: f64,
    /// σ‖d‖/2 — the shift that makes H + multiplier·I positive semidefinite
    /// at a global minimizer.
    pub multiplier: f64,
    /// m(0) − m(d) ≥ 0.
    pub model_decrease: f64,
    pub hard_case: bool,
    /// ‖g + Hd + (σ/2)‖d‖d‖ evaluated at the returned `d`.
    pub stationarity_residual: f64,
    /// Secular-equation iterations spent (0 when the solution is trivial or
    /// assembled directly in the hard case).
    pub secular_iterations: usize,
}

/// Outcome of the scalar secular solve φ(r) = r.
#[derive(Debug, Clone, Copy)]
pub struct SecularRoot {
    pub r: f64,
    pub hard_case: bool,
    /// False when the iteration budget ran out; `r` then holds the best
    /// iterate and `bracket_lo`/`bracket_hi` the surviving bracket.
    pub converged: bool,
    pub iterations: usize,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
}

/// m(d) = gᵀd + ½dᵀHd + (σ/6)‖d‖³ for an explicit step `d`.
pub fn model_value(model: &CubicModel, d: &DVector<f64>) -> Result<f64> {
    if d.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: d.len(),
        });
    }
    Ok(model.g.dot(d) + 0.5 * d.dot(&(&model.h * d)) + model.sigma / 6.0 * d.norm().powi(3))
}

/// Internal result of the eigenbasis solve shared by [`solve_cubic`] and
/// [`secular_root`].
struct EigenSolve {
    root: SecularRoot,
    /// Step coordinates in the eigenbasis (without the hard-case component).
    d_tilde: DVector<f64>,
    /// Magnitude of the bottom-eigenvector component (0 outside the hard case).
    tau: f64,
}

fn solve_in_eigenbasis(lam: &DVector<f64>, gt: &DVector<f64>, sigma: f64, tol: f64) -> EigenSolve {
    let n = lam.len();
    let gnorm = gt.norm();
    let hnorm = lam[0].abs().max(lam[n - 1].abs());
    let lam1 = lam[0];
    let r_lo = (-2.0 * lam1 / sigma).max(0.0);

    // Bottom eigenspace at double-precision resolution, and the gradient
    // weight it carries.
    let eig_tol = 1e-12 * hnorm.max(1.0);
    let min_space: Vec<bool> = lam.iter().map(|&l| l - lam1 <= eig_tol).collect();
    let mass = min_space
        .iter()
        .zip(gt.iter())
        .filter(|(in_space, _)| **in_space)
        .map(|(_, gi)| gi * gi)
        .sum::<f64>()
        .sqrt();

    // Trivial: zero gradient and positive-semidefinite Hessian.
    if gnorm == 0.0 && lam1 >= 0.0 {
        return EigenSolve {
            root: SecularRoot {
                r: 0.0,
                hard_case: false,
                converged: true,
                iterations: 0,
                bracket_lo: 0.0,
                bracket_hi: 0.0,
            },
            d_tilde: DVector::zeros(n),
            tau: 0.0,
        };
    }

    // φ(r) restricted to coordinates outside the bottom eigenspace — the
    // right quantity for the boundary test, since the in-space weight is
    // below the noise floor exactly when the hard case is possible.
    let phi_free = |r: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            if min_space[i] {
                continue;
            }
            let den = lam[i] + 0.5 * sigma * r;
            if den > 0.0 {
                s += (gt[i] / den) * (gt[i] / den);
            }
        }
        s.sqrt()
    };

    let zero_bottom_mass = mass <= HARD_CASE_MASS_RTOL * gnorm.max(f64::MIN_POSITIVE);
    if (zero_bottom_mass || gnorm == 0.0) && lam1 < 0.0 && phi_free(r_lo) < r_lo {
        // Hard case: multiplier pinned at the boundary, free eigenvector
        // component tops the norm up to exactly r_lo.
        let r = r_lo;
        let mut d_tilde = DVector::zeros(n);
        for i in 0..n {
            if min_space[i] {
                continue;
            }
            let den = lam[i] + 0.5 * sigma * r;
            if den > 0.0 {
                d_tilde[i] = -gt[i] / den;
            }
        }
        let tau = (r * r - d_tilde.norm_squared()).max(0.0).sqrt();
        return EigenSolve {
            root: SecularRoot {
                r,
                hard_case: true,
                converged: true,
                iterations: 0,
                bracket_lo: r_lo,
                bracket_hi: r_lo,
            },
            d_tilde,
            tau,
        };
    }

    // Easy case: φ(r) = r has a unique root in (r_lo, r_hi]. The upper bound
    // follows from ‖g‖ ≥ (σ/2)r² − ‖H‖r at any stationary point.
    let mut hi = (hnorm + (hnorm * hnorm + 2.0 * sigma * gnorm).sqrt()) / sigma * (1.0 + 1e-10);
    let mut lo = r_lo;
    let phi_sq_all = |r: f64| -> (f64, f64) {
        // returns (φ², d(φ²)/dr) over all coordinates with positive shift
        let mut p2 = 0.0;
        let mut dp2 = 0.0;
        for i in 0..n {
            let den = lam[i] + 0.5 * sigma * r;
            if den > 0.0 {
                let q = gt[i] / den;
                p2 += q * q;
                dp2 -= sigma * q * q / den;
            }
        }
        (p2, dp2)
    };
    for _ in 0..100 {
        if phi_sq_all(hi).0.sqrt() <= hi {
            break;
        }
        hi *= 2.0;
    }

    let mut r = if lo > 0.0 {
        0.5 * (lo + hi)
    } else {
        (gnorm / hnorm.max(f64::MIN_POSITIVE)).max(1e-8).min(hi)
    };
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=200 {
        iterations = it;
        let (p2, dp2) = phi_sq_all(r);
        let p = p2.sqrt();
        if p > r {
            lo = lo.max(r);
        } else {
            hi = hi.min(r);
        }
        // Stationarity certificate (σ/2)·φ·|φ−r| plus a relative gap guard.
        if 0.5 * sigma * p * (p - r).abs() <= tol * gnorm.max(1.0)
            && (p - r).abs() <= 1e-10 * r.max(1.0)
        {
            converged = true;
            break;
        }
        if hi - lo <= 2.0 * f64::EPSILON * hi {
            // Bracket collapsed to adjacent floats without meeting the
            // certificate: the root hugs the bottom-eigenvalue pole, where
            // φ′ blows up. Handled by the boundary fallback below.
            break;
        }
        let next = if p > 0.0 {
            let dp = dp2 / (2.0 * p);
            let psi = 1.0 / p - 1.0 / r;
            let dpsi = -dp / p2 + 1.0 / (r * r);
            if dpsi > 0.0 {
                r - psi / dpsi
            } else {
                0.5 * (lo + hi)
            }
        } else {
            // φ vanished: shrink from above.
            0.5 * (lo + hi)
        };
        r = if next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }

    let mut d_tilde = DVector::zeros(n);
    for i in 0..n {
        let den = lam[i] + 0.5 * sigma * r;
        if den > 0.0 {
            d_tilde[i] = -gt[i] / den;
        }
    }

    if !converged {
        // Nearly hard case: the in-space gradient weight is tiny but above
        // the hard-case cutoff, so the root sits next to the pole at r_lo
        // and d(r) is hypersensitive to the last bits of r. Enforce the
        // norm constraint exactly instead: keep the free coordinates of
        // d(r) and give the bottom eigenspace the magnitude that tops ‖d‖
        // up to the radius, directed against the in-space gradient. Accept
        // only if the true stationarity residual certifies the step.
        for rc in [r, lo, hi] {
            if !(rc.is_finite() && rc > 0.0) {
                continue;
            }
            let mut cand = DVector::zeros(n);
            let mut free_sq = 0.0;
            for i in 0..n {
                if min_space[i] {
                    continue;
                }
                let den = lam[i] + 0.5 * sigma * rc;
                if den > 0.0 {
                    cand[i] = -gt[i] / den;
                    free_sq += cand[i] * cand[i];
                }
            }
            let tau_sq = rc * rc - free_sq;
            if tau_sq < 0.0 {
                continue;
            }
            let tau = tau_sq.sqrt();
            if mass > 0.0 {
                for i in 0..n {
                    if min_space[i] {
                        cand[i] = -gt[i] / mass * tau;
                    }
                }
            } else if let Some(i0) = min_space.iter().position(|&b| b) {
                cand[i0] = tau;
            }
            let norm = cand.norm();
            let resid =
                DVector::from_fn(n, |i, _| gt[i] + (lam[i] + 0.5 * sigma * norm) * cand[i]).norm();
            if resid <= tol * gnorm.max(1.0) {
                return EigenSolve {
                    root: SecularRoot {
                        r: rc,
                        hard_case: false,
                        converged: true,
                        iterations,
                        bracket_lo: lo,
                        bracket_hi: hi,
                    },
                    d_tilde: cand,
                    tau: 0.0,
                };
            }
        }
    }

    EigenSolve {
        root: SecularRoot {
            r,
            hard_case: false,
            converged,
            iterations,
            bracket_lo: lo,
            bracket_hi: hi,
        },
        d_tilde,
        tau: 0.0,
    }
}

/// Solve φ(r) = r for the step norm given the spectrum and the rotated
/// gradient. `eigvals` must be ascending; `hard_case` is reported when the
/// root sticks at the boundary max(0, −2λ₁/σ).
pub fn secular_root(
    eigvals: &DVector<f64>,
    g_rotated: &DVector<f64>,
    sigma: f64,
    tol: f64,
) -> Result<SecularRoot> {
    let n = eigvals.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty spectrum".into()));
    }
    if g_rotated.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: g_rotated.len(),
        });
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidArgument(
            "sigma must be positive and finite".into(),
        ));
    }
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    if eigvals.iter().any(|x| !x.is_finite()) || g_rotated.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("secular inputs".into()));
    }
    if eigvals
        .iter()
        .zip(eigvals.iter().skip(1))
        .any(|(a, b)| a > b)
    {
        return Err(Error::InvalidArgument(
            "eigenvalues must be ascending".into(),
        ));
    }
    Ok(solve_in_eigenbasis(eigvals, g_rotated, sigma, tol).root)
}

/// Compute a global minimizer of the cubic model to stationarity tolerance
/// `tol` (relative to max(1, ‖g‖)). The default choice downstream is 1e−10.
pub fn solve_cubic(model: &CubicModel, tol: f64) -> Result<SubproblemSolution> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let n = model.dim();
    if model.g.iter().any(|x| !x.is_finite()) || model.h.iter().any(|x| !x.is_finite()) {
        return Err(Error::Eigen("non-finite entries in model".into()));
    }

    let eig = SymmetricEigen::new(model.h.clone());
    if eig.eigenvalues.iter().any(|x| !x.is_finite()) {
        return Err(Error::Eigen(
            "eigendecomposition produced non-finite values".into(),
        ));
    }
    // nalgebra returns an unsorted spectrum; sort ascending and permute the
    // basis columns to match.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lam = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let q = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);

    let gt = q.transpose() * &model.g;
    let solve = solve_in_eigenbasis(&lam, &gt, model.sigma, tol);
    if !solve.root.converged {
        return Err(Error::SecularNonConvergence {
            lo: solve.root.bracket_lo,
            hi: solve.root.bracket_hi,
        });
    }

    let mut d = &q * &solve.d_tilde;
    if solve.root.hard_case && solve.tau > 0.0 {
        // Deterministic representative of the minimizer continuum: bottom
        // eigenvector with its first nonzero component made positive.
        let mut v = q.column(0).clone_owned();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-14) {
            if *first < 0.0 {
                v = -v;
            }
        }
        d += v * solve.tau;
    }

    let r = d.norm();
    let residual = (&model.g + &model.h * &d + &d * (0.5 * model.sigma * r)).norm();
    let value = model_value(model, &d)?;
    Ok(SubproblemSolution {
        d,
        r,
        multiplier: 0.5 * model.sigma * r,
        model_decrease: -value,
        hard_case: solve.root.hard_case,
        stationarity_residual: residual,
        secular_iterations: solve.root.iterations,
    })
}
