//! Gaussian phase retrieval: recover a complex signal z* ∈ ℂⁿ from
//! magnitude measurements b_j = |a_jᴴz*|, posed as the smooth real problem
//!
//! ```text
//! f(x, y) = (1/2m) Σ_j (|a_jᴴ(x + iy)|² − b_j²)²   over w = (x, y) ∈ ℝ²ⁿ.
//! ```
//!
//! The solution set is the phase circle {(x, y) rotated by any angle φ}, a
//! one-dimensional manifold on which the Hessian is always singular — the
//! interesting regime for distance-based convergence diagnostics. The
//! oracle works entirely in real variables through the m×2n matrices C and
//! D whose rows are (Re a_j, Im a_j) and (−Im a_j, Re a_j): u = Cw and
//! v = Dw are the real and imaginary parts of a_jᴴz, so |a_jᴴz|² = u² + v²
//! coordinatewise. Complex arithmetic appears only in instance generation
//! and the closed-form distance.
//!
//! Measurements are drawn from the standard complex Gaussian (real and
//! imaginary parts independent 𝒩(0, ½)), with m = ⌈3n·ln³n⌉. Everything is
//! seeded through ChaCha8 and regenerates bit-identically.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{eb_growth_scan, EBScanReport, ScanConfig};
use crate::error::{Error, Result};
use crate::problem::ProblemOracle;

/// A point of the real-variable problem: the stacked vector w = (x, y).
pub type PhasePoint = DVector<f64>;

/// One generated problem instance. Fields are public for serialization and
/// test construction; [`PhaseRetrievalInstance::validate`] checks the
/// invariants (consistent dimensions, b_j = |a_jᴴz*|, z* ≠ 0).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRetrievalInstance {
    pub n: usize,
    pub m: usize,
    /// Re(a_j) for each measurement vector.
    pub a_real: Vec<DVector<f64>>,
    /// Im(a_j) for each measurement vector.
    pub a_imag: Vec<DVector<f64>>,
    /// Measured magnitudes b_j = |a_jᴴz*| ≥ 0.
    pub b: DVector<f64>,
    pub z_star_real: DVector<f64>,
    pub z_star_imag: DVector<f64>,
    pub seed: u64,
}

/// m = ⌈3n·(ln n)³⌉ — the measurement count used by `generate_instance`
/// (natural logarithm; recorded in every artifact so results are auditable).
pub fn measurement_count(n: usize) -> usize {
    let n_f = n as f64;
    (3.0 * n_f * n_f.ln().powi(3)).ceil() as usize
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        let g: f64 = StandardNormal.sample(rng);
        g * std
    })
}

/// |a_jᴴz| for a = ar + i·ai, z = x + i·y.
fn magnitude(ar: &DVector<f64>, ai: &DVector<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let re = ar.dot(x) + ai.dot(y);
    let im = ar.dot(y) - ai.dot(x);
    re.hypot(im)
}

/// Draw a fresh instance: z* and each a_j from the standard complex
/// Gaussian, in the fixed order z*_re, z*_im, then per measurement a_re,
/// a_im. Deterministic for a fixed seed.
pub fn generate_instance(n: usize, seed: u64) -> Result<PhaseRetrievalInstance> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "signal dimension must be at least 2".into(),
        ));
    }
    let m = measurement_count(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = 0.5f64.sqrt();
    let z_star_real = gaussian_vector(&mut rng, n, std);
    let z_star_imag = gaussian_vector(&mut rng, n, std);
    let mut a_real = Vec::with_capacity(m);
    let mut a_imag = Vec::with_capacity(m);
    let mut b = DVector::zeros(m);
    for j in 0..m {
        let ar = gaussian_vector(&mut rng, n, std);
        let ai = gaussian_vector(&mut rng, n, std);
        b[j] = magnitude(&ar, &ai, &z_star_real, &z_star_imag);
        a_real.push(ar);
        a_imag.push(ai);
    }
    Ok(PhaseRetrievalInstance {
        n,
        m,
        a_real,
        a_imag,
        b,
        z_star_real,
        z_star_imag,
        seed,
    })
}

/// Apply the phase rotation (x, y) ↦ (x cosφ − y sinφ, x sinφ + y cosφ) to a
/// stacked point; the objective is invariant under it.
pub fn rotate(w: &DVector<f64>, phi: f64) -> Result<DVector<f64>> {
    if !w.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(
            "stacked point must have even length".into(),
        ));
    }
    let n = w.len() / 2;
    let (c, s) = (phi.cos(), phi.sin());
    let mut out = DVector::zeros(2 * n);
    for i in 0..n {
        out[i] = w[i] * c - w[n + i] * s;
        out[n + i] = w[i] * s + w[n + i] * c;
    }
    Ok(out)
}

fn signal_set_distance(
    z_star_real: &DVector<f64>,
    z_star_imag: &DVector<f64>,
    w: &DVector<f64>,
) -> f64 {
    let n = z_star_real.len();
    let x = w.rows(0, n);
    let y = w.rows(n, n);
    // |z*ᴴz| with z = x + iy
    let re = z_star_real.dot(&x) + z_star_imag.dot(&y);
    let im = z_star_real.dot(&y) - z_star_imag.dot(&x);
    let cross = re.hypot(im);
    let zs = z_star_real.norm_squared() + z_star_imag.norm_squared();
    (w.norm_squared() + zs - 2.0 * cross).max(0.0).sqrt()
}

impl PhaseRetrievalInstance {
    /// Check the structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument("n must be at least 2".into()));
        }
        if self.m == 0 || self.a_real.len() != self.m || self.a_imag.len() != self.m {
            return Err(Error::InvalidArgument("measurement count mismatch".into()));
        }
        if self.b.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: self.b.len(),
            });
        }
        if self.z_star_real.len() != self.n || self.z_star_imag.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: self.z_star_real.len(),
            });
        }
        if self.signal_norm() == 0.0 {
            return Err(Error::InvalidArgument(
                "ground-truth signal must be nonzero".into(),
            ));
        }
        for j in 0..self.m {
            if self.a_real[j].len() != self.n || self.a_imag[j].len() != self.n {
                return Err(Error::DimensionMismatch {
                    expected: self.n,
                    found: self.a_real[j].len(),
                });
            }
            let expect = magnitude(
                &self.a_real[j],
                &self.a_imag[j],
                &self.z_star_real,
                &self.z_star_imag,
            );
            if self.b[j] < 0.0 || (self.b[j] - expect).abs() > 1e-12 * expect.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "measurement {j} inconsistent with the stored signal"
                )));
            }
        }
        Ok(())
    }

    /// ‖z*‖.
    pub fn signal_norm(&self) -> f64 {
        (self.z_star_real.norm_squared() + self.z_star_imag.norm_squared()).sqrt()
    }

    /// The stacked ground truth w* = (x*, y*).
    pub fn w_star(&self) -> DVector<f64> {
        let mut w = DVector::zeros(2 * self.n);
        w.rows_mut(0, self.n).copy_from(&self.z_star_real);
        w.rows_mut(self.n, self.n).copy_from(&self.z_star_imag);
        w
    }

    /// Distance from a stacked point to the solution circle:
    /// min_φ ‖z − z*e^{iφ}‖ = √(‖z‖² + ‖z*‖² − 2|z*ᴴz|).
    pub fn dist_to_signal_set(&self, w: &DVector<f64>) -> f64 {
        signal_set_distance(&self.z_star_real, &self.z_star_imag, w)
    }

    /// dist_to_signal_set / ‖z*‖.
    pub fn relative_error(&self, w: &DVector<f64>) -> f64 {
        self.dist_to_signal_set(w) / self.signal_norm()
    }

    /// Hessian-Lipschitz bound 20·M²·R on the ball ‖w‖ ≤ R, with
    /// M = max_j ‖a_j‖ (complex norm).
    pub fn lipschitz_bound(&self, r: f64) -> f64 {
        20.0 * self.max_measurement_norm_sq() * r
    }

    fn max_measurement_norm_sq(&self) -> f64 {
        (0..self.m)
            .map(|j| self.a_real[j].norm_squared() + self.a_imag[j].norm_squared())
            .fold(0.0f64, f64::max)
    }

    /// Radius of a ball (around the origin) that contains the sublevel set
    /// {f ≤ f0} with overwhelming probability for Gaussian measurements:
    /// R̄ = ((8/m)·(2m·f0 + Σ b_j⁴))^{1/4}.
    pub fn level_set_radius(&self, f0: f64) -> f64 {
        let b4: f64 = self.b.iter().map(|bj| bj.powi(4)).sum();
        let inner = (2.0 * self.m as f64 * f0.max(0.0) + b4).sqrt();
        (2.0 * 2.0f64.sqrt() / (self.m as f64).sqrt() * inner).sqrt()
    }

    /// Build the dense real-variable oracle over ℝ²ⁿ.
    pub fn oracle(&self) -> PhaseRetrievalOracle {
        let two_n = 2 * self.n;
        let mut c = DMatrix::zeros(self.m, two_n);
        let mut d = DMatrix::zeros(self.m, two_n);
        for j in 0..self.m {
            for i in 0..self.n {
                c[(j, i)] = self.a_real[j][i];
                c[(j, self.n + i)] = self.a_imag[j][i];
                d[(j, i)] = -self.a_imag[j][i];
                d[(j, self.n + i)] = self.a_real[j][i];
            }
        }
        let b_sq = self.b.map(|bj| bj * bj);
        PhaseRetrievalOracle {
            n: self.n,
            m: self.m,
            c,
            d,
            b_sq,
            z_star_real: self.z_star_real.clone(),
            z_star_imag: self.z_star_imag.clone(),
        }
    }

    /// Sample the shell dist ∈ (0, ‖z*‖/√7] around the ground truth and
    /// check the error-bound constant 4/‖z*‖² and the quadratic-growth
    /// constant ‖z*‖²/4 (α/2 convention: min (f − 0)/dist² ≥ ‖z*‖²/8).
    pub fn eb_check(&self, samples: usize, seed: u64) -> Result<EBScanReport> {
        let zs = self.signal_norm();
        let oracle = self.oracle();
        let config = ScanConfig {
            anchors: vec![self.w_star()],
            radius: zs / 7f64.sqrt(),
            samples,
            seed,
            kappa_bound: Some(4.0 / (zs * zs)),
            alpha_bound: Some(zs * zs / 4.0),
            f_hat: 0.0,
        };
        eb_growth_scan(&oracle, &config)
    }

    pub fn to_json(&self) -> Result<String> {
        let repr = InstanceRepr {
            n: self.n,
            m: self.m,
            seed: self.seed,
            a_real: self
                .a_real
                .iter()
                .map(|v| v.iter().cloned().collect())
                .collect(),
            a_imag: self
                .a_imag
                .iter()
                .map(|v| v.iter().cloned().collect())
                .collect(),
            b: self.b.iter().cloned().collect(),
            z_star_real: self.z_star_real.iter().cloned().collect(),
            z_star_imag: self.z_star_imag.iter().cloned().collect(),
        };
        Ok(serde_json::to_string_pretty(&repr)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: InstanceRepr = serde_json::from_str(text)?;
        let instance = PhaseRetrievalInstance {
            n: repr.n,
            m: repr.m,
            a_real: repr.a_real.into_iter().map(DVector::from_vec).collect(),
            a_imag: repr.a_imag.into_iter().map(DVector::from_vec).collect(),
            b: DVector::from_vec(repr.b),
            z_star_real: DVector::from_vec(repr.z_star_real),
            z_star_imag: DVector::from_vec(repr.z_star_imag),
            seed: repr.seed,
        };
        instance.validate()?;
        Ok(instance)
    }
}

/// Serialized form: plain decimal arrays, exact under round-trip because
/// floats print in shortest-roundtrip notation.
#[derive(Serialize, Deserialize)]
struct InstanceRepr {
    n: usize,
    m: usize,
    seed: u64,
    a_real: Vec<Vec<f64>>,
    a_imag: Vec<Vec<f64>>,
    b: Vec<f64>,
    z_star_real: Vec<f64>,
    z_star_imag: Vec<f64>,
}

/// Dense real-variable oracle; immutable and thread-safe.
pub struct PhaseRetrievalOracle {
    n: usize,
    m: usize,
    /// Row j = (Re a_j, Im a_j).
    c: DMatrix<f64>,
    /// Row j = (−Im a_j, Re a_j).
    d: DMatrix<f64>,
    b_sq: DVector<f64>,
    z_star_real: DVector<f64>,
    z_star_imag: DVector<f64>,
}

impl PhaseRetrievalOracle {
    /// Residuals t_j = |a_jᴴz|² − b_j² together with u = Cw, v = Dw.
    fn residuals(&self, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let u = &self.c * w;
        let v = &self.d * w;
        let t = DVector::from_fn(self.m, |j, _| u[j] * u[j] + v[j] * v[j] - self.b_sq[j]);
        (t, u, v)
    }
}

impl ProblemOracle for PhaseRetrievalOracle {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn eval_f(&self, w: &DVector<f64>) -> f64 {
        let (t, _, _) = self.residuals(w);
        t.norm_squared() / (2.0 * self.m as f64)
    }

    fn eval_grad(&self, w: &DVector<f64>) -> DVector<f64> {
        let (t, u, v) = self.residuals(w);
        let tu = t.component_mul(&u);
        let tv = t.component_mul(&v);
        (self.c.transpose() * tu + self.d.transpose() * tv) * (2.0 / self.m as f64)
    }

    fn eval_hess(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let (t, u, v) = self.residuals(w);
        // Cᵀdiag(t)C + Dᵀdiag(t)D + 2QᵀQ with Q = diag(u)C + diag(v)D
        let mut ct = self.c.clone();
        let mut dt = self.d.clone();
        let mut q = DMatrix::zeros(self.m, 2 * self.n);
        for j in 0..self.m {
            let (cj, dj) = (self.c.row(j), self.d.row(j));
            q.row_mut(j).copy_from(&(cj * u[j] + dj * v[j]));
            ct.row_mut(j).scale_mut(t[j]);
            dt.row_mut(j).scale_mut(t[j]);
        }
        let mut h = self.c.transpose() * ct + self.d.transpose() * dt;
        h += q.transpose() * &q * 2.0;
        h * (2.0 / self.m as f64)
    }

    fn eval_hvp(&self, w: &DVector<f64>, p: &DVector<f64>) -> Option<DVector<f64>> {
        // same quantity assembled without materializing Q or the Hessian
        let (t, u, v) = self.residuals(w);
        let cp = &self.c * p;
        let dp = &self.d * p;
        let qp = DVector::from_fn(self.m, |j, _| u[j] * cp[j] + v[j] * dp[j]);
        let left = DVector::from_fn(self.m, |j, _| t[j] * cp[j] + 2.0 * u[j] * qp[j]);
        let right = DVector::from_fn(self.m, |j, _| t[j] * dp[j] + 2.0 * v[j] * qp[j]);
        Some((self.c.transpose() * left + self.d.transpose() * right) * (2.0 / self.m as f64))
    }

    fn dist_to_solution_set(&self, w: &DVector<f64>) -> Option<f64> {
        Some(signal_set_distance(&self.z_star_real, &self.z_star_imag, w))
    }

    fn solution_scale(&self) -> Option<f64> {
        Some((self.z_star_real.norm_squared() + self.z_star_imag.norm_squared()).sqrt())
    }
}
