//! Executable convergence diagnostics: order-of-convergence fits on distance
//! sequences, the step-length bound relating step norms to distances, and
//! randomized shell scans that corroborate (or refute) the error-bound and
//! quadratic-growth conditions on a problem instance.
//!
//! All fits work on the successor plot log d_{k+1} against log d_k, use only
//! the last few pairs above a rounding floor (quadratic tails reach machine
//! noise within three or four iterations), and report an `inconclusive` flag
//! instead of guessing when too little clean data remains.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::ProblemOracle;
use crate::solver::Trace;

/// Multiplier on machine epsilon × initial value below which sequence
/// entries count as rounding noise.
const NOISE_FLOOR_FACTOR: f64 = 100.0;

/// Outcome of a convergence-order fit.
#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    /// Number of successor pairs actually used.
    pub tail_length: usize,
    /// Least-squares slope of log d_{k+1} on log d_k over the used pairs.
    pub fitted_order: f64,
    /// max over used pairs of d_{k+1}/d_k².
    pub max_quad_ratio: f64,
    /// Whether the sequence strictly decreased over the used pairs.
    pub monotone_tail: bool,
    /// Set when fewer than 3 usable pairs survived the noise floor.
    pub inconclusive: bool,
}

fn fit_successor_slope(values: &[f64], tail: usize) -> RateReport {
    let floor = values
        .first()
        .map(|d0| NOISE_FLOOR_FACTOR * f64::EPSILON * d0)
        .unwrap_or(0.0);
    let mut pairs: Vec<(f64, f64)> = values
        .windows(2)
        .filter(|w| w[0] > floor && w[1] > floor)
        .map(|w| (w[0].ln(), w[1].ln()))
        .collect();
    if pairs.len() > tail {
        pairs.drain(0..pairs.len() - tail);
    }
    if pairs.len() < 3 {
        return RateReport {
            tail_length: pairs.len(),
            fitted_order: 0.0,
            max_quad_ratio: 0.0,
            monotone_tail: false,
            inconclusive: true,
        };
    }
    let n = pairs.len() as f64;
    let x_mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - x_mean).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - x_mean) * (p.1 - y_mean)).sum();
    if sxx <= f64::MIN_POSITIVE {
        // degenerate: all abscissae identical (constant sequence)
        return RateReport {
            tail_length: pairs.len(),
            fitted_order: 0.0,
            max_quad_ratio: 0.0,
            monotone_tail: false,
            inconclusive: true,
        };
    }
    let slope = sxy / sxx;
    let max_quad_ratio = pairs
        .iter()
        .map(|(x, y)| (y - 2.0 * x).exp())
        .fold(0.0f64, f64::max);
    let monotone_tail = pairs.iter().all(|(x, y)| y < x);
    RateReport {
        tail_length: pairs.len(),
        fitted_order: slope,
        max_quad_ratio,
        monotone_tail,
        inconclusive: false,
    }
}

/// Fit the convergence order of a distance-to-solution sequence over its
/// last `tail` usable successor pairs. Nonpositive or below-floor entries
/// are excluded rather than rejected.
pub fn estimate_order(dists: &[f64], tail: usize) -> Result<RateReport> {
    if dists.is_empty() {
        return Err(Error::InvalidArgument("empty distance sequence".into()));
    }
    if tail < 3 {
        return Err(Error::InvalidArgument("tail must be at least 3".into()));
    }
    Ok(fit_successor_slope(dists, tail))
}

/// Same fit applied to objective gaps f_k − f*.
pub fn objective_rate_exponent(fvals: &[f64], f_star: f64, tail: usize) -> Result<RateReport> {
    if fvals.is_empty() {
        return Err(Error::InvalidArgument("empty objective sequence".into()));
    }
    if tail < 3 {
        return Err(Error::InvalidArgument("tail must be at least 3".into()));
    }
    let gaps: Vec<f64> = fvals.iter().map(|f| f - f_star).collect();
    Ok(fit_successor_slope(&gaps, tail))
}

/// The step-to-distance factor c(σ, L) = 1 + L/σ + √((1 + L/σ)² + L/σ): a
/// global minimizer of the cubic model moves at most c(σ, L)·dist(x, 𝒳).
pub fn step_bound_factor(sigma: f64, l: f64) -> f64 {
    let q = l / sigma;
    1.0 + q + ((1.0 + q) * (1.0 + q) + q).sqrt()
}

/// Outcome of checking the step bound along a run.
#[derive(Debug, Clone, Serialize)]
pub struct StepBoundReport {
    /// max over checked iterations of step / (c(σ, L)·dist); pass ⇔ ≤ 1.
    pub worst_fraction: f64,
    pub pass: bool,
    pub checked: usize,
    /// Iterations skipped for missing or below-floor distance.
    pub skipped: usize,
}

/// Check step_k ≤ c(σ_k, L)·dist_k on aligned sequences, ignoring entries
/// with dist ≤ `dist_floor`.
pub fn step_bound_check(
    steps: &[f64],
    dists: &[f64],
    sigmas: &[f64],
    l: f64,
    dist_floor: f64,
) -> Result<StepBoundReport> {
    if steps.len() != dists.len() || steps.len() != sigmas.len() {
        return Err(Error::DimensionMismatch {
            expected: steps.len(),
            found: dists.len().max(sigmas.len()),
        });
    }
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidArgument(
            "Lipschitz constant must be positive".into(),
        ));
    }
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for i in 0..steps.len() {
        if !(dists[i] > dist_floor) || !(sigmas[i] > 0.0) {
            skipped += 1;
            continue;
        }
        let fraction = steps[i] / (step_bound_factor(sigmas[i], l) * dists[i]);
        worst = worst.max(fraction);
        checked += 1;
    }
    Ok(StepBoundReport {
        worst_fraction: worst,
        pass: worst <= 1.0,
        checked,
        skipped,
    })
}

/// [`step_bound_check`] over the accepted iterations of a trace.
pub fn step_bound_check_trace(trace: &Trace, l: f64, dist_floor: f64) -> Result<StepBoundReport> {
    let mut steps = Vec::new();
    let mut dists = Vec::new();
    let mut sigmas = Vec::new();
    for rec in &trace.records {
        if rec.line_search_trials == 0 {
            continue; // termination record carries no step
        }
        steps.push(rec.step_norm);
        dists.push(rec.dist_to_solution.unwrap_or(-1.0));
        sigmas.push(rec.sigma_used);
    }
    step_bound_check(&steps, &dists, &sigmas, l, dist_floor)
}

/// Sampler configuration for [`eb_growth_scan`]: points are drawn as
/// anchor + δ·u with u uniform on the unit sphere and δ uniform in
/// (0, radius], cycling through the anchors.
#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub anchors: Vec<DVector<f64>>,
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    /// Error-bound constant to check max dist/‖∇f‖ against, if any.
    pub kappa_bound: Option<f64>,
    /// Growth constant α; the scan checks min (f − f̂)/dist² ≥ α/2.
    pub alpha_bound: Option<f64>,
    /// Objective value on the solution set (0 for all shipped instances).
    pub f_hat: f64,
}

/// Shell-scan outcome for the error-bound and quadratic-growth conditions.
#[derive(Debug, Clone, Serialize)]
pub struct EBScanReport {
    /// Valid samples used (nondegenerate distance).
    pub samples: usize,
    pub radius: f64,
    /// max dist/‖∇f‖ over the shell.
    pub max_ratio: f64,
    /// min (f − f̂)/dist² over the shell — the α/2-convention constant.
    pub min_growth: f64,
    pub kappa_bound: Option<f64>,
    pub alpha_bound: Option<f64>,
    /// max_ratio ≤ κ (vacuously true when no κ was supplied).
    pub pass_eb: bool,
    /// min_growth ≥ α/2 (vacuously true when no α was supplied).
    pub pass_growth: bool,
    pub inconclusive: bool,
}

/// Sample the shell dist ∈ (0, ρ] around the anchors and measure the worst
/// error-bound ratio and the weakest quadratic growth.
pub fn eb_growth_scan(oracle: &dyn ProblemOracle, config: &ScanConfig) -> Result<EBScanReport> {
    if config.anchors.is_empty() {
        return Err(Error::InvalidArgument(
            "scan needs at least one anchor".into(),
        ));
    }
    if !(config.radius > 0.0) || config.samples == 0 {
        return Err(Error::InvalidArgument(
            "scan needs positive radius and samples".into(),
        ));
    }
    let n = oracle.dim();
    for a in &config.anchors {
        if a.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: a.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut max_ratio = 0.0f64;
    let mut min_growth = f64::INFINITY;
    let mut valid = 0usize;
    for i in 0..config.samples {
        let anchor = &config.anchors[i % config.anchors.len()];
        let mut u = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let un = u.norm();
        if un < 1e-12 {
            continue;
        }
        u /= un;
        let delta = config.radius * (1.0 - rng.gen::<f64>());
        let x = anchor + u * delta;
        let dist = oracle
            .dist_to_solution_set(&x)
            .ok_or_else(|| Error::InvalidArgument("oracle provides no distance".into()))?;
        if dist <= 1e-12 {
            continue;
        }
        let f = oracle.eval_f(&x);
        let gn = oracle.eval_grad(&x).norm();
        max_ratio = max_ratio.max(dist / gn);
        min_growth = min_growth.min((f - config.f_hat) / (dist * dist));
        valid += 1;
    }
    if valid == 0 {
        return Ok(EBScanReport {
            samples: 0,
            radius: config.radius,
            max_ratio: 0.0,
            min_growth: 0.0,
            kappa_bound: config.kappa_bound,
            alpha_bound: config.alpha_bound,
            pass_eb: false,
            pass_growth: false,
            inconclusive: true,
        });
    }
    let pass_eb = config.kappa_bound.is_none_or(|k| max_ratio <= k);
    let pass_growth = config.alpha_bound.is_none_or(|a| min_growth >= 0.5 * a);
    Ok(EBScanReport {
        samples: valid,
        radius: config.radius,
        max_ratio,
        min_growth,
        kappa_bound: config.kappa_bound,
        alpha_bound: config.alpha_bound,
        pass_eb,
        pass_growth,
        inconclusive: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{convex_quadratic, sphere_quartic};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn exact_quadratic_sequence_fits_order_two() {
        let report = estimate_order(&[1e-1, 1e-2, 1e-4, 1e-8], 3).unwrap();
        assert!(!report.inconclusive);
        assert_relative_eq!(report.fitted_order, 2.0, epsilon = 1e-12);
        assert_relative_eq!(report.max_quad_ratio, 1.0, epsilon = 1e-12);
        assert!(report.monotone_tail);
    }

    #[test]
    fn geometric_sequence_fits_order_one() {
        let report = estimate_order(&[1e-1, 1e-2, 1e-3, 1e-4], 3).unwrap();
        assert_relative_eq!(report.fitted_order, 1.0, epsilon = 1e-12);
        assert_eq!(report.tail_length, 3);
    }

    #[test]
    fn synthetic_power_sequences_fit_exactly() {
        for q in [1.5f64, 2.0] {
            let mut d = 0.5f64;
            let mut seq = vec![d];
            for _ in 0..5 {
                d = d.powf(q);
                seq.push(d);
            }
            let report = estimate_order(&seq, 3).unwrap();
            assert!(
                (report.fitted_order - q).abs() <= 1e-12,
                "q = {q}: fitted {}",
                report.fitted_order
            );
        }
    }

    #[test]
    fn noise_floor_drops_rounding_tail() {
        // last entry sits below 100·ε·d₀ and must not pollute the fit
        let seq = [1e-1, 1e-2, 1e-4, 1e-8, 1e-17];
        let report = estimate_order(&seq, 3).unwrap();
        assert_relative_eq!(report.fitted_order, 2.0, epsilon = 1e-12);
        assert_eq!(report.tail_length, 3);
    }

    #[test]
    fn too_short_sequences_are_inconclusive_not_errors() {
        let report = estimate_order(&[1e-1, 1e-2, 1e-3], 3).unwrap();
        assert_eq!(report.tail_length, 2);
        assert!(report.inconclusive);
        assert!(estimate_order(&[], 3).is_err());
        assert!(estimate_order(&[1.0, 0.5, 0.25, 0.125], 2).is_err());
    }

    #[test]
    fn objective_exponent_examples() {
        // constructed 3/2-order sequence: gaps 1e−2, 1e−3, 1e−4.5, 1e−6.75
        let gaps = [1e-2, 1e-3, 10f64.powf(-4.5), 10f64.powf(-6.75)];
        let report = objective_rate_exponent(&gaps, 0.0, 3).unwrap();
        assert_relative_eq!(report.fitted_order, 1.5, epsilon = 1e-12);
        // exact quadratic sequence with a nonzero offset; dyadic gaps keep
        // the subtraction f − f* exact
        let fvals: Vec<f64> = [0.25, 0.0625, 0.00390625, 1.52587890625e-5]
            .iter()
            .map(|g| 3.0 + g)
            .collect();
        let report = objective_rate_exponent(&fvals, 3.0, 3).unwrap();
        assert_relative_eq!(report.fitted_order, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn step_bound_factor_closed_forms() {
        assert_relative_eq!(
            step_bound_factor(1.0, 1.0),
            2.0 + 5f64.sqrt(),
            epsilon = 1e-14
        );
        // L/σ → 0 limit
        assert!((step_bound_factor(1e9, 1.0) - 2.0).abs() <= 1e-8);
    }

    #[test]
    fn step_bound_check_basic() {
        let report = step_bound_check(&[1.0, 0.5], &[0.5, 0.2], &[1.0, 1.0], 1.0, 1e-12).unwrap();
        assert_eq!(report.checked, 2);
        // factor at σ = L is 2+√5 ≈ 4.236, so 1.0 ≤ 4.236·0.5 passes
        assert!(report.pass);
        let report = step_bound_check(&[10.0], &[0.5], &[1.0], 1.0, 1e-12).unwrap();
        assert!(!report.pass);
        assert!(report.worst_fraction > 1.0);
        assert!(step_bound_check(&[1.0], &[1.0, 2.0], &[1.0], 1.0, 1e-12).is_err());
        assert!(step_bound_check(&[1.0], &[1.0], &[1.0], 0.0, 1e-12).is_err());
    }

    #[test]
    fn step_bound_on_sphere_trace() {
        let oracle = sphere_quartic(2).unwrap();
        let x0 = DVector::from_column_slice(&[2.0, 0.0]);
        let trace = crate::solver::minimize(&oracle, &x0, &Default::default()).unwrap();
        // Hessian-Lipschitz constant 24R on the ball ‖x‖ ≤ R = 2
        let report = step_bound_check_trace(&trace, 48.0, 1e-12).unwrap();
        assert!(report.checked > 0);
        assert!(report.pass, "worst fraction {}", report.worst_fraction);
    }

    #[test]
    fn sphere_shell_scan_matches_closed_form_extrema() {
        let oracle = sphere_quartic(3).unwrap();
        let anchors = vec![
            DVector::from_column_slice(&[1.0, 0.0, 0.0]),
            DVector::from_column_slice(&[0.0, -1.0, 0.0]),
            DVector::from_column_slice(&[0.6, 0.0, 0.8]),
        ];
        let config = ScanConfig {
            anchors,
            radius: 0.5,
            samples: 1000,
            seed: 11,
            kappa_bound: Some(1.0 / 3.0 + 1e-12),
            alpha_bound: Some(4.0),
            f_hat: 0.0,
        };
        let report = eb_growth_scan(&oracle, &config).unwrap();
        assert!(!report.inconclusive);
        // dist/‖∇f‖ = 1/(4ρ(ρ+1)) peaks at 1/3 on ρ = 1/2; (f−0)/dist² =
        // (ρ+1)² bottoms at 2.25 — both strict over the sampled shell
        assert!(
            report.max_ratio <= 1.0 / 3.0 + 1e-12,
            "max ratio {}",
            report.max_ratio
        );
        assert!(report.min_growth >= 2.0, "min growth {}", report.min_growth);
        assert!(report.pass_eb && report.pass_growth);
    }

    #[test]
    fn identity_quadratic_scan_is_exact() {
        let oracle = convex_quadratic(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        // κ and α sit exactly on the sampled extrema here, so pad the
        // pass-flag bounds by an ulp-scale slack
        let config = ScanConfig {
            anchors: vec![DVector::zeros(3)],
            radius: 1.0,
            samples: 200,
            seed: 5,
            kappa_bound: Some(1.0 + 1e-12),
            alpha_bound: Some(1.0 - 1e-12),
            f_hat: 0.0,
        };
        let report = eb_growth_scan(&oracle, &config).unwrap();
        assert_relative_eq!(report.max_ratio, 1.0, epsilon = 1e-12);
        assert_relative_eq!(report.min_growth, 0.5, epsilon = 1e-12);
        assert!(report.pass_eb && report.pass_growth);
    }

    #[test]
    fn scan_is_deterministic_for_fixed_seed() {
        let oracle = sphere_quartic(2).unwrap();
        let config = ScanConfig {
            anchors: vec![DVector::from_column_slice(&[1.0, 0.0])],
            radius: 0.3,
            samples: 100,
            seed: 42,
            kappa_bound: None,
            alpha_bound: None,
            f_hat: 0.0,
        };
        let a = eb_growth_scan(&oracle, &config).unwrap();
        let b = eb_growth_scan(&oracle, &config).unwrap();
        assert_eq!(a.max_ratio, b.max_ratio);
        assert_eq!(a.min_growth, b.min_growth);
        assert_eq!(a.samples, b.samples);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn factor_monotone_in_l_over_sigma(
            sigma in 1e-3f64..1e3,
            l1 in 1e-3f64..1e3,
            bump in 1.001f64..10.0,
        ) {
            let f1 = step_bound_factor(sigma, l1);
            let f2 = step_bound_factor(sigma, l1 * bump);
            prop_assert!(f2 > f1);
            prop_assert!(f1 >= 2.0);
        }
    }
}
