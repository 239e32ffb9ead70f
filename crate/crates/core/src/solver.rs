//! Outer cubic-regularization iteration: at each iterate solve the cubic
//! model exactly, accept the step when the true objective does at least as
//! well as the model promised, and adapt σ by a doubling line search.
//!
//! Acceptance uses the model-value test f(x + d) ≤ f(x) + m(d) (up to a
//! deterministic floating-point slack), which keeps f monotone because
//! m(d) ≤ 0 always. When a Hessian-Lipschitz constant L is supplied, trial
//! values are capped at 2L — acceptance is guaranteed at σ ≥ L, so hitting
//! the cap without acceptance signals a wrong L or numeric trouble and the
//! run stops with a line-search failure.
//!
//! Termination on the gradient tolerance additionally requires the Hessian
//! to be positive semidefinite up to 1e−8·max(1, ‖H‖): a strict saddle has
//! ‖∇f‖ = 0 but is not a solution, and the hard-case subproblem is exactly
//! the mechanism that escapes it.

use nalgebra::{DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ProblemOracle;
use crate::subproblem::{solve_cubic, CubicModel, SubproblemSolution};

/// Relative slack for the model-value acceptance test.
const ACCEPTANCE_SLACK: f64 = 1e-12;
/// Relative second-order tolerance for declaring a point stationary.
const SECOND_ORDER_TOL: f64 = 1e-8;

/// Tunables of the outer iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Lower cap σ̄ > 0 for every trial value.
    pub sigma_bar: f64,
    /// First trial σ (≥ sigma_bar).
    pub sigma_init: f64,
    /// Known Hessian-Lipschitz constant on the working region, if any;
    /// enables the 2L cap with guaranteed acceptance.
    pub lipschitz_l: Option<f64>,
    pub max_iter: usize,
    /// Stop when ‖∇f‖ ≤ grad_tol at an (approximately) second-order point.
    pub grad_tol: f64,
    /// Stop when dist/scale < re_tol; needs an oracle distance.
    pub re_tol: Option<f64>,
    /// Trial multiplication factor within one line search (> 1).
    pub sigma_growth: f64,
    /// Next iteration restarts from accepted σ times this factor ∈ (0, 1].
    pub sigma_shrink: f64,
    pub max_line_search: usize,
    /// Stationarity tolerance handed to the subproblem solver.
    pub subproblem_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            sigma_bar: 1e-6,
            sigma_init: 1.0,
            lipschitz_l: None,
            max_iter: 100,
            grad_tol: 1e-12,
            re_tol: None,
            sigma_growth: 2.0,
            sigma_shrink: 0.5,
            max_line_search: 60,
            subproblem_tol: 1e-10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_bar > 0.0 && self.sigma_bar.is_finite()) {
            return Err(Error::InvalidArgument("sigma_bar must be positive".into()));
        }
        if self.sigma_init < self.sigma_bar {
            return Err(Error::InvalidArgument(
                "sigma_init must be ≥ sigma_bar".into(),
            ));
        }
        if let Some(l) = self.lipschitz_l {
            if !(l > 0.0 && l.is_finite()) || self.sigma_bar > l {
                return Err(Error::InvalidArgument(
                    "lipschitz_l must be positive and ≥ sigma_bar".into(),
                ));
            }
        }
        if self.max_iter == 0 || self.max_line_search == 0 {
            return Err(Error::InvalidArgument(
                "iteration budgets must be positive".into(),
            ));
        }
        if self.grad_tol < 0.0 {
            return Err(Error::InvalidArgument(
                "grad_tol must be nonnegative".into(),
            ));
        }
        if let Some(rt) = self.re_tol {
            if rt < 0.0 {
                return Err(Error::InvalidArgument("re_tol must be nonnegative".into()));
            }
        }
        if !(self.sigma_growth > 1.0) {
            return Err(Error::InvalidArgument("sigma_growth must exceed 1".into()));
        }
        if !(self.sigma_shrink > 0.0 && self.sigma_shrink <= 1.0) {
            return Err(Error::InvalidArgument(
                "sigma_shrink must lie in (0, 1]".into(),
            ));
        }
        if !(self.subproblem_tol > 0.0) {
            return Err(Error::InvalidArgument(
                "subproblem_tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// What happened at one visited point. Accepted iterations carry the step
/// data; the final record (termination) has step fields zeroed.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub f_val: f64,
    pub grad_norm: f64,
    /// Accepted σ_k (0 on the final record).
    pub sigma_used: f64,
    pub step_norm: f64,
    /// Model optimal value at the accepted step: f(x^k) + m(d^k).
    pub model_value_at_step: f64,
    pub dist_to_solution: Option<f64>,
    /// dist / solution scale, when both are available.
    pub re: Option<f64>,
    pub line_search_trials: usize,
    pub hard_case: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    GradTol,
    ReTol,
    MaxIter,
    LineSearchFailure,
    NumericFailure,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TerminationReason::GradTol => "grad_tol",
            TerminationReason::ReTol => "re_tol",
            TerminationReason::MaxIter => "max_iter",
            TerminationReason::LineSearchFailure => "line_search_failure",
            TerminationReason::NumericFailure => "numeric_failure",
        };
        f.write_str(s)
    }
}

/// Full run history: one record per visited point (including the last), the
/// final iterate, and why the run stopped.
#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    pub final_point: DVector<f64>,
    pub termination_reason: TerminationReason,
}

impl Trace {
    /// Distances to the solution set along the trace, for records where the
    /// oracle provided one.
    pub fn distances(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.dist_to_solution)
            .collect()
    }

    pub fn final_record(&self) -> &IterationRecord {
        self.records.last().expect("trace records are never empty")
    }
}

/// Successful line-search outcome: the accepted σ, the subproblem solution,
/// the number of subproblem solves, and the already-evaluated trial point.
#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub sigma_accepted: f64,
    pub solution: SubproblemSolution,
    pub trials: usize,
    pub candidate: DVector<f64>,
    pub candidate_f: f64,
}

enum LsResult {
    Accepted(Box<LineSearchOutcome>),
    Exhausted { trials: usize, last_sigma: f64 },
    Failed(Error),
}

fn line_search_inner(
    oracle: &dyn ProblemOracle,
    x: &DVector<f64>,
    f: f64,
    g: &DVector<f64>,
    h: &nalgebra::DMatrix<f64>,
    sigma_start: f64,
    config: &SolverConfig,
) -> LsResult {
    let mut raw = sigma_start.max(config.sigma_bar);
    let mut last_trial = raw;
    for t in 1..=config.max_line_search {
        let trial = match config.lipschitz_l {
            Some(l) => raw.min(2.0 * l),
            None => raw,
        };
        last_trial = trial;
        let model = match CubicModel::new(g.clone(), h.clone(), trial) {
            Ok(m) => m,
            Err(e) => return LsResult::Failed(e),
        };
        let sol = match solve_cubic(&model, config.subproblem_tol) {
            Ok(s) => s,
            Err(e) => return LsResult::Failed(e),
        };
        let candidate = x + &sol.d;
        let candidate_f = oracle.eval_f(&candidate);
        let bound = f - sol.model_decrease + ACCEPTANCE_SLACK * f.abs().max(1.0);
        if candidate_f.is_finite() && candidate_f <= bound {
            return LsResult::Accepted(Box::new(LineSearchOutcome {
                sigma_accepted: trial,
                solution: sol,
                trials: t,
                candidate,
                candidate_f,
            }));
        }
        if let Some(l) = config.lipschitz_l {
            // acceptance is guaranteed for σ ≥ L; a rejection at the 2L cap
            // means the supplied constant is wrong
            if trial >= 2.0 * l {
                return LsResult::Exhausted {
                    trials: t,
                    last_sigma: trial,
                };
            }
        }
        raw = trial * config.sigma_growth;
    }
    LsResult::Exhausted {
        trials: config.max_line_search,
        last_sigma: last_trial,
    }
}

/// Double σ from `sigma_start` until the model-value acceptance test passes.
pub fn sigma_line_search(
    oracle: &dyn ProblemOracle,
    x: &DVector<f64>,
    sigma_start: f64,
    config: &SolverConfig,
) -> Result<LineSearchOutcome> {
    config.validate()?;
    if x.len() != oracle.dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.dim(),
            found: x.len(),
        });
    }
    if sigma_start < config.sigma_bar {
        return Err(Error::InvalidArgument(
            "sigma_start must be ≥ sigma_bar".into(),
        ));
    }
    let f = oracle.eval_f(x);
    if !f.is_finite() {
        return Err(Error::NonFinite("objective at line-search point".into()));
    }
    let g = oracle.eval_grad(x);
    let h = oracle.eval_hess(x);
    match line_search_inner(oracle, x, f, &g, &h, sigma_start, config) {
        LsResult::Accepted(outcome) => Ok(*outcome),
        LsResult::Exhausted { trials, last_sigma } => Err(Error::LineSearchFailure {
            trials,
            sigma: last_sigma,
        }),
        LsResult::Failed(e) => Err(e),
    }
}

fn second_order_ok(h: &nalgebra::DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(h.clone());
    let lam_min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    lam_min.is_finite() && lam_min >= -SECOND_ORDER_TOL * h.norm().max(1.0)
}

/// Run the cubic-regularization method from `x0` until a tolerance triggers,
/// the iteration budget runs out, or the line search fails.
pub fn minimize(
    oracle: &dyn ProblemOracle,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<Trace> {
    config.validate()?;
    if x0.len() != oracle.dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.dim(),
            found: x0.len(),
        });
    }

    let scale = oracle.solution_scale().unwrap_or(1.0);
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut x = x0.clone();
    let mut sigma_next = config.sigma_init.max(config.sigma_bar);

    let final_record = |k: usize, f: f64, gn: f64, dist: Option<f64>| IterationRecord {
        k,
        f_val: f,
        grad_norm: gn,
        sigma_used: 0.0,
        step_norm: 0.0,
        model_value_at_step: f,
        dist_to_solution: dist,
        re: dist.map(|d| d / scale),
        line_search_trials: 0,
        hard_case: false,
    };

    for k in 0..config.max_iter {
        let f = oracle.eval_f(&x);
        let g = oracle.eval_grad(&x);
        let gn = g.norm();
        let dist = oracle.dist_to_solution_set(&x);
        if !f.is_finite() {
            records.push(final_record(k, f, gn, dist));
            return Ok(Trace {
                records,
                final_point: x,
                termination_reason: TerminationReason::NumericFailure,
            });
        }
        if let (Some(rt), Some(d)) = (config.re_tol, dist) {
            if d / scale < rt {
                records.push(final_record(k, f, gn, dist));
                return Ok(Trace {
                    records,
                    final_point: x,
                    termination_reason: TerminationReason::ReTol,
                });
            }
        }
        let h = oracle.eval_hess(&x);
        if gn <= config.grad_tol && second_order_ok(&h) {
            records.push(final_record(k, f, gn, dist));
            return Ok(Trace {
                records,
                final_point: x,
                termination_reason: TerminationReason::GradTol,
            });
        }

        match line_search_inner(oracle, &x, f, &g, &h, sigma_next, config) {
            LsResult::Accepted(outcome) => {
                records.push(IterationRecord {
                    k,
                    f_val: f,
                    grad_norm: gn,
                    sigma_used: outcome.sigma_accepted,
                    step_norm: outcome.solution.r,
                    model_value_at_step: f - outcome.solution.model_decrease,
                    dist_to_solution: dist,
                    re: dist.map(|d| d / scale),
                    line_search_trials: outcome.trials,
                    hard_case: outcome.solution.hard_case,
                });
                x = outcome.candidate;
                sigma_next = (outcome.sigma_accepted * config.sigma_shrink).max(config.sigma_bar);
            }
            LsResult::Exhausted { .. } => {
                records.push(final_record(k, f, gn, dist));
                return Ok(Trace {
                    records,
                    final_point: x,
                    termination_reason: TerminationReason::LineSearchFailure,
                });
            }
            LsResult::Failed(_) => {
                records.push(final_record(k, f, gn, dist));
                return Ok(Trace {
                    records,
                    final_point: x,
                    termination_reason: TerminationReason::NumericFailure,
                });
            }
        }
    }

    let f = oracle.eval_f(&x);
    let gn = oracle.eval_grad(&x).norm();
    let dist = oracle.dist_to_solution_set(&x);
    records.push(final_record(config.max_iter, f, gn, dist));
    Ok(Trace {
        records,
        final_point: x,
        termination_reason: TerminationReason::MaxIter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{convex_quadratic, sphere_quartic};
    use nalgebra::DMatrix;

    fn quadratic_identity(n: usize) -> impl ProblemOracle {
        convex_quadratic(DMatrix::identity(n, n), DVector::zeros(n)).unwrap()
    }

    #[test]
    fn quadratic_first_step_is_secular_root_and_converges_fast() {
        let oracle = quadratic_identity(2);
        let x0 = DVector::from_column_slice(&[1.0, 0.0]);
        let config = SolverConfig {
            sigma_bar: 1.0,
            sigma_init: 1.0,
            ..SolverConfig::default()
        };
        let trace = minimize(&oracle, &x0, &config).unwrap();
        assert_eq!(trace.termination_reason, TerminationReason::GradTol);
        // first step norm solves r²/2 + r − 1 = 0, i.e. r = √3 − 1
        let first = &trace.records[0];
        assert!(
            (first.step_norm - (3f64.sqrt() - 1.0)).abs() <= 1e-9,
            "r = {}",
            first.step_norm
        );
        assert_eq!(first.line_search_trials, 1);
        // within 5 accepted steps the iterate is within 1e−8 of the optimum
        let dists = trace.distances();
        assert!(dists.len() >= 2);
        assert!(
            dists.iter().take(6).next_back().unwrap() <= &1e-8,
            "distances {dists:?} did not collapse in ≤ 5 steps"
        );
        assert!(trace.records.len() <= 8);
    }

    #[test]
    fn any_sigma_is_accepted_first_trial_on_quadratics() {
        let oracle = quadratic_identity(3);
        let x = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let config = SolverConfig {
            sigma_bar: 1e-6,
            ..SolverConfig::default()
        };
        let outcome = sigma_line_search(&oracle, &x, 5.0, &config).unwrap();
        assert_eq!(outcome.trials, 1);
        assert_eq!(outcome.sigma_accepted, 5.0);
        assert!(outcome.candidate_f <= oracle.eval_f(&x));
    }

    #[test]
    fn sphere_quartic_converges_quadratically_from_two_zero() {
        let oracle = sphere_quartic(2).unwrap();
        let x0 = DVector::from_column_slice(&[2.0, 0.0]);
        let trace = minimize(&oracle, &x0, &SolverConfig::default()).unwrap();
        assert_eq!(trace.termination_reason, TerminationReason::GradTol);
        let final_rec = trace.final_record();
        assert!(final_rec.dist_to_solution.unwrap() <= 1e-8);
        // f monotone nonincreasing along the trace
        for w in trace.records.windows(2) {
            assert!(
                w[1].f_val <= w[0].f_val + 1e-12 * w[0].f_val.abs().max(1.0),
                "f increased: {} -> {}",
                w[0].f_val,
                w[1].f_val
            );
        }
        // last-3 quadratic ratios bounded by 10
        let dists = trace.distances();
        let pairs: Vec<(f64, f64)> = dists
            .windows(2)
            .map(|w| (w[0], w[1]))
            .filter(|(a, b)| *a > 1e-14 && *b > 1e-15)
            .collect();
        for (a, b) in pairs.iter().rev().take(3) {
            assert!(b / (a * a) <= 10.0, "quad ratio {} too large", b / (a * a));
        }
        // σ window and step-vanishing invariants
        for rec in &trace.records {
            if rec.line_search_trials > 0 {
                assert!(rec.sigma_used >= SolverConfig::default().sigma_bar);
            }
        }
        let steps: Vec<f64> = trace.records.iter().map(|r| r.step_norm).collect();
        assert!(steps.last().unwrap() < steps.first().unwrap());
        for s in steps.iter().rev().take(3) {
            assert!(*s < 1e-4, "late step {s} not vanishing");
        }
    }

    #[test]
    fn saddle_start_escapes_via_hard_case() {
        let oracle = sphere_quartic(2).unwrap();
        let x0 = DVector::zeros(2);
        let trace = minimize(&oracle, &x0, &SolverConfig::default()).unwrap();
        // gradient is exactly zero at the saddle, yet the run must not stop there
        assert!(trace.records.len() > 1);
        let first = &trace.records[0];
        assert!(first.hard_case, "saddle escape must engage the hard case");
        assert!(first.step_norm > 0.0);
        assert!(trace.records[1].f_val < trace.records[0].f_val);
        assert_eq!(trace.termination_reason, TerminationReason::GradTol);
        assert!(trace.final_record().dist_to_solution.unwrap() <= 1e-8);
    }

    #[test]
    fn wrong_lipschitz_cap_fails_cleanly() {
        let oracle = sphere_quartic(2).unwrap();
        // start near the saddle so negative curvature forces giant steps at
        // tiny σ; the cap 2L is then rejected and the run must stop
        let x0 = DVector::from_column_slice(&[0.1, 0.0]);
        let config = SolverConfig {
            sigma_bar: 1e-6,
            sigma_init: 1e-6,
            lipschitz_l: Some(1e-6),
            ..SolverConfig::default()
        };
        let trace = minimize(&oracle, &x0, &config).unwrap();
        assert_eq!(
            trace.termination_reason,
            TerminationReason::LineSearchFailure
        );
        assert_eq!(trace.final_point, x0);

        let err = sigma_line_search(&oracle, &x0, 1e-6, &config).unwrap_err();
        assert!(matches!(err, Error::LineSearchFailure { .. }));
    }

    #[test]
    fn honest_lipschitz_keeps_sigma_in_window() {
        let oracle = sphere_quartic(2).unwrap();
        let x0 = DVector::from_column_slice(&[2.0, 0.0]);
        // Hessian 8xxᵀ + 4(‖x‖²−1)I changes at rate ≤ 24‖x‖ ≤ 48 on ‖x‖ ≤ 2
        let config = SolverConfig {
            lipschitz_l: Some(48.0),
            ..SolverConfig::default()
        };
        let trace = minimize(&oracle, &x0, &config).unwrap();
        assert_eq!(trace.termination_reason, TerminationReason::GradTol);
        for rec in &trace.records {
            if rec.line_search_trials > 0 {
                assert!(rec.sigma_used >= config.sigma_bar);
                assert!(rec.sigma_used <= 2.0 * 48.0);
            }
        }
    }

    #[test]
    fn nan_objective_reports_numeric_failure() {
        struct NanOracle;
        impl ProblemOracle for NanOracle {
            fn dim(&self) -> usize {
                2
            }
            fn eval_f(&self, _x: &DVector<f64>) -> f64 {
                f64::NAN
            }
            fn eval_grad(&self, _x: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(2)
            }
            fn eval_hess(&self, _x: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(2, 2)
            }
        }
        let trace = minimize(&NanOracle, &DVector::zeros(2), &SolverConfig::default()).unwrap();
        assert_eq!(trace.termination_reason, TerminationReason::NumericFailure);
        assert_eq!(trace.records.len(), 1);
    }

    #[test]
    fn config_validation_rejects_bad_setups() {
        let bad = SolverConfig {
            sigma_init: 1e-9,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            sigma_growth: 1.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            lipschitz_l: Some(1e-9),
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            sigma_shrink: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let oracle = quadratic_identity(2);
        assert!(minimize(&oracle, &DVector::zeros(3), &SolverConfig::default()).is_err());
    }

    #[test]
    fn re_tol_stops_on_relative_error() {
        let oracle = sphere_quartic(2).unwrap();
        let x0 = DVector::from_column_slice(&[2.0, 0.0]);
        let config = SolverConfig {
            re_tol: Some(1e-8),
            ..SolverConfig::default()
        };
        let trace = minimize(&oracle, &x0, &config).unwrap();
        assert_eq!(trace.termination_reason, TerminationReason::ReTol);
        let last = trace.final_record();
        assert!(last.re.unwrap() < 1e-8);
        assert_eq!(last.sigma_used, 0.0);
        assert_eq!(last.line_search_trials, 0);
    }

    #[test]
    fn model_acceptance_inequality_holds_on_records() {
        let oracle = sphere_quartic(2).unwrap();
        let x0 = DVector::from_column_slice(&[2.0, 0.0]);
        let trace = minimize(&oracle, &x0, &SolverConfig::default()).unwrap();
        for w in trace.records.windows(2) {
            let (cur, next) = (&w[0], &w[1]);
            if cur.line_search_trials == 0 {
                continue;
            }
            assert!(
                next.f_val <= cur.model_value_at_step + 1e-12 * cur.f_val.abs().max(1.0),
                "acceptance inequality violated at k = {}",
                cur.k
            );
            assert!(cur.model_value_at_step <= cur.f_val);
        }
    }
}
