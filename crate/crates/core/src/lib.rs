//! Cubic-regularized Newton method for smooth nonconvex minimization.
//!
//! The solver minimizes a twice continuously differentiable `f` by repeatedly
//! minimizing the cubic model
//!
//! ```text
//! m_σ(d) = f(x) + ∇f(x)ᵀd + ½ dᵀ∇²f(x)d + (σ/6)‖d‖³
//! ```
//!
//! *exactly* (globally) at each iterate, with the regularization weight σ
//! picked by a doubling line search. Exact subproblem minimization is what
//! buys the method its strong local behavior: near a solution set that
//! satisfies a local error bound, the distance to the set contracts
//! Q-quadratically even when the Hessian is singular there.
//!
//! The crate ships:
//!
//! * [`subproblem`] — a certified global solver for the cubic model (dense
//!   eigendecomposition plus a safeguarded secular-equation root find,
//!   including the hard case),
//! * [`solver`] — the outer iteration with σ line search and per-iteration
//!   trace records,
//! * [`problem`] — the objective-oracle trait and small analytic test
//!   functions,
//! * [`phase_retrieval`] / [`matrix_recovery`] — Gaussian instance
//!   generators and exact-derivative oracles for two structured nonconvex
//!   recovery problems whose solution sets are manifolds,
//! * [`diagnostics`] — convergence-order estimation, step-length bounds, and
//!   error-bound / quadratic-growth shell scans,
//! * [`fuzz`] — an implementation-independent grid+polish reference
//!   minimizer for the cubic model and a randomized cross-check harness.
//!
//! All randomized constructions are seeded through ChaCha8 so that instances
//! and traces reproduce bit-for-bit for a fixed seed.

// Validation guards are written `!(x > 0.0)` rather than `x <= 0.0` so that
// NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod fuzz;
pub mod matrix_recovery;
pub mod phase_retrieval;
pub mod problem;
pub mod solver;
pub mod subproblem;

pub use diagnostics::{
    eb_growth_scan, estimate_order, objective_rate_exponent, step_bound_check_trace,
    step_bound_factor, EBScanReport, RateReport, ScanConfig, StepBoundReport,
};
pub use error::{Error, Result};
pub use problem::{
    convex_quadratic, finite_diff_report, gradient_dominated_demo, sphere_quartic, FdReport,
    ProblemOracle, TestFunctionSpec,
};
pub use solver::{
    minimize, sigma_line_search, IterationRecord, LineSearchOutcome, SolverConfig,
    TerminationReason, Trace,
};
pub use subproblem::{
    model_value, secular_root, solve_cubic, CubicModel, SecularRoot, SubproblemSolution,
};
