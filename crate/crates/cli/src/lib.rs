//! Command-line harness for the cubic-regularized Newton solver.
//!
//! Five subcommands: `solve-test` (analytic test functions),
//! `phase-retrieval` and `matrix-recovery` (desk-scale randomized recovery
//! experiments with per-iteration trace CSVs), `check-eb` (error-bound /
//! quadratic-growth shell scans), and `subproblem-fuzz` (randomized
//! cross-check of the cubic-subproblem solver against a grid reference).
//!
//! Everything is deterministic given `(flags, seed)`: instances regenerate
//! bit-identically through ChaCha8, iterates initialize from a documented
//! sibling stream (`seed XOR 0x9E3779B97F4A7C15`), and trace CSVs are
//! byte-stable across runs. Exit codes: 0 success, 1 a run missed its
//! target (or a scan/fuzz check failed), 2 usage error, 3 numeric failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cubicreg::diagnostics::{
    eb_growth_scan, estimate_order, step_bound_check_trace, EBScanReport, ScanConfig,
    StepBoundReport,
};
use cubicreg::fuzz::{run_fuzz, FuzzFailure, FuzzSummary};
use cubicreg::problem::ProblemOracle;
use cubicreg::solver::{minimize, SolverConfig, TerminationReason, Trace};
use cubicreg::{matrix_recovery, phase_retrieval};

/// Seed offset separating the iterate-initialization stream from the
/// instance-generation stream.
pub const INIT_STREAM_XOR: u64 = 0x9E37_79B9_7F4A_7C15;

/// Default tail length for convergence-order fits.
const RATE_TAIL: usize = 3;

// ---------------------------------------------------------------------------
// Command-line surface
// ---------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "cubicreg",
    version,
    about = "Cubic-regularized Newton experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Problem dimension (signal length / matrix side / test-function dim)
    #[arg(long)]
    pub n: Option<usize>,
    /// Factor rank (matrix recovery)
    #[arg(long)]
    pub rank: Option<usize>,
    /// Base seed; falls back to $CR_SEED, then 0
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of repetitions (seeds seed, seed+1, …)
    #[arg(long)]
    pub reps: Option<usize>,
    /// Regularization floor σ̄
    #[arg(long)]
    pub sigma_bar: Option<f64>,
    /// Initial regularization σ₀
    #[arg(long)]
    pub sigma_init: Option<f64>,
    /// Stop when relative error drops below this
    #[arg(long)]
    pub re_tol: Option<f64>,
    /// Stop when the gradient norm drops below this (at second-order points)
    #[arg(long)]
    pub grad_tol: Option<f64>,
    /// Iteration budget
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Directory for trace CSVs and summaries (created if missing)
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// JSON config file whose values override the flags
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Minimize an analytic test function and report convergence diagnostics
    SolveTest {
        #[command(flatten)]
        common: CommonArgs,
        /// sphere_quartic | convex_quadratic | gradient_dominated_demo
        #[arg(long, default_value = "sphere_quartic")]
        function: String,
        /// Comma-separated start point (default: 2·e₁ for sphere, random otherwise)
        #[arg(long)]
        x0: Option<String>,
        /// Null-space dimension for gradient_dominated_demo
        #[arg(long)]
        null_dim: Option<usize>,
    },
    /// Gaussian phase retrieval: random instance, uniform [−5,5] start
    PhaseRetrieval {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Gaussian low-rank matrix recovery in factored form
    MatrixRecovery {
        #[command(flatten)]
        common: CommonArgs,
        /// Keep raw (unsymmetrized) Gaussian measurement matrices
        #[arg(long)]
        raw_gaussian: bool,
        /// Debug: start exactly on the solution set (terminates at iteration 0)
        #[arg(long)]
        init_at_solution: bool,
    },
    /// Error-bound and quadratic-growth shell scan
    CheckEb {
        #[command(flatten)]
        common: CommonArgs,
        /// sphere_quartic | phase-retrieval | matrix-recovery
        #[arg(long, default_value = "sphere_quartic")]
        problem: String,
        /// Shell samples
        #[arg(long, default_value_t = 500)]
        samples: usize,
    },
    /// Fuzz the cubic-subproblem solver against the grid reference
    SubproblemFuzz {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of random models
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Maximum model dimension (≤ 4)
        #[arg(long, default_value_t = 3)]
        n_max: usize,
        /// Replay a dumped failure file instead of fuzzing
        #[arg(long)]
        replay: Option<PathBuf>,
    },
}

/// JSON config file contents; any present field overrides the flag.
#[derive(Deserialize, Debug, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub n: Option<usize>,
    pub rank: Option<usize>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub sigma_bar: Option<f64>,
    pub sigma_init: Option<f64>,
    pub re_tol: Option<f64>,
    pub grad_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub raw_gaussian: Option<bool>,
    pub count: Option<usize>,
    pub n_max: Option<usize>,
    pub samples: Option<usize>,
    pub function: Option<String>,
    pub problem: Option<String>,
}

/// Flags + config file + environment merged into concrete values.
#[derive(Debug, Clone)]
pub struct Merged {
    pub n: Option<usize>,
    pub rank: Option<usize>,
    pub seed: u64,
    pub reps: usize,
    pub sigma_bar: Option<f64>,
    pub sigma_init: Option<f64>,
    pub re_tol: Option<f64>,
    pub grad_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub file: FileConfig,
}

pub fn merge_options(common: &CommonArgs) -> Result<Merged> {
    let file: FileConfig = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("malformed config {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let env_seed = match std::env::var("CR_SEED") {
        Ok(text) => Some(
            text.parse::<u64>()
                .context("CR_SEED must be an unsigned integer")?,
        ),
        Err(_) => None,
    };
    Ok(Merged {
        n: file.n.or(common.n),
        rank: file.rank.or(common.rank),
        seed: file.seed.or(common.seed).or(env_seed).unwrap_or(0),
        reps: file.reps.or(common.reps).unwrap_or(1),
        sigma_bar: file.sigma_bar.or(common.sigma_bar),
        sigma_init: file.sigma_init.or(common.sigma_init),
        re_tol: file.re_tol.or(common.re_tol),
        grad_tol: file.grad_tol.or(common.grad_tol),
        max_iter: file.max_iter.or(common.max_iter),
        out_dir: file.out_dir.clone().or_else(|| common.out_dir.clone()),
        file,
    })
}

impl Merged {
    /// Solver configuration with the experiment defaults (RE target 1e−8,
    /// 100 iterations) unless overridden.
    fn solver_config(&self, re_default: Option<f64>, lipschitz: Option<f64>) -> SolverConfig {
        let mut config = SolverConfig::default();
        if let Some(s) = self.sigma_bar {
            config.sigma_bar = s;
        }
        if let Some(s) = self.sigma_init {
            config.sigma_init = s;
        }
        config.re_tol = self.re_tol.or(re_default);
        if let Some(g) = self.grad_tol {
            config.grad_tol = g;
        }
        config.max_iter = self.max_iter.unwrap_or(100);
        config.lipschitz_l = lipschitz;
        config
    }
}

// ---------------------------------------------------------------------------
// Trace output and per-run diagnostics
// ---------------------------------------------------------------------------

/// Render a trace as CSV with lossless float formatting (17 significant
/// digits). The `re` column prints NaN when no solution-set distance is
/// available.
pub fn trace_to_csv(trace: &Trace) -> String {
    let mut out = String::from("k,f,grad_norm,sigma,step_norm,re,line_search_trials,hard_case\n");
    for rec in &trace.records {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            rec.k,
            rec.f_val,
            rec.grad_norm,
            rec.sigma_used,
            rec.step_norm,
            rec.re.unwrap_or(f64::NAN),
            rec.line_search_trials,
            rec.hard_case
        );
    }
    out
}

/// Plot data: log₁₀ RE against the iteration counter, for external plotting.
pub fn trace_to_plot_csv(trace: &Trace) -> String {
    let mut out = String::from("k,log10_re\n");
    for rec in &trace.records {
        if let Some(re) = rec.re {
            let _ = writeln!(out, "{},{:.16e}", rec.k, re.log10());
        }
    }
    out
}

/// Per-run summary: target outcome plus the diagnostic checks used by the
/// acceptance suite (descent-condition compliance, σ floor, step bound,
/// fitted convergence order).
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub n: usize,
    pub rank: Option<usize>,
    pub m: Option<usize>,
    /// Accepted steps before termination.
    pub iterations: usize,
    pub termination: String,
    pub final_f: f64,
    pub final_grad_norm: f64,
    pub final_re: Option<f64>,
    /// Termination target met within the iteration budget.
    pub success: bool,
    pub fitted_order: Option<f64>,
    pub max_quad_ratio: Option<f64>,
    pub rate_inconclusive: bool,
    /// Every accepted step satisfied f(x⁺) ≤ model bound + slack.
    pub acceptance_ok: bool,
    /// Every accepted σ respected the floor σ̄.
    pub sigma_floor_ok: bool,
    pub hard_case_steps: usize,
    pub lipschitz_harness: Option<f64>,
    pub level_set_radius: Option<f64>,
    pub step_bound: Option<StepBoundReport>,
    pub wall_secs: f64,
    pub trace_path: Option<String>,
}

/// A family of repetitions plus their traces (traces are kept in memory for
/// in-process callers and not serialized).
#[derive(Debug, Serialize)]
pub struct FamilySummary {
    pub family: String,
    pub reps: usize,
    pub successes: usize,
    pub runs: Vec<RunSummary>,
    #[serde(skip_serializing)]
    pub traces: Vec<Trace>,
}

/// f(x^{k+1}) ≤ (model bound at step k) + 1e−12·max(1,|f(x^k)|) on every
/// accepted step.
pub fn acceptance_condition_ok(trace: &Trace) -> bool {
    trace.records.windows(2).all(|pair| {
        let (cur, next) = (&pair[0], &pair[1]);
        if cur.line_search_trials == 0 {
            return true; // termination rows carry no step
        }
        next.f_val <= cur.model_value_at_step + 1e-12 * cur.f_val.abs().max(1.0)
    })
}

/// σ_k ≥ σ̄ on every accepted step.
pub fn sigma_floor_ok(trace: &Trace, sigma_bar: f64) -> bool {
    trace
        .records
        .iter()
        .filter(|rec| rec.line_search_trials > 0)
        .all(|rec| rec.sigma_used >= sigma_bar * (1.0 - 1e-12))
}

#[allow(clippy::too_many_arguments)] // internal aggregator for one run's outputs
fn summarize_run(
    family: &str,
    seed: u64,
    n: usize,
    rank: Option<usize>,
    m: Option<usize>,
    trace: &Trace,
    config: &SolverConfig,
    lipschitz: Option<f64>,
    level_radius: Option<f64>,
    wall_secs: f64,
    trace_path: Option<String>,
) -> RunSummary {
    let final_rec = trace.final_record();
    let target_met = matches!(
        trace.termination_reason,
        TerminationReason::ReTol | TerminationReason::GradTol
    );
    let dists = trace.distances();
    let rate = if dists.len() >= 2 {
        estimate_order(&dists, RATE_TAIL).ok()
    } else {
        None
    };
    let step_bound = lipschitz.and_then(|l| step_bound_check_trace(trace, l, 1e-12).ok());
    RunSummary {
        seed,
        n,
        rank,
        m,
        iterations: trace
            .records
            .iter()
            .filter(|r| r.line_search_trials > 0)
            .count(),
        termination: trace.termination_reason.to_string(),
        final_f: final_rec.f_val,
        final_grad_norm: final_rec.grad_norm,
        final_re: final_rec.re,
        success: target_met,
        fitted_order: rate
            .as_ref()
            .and_then(|r| (!r.inconclusive).then_some(r.fitted_order)),
        max_quad_ratio: rate
            .as_ref()
            .and_then(|r| (!r.inconclusive).then_some(r.max_quad_ratio)),
        rate_inconclusive: rate.is_none_or(|r| r.inconclusive),
        acceptance_ok: acceptance_condition_ok(trace),
        sigma_floor_ok: sigma_floor_ok(trace, config.sigma_bar),
        hard_case_steps: trace.records.iter().filter(|r| r.hard_case).count(),
        lipschitz_harness: lipschitz,
        level_set_radius: level_radius,
        step_bound,
        wall_secs,
        trace_path,
    }
    .with_family_label(family)
}

impl RunSummary {
    // family is carried by FamilySummary; this hook exists so a future
    // per-run label stays in one place
    fn with_family_label(self, _family: &str) -> Self {
        self
    }
}

fn write_outputs(out_dir: &Option<PathBuf>, stem: &str, trace: &Trace) -> Result<Option<String>> {
    let Some(dir) = out_dir else { return Ok(None) };
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(format!("{stem}.csv"));
    fs::write(&path, trace_to_csv(trace))
        .with_context(|| format!("cannot write {}", path.display()))?;
    let plot = dir.join(format!("{stem}_plot.csv"));
    fs::write(&plot, trace_to_plot_csv(trace))
        .with_context(|| format!("cannot write {}", plot.display()))?;
    Ok(Some(path.display().to_string()))
}

fn write_summary_json<T: Serialize>(
    out_dir: &Option<PathBuf>,
    name: &str,
    value: &T,
) -> Result<()> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        fs::write(&path, serde_json::to_string_pretty(value)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

/// Uniform [−5,5] start point from the documented initialization stream.
pub fn uniform_start(dim: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_STREAM_XOR);
    DVector::from_fn(dim, |_, _| rng.gen_range(-5.0..5.0))
}

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PhaseRetrievalOptions {
    pub n: usize,
    pub seed: u64,
    pub reps: usize,
    pub merged: Merged,
}

/// Generate `reps` instances (seeds seed, seed+1, …), solve each from a
/// uniform [−5,5] start with RE target 1e−8, and collect traces + summaries.
pub fn run_phase_retrieval(opts: &PhaseRetrievalOptions) -> Result<FamilySummary> {
    if opts.n < 2 {
        bail!("phase retrieval needs --n at least 2");
    }
    if opts.reps == 0 {
        bail!("--reps must be at least 1");
    }
    let mut runs = Vec::new();
    let mut traces = Vec::new();
    for rep in 0..opts.reps {
        let seed = opts.seed.wrapping_add(rep as u64);
        let started = Instant::now();
        let instance = phase_retrieval::generate_instance(opts.n, seed)?;
        let oracle = instance.oracle();
        let x0 = uniform_start(2 * opts.n, seed);
        let f0 = oracle.eval_f(&x0);
        let level_radius = instance.level_set_radius(f0);
        let lipschitz = instance.lipschitz_bound(2.0 * level_radius);
        let config = opts.merged.solver_config(Some(1e-8), Some(lipschitz));
        let trace = minimize(&oracle, &x0, &config)?;
        let wall = started.elapsed().as_secs_f64();
        let stem = format!("phase_retrieval_n{}_seed{}", opts.n, seed);
        let path = write_outputs(&opts.merged.out_dir, &stem, &trace)?;
        runs.push(summarize_run(
            "phase_retrieval",
            seed,
            opts.n,
            None,
            Some(instance.m),
            &trace,
            &config,
            Some(lipschitz),
            Some(level_radius),
            wall,
            path,
        ));
        traces.push(trace);
    }
    let successes = runs.iter().filter(|r| r.success).count();
    let summary = FamilySummary {
        family: "phase_retrieval".into(),
        reps: opts.reps,
        successes,
        runs,
        traces,
    };
    write_summary_json(
        &opts.merged.out_dir,
        "phase_retrieval_summary.json",
        &summary,
    )?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct MatrixRecoveryOptions {
    pub n: usize,
    pub rank: usize,
    pub seed: u64,
    pub reps: usize,
    pub raw_gaussian: bool,
    pub init_at_solution: bool,
    pub merged: Merged,
}

/// Matrix-recovery analog of [`run_phase_retrieval`].
pub fn run_matrix_recovery(opts: &MatrixRecoveryOptions) -> Result<FamilySummary> {
    if opts.rank == 0 || opts.rank > opts.n {
        bail!("need 1 <= --rank <= --n");
    }
    if opts.reps == 0 {
        bail!("--reps must be at least 1");
    }
    let mut runs = Vec::new();
    let mut traces = Vec::new();
    for rep in 0..opts.reps {
        let seed = opts.seed.wrapping_add(rep as u64);
        let started = Instant::now();
        let instance = if opts.raw_gaussian {
            matrix_recovery::generate_instance_raw(opts.n, opts.rank, seed)?
        } else {
            matrix_recovery::generate_instance(opts.n, opts.rank, seed)?
        };
        let oracle = instance.oracle();
        let x0 = if opts.init_at_solution {
            matrix_recovery::flatten(&instance.u_star)
        } else {
            uniform_start(opts.n * opts.rank, seed)
        };
        let f0 = oracle.eval_f(&x0);
        let level_radius = instance.level_set_radius(f0);
        let lipschitz = instance.lipschitz_bound(2.0 * level_radius);
        let config = opts.merged.solver_config(Some(1e-8), Some(lipschitz));
        let trace = minimize(&oracle, &x0, &config)?;
        let wall = started.elapsed().as_secs_f64();
        let stem = format!("matrix_recovery_n{}_r{}_seed{}", opts.n, opts.rank, seed);
        let path = write_outputs(&opts.merged.out_dir, &stem, &trace)?;
        runs.push(summarize_run(
            "matrix_recovery",
            seed,
            opts.n,
            Some(opts.rank),
            Some(instance.m),
            &trace,
            &config,
            Some(lipschitz),
            Some(level_radius),
            wall,
            path,
        ));
        traces.push(trace);
    }
    let successes = runs.iter().filter(|r| r.success).count();
    let summary = FamilySummary {
        family: "matrix_recovery".into(),
        reps: opts.reps,
        successes,
        runs,
        traces,
    };
    write_summary_json(
        &opts.merged.out_dir,
        "matrix_recovery_summary.json",
        &summary,
    )?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct SolveTestOptions {
    pub function: String,
    pub n: usize,
    pub null_dim: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub seed: u64,
    pub reps: usize,
    pub merged: Merged,
}

/// Run on an analytic test function. The sphere default starts at 2·e₁
/// deterministically; the other families start uniform [−5,5].
pub fn run_solve_test(opts: &SolveTestOptions) -> Result<FamilySummary> {
    if opts.reps == 0 {
        bail!("--reps must be at least 1");
    }
    let mut runs = Vec::new();
    let mut traces = Vec::new();
    for rep in 0..opts.reps {
        let seed = opts.seed.wrapping_add(rep as u64);
        let started = Instant::now();
        #[allow(clippy::type_complexity)]
        let (oracle, lipschitz_fn): (Box<dyn ProblemOracle>, fn(f64) -> Option<f64>) =
            match opts.function.as_str() {
                "sphere_quartic" => (
                    Box::new(cubicreg::problem::sphere_quartic(opts.n)?),
                    // Hessian moves at most 24R per unit step inside ‖x‖ ≤ R
                    |f0: f64| Some(24.0 * (1.0 + f0.max(0.0).sqrt()).sqrt()),
                ),
                "convex_quadratic" => {
                    let diag: Vec<f64> = (0..opts.n)
                        .map(|i| 1.0 + 3.0 * i as f64 / (opts.n.max(2) - 1) as f64)
                        .collect();
                    let h = nalgebra::DMatrix::from_diagonal(&DVector::from_vec(diag));
                    let g = DVector::from_element(opts.n, 1.0);
                    (
                        Box::new(cubicreg::problem::convex_quadratic(h, g)?),
                        |_f0: f64| None, // constant Hessian: no cubic-term cap
                    )
                }
                "gradient_dominated_demo" => {
                    let null_dim = opts.null_dim.unwrap_or(opts.n / 2);
                    (
                        Box::new(cubicreg::problem::gradient_dominated_demo(
                            opts.n, null_dim,
                        )?),
                        |_f0: f64| None,
                    )
                }
                other => bail!("unknown test function '{other}'"),
            };
        let x0 = match &opts.x0 {
            Some(values) => {
                if values.len() != oracle.dim() {
                    bail!(
                        "--x0 has {} entries; the problem needs {}",
                        values.len(),
                        oracle.dim()
                    );
                }
                DVector::from_column_slice(values)
            }
            None if opts.function == "sphere_quartic" => {
                let mut x = DVector::zeros(oracle.dim());
                x[0] = 2.0;
                x
            }
            None => uniform_start(oracle.dim(), seed),
        };
        let f0 = oracle.eval_f(&x0);
        let lipschitz = lipschitz_fn(f0);
        let config = opts.merged.solver_config(None, lipschitz);
        let trace = minimize(oracle.as_ref(), &x0, &config)?;
        let wall = started.elapsed().as_secs_f64();
        let stem = format!("solve_test_{}_n{}_seed{}", opts.function, opts.n, seed);
        let path = write_outputs(&opts.merged.out_dir, &stem, &trace)?;
        runs.push(summarize_run(
            &opts.function,
            seed,
            opts.n,
            None,
            None,
            &trace,
            &config,
            lipschitz,
            None,
            wall,
            path,
        ));
        traces.push(trace);
    }
    let successes = runs.iter().filter(|r| r.success).count();
    let summary = FamilySummary {
        family: format!("solve_test_{}", opts.function),
        reps: opts.reps,
        successes,
        runs,
        traces,
    };
    write_summary_json(&opts.merged.out_dir, "solve_test_summary.json", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct CheckEbOptions {
    pub problem: String,
    pub n: usize,
    pub rank: usize,
    pub seed: u64,
    pub samples: usize,
    pub merged: Merged,
}

#[derive(Debug, Serialize)]
pub struct EbOutcome {
    pub problem: String,
    pub n: usize,
    pub rank: Option<usize>,
    pub seed: u64,
    pub passed: bool,
    pub report: EBScanReport,
}

/// Shell scan of the error-bound and growth constants. The scan RNG is
/// seeded with seed+1 so it is decoupled from instance generation.
pub fn run_check_eb(opts: &CheckEbOptions) -> Result<EbOutcome> {
    let scan_seed = opts.seed.wrapping_add(1);
    let (report, rank) = match opts.problem.as_str() {
        "sphere_quartic" => {
            let oracle = cubicreg::problem::sphere_quartic(opts.n)?;
            let mut anchors = vec![{
                let mut e = DVector::zeros(opts.n);
                e[0] = 1.0;
                e
            }];
            if opts.n >= 2 {
                let mut e = DVector::zeros(opts.n);
                e[1] = -1.0;
                anchors.push(e);
            }
            anchors.push(DVector::from_element(opts.n, 1.0 / (opts.n as f64).sqrt()));
            let config = ScanConfig {
                anchors,
                radius: 0.5,
                samples: opts.samples,
                seed: scan_seed,
                kappa_bound: Some(1.0 / 3.0),
                alpha_bound: Some(4.0),
                f_hat: 0.0,
            };
            (eb_growth_scan(&oracle, &config)?, None)
        }
        "phase-retrieval" | "phase_retrieval" => {
            let instance = phase_retrieval::generate_instance(opts.n, opts.seed)?;
            (instance.eb_check(opts.samples, scan_seed)?, None)
        }
        "matrix-recovery" | "matrix_recovery" => {
            let instance = matrix_recovery::generate_instance(opts.n, opts.rank, opts.seed)?;
            (instance.eb_check(opts.samples, scan_seed)?, Some(opts.rank))
        }
        other => bail!("unknown problem '{other}'"),
    };
    let passed = report.pass_eb && report.pass_growth && !report.inconclusive;
    let outcome = EbOutcome {
        problem: opts.problem.clone(),
        n: opts.n,
        rank,
        seed: opts.seed,
        passed,
        report,
    };
    write_summary_json(&opts.merged.out_dir, "eb_report.json", &outcome)?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct FuzzOptions {
    pub count: usize,
    pub n_max: usize,
    pub seed: u64,
    pub merged: Merged,
}

/// Randomized subproblem cross-check. Failures are dumped as JSON for
/// replay.
pub fn run_subproblem_fuzz(opts: &FuzzOptions) -> Result<FuzzSummary> {
    if opts.count == 0 {
        bail!("--count must be at least 1");
    }
    if opts.n_max == 0 || opts.n_max > 4 {
        bail!("--n-max must be between 1 and 4");
    }
    let summary = run_fuzz(opts.count, opts.n_max, opts.seed, 1e-10)?;
    if !summary.passed() {
        if let Some(dir) = &opts.merged.out_dir {
            fs::create_dir_all(dir)?;
            let path = dir.join(format!("fuzz_failures_seed{}.json", opts.seed));
            fs::write(&path, serde_json::to_string_pretty(&summary.failures)?)?;
            eprintln!(
                "wrote {} failures to {}",
                summary.failures.len(),
                path.display()
            );
        }
    }
    write_summary_json(&opts.merged.out_dir, "fuzz_summary.json", &summary)?;
    Ok(summary)
}

/// Re-run dumped fuzz failures; returns the indices that still fail.
pub fn replay_failures(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read replay file {}", path.display()))?;
    let failures: Vec<FuzzFailure> = serde_json::from_str(&text)?;
    let mut still_failing = Vec::new();
    for (i, failure) in failures.iter().enumerate() {
        match cubicreg::fuzz::replay(failure, 1e-10) {
            Ok(None) => {}
            Ok(Some(reason)) => {
                eprintln!("replay {i}: still failing ({reason})");
                still_failing.push(i);
            }
            Err(err) => {
                eprintln!("replay {i}: solver error ({err})");
                still_failing.push(i);
            }
        }
    }
    Ok(still_failing)
}

// ---------------------------------------------------------------------------
// Dispatcher
// ---------------------------------------------------------------------------

fn family_exit_code(summary: &FamilySummary) -> u8 {
    let numeric_failure = summary
        .runs
        .iter()
        .any(|r| r.termination == TerminationReason::NumericFailure.to_string());
    if numeric_failure {
        3
    } else if summary.successes == summary.reps {
        0
    } else {
        1
    }
}

/// Execute a parsed command line; returns the process exit code
/// (0 success, 1 target/check failure, 2 usage error, 3 numeric failure).
pub fn run(cli: Cli) -> u8 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            // input/config problems are usage errors; anything else is a
            // numeric/internal failure
            if err.to_string().contains("config")
                || err.to_string().contains("--")
                || err.to_string().contains("unknown")
                || err.to_string().contains("CR_SEED")
            {
                2
            } else {
                3
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::SolveTest {
            common,
            function,
            x0,
            null_dim,
        } => {
            let merged = merge_options(&common)?;
            let x0 = match x0 {
                Some(text) => Some(
                    text.split(',')
                        .map(|t| t.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<f64>, _>>()
                        .context("--x0 must be a comma-separated list of numbers")?,
                ),
                None => None,
            };
            let opts = SolveTestOptions {
                function: merged.file.function.clone().unwrap_or(function),
                n: merged.n.unwrap_or(2),
                null_dim,
                x0,
                seed: merged.seed,
                reps: merged.reps,
                merged,
            };
            let summary = run_solve_test(&opts)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(family_exit_code(&summary))
        }
        Command::PhaseRetrieval { common } => {
            let merged = merge_options(&common)?;
            let opts = PhaseRetrievalOptions {
                n: merged.n.unwrap_or(16),
                seed: merged.seed,
                reps: merged.reps,
                merged,
            };
            let summary = run_phase_retrieval(&opts)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(family_exit_code(&summary))
        }
        Command::MatrixRecovery {
            common,
            raw_gaussian,
            init_at_solution,
        } => {
            let merged = merge_options(&common)?;
            let opts = MatrixRecoveryOptions {
                n: merged.n.unwrap_or(16),
                rank: merged.rank.unwrap_or(2),
                seed: merged.seed,
                reps: merged.reps,
                raw_gaussian: merged.file.raw_gaussian.unwrap_or(raw_gaussian),
                init_at_solution,
                merged,
            };
            let summary = run_matrix_recovery(&opts)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(family_exit_code(&summary))
        }
        Command::CheckEb {
            common,
            problem,
            samples,
        } => {
            let merged = merge_options(&common)?;
            let opts = CheckEbOptions {
                problem: merged.file.problem.clone().unwrap_or(problem),
                n: merged.n.unwrap_or(16),
                rank: merged.rank.unwrap_or(2),
                seed: merged.seed,
                samples: merged.file.samples.unwrap_or(samples),
                merged,
            };
            let outcome = run_check_eb(&opts)?;
            println!("{}", serde_json::to_string_pretty(&outcome)?);
            Ok(if outcome.passed { 0 } else { 1 })
        }
        Command::SubproblemFuzz {
            common,
            count,
            n_max,
            replay,
        } => {
            let merged = merge_options(&common)?;
            if let Some(path) = replay {
                let still_failing = replay_failures(&path)?;
                println!(
                    "{{\"replayed\": true, \"still_failing\": {}}}",
                    still_failing.len()
                );
                return Ok(if still_failing.is_empty() { 0 } else { 1 });
            }
            let opts = FuzzOptions {
                count: merged.file.count.unwrap_or(count),
                n_max: merged.file.n_max.unwrap_or(n_max),
                seed: merged.seed,
                merged,
            };
            let summary = run_subproblem_fuzz(&opts)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(if summary.passed() { 0 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_overrides_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, r#"{"n": 8, "seed": 42}"#).unwrap();
        let common = CommonArgs {
            n: Some(4),
            seed: Some(7),
            reps: Some(2),
            config: Some(path),
            ..Default::default()
        };
        let merged = merge_options(&common).unwrap();
        assert_eq!(merged.n, Some(8)); // config wins
        assert_eq!(merged.seed, 42);
        assert_eq!(merged.reps, 2); // flag survives when config is silent
    }

    #[test]
    fn malformed_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, r#"{"frobnicate": 1}"#).unwrap();
        let common = CommonArgs {
            config: Some(path),
            ..Default::default()
        };
        assert!(merge_options(&common).is_err());
    }

    #[test]
    fn sphere_solve_test_succeeds_and_reports() {
        let merged = merge_options(&CommonArgs::default()).unwrap();
        let opts = SolveTestOptions {
            function: "sphere_quartic".into(),
            n: 2,
            null_dim: None,
            x0: None,
            seed: 0,
            reps: 1,
            merged,
        };
        let summary = run_solve_test(&opts).unwrap();
        assert_eq!(summary.successes, 1);
        let run = &summary.runs[0];
        assert!(run.acceptance_ok && run.sigma_floor_ok);
        assert!(run.final_re.unwrap() <= 1e-8);
        assert!(run.step_bound.as_ref().unwrap().pass);
        // deterministic start at 2·e₁ ⇒ byte-identical traces
        let again = run_solve_test(&opts).unwrap();
        assert_eq!(
            trace_to_csv(&summary.traces[0]),
            trace_to_csv(&again.traces[0])
        );
    }

    #[test]
    fn csv_format_is_stable() {
        let merged = merge_options(&CommonArgs::default()).unwrap();
        let opts = SolveTestOptions {
            function: "convex_quadratic".into(),
            n: 3,
            null_dim: None,
            x0: Some(vec![1.0, 1.0, 1.0]),
            seed: 0,
            reps: 1,
            merged,
        };
        let summary = run_solve_test(&opts).unwrap();
        let csv = trace_to_csv(&summary.traces[0]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k,f,grad_norm,sigma,step_norm,re,line_search_trials,hard_case"
        );
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,"));
        // 17 significant digits on every float column
        assert!(first.split(',').nth(1).unwrap().contains('e'));
    }
}
