//! Experiment command-line harness: generate problems, run solvers, emit
//! trace CSVs and PGM renderings, and reproduce the experiment protocols.
//!
//! Subcommands: `generate`, `solve`, `compare`, `study-stopping`. Flag
//! precedence is command line over `--config` file over built-in defaults.
//! Exit codes: 0 converged (including subspace saturation with a returned
//! iterate), 2 usage error, 3 iteration/budget cap reached, 4 solver failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Deserialize;

use crate::error::Error;
use crate::penalty::SmoothPenalty;
use crate::pnewton::{self, PnConfig, PnDriver, PnStatus, StopRule};
use crate::problems::{self, ProblemInstance, ProblemKind};
use crate::reference;
use crate::trace::{write_trace_csv, TraceRow, CSV_HEADER};
use crate::Result;

#[derive(Parser)]
#[command(name = "pnkrylov", version, about = "Solvers for noise-constrained lp-regularized inverse problems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic problem instance into a directory.
    Generate(GenerateArgs),
    /// Run one solver on a problem; write trace.csv, the solution vector,
    /// and a PGM rendering for 2-D problems.
    Solve(SolveArgs),
    /// Run several solvers on the same problem under a shared matvec budget
    /// and merge their traces into one CSV keyed by (method, k).
    Compare(CompareArgs),
    /// Repeat a solve over many seeds, stopping each run when the relative
    /// error stagnates; report mean/std of the final stopping metrics.
    StudyStopping(StudyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    /// 1-D sparse-spike deconvolution.
    Spike,
    /// 2-D sparse-spike deblurring (size is the image side N).
    Spike2d,
    /// Piecewise-constant image deblurring with TV regularization.
    Piecewise,
    /// Smooth 1-D deconvolution with a derivative penalty.
    Smooth1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Projected Newton, smoothed lp penalty.
    Pn,
    /// Projected Newton, general-form Tikhonov (quadratic penalty).
    PnTik,
    /// Generalized Krylov subspace Tikhonov with per-iteration root-finding.
    Gks,
    /// Iteratively reweighted norms at fixed alpha.
    Gkspq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StopArg {
    Kkt,
    Discrepancy,
    Dlambda,
    Dx,
}

#[derive(Args, Clone)]
struct CommonFlags {
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed for all deterministic randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ProblemFlags {
    /// Load a problem directory written by `generate` instead of building inline.
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// Problem size: n for 1-D kinds, image side N for 2-D kinds.
    #[arg(long)]
    n: Option<usize>,
    /// Spike density for the spike kinds.
    #[arg(long)]
    density: Option<f64>,
    /// Blur kernel bandwidth.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Relative noise level.
    #[arg(long)]
    noise: Option<f64>,
    /// Discrepancy safety factor.
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args, Clone)]
struct SolverFlags {
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Penalty exponent p in [1, 2].
    #[arg(long)]
    p: Option<f64>,
    /// Smoothing parameter of the lp penalty.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda0: Option<f64>,
    /// IRN clamp for gkspq.
    #[arg(long)]
    tau_tilde: Option<f64>,
    /// Fixed regularization parameter for gkspq (derived from a pn run when absent).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    stop: Option<StopArg>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Cap on total operator applications (A + At + L + Lt).
    #[arg(long)]
    budget_matvecs: Option<u64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonFlags,
    #[command(flatten)]
    problem: ProblemFlags,
    /// Also write the assembled operators in MatrixMarket format.
    #[arg(long)]
    with_operators: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonFlags,
    #[command(flatten)]
    problem: ProblemFlags,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonFlags,
    #[command(flatten)]
    problem: ProblemFlags,
    #[command(flatten)]
    solver: SolverFlags,
    /// Comma-separated list of solvers to run.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<MethodArg>,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    common: CommonFlags,
    #[command(flatten)]
    problem: ProblemFlags,
    #[command(flatten)]
    solver: SolverFlags,
    /// Number of repeated runs (distinct seeds).
    #[arg(long)]
    runs: Option<usize>,
}

/// Optional config-file mirror of the flags. All keys optional; flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    out: Option<PathBuf>,
    seed: Option<u64>,
    kind: Option<String>,
    n: Option<usize>,
    density: Option<f64>,
    bandwidth: Option<f64>,
    noise: Option<f64>,
    eta: Option<f64>,
    method: Option<String>,
    p: Option<f64>,
    beta: Option<f64>,
    lambda0: Option<f64>,
    tau_tilde: Option<f64>,
    alpha: Option<f64>,
    stop: Option<String>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    budget_matvecs: Option<u64>,
    runs: Option<usize>,
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
        }
    }
}

fn parse_enum<T: ValueEnum + Copy>(s: &str, what: &str) -> Result<T> {
    T::from_str(s, true).map_err(|_| Error::Parse(format!("config: invalid {what} '{s}'")))
}

/// Resolved problem parameters after flag/config/default merging.
#[derive(Clone, Copy)]
struct ResolvedProblem {
    kind: KindArg,
    n: usize,
    density: f64,
    bandwidth: f64,
    noise: f64,
    eta: f64,
    seed: u64,
}

impl ResolvedProblem {
    fn build(&self) -> Result<ProblemInstance> {
        let inst = match self.kind {
            KindArg::Spike => problems::spike_problem(
                self.n,
                self.density,
                self.bandwidth,
                self.noise,
                self.seed,
                problems::SpikeDim::OneD,
            )?,
            KindArg::Spike2d => problems::spike_problem(
                self.n * self.n,
                self.density,
                self.bandwidth,
                self.noise,
                self.seed,
                problems::SpikeDim::TwoD,
            )?,
            KindArg::Piecewise => {
                problems::piecewise_problem(self.n, problems::PiecewiseKind::Blur2d, self.noise, self.seed)?
            }
            KindArg::Smooth1d => problems::smooth1d_problem(self.n, self.noise, self.seed)?,
        };
        if self.eta != 1.0 {
            inst.with_eta(self.eta)
        } else {
            Ok(inst)
        }
    }
}

fn resolve_problem(
    flags: &ProblemFlags,
    file: &FileConfig,
    seed_flag: Option<u64>,
) -> Result<(Option<PathBuf>, ResolvedProblem)> {
    let kind = match (flags.kind, &file.kind) {
        (Some(k), _) => k,
        (None, Some(s)) => parse_enum::<KindArg>(s, "kind")?,
        (None, None) => KindArg::Smooth1d,
    };
    let default_n = match kind {
        KindArg::Spike => 200,
        KindArg::Spike2d => 50,
        KindArg::Piecewise => 32,
        KindArg::Smooth1d => 200,
    };
    Ok((
        flags.problem.clone(),
        ResolvedProblem {
            kind,
            n: flags.n.or(file.n).unwrap_or(default_n),
            density: flags.density.or(file.density).unwrap_or(0.02),
            bandwidth: flags.bandwidth.or(file.bandwidth).unwrap_or(0.01),
            noise: flags.noise.or(file.noise).unwrap_or(0.1),
            eta: flags.eta.or(file.eta).unwrap_or(1.0),
            seed: seed_flag.or(file.seed).unwrap_or(0),
        },
    ))
}

struct ResolvedSolver {
    method: MethodArg,
    p: f64,
    beta: f64,
    lambda0: f64,
    tau_tilde: Option<f64>,
    alpha: Option<f64>,
    stop: StopArg,
    tol: f64,
    max_iter: usize,
    budget_matvecs: Option<u64>,
}

fn resolve_solver(flags: &SolverFlags, file: &FileConfig) -> Result<ResolvedSolver> {
    let method = match (flags.method, &file.method) {
        (Some(m), _) => m,
        (None, Some(s)) => parse_enum::<MethodArg>(s, "method")?,
        (None, None) => MethodArg::Pn,
    };
    let stop = match (flags.stop, &file.stop) {
        (Some(s), _) => s,
        (None, Some(s)) => parse_enum::<StopArg>(s, "stop")?,
        (None, None) => StopArg::Discrepancy,
    };
    let default_tol = match stop {
        StopArg::Discrepancy => 1e-6,
        StopArg::Kkt => 1e-6,
        StopArg::Dlambda | StopArg::Dx => 1e-4,
    };
    Ok(ResolvedSolver {
        method,
        p: flags.p.or(file.p).unwrap_or(1.0),
        beta: flags.beta.or(file.beta).unwrap_or(1e-5),
        lambda0: flags.lambda0.or(file.lambda0).unwrap_or(1e5),
        tau_tilde: flags.tau_tilde.or(file.tau_tilde),
        alpha: flags.alpha.or(file.alpha),
        stop,
        tol: flags.tol.or(file.tol).unwrap_or(default_tol),
        max_iter: flags.max_iter.or(file.max_iter).unwrap_or(200),
        budget_matvecs: flags.budget_matvecs.or(file.budget_matvecs),
    })
}

impl ResolvedSolver {
    fn pn_config(&self) -> PnConfig {
        PnConfig {
            lambda0: self.lambda0,
            stop_rule: match self.stop {
                StopArg::Kkt => StopRule::KktNorm,
                StopArg::Discrepancy => StopRule::DiscrepancyMismatch,
                StopArg::Dlambda => StopRule::LambdaRelChange,
                StopArg::Dx => StopRule::XRelChange,
            },
            stop_tol: self.tol,
            max_iterations: self.max_iter,
            budget_matvecs: self.budget_matvecs,
            ..PnConfig::default()
        }
    }

    fn penalty(&self) -> Result<SmoothPenalty> {
        match self.method {
            MethodArg::Pn => SmoothPenalty::lp_smooth(self.p, self.beta),
            MethodArg::PnTik | MethodArg::Gks => Ok(SmoothPenalty::quadratic()),
            MethodArg::Gkspq => SmoothPenalty::lp_smooth(self.p, self.beta),
        }
    }

    /// Default IRN clamp: looser for TV-type problems.
    fn tau_tilde_for(&self, kind: &ProblemKind) -> f64 {
        self.tau_tilde.unwrap_or(match kind {
            ProblemKind::Piecewise { .. } => 1e-3,
            _ => 1e-4,
        })
    }
}

/// Outcome of any solver run, normalized for the CLI.
struct RunResult {
    x: DVector<f64>,
    status: PnStatus,
    trace: Vec<TraceRow>,
}

fn run_method(
    method: MethodArg,
    problem: &ProblemInstance,
    solver: &ResolvedSolver,
) -> Result<RunResult> {
    match method {
        MethodArg::Pn | MethodArg::PnTik => {
            let pen = match method {
                MethodArg::Pn => SmoothPenalty::lp_smooth(solver.p, solver.beta)?,
                _ => SmoothPenalty::quadratic(),
            };
            let out = pnewton::solve_projected_newton(problem, &pen, &solver.pn_config())?;
            Ok(RunResult { x: out.x, status: out.status, trace: out.trace })
        }
        MethodArg::Gks => {
            let cfg = reference::GksConfig {
                max_iterations: solver.max_iter,
                x_change_tol: match solver.stop {
                    StopArg::Dx => solver.tol,
                    _ => 1e-6,
                },
                budget_matvecs: solver.budget_matvecs,
                ..Default::default()
            };
            let out = reference::solve_gks(problem, &cfg)?;
            Ok(RunResult { x: out.x, status: out.status, trace: out.trace })
        }
        MethodArg::Gkspq => {
            let alpha = match solver.alpha {
                Some(a) => a,
                None => {
                    // derive alpha from a converged projected Newton run
                    let pen = SmoothPenalty::lp_smooth(solver.p, solver.beta)?;
                    let pn = pnewton::solve_projected_newton(problem, &pen, &solver.pn_config())?;
                    1.0 / pn.lambda
                }
            };
            let cfg = reference::GkspqConfig {
                max_iterations: solver.max_iter,
                budget_matvecs: solver.budget_matvecs,
            };
            let out = reference::solve_gkspq(problem, alpha, solver.tau_tilde_for(&problem.kind), &cfg)?;
            Ok(RunResult { x: out.x, status: out.status, trace: out.trace })
        }
    }
}

fn status_exit_code(status: PnStatus) -> i32 {
    match status {
        PnStatus::Converged | PnStatus::SubspaceConverged => 0,
        PnStatus::MaxIterations | PnStatus::BudgetExhausted => 3,
        PnStatus::LineSearchFailure | PnStatus::SingularJacobian => 4,
    }
}

/// Write a column-stacked image as an 8-bit binary PGM with linear
/// min-max scaling.
pub fn write_pgm<P: AsRef<Path>>(path: P, x: &DVector<f64>, n_img: usize) -> Result<()> {
    use std::io::Write;
    if n_img * n_img != x.len() {
        return Err(Error::ShapeMismatch(format!(
            "pgm: vector length {} is not {n_img}²",
            x.len()
        )));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in x.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{n_img} {n_img}\n255\n")?;
    let mut bytes = Vec::with_capacity(n_img * n_img);
    for i in 0..n_img {
        for j in 0..n_img {
            let v = ((x[i + j * n_img] - lo) * scale).round().clamp(0.0, 255.0);
            bytes.push(v as u8);
        }
    }
    f.write_all(&bytes)?;
    Ok(())
}

fn image_side(kind: &ProblemKind) -> Option<usize> {
    match kind {
        ProblemKind::Spike2d { n_img, .. } | ProblemKind::Piecewise { n_img, .. } => Some(*n_img),
        _ => None,
    }
}

fn load_or_build(
    dir: &Option<PathBuf>,
    resolved: &ResolvedProblem,
) -> Result<ProblemInstance> {
    match dir {
        Some(d) => ProblemInstance::load_dir(d),
        None => resolved.build(),
    }
}

fn out_dir(common: &CommonFlags, file: &FileConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_generate(args: &GenerateArgs) -> Result<i32> {
    let file = load_file_config(&args.common.config)?;
    let (_, resolved) = resolve_problem(&args.problem, &file, args.common.seed)?;
    let inst = resolved.build()?;
    let dir = out_dir(&args.common, &file);
    inst.save_dir(&dir, args.with_operators)?;
    println!(
        "wrote {} problem (n = {}, sigma = {:.6e}, seed = {}) to {}",
        inst.kind.name(),
        inst.n(),
        inst.sigma,
        inst.seed,
        dir.display()
    );
    Ok(0)
}

fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    let file = load_file_config(&args.common.config)?;
    let (dir, resolved) = resolve_problem(&args.problem, &file, args.common.seed)?;
    let solver = resolve_solver(&args.solver, &file)?;
    let inst = load_or_build(&dir, &resolved)?;
    let method = solver.method;
    let result = run_method(method, &inst, &solver)?;
    let out = out_dir(&args.common, &file);
    std::fs::create_dir_all(&out)?;
    write_trace_csv(out.join("trace.csv"), &result.trace)?;
    problems::write_vector(out.join("x.f64"), &result.x)?;
    if let Some(n_img) = image_side(&inst.kind) {
        write_pgm(out.join("x.pgm"), &result.x, n_img)?;
        write_pgm(out.join("x_ex.pgm"), &inst.x_ex, n_img)?;
    }
    let last = result.trace.last();
    println!(
        "{:?} after {} iterations; rel_error = {}, discrepancy_mismatch = {}",
        result.status,
        result.trace.len(),
        last.map_or(f64::NAN, |r| r.rel_error),
        last.map_or(f64::NAN, |r| r.discrepancy_mismatch),
    );
    Ok(status_exit_code(result.status))
}

fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    let file = load_file_config(&args.common.config)?;
    let (dir, resolved) = resolve_problem(&args.problem, &file, args.common.seed)?;
    let mut solver = resolve_solver(&args.solver, &file)?;
    if solver.budget_matvecs.is_none() {
        solver.budget_matvecs = Some(400);
    }
    let methods = if args.methods.is_empty() {
        vec![MethodArg::Pn, MethodArg::Gks]
    } else {
        args.methods.clone()
    };
    // gkspq needs a fixed alpha: derive it once from a pn run if needed
    if solver.alpha.is_none() && methods.contains(&MethodArg::Gkspq) {
        let inst = load_or_build(&dir, &resolved)?;
        let pen = SmoothPenalty::lp_smooth(solver.p, solver.beta)?;
        let pn = pnewton::solve_projected_newton(&inst, &pen, &solver.pn_config())?;
        solver.alpha = Some(1.0 / pn.lambda);
    }
    let mut rows = Vec::new();
    let mut worst = 0;
    for m in &methods {
        // fresh instance per run: matvec counters are per-instance
        let inst = load_or_build(&dir, &resolved)?;
        let result = run_method(*m, &inst, &solver)?;
        worst = worst.max(status_exit_code(result.status) * i32::from(result.status.is_failure()));
        rows.extend(result.trace);
    }
    let out = out_dir(&args.common, &file);
    std::fs::create_dir_all(&out)?;
    write_trace_csv(out.join("compare.csv"), &rows)?;
    println!("wrote {} rows for {} methods to {}", rows.len(), methods.len(), out.join("compare.csv").display());
    Ok(if worst >= 4 { 4 } else { 0 })
}

/// Statistics over repeated runs: Table-style schema with one mean/std pair
/// per stopping metric.
pub const STUDY_HEADER: &str = "runs,mean_iterations,std_iterations,mean_F_norm,std_F_norm,mean_rel_dlambda,std_rel_dlambda,mean_rel_dx,std_rel_dx,mean_discrepancy_mismatch,std_discrepancy_mismatch,mean_rel_error,std_rel_error";

#[derive(Debug, Clone)]
pub struct StudySummary {
    pub runs: usize,
    pub mean_iterations: f64,
    pub std_iterations: f64,
    /// Means/stds of the final stopping metrics (i)–(iv) and relative error.
    pub mean_f_norm: f64,
    pub std_f_norm: f64,
    pub mean_rel_dlambda: f64,
    pub std_rel_dlambda: f64,
    pub mean_rel_dx: f64,
    pub std_rel_dx: f64,
    pub mean_discrepancy_mismatch: f64,
    pub std_discrepancy_mismatch: f64,
    pub mean_rel_error: f64,
    pub std_rel_error: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Relative-error stagnation rule: stop once `|e_k − e_{k−1}|/e_{k−1} < 1e-3`
/// holds for three consecutive iterations.
const STAGNATION_TOL: f64 = 1e-3;
const STAGNATION_RUNS: usize = 3;

/// Run the projected Newton solver over `runs` seeds, terminating each run on
/// relative-error stagnation, and aggregate the final stopping metrics.
pub fn study_stopping(
    build: impl Fn(u64) -> Result<ProblemInstance>,
    pen: &SmoothPenalty,
    cfg: &PnConfig,
    base_seed: u64,
    runs: usize,
) -> Result<(StudySummary, Vec<TraceRow>)> {
    if runs < 2 {
        return Err(Error::InvalidParameter("study needs runs >= 2".into()));
    }
    // the stagnation rule replaces the configured stop rule
    let cfg = PnConfig { stop_rule: StopRule::KktNorm, stop_tol: 0.0, ..cfg.clone() };
    let mut finals: Vec<TraceRow> = Vec::with_capacity(runs);
    let mut iteration_counts = Vec::with_capacity(runs);
    for run in 0..runs {
        let inst = build(base_seed + run as u64)?;
        let mut driver = PnDriver::new(&inst, pen, &cfg)?;
        let mut e_prev: Option<f64> = None;
        let mut consecutive = 0;
        let mut last_row: Option<TraceRow> = None;
        for _ in 0..cfg.max_iterations {
            match driver.step()? {
                pnewton::Step::Halted(_) => break,
                pnewton::Step::Advanced { record, subspace_converged } => {
                    let e_k = inst.rel_error(&record.x);
                    last_row = Some(driver.trace_row(&record));
                    if let Some(ep) = e_prev {
                        if (e_k - ep).abs() / ep < STAGNATION_TOL {
                            consecutive += 1;
                        } else {
                            consecutive = 0;
                        }
                    }
                    e_prev = Some(e_k);
                    if consecutive >= STAGNATION_RUNS || subspace_converged {
                        break;
                    }
                }
            }
        }
        let row = last_row.ok_or_else(|| Error::DegenerateProblem("run produced no iterations".into()))?;
        iteration_counts.push(row.k as f64);
        finals.push(row);
    }
    let col = |f: fn(&TraceRow) -> f64| -> Vec<f64> { finals.iter().map(f).collect() };
    let (mean_iterations, std_iterations) = mean_std(&iteration_counts);
    let (mean_f_norm, std_f_norm) = mean_std(&col(|r| r.f_norm));
    let (mean_rel_dlambda, std_rel_dlambda) = mean_std(&col(|r| r.rel_dlambda));
    let (mean_rel_dx, std_rel_dx) = mean_std(&col(|r| r.rel_dx));
    let (mean_discrepancy_mismatch, std_discrepancy_mismatch) = mean_std(&col(|r| r.discrepancy_mismatch));
    let (mean_rel_error, std_rel_error) = mean_std(&col(|r| r.rel_error));
    Ok((
        StudySummary {
            runs,
            mean_iterations,
            std_iterations,
            mean_f_norm,
            std_f_norm,
            mean_rel_dlambda,
            std_rel_dlambda,
            mean_rel_dx,
            std_rel_dx,
            mean_discrepancy_mismatch,
            std_discrepancy_mismatch,
            mean_rel_error,
            std_rel_error,
        },
        finals,
    ))
}

impl StudySummary {
    pub fn to_csv_line(&self) -> String {
        use crate::trace::fmt_f64 as f;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.runs,
            f(self.mean_iterations),
            f(self.std_iterations),
            f(self.mean_f_norm),
            f(self.std_f_norm),
            f(self.mean_rel_dlambda),
            f(self.std_rel_dlambda),
            f(self.mean_rel_dx),
            f(self.std_rel_dx),
            f(self.mean_discrepancy_mismatch),
            f(self.std_discrepancy_mismatch),
            f(self.mean_rel_error),
            f(self.std_rel_error),
        )
    }
}

fn cmd_study(args: &StudyArgs) -> Result<i32> {
    let file = load_file_config(&args.common.config)?;
    let (dir, resolved) = resolve_problem(&args.problem, &file, args.common.seed)?;
    if dir.is_some() {
        return Err(Error::InvalidParameter(
            "study-stopping regenerates the instance per seed; pass problem flags, not --problem".into(),
        ));
    }
    let solver = resolve_solver(&args.solver, &file)?;
    let runs = args.runs.or(file.runs).unwrap_or(20);
    let pen = solver.penalty()?;
    let cfg = solver.pn_config();
    let base_seed = resolved.seed;
    let (summary, finals) = study_stopping(
        |seed| ResolvedProblem { seed, ..resolved }.build(),
        &pen,
        &cfg,
        base_seed,
        runs,
    )?;
    let out = out_dir(&args.common, &file);
    std::fs::create_dir_all(&out)?;
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("study.csv"))?);
    writeln!(f, "{STUDY_HEADER}")?;
    writeln!(f, "{}", summary.to_csv_line())?;
    drop(f);
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("study_runs.csv"))?);
    writeln!(f, "{CSV_HEADER}")?;
    for row in &finals {
        writeln!(f, "{}", row.to_csv_line())?;
    }
    println!(
        "{} runs: mean iterations {:.1} (std {:.1}), mean rel_error {:.4e}, mean mismatch {:.4e}",
        runs,
        summary.mean_iterations,
        summary.std_iterations,
        summary.mean_rel_error,
        summary.mean_discrepancy_mismatch
    );
    Ok(0)
}

/// Entry point of the `pnkrylov` binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints help/version on stdout with code 0, usage errors
            // on stderr with code 2
            e.exit();
        }
    };
    let result = match &cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::Compare(a) => cmd_compare(a),
        Cmd::StudyStopping(a) => cmd_study(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

