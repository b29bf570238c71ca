//! Projected Newton solver for the noise-constrained penalty problem
//!
//! ```text
//! min Ψ(x)   subject to   ½‖Ax − b‖² = ½σ²,      Ψ(x) = Ψ̃(Lx).
//! ```
//!
//! Each iteration solves the KKT system of the problem projected onto the
//! current generalized Krylov subspace, takes a damped Newton step with an
//! Armijo backtracking line search on the merit `½‖F‖²`, and expands the
//! subspace with the new full-space KKT residual. Auxiliary quantities
//! `z = Lx`, `t = Ax`, `w = AᵀAx` (and `u = LᵀLx` in the general-form
//! Tikhonov mode) are maintained by vector recurrences so that a whole line
//! search costs at most one `Lᵀ` product per trial, and none at all in
//! Tikhonov mode.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::gksubspace::{combine, project, ExpandOutcome, GKSubspaceState, SubspaceMode};
use crate::linop::LinearOperator;
use crate::penalty::{psi_gradient, psi_hessian_diag, SmoothPenalty};
use crate::problems::ProblemInstance;
use crate::trace::TraceRow;
use crate::Result;

/// Relative backward-error threshold for the projected Newton solve.
const SOLVE_BACKWARD_TOL: f64 = 1e-10;

/// Convergence test applied after each accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// `‖F(x_k, λ_k)‖ < tol` (absolute).
    KktNorm,
    /// `‖Ax_k − b‖ − σ ≤ tol` (absolute; the mismatch is non-negative).
    DiscrepancyMismatch,
    /// `|λ_k − λ_{k−1}|/λ_{k−1} < tol`.
    LambdaRelChange,
    /// `‖x_k − x_{k−1}‖/‖x_{k−1}‖ < tol`.
    XRelChange,
}

/// Which iteration layout to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnMode {
    /// Tikhonov layout when the penalty is quadratic, general layout otherwise.
    Auto,
    /// Force the general-penalty layout (valid for any penalty).
    GeneralPenalty,
    /// Force the QR-based general-form Tikhonov layout (quadratic penalty only).
    TikhonovQr,
}

#[derive(Debug, Clone)]
pub struct PnConfig {
    pub lambda0: f64,
    /// Backtracking factor τ.
    pub tau: f64,
    /// Sufficient-decrease constant c.
    pub c: f64,
    pub max_iterations: usize,
    /// Line-search floor; stepping below it is reported as a failure status.
    pub gamma_min: f64,
    pub stop_rule: StopRule,
    pub stop_tol: f64,
    pub mode: PnMode,
    /// Optional cap on total operator applications (A + Aᵀ + L + Lᵀ).
    pub budget_matvecs: Option<u64>,
}

impl Default for PnConfig {
    fn default() -> Self {
        Self {
            lambda0: 1e5,
            tau: 0.9,
            c: 1e-4,
            max_iterations: 200,
            gamma_min: 1e-12,
            stop_rule: StopRule::DiscrepancyMismatch,
            stop_tol: 1e-6,
            mode: PnMode::Auto,
            budget_matvecs: None,
        }
    }
}

impl PnConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda0 > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda0 must be > 0, got {}", self.lambda0)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidParameter(format!("tau must be in (0,1), got {}", self.tau)));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::InvalidParameter(format!("c must be in (0,1), got {}", self.c)));
        }
        if !(self.gamma_min > 0.0) {
            return Err(Error::InvalidParameter("gamma_min must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// How a solver run ended. Failure modes carry the best iterate in the
/// outcome rather than aborting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnStatus {
    /// The configured stop rule fired.
    Converged,
    /// The expansion vector vanished: the subspace cannot grow further.
    SubspaceConverged,
    MaxIterations,
    BudgetExhausted,
    /// Step length fell below `gamma_min` without sufficient decrease.
    LineSearchFailure,
    /// The projected Jacobian was singular or the solve too inaccurate.
    SingularJacobian,
}

impl PnStatus {
    pub fn is_failure(&self) -> bool {
        matches!(self, PnStatus::LineSearchFailure | PnStatus::SingularJacobian)
    }
}

/// One accepted iteration, with enough detail for invariant checks.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: usize,
    pub lambda_prev: f64,
    pub lambda: f64,
    pub f_norm_prev: f64,
    pub f_norm: f64,
    pub gamma: f64,
    pub n_backtracks: u32,
    pub x_prev: DVector<f64>,
    pub x: DVector<f64>,
    /// Full-space step `Δx = V Δy` (before scaling by γ).
    pub delta_x: DVector<f64>,
    pub delta_lambda: f64,
    /// Projected iterate after the step.
    pub y: DVector<f64>,
    /// `‖Ax − b‖` at every trial step of the line search (accepted one last).
    pub trial_residuals: Vec<f64>,
    /// `‖R_kᵀR_k ȳ_{k−1} − d_k‖`, the saddle-point solvability guard.
    pub g_norm: f64,
    pub discrepancy_mismatch: f64,
    pub rel_dlambda: f64,
    pub rel_dx: f64,
    /// Multiply-accumulate work spent in QR updates this iteration.
    pub qr_work: u64,
}

#[derive(Debug)]
pub struct PnOutcome {
    pub x: DVector<f64>,
    pub lambda: f64,
    pub status: PnStatus,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

/// Result of one driver step.
pub enum Step {
    Advanced { record: IterationRecord, subspace_converged: bool },
    Halted(PnStatus),
}

/// KKT residual `F(x, λ)` split into its first block and last component.
#[derive(Debug, Clone)]
pub struct KktResidual {
    pub vtilde: DVector<f64>,
    pub last: f64,
}

impl KktResidual {
    pub fn norm(&self) -> f64 {
        (self.vtilde.norm_squared() + self.last * self.last).sqrt()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.vtilde.len();
        let mut f = DVector::zeros(n + 1);
        f.rows_mut(0, n).copy_from(&self.vtilde);
        f[n] = self.last;
        f
    }
}

/// Auxiliary recurrences identifying the evaluation point.
pub enum KktAux<'v> {
    /// General penalty: needs `z = Lx`; costs one `Lᵀ` application.
    General { z: &'v DVector<f64> },
    /// Quadratic penalty with cached `u = LᵀLx`; costs no matvec.
    Tikhonov { u: &'v DVector<f64> },
}

/// Evaluate `F(x, λ) = (λ(w − Aᵀb) + Lᵀ∇Ψ̃(z); ½‖t − b‖² − ½σ²)` from the
/// recurrence variables, without touching `A`.
pub fn kkt_residual(
    pen: &SmoothPenalty,
    l: &LinearOperator,
    vtilde0: &DVector<f64>,
    lambda: f64,
    aux: KktAux<'_>,
    t: &DVector<f64>,
    w: &DVector<f64>,
    b: &DVector<f64>,
    sigma: f64,
) -> Result<KktResidual> {
    let mut vtilde = w - vtilde0;
    vtilde *= lambda;
    match aux {
        KktAux::General { z } => {
            let g = l.apply_adjoint(&psi_gradient(pen, z))?;
            vtilde += g;
        }
        KktAux::Tikhonov { u } => {
            vtilde += u;
        }
    }
    let last = 0.5 * (t - b).norm_squared() - 0.5 * sigma * sigma;
    Ok(KktResidual { vtilde, last })
}

/// First trial step length: 1 unless the full step would drive λ
/// non-positive, in which case `γ = −τλ/Δλ` so that `λ + γΔλ = (1−τ)λ > 0`.
pub fn initial_step_length(lambda: f64, dlambda: f64, tau: f64) -> f64 {
    if lambda + dlambda > 0.0 {
        1.0
    } else {
        -tau * lambda / dlambda
    }
}

/// The four stopping metrics of a trace row:
/// `(‖F‖, |Δλ|/λ, ‖Δx‖/‖x‖, ‖Ax − b‖ − σ)`. Relative changes are NaN where
/// undefined (first iterate from `x₀ = 0`).
pub fn stopping_metrics(row: &TraceRow) -> [f64; 4] {
    [row.f_norm, row.rel_dlambda, row.rel_dx, row.discrepancy_mismatch]
}

/// Stepwise projected Newton driver. [`solve_projected_newton`] wraps it; the
/// stopping-rule study and the tests drive it directly.
pub struct PnDriver<'a> {
    a: &'a LinearOperator,
    l: &'a LinearOperator,
    b: &'a DVector<f64>,
    sigma: f64,
    x_ex: Option<&'a DVector<f64>>,
    pen: SmoothPenalty,
    cfg: PnConfig,
    tik: bool,
    sub: GKSubspaceState,
    /// Zero-padded previous projected iterate `ȳ_{k−1}` (length = basis dim).
    ybar: DVector<f64>,
    z: DVector<f64>,
    u: DVector<f64>,
    t: DVector<f64>,
    w: DVector<f64>,
    x: DVector<f64>,
    lambda: f64,
    f_cur: KktResidual,
    f_norm: f64,
    k: usize,
    started: Instant,
    qr_work_seen: u64,
    method: &'static str,
}

impl<'a> PnDriver<'a> {
    pub fn new(problem: &'a ProblemInstance, pen: &SmoothPenalty, cfg: &PnConfig) -> Result<Self> {
        cfg.validate()?;
        let (a, l, b, sigma) = (&problem.a, &problem.l, &problem.b, problem.sigma);
        if b.norm() <= sigma {
            return Err(Error::DegenerateProblem(format!(
                "‖b‖ = {} must exceed σ = {}",
                b.norm(),
                sigma
            )));
        }
        let tik = match cfg.mode {
            PnMode::Auto => pen.is_quadratic(),
            PnMode::GeneralPenalty => false,
            PnMode::TikhonovQr => {
                if !pen.is_quadratic() {
                    return Err(Error::InvalidParameter(
                        "TikhonovQr mode requires the quadratic penalty".into(),
                    ));
                }
                true
            }
        };
        a.reset_counters();
        l.reset_counters();
        let mode = if tik { SubspaceMode::general_tikhonov() } else { SubspaceMode::general_penalty() };
        let sub = GKSubspaceState::init(a, l, b, mode, cfg.max_iterations)?;
        let n = a.ncols();
        let lambda = cfg.lambda0;
        // F₀ = (−λ₀ Aᵀb; ½‖b‖² − ½σ²)
        let f_cur = KktResidual {
            vtilde: sub.vtilde0() * (-lambda),
            last: 0.5 * b.norm_squared() - 0.5 * sigma * sigma,
        };
        let f_norm = f_cur.norm();
        Ok(Self {
            a,
            l,
            b,
            sigma,
            x_ex: Some(&problem.x_ex),
            pen: *pen,
            cfg: cfg.clone(),
            tik,
            sub,
            ybar: DVector::zeros(1),
            z: DVector::zeros(l.nrows()),
            u: DVector::zeros(n),
            t: DVector::zeros(a.nrows()),
            w: DVector::zeros(n),
            x: DVector::zeros(n),
            lambda,
            f_cur,
            f_norm,
            k: 0,
            started: Instant::now(),
            qr_work_seen: 0,
            method: if tik { "pn-tik" } else { "pn" },
        })
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn f_norm(&self) -> f64 {
        self.f_norm
    }

    pub fn subspace(&self) -> &GKSubspaceState {
        &self.sub
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn method(&self) -> &'static str {
        self.method
    }

    pub fn is_tikhonov_mode(&self) -> bool {
        self.tik
    }

    /// Bring the subspace caches up to date without taking a step, so the
    /// assembled projected system can be inspected mid-run.
    pub fn sync_caches(&mut self) -> Result<()> {
        self.sub.sync_caches(self.a, self.l)
    }

    /// Zero-padded previous projected iterate `ȳ` (length = basis dimension).
    pub fn ybar(&self) -> &DVector<f64> {
        &self.ybar
    }

    fn matvec_total(&self) -> u64 {
        self.a.forward_count() + self.a.adjoint_count() + self.l.forward_count() + self.l.adjoint_count()
    }

    /// Build the (k+1)×(k+1) saddle-point system of the projected Newton
    /// step: matrix `[[λRᵀR + H, g],[gᵀ, 0]]` and right-hand side `−F^(k)`,
    /// where `g = RᵀR ȳ − d` and `H` is the projected penalty Hessian
    /// (`(LV)ᵀ∇²Ψ̃(z)(LV)` in general mode, `R̃ᵀR̃` in Tikhonov mode).
    pub fn assemble_projected_system(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let k = self.sub.k();
        debug_assert_eq!(self.sub.synced(), k);
        let gram_a = self.sub.qr_a().gram();
        let mut g = &gram_a * &self.ybar;
        g[0] -= self.sub.d1();
        let h = if self.tik {
            self.sub.qr_l().expect("tik mode tracks the LV factorization").gram()
        } else {
            let hd = psi_hessian_diag(&self.pen, &self.z);
            let lv = self.sub.lv_cols();
            let mut hm = DMatrix::zeros(k, k);
            for j in 0..k {
                let mut tmp = lv[j].clone();
                tmp.component_mul_assign(&hd);
                for i in 0..=j {
                    let v = lv[i].dot(&tmp);
                    hm[(i, j)] = v;
                    hm[(j, i)] = v;
                }
            }
            hm
        };
        let mut jmat = DMatrix::zeros(k + 1, k + 1);
        for j in 0..k {
            for i in 0..k {
                jmat[(i, j)] = self.lambda * gram_a[(i, j)] + h[(i, j)];
            }
        }
        for i in 0..k {
            jmat[(i, k)] = g[i];
            jmat[(k, i)] = g[i];
        }
        let c = if self.tik {
            self.sub.qr_l().expect("tik mode").gram() * &self.ybar
        } else {
            project(self.sub.lv_cols(), &psi_gradient(&self.pen, &self.z))
        };
        let mut rhs = DVector::zeros(k + 1);
        for i in 0..k {
            rhs[i] = -(self.lambda * g[i] + c[i]);
        }
        rhs[k] = -self.f_cur.last;
        (jmat, rhs, g)
    }

    /// Solve the assembled saddle system by LU with partial pivoting plus one
    /// refinement pass; reject solves whose backward error exceeds the
    /// threshold.
    pub fn newton_direction(jmat: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        let lu = jmat.clone().lu();
        let mut sol = lu.solve(rhs)?;
        let resid = rhs - jmat * &sol;
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        }
        let resid = (rhs - jmat * &sol).norm();
        let jnorm = jmat.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let scale = jnorm * sol.norm() + rhs.norm();
        if scale > 0.0 && resid / scale > SOLVE_BACKWARD_TOL {
            return None;
        }
        let k = rhs.len() - 1;
        let dlambda = sol[k];
        let dy = DVector::from_column_slice(&sol.as_slice()[..k]);
        Some((dy, dlambda))
    }

    /// Run one full iteration: sync caches, assemble, solve, line-search,
    /// expand. Returns the accepted step or a halt status (budget exhausted,
    /// singular system, failed line search).
    pub fn step(&mut self) -> Result<Step> {
        if let Some(budget) = self.cfg.budget_matvecs {
            if self.matvec_total() >= budget {
                return Ok(Step::Halted(PnStatus::BudgetExhausted));
            }
        }
        self.sub.sync_caches(self.a, self.l)?;
        let k = self.sub.k();
        debug_assert_eq!(self.ybar.len(), k);
        self.k += 1;

        let (jmat, rhs, g) = self.assemble_projected_system();
        let Some((dy, dlambda)) = Self::newton_direction(&jmat, &rhs) else {
            return Ok(Step::Halted(PnStatus::SingularJacobian));
        };

        // tall-skinny products for the recurrences
        let dt = combine(self.sub.av_cols(), &dy);
        let dw = combine(self.sub.atav_cols(), &dy);
        let dzu = if self.tik {
            combine(self.sub.ltlv_cols(), &dy)
        } else {
            combine(self.sub.lv_cols(), &dy)
        };
        let dx = combine(self.sub.v_cols(), &dy);

        // λ-positivity safeguard for the initial step length
        let mut gamma = initial_step_length(self.lambda, dlambda, self.cfg.tau);
        let f_old_sq = self.f_norm * self.f_norm;
        let mut n_backtracks = 0u32;
        let mut trial_residuals = Vec::new();
        let accepted = loop {
            let lambda_try = self.lambda + gamma * dlambda;
            let t_try = &self.t + &dt * gamma;
            let w_try = &self.w + &dw * gamma;
            let (z_try, u_try) = if self.tik {
                (DVector::zeros(0), &self.u + &dzu * gamma)
            } else {
                (&self.z + &dzu * gamma, DVector::zeros(0))
            };
            let aux = if self.tik { KktAux::Tikhonov { u: &u_try } } else { KktAux::General { z: &z_try } };
            let f_try = kkt_residual(
                &self.pen,
                self.l,
                self.sub.vtilde0(),
                lambda_try,
                aux,
                &t_try,
                &w_try,
                self.b,
                self.sigma,
            )?;
            trial_residuals.push((&t_try - self.b).norm());
            let f_sq = f_try.vtilde.norm_squared() + f_try.last * f_try.last;
            if 0.5 * f_sq < (0.5 - self.cfg.c * gamma) * f_old_sq {
                break Some((gamma, lambda_try, t_try, w_try, z_try, u_try, f_try, f_sq));
            }
            n_backtracks += 1;
            gamma *= self.cfg.tau;
            if gamma < self.cfg.gamma_min {
                break None;
            }
        };
        let Some((gamma, lambda_new, t_new, w_new, z_new, u_new, f_new, f_sq)) = accepted else {
            return Ok(Step::Halted(PnStatus::LineSearchFailure));
        };

        let lambda_prev = self.lambda;
        let f_norm_prev = self.f_norm;
        let x_prev = self.x.clone();
        let y_new = &self.ybar + &dy * gamma;

        self.lambda = lambda_new;
        self.t = t_new;
        self.w = w_new;
        if self.tik {
            self.u = u_new;
        } else {
            self.z = z_new;
        }
        self.x.axpy(gamma, &dx, 1.0);
        self.f_cur = f_new;
        self.f_norm = f_sq.sqrt();

        let t_res = trial_residuals.last().copied().unwrap_or(f64::NAN);
        let discrepancy_mismatch = 2.0 * self.f_cur.last / (t_res + self.sigma);
        let rel_dlambda = (self.lambda - lambda_prev).abs() / lambda_prev.abs();
        let rel_dx = if x_prev.norm() > 0.0 {
            gamma * dx.norm() / x_prev.norm()
        } else {
            f64::NAN
        };

        let qr_total = self.sub.qr_a().work() + self.sub.qr_l().map_or(0, |q| q.work());
        let qr_work = qr_total - self.qr_work_seen;
        self.qr_work_seen = qr_total;

        // the accepted KKT residual doubles as the expansion vector
        let outcome = self.sub.expand(&self.f_cur.vtilde.clone())?;
        let subspace_converged = matches!(outcome, ExpandOutcome::ConvergedSubspace);
        self.ybar = if subspace_converged {
            y_new.clone()
        } else {
            let mut yb = DVector::zeros(k + 1);
            yb.rows_mut(0, k).copy_from(&y_new);
            yb
        };

        let record = IterationRecord {
            k: self.k,
            lambda_prev,
            lambda: self.lambda,
            f_norm_prev,
            f_norm: self.f_norm,
            gamma,
            n_backtracks,
            x_prev,
            x: self.x.clone(),
            delta_x: dx,
            delta_lambda: dlambda,
            y: y_new,
            trial_residuals,
            g_norm: g.norm(),
            discrepancy_mismatch,
            rel_dlambda,
            rel_dx,
            qr_work,
        };
        Ok(Step::Advanced { record, subspace_converged })
    }

    pub fn trace_row(&self, rec: &IterationRecord) -> TraceRow {
        TraceRow {
            method: self.method,
            k: rec.k,
            f_norm: rec.f_norm,
            lambda: rec.lambda,
            gamma: rec.gamma,
            n_backtracks: rec.n_backtracks,
            discrepancy_mismatch: rec.discrepancy_mismatch,
            rel_dlambda: rec.rel_dlambda,
            rel_dx: rec.rel_dx,
            rel_error: self
                .x_ex
                .map_or(f64::NAN, |xe| (&rec.x - xe).norm() / xe.norm()),
            matvec_a: self.a.forward_count(),
            matvec_at: self.a.adjoint_count(),
            matvec_l: self.l.forward_count(),
            matvec_lt: self.l.adjoint_count(),
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        }
    }

    fn stop_rule_fires(&self, rec: &IterationRecord) -> bool {
        let tol = self.cfg.stop_tol;
        match self.cfg.stop_rule {
            StopRule::KktNorm => rec.f_norm < tol,
            StopRule::DiscrepancyMismatch => rec.discrepancy_mismatch <= tol,
            StopRule::LambdaRelChange => rec.rel_dlambda < tol,
            StopRule::XRelChange => rec.rel_dx < tol,
        }
    }
}

/// Run the projected Newton method on a problem instance.
///
/// The mode is selected per [`PnMode`]; with [`PnMode::Auto`] the QR-based
/// general-form Tikhonov layout is used exactly when the penalty is
/// quadratic. Failure modes are reported in [`PnOutcome::status`] together
/// with the best iterate, never as an `Err`.
pub fn solve_projected_newton(
    problem: &ProblemInstance,
    pen: &SmoothPenalty,
    cfg: &PnConfig,
) -> Result<PnOutcome> {
    solve_with_observer(problem, pen, cfg, |_| {})
}

/// Like [`solve_projected_newton`], invoking `observer` with every accepted
/// iteration record (used by invariant checks and the stopping-rule study).
pub fn solve_with_observer<F: FnMut(&IterationRecord)>(
    problem: &ProblemInstance,
    pen: &SmoothPenalty,
    cfg: &PnConfig,
    mut observer: F,
) -> Result<PnOutcome> {
    let mut driver = PnDriver::new(problem, pen, cfg)?;
    let mut trace = Vec::new();
    let mut status = PnStatus::MaxIterations;
    for _ in 0..cfg.max_iterations {
        match driver.step()? {
            Step::Halted(s) => {
                status = s;
                break;
            }
            Step::Advanced { record, subspace_converged } => {
                observer(&record);
                trace.push(driver.trace_row(&record));
                if driver.stop_rule_fires(&record) {
                    status = PnStatus::Converged;
                    break;
                }
                if subspace_converged {
                    status = PnStatus::SubspaceConverged;
                    break;
                }
            }
        }
    }
    Ok(PnOutcome {
        x: driver.x.clone(),
        lambda: driver.lambda,
        status,
        iterations: trace.len(),
        trace,
    })
}
