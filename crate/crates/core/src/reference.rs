//! Reference solvers used for comparison runs.
//!
//! [`solve_gks`] is a generalized Krylov subspace method for general-form
//! Tikhonov regularization: each iteration root-finds the regularization
//! parameter so the projected iterate sits exactly on the discrepancy
//! boundary, then expands the subspace with the unreduced normal-equation
//! residual.
//!
//! [`solve_gkspq`] combines iteratively reweighted norms with the same
//! subspace machinery to approximate the `ℓ1`-regularized problem at a fixed
//! regularization parameter; the weighted QR factorization is recomputed
//! from scratch every iteration because the weights change.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::gksubspace::{combine, mgs_qr_r, ExpandOutcome, GKSubspaceState, SubspaceMode};
use crate::linop::LinearOperator;
use crate::pnewton::PnStatus;
use crate::problems::ProblemInstance;
use crate::trace::TraceRow;
use crate::Result;

/// Tolerance of the discrepancy root-finder, on `|φ(α)|/σ²`.
const ROOT_TOL: f64 = 1e-10;

/// Search range for `log₁₀ α`.
const LOG_ALPHA_RANGE: (f64, f64) = (-16.0, 16.0);

#[derive(Debug, Clone)]
pub struct GksConfig {
    pub max_iterations: usize,
    /// Stop when `‖x_k − x_{k−1}‖/‖x_{k−1}‖` falls below this.
    pub x_change_tol: f64,
    /// Initial subspace dimension to try; doubled until the discrepancy
    /// equation has a root.
    pub l_start: usize,
    pub budget_matvecs: Option<u64>,
}

impl Default for GksConfig {
    fn default() -> Self {
        Self { max_iterations: 200, x_change_tol: 1e-6, l_start: 2, budget_matvecs: None }
    }
}

#[derive(Debug)]
pub struct GksOutcome {
    pub x: DVector<f64>,
    pub alpha: f64,
    pub status: PnStatus,
    pub iterations: usize,
    /// Dimension of the initial basis after the doubling phase.
    pub setup_dim: usize,
    pub trace: Vec<TraceRow>,
}

/// Projected least-squares residual `min_y ‖AVy − b‖` from the QR factors.
fn projected_ls_residual(state: &GKSubspaceState, b: &DVector<f64>) -> f64 {
    let qtb_sq: f64 = state.qr_a().q_cols().iter().map(|q| q.dot(b).powi(2)).sum();
    (b.norm_squared() - qtb_sq).max(0.0).sqrt()
}

/// Grow a reorthogonalized Krylov basis `K_l(AᵀA, Aᵀb)`, doubling `l` from
/// `l_start` until the unregularized projected least-squares residual drops
/// below `σ`, so the discrepancy equation is bracketed. Returns the state and
/// the residual history at the checked dimensions.
pub fn gks_initial_basis(
    a: &LinearOperator,
    l: &LinearOperator,
    b: &DVector<f64>,
    sigma: f64,
    l_start: usize,
    capacity_hint: usize,
) -> Result<(GKSubspaceState, Vec<f64>)> {
    if b.norm() <= sigma {
        return Err(Error::DegenerateProblem(format!(
            "‖b‖ = {} must exceed σ = {sigma}",
            b.norm()
        )));
    }
    let dim_cap = a.nrows().min(a.ncols());
    let mut state = GKSubspaceState::init(a, l, b, SubspaceMode::general_tikhonov(), capacity_hint)?;
    state.sync_caches(a, l)?;
    let mut check_at = l_start.max(2).min(dim_cap);
    let mut history = Vec::new();
    let mut saturated = false;
    loop {
        while state.k() < check_at && !saturated {
            let cand = state.atav_cols().last().expect("caches synced").clone();
            match state.expand(&cand)? {
                ExpandOutcome::Expanded => state.sync_caches(a, l)?,
                ExpandOutcome::ConvergedSubspace => saturated = true,
            }
        }
        let rho = projected_ls_residual(&state, b);
        history.push(rho);
        if rho < sigma {
            return Ok((state, history));
        }
        if saturated || state.k() >= dim_cap {
            return Err(Error::DiscrepancyUnreachable(format!(
                "projected least-squares residual {rho} never fell below σ = {sigma} (basis dimension {})",
                state.k()
            )));
        }
        check_at = (check_at * 2).min(dim_cap);
    }
}

/// Solve the projected Tikhonov normal equations `(RᵀR + α R̃ᵀR̃) y = d` and
/// report `φ(α) = ‖AVy − b‖² − σ²` via the QR form
/// `‖AVy − b‖² = ‖Ry − Qᵀb‖² + (‖b‖² − ‖Qᵀb‖²)`.
struct DiscrepancyFn<'a> {
    gram_a: &'a DMatrix<f64>,
    gram_l: &'a DMatrix<f64>,
    r_a: &'a DMatrix<f64>,
    d: &'a DVector<f64>,
    c: &'a DVector<f64>,
    rho0_sq: f64,
    sigma: f64,
}

impl DiscrepancyFn<'_> {
    fn eval(&self, alpha: f64) -> Option<(f64, DVector<f64>)> {
        let mut m = self.gram_l * alpha;
        m += self.gram_a;
        let y = m
            .clone()
            .cholesky()
            .map(|ch| ch.solve(self.d))
            .or_else(|| m.lu().solve(self.d))?;
        let r = self.r_a * &y - self.c;
        let phi = r.norm_squared() + self.rho0_sq - self.sigma * self.sigma;
        Some((phi, y))
    }
}

/// Find `α` with `‖AVy(α) − b‖ = σ` on the current subspace: bisection on
/// `log₁₀ α` over the full search range, with secant acceleration once the
/// root is bracketed.
pub fn gks_alpha_root(
    r_a: &DMatrix<f64>,
    r_l: &DMatrix<f64>,
    d: &DVector<f64>,
    c: &DVector<f64>,
    b_norm_sq: f64,
    sigma: f64,
) -> Result<(f64, DVector<f64>)> {
    if sigma <= 0.0 {
        return Err(Error::DiscrepancyUnreachable("σ must be positive for the discrepancy root".into()));
    }
    let gram_a = r_a.transpose() * r_a;
    let gram_l = r_l.transpose() * r_l;
    let rho0_sq = (b_norm_sq - c.norm_squared()).max(0.0);
    let f = DiscrepancyFn { gram_a: &gram_a, gram_l: &gram_l, r_a, d, c, rho0_sq, sigma };
    let sig2 = sigma * sigma;

    // hunt a sign-change bracket on log₁₀ α starting from α = 1; φ is
    // monotone in α, so one decade at a time suffices
    let (umin, umax) = LOG_ALPHA_RANGE;
    let mut u0 = 0.0;
    let (mut phi0, mut y0) = loop {
        match f.eval(10f64.powf(u0)) {
            Some(v) => break v,
            None => {
                u0 -= 1.0;
                if u0 < umin {
                    return Err(Error::DiscrepancyUnreachable(
                        "projected normal equations singular over the whole α range".into(),
                    ));
                }
            }
        }
    };
    if phi0.abs() <= ROOT_TOL * sig2 {
        return Ok((10f64.powf(u0), y0));
    }
    let up = phi0 < 0.0;
    let (mut lo, mut hi, mut phi_lo, mut phi_hi, mut y_lo, mut y_hi);
    loop {
        let u1 = if up { u0 + 1.0 } else { u0 - 1.0 };
        if u1 > umax || u1 < umin {
            return Err(Error::DiscrepancyUnreachable(format!(
                "no sign change up to the α range boundary (φ(1e{u0}) = {phi0:.3e})"
            )));
        }
        let Some((phi1, y1)) = f.eval(10f64.powf(u1)) else {
            return Err(Error::DiscrepancyUnreachable(format!(
                "projected normal equations singular at α = 1e{u1} before a bracket was found"
            )));
        };
        if phi1.abs() <= ROOT_TOL * sig2 {
            return Ok((10f64.powf(u1), y1));
        }
        if (phi1 < 0.0) != (phi0 < 0.0) {
            if up {
                (lo, hi, phi_lo, phi_hi, y_lo, y_hi) = (u0, u1, phi0, phi1, y0, y1);
            } else {
                (lo, hi, phi_lo, phi_hi, y_lo, y_hi) = (u1, u0, phi1, phi0, y1, y0);
            }
            break;
        }
        u0 = u1;
        phi0 = phi1;
        y0 = y1;
    }
    let mut last_secant = false;
    for _ in 0..240 {
        // secant proposal on the bracket endpoints, bisection fallback
        let mut u = if phi_hi != phi_lo {
            hi - phi_hi * (hi - lo) / (phi_hi - phi_lo)
        } else {
            0.5 * (lo + hi)
        };
        let margin = 0.01 * (hi - lo);
        if !(u > lo + margin && u < hi - margin) || last_secant {
            u = 0.5 * (lo + hi);
            last_secant = false;
        } else {
            last_secant = true;
        }
        let Some((phi, y)) = f.eval(10f64.powf(u)) else {
            return Err(Error::DiscrepancyUnreachable("normal equations singular inside bracket".into()));
        };
        if phi.abs() <= ROOT_TOL * sig2 {
            return Ok((10f64.powf(u), y));
        }
        if phi < 0.0 {
            lo = u;
            phi_lo = phi;
            y_lo = y;
        } else {
            hi = u;
            phi_hi = phi;
            y_hi = y;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    // return the endpoint closer to the boundary
    if phi_lo.abs() <= phi_hi.abs() {
        if phi_lo.abs() <= ROOT_TOL * sig2 * 10.0 {
            return Ok((10f64.powf(lo), y_lo));
        }
    } else if phi_hi.abs() <= ROOT_TOL * sig2 * 10.0 {
        return Ok((10f64.powf(hi), y_hi));
    }
    Err(Error::DiscrepancyUnreachable("discrepancy root-finder did not reach tolerance".into()))
}

/// Generalized Krylov subspace method for the general-form Tikhonov problem.
/// Every iterate satisfies the discrepancy principle to root-finder accuracy.
pub fn solve_gks(problem: &ProblemInstance, cfg: &GksConfig) -> Result<GksOutcome> {
    let (a, l, b, sigma) = (&problem.a, &problem.l, &problem.b, problem.sigma);
    a.reset_counters();
    l.reset_counters();
    let started = Instant::now();
    let cap = cfg.l_start + cfg.max_iterations;
    let (mut state, history) = gks_initial_basis(a, l, b, sigma, cfg.l_start, cap)?;
    let setup_dim = state.k();
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut status = PnStatus::MaxIterations;
    let mut x_prev: Option<DVector<f64>> = None;
    let mut alpha_prev: Option<f64> = None;
    let mut x = DVector::zeros(a.ncols());
    let mut alpha = f64::NAN;
    let _ = history;

    for _ in 0..cfg.max_iterations {
        if let Some(budget) = cfg.budget_matvecs {
            let total = a.forward_count() + a.adjoint_count() + l.forward_count() + l.adjoint_count();
            if total >= budget {
                status = PnStatus::BudgetExhausted;
                break;
            }
        }
        state.sync_caches(a, l)?;
        let d = state.d_vector();
        let r_a = state.qr_a().r_matrix();
        let r_l = state.qr_l().expect("gks tracks LV factors").r_matrix();
        let c = DVector::from_iterator(
            state.qr_a().k(),
            state.qr_a().q_cols().iter().map(|q| q.dot(b)),
        );
        let (alpha_k, y) = gks_alpha_root(&r_a, &r_l, &d, &c, b.norm_squared(), sigma)?;
        alpha = alpha_k;
        x = combine(state.v_cols(), &y);
        let t = combine(state.av_cols(), &y);
        let w = combine(state.atav_cols(), &y);
        let u = combine(state.ltlv_cols(), &y);
        // unreduced normal-equation residual, Tikhonov form
        let mut vtilde = &w - state.vtilde0();
        vtilde.axpy(alpha, &u, 1.0);
        let lambda = 1.0 / alpha;
        let t_res = (&t - b).norm();
        let mismatch = (t_res * t_res - sigma * sigma) / (t_res + sigma);
        let f_last = 0.5 * (t_res * t_res - sigma * sigma);
        let f_norm = ((lambda * vtilde.norm()).powi(2) + f_last * f_last).sqrt();
        let rel_dx = x_prev
            .as_ref()
            .map_or(f64::NAN, |xp| (&x - xp).norm() / xp.norm());
        let rel_dlambda = alpha_prev
            .map_or(f64::NAN, |ap| ((1.0 / alpha) - (1.0 / ap)).abs() / (1.0 / ap));
        trace.push(TraceRow {
            method: "gks",
            k: state.k(),
            f_norm,
            lambda,
            gamma: f64::NAN,
            n_backtracks: 0,
            discrepancy_mismatch: mismatch,
            rel_dlambda,
            rel_dx,
            rel_error: (&x - &problem.x_ex).norm() / problem.x_ex.norm(),
            matvec_a: a.forward_count(),
            matvec_at: a.adjoint_count(),
            matvec_l: l.forward_count(),
            matvec_lt: l.adjoint_count(),
            elapsed_seconds: started.elapsed().as_secs_f64(),
        });
        if !rel_dx.is_nan() && rel_dx <= cfg.x_change_tol {
            status = PnStatus::Converged;
            break;
        }
        x_prev = Some(x.clone());
        alpha_prev = Some(alpha);
        if state.expand(&vtilde)? == ExpandOutcome::ConvergedSubspace {
            status = PnStatus::SubspaceConverged;
            break;
        }
    }
    Ok(GksOutcome { x, alpha, status, iterations: trace.len(), setup_dim, trace })
}

// ---------------------------------------------------------------------------
// GKSpq: iteratively reweighted norms on a generalized Krylov subspace
// ---------------------------------------------------------------------------

/// Diagonal IRN weights `W_ii = 1/√max(|[Lx]_i|, τ̃)`.
#[derive(Debug, Clone)]
pub struct IrnWeights {
    pub w: DVector<f64>,
    pub tau_tilde: f64,
}

pub fn irn_weights(lx: &DVector<f64>, tau_tilde: f64) -> Result<IrnWeights> {
    if !(tau_tilde > 0.0) {
        return Err(Error::InvalidParameter(format!("tau_tilde must be > 0, got {tau_tilde}")));
    }
    let w = DVector::from_fn(lx.len(), |i, _| 1.0 / lx[i].abs().max(tau_tilde).sqrt());
    Ok(IrnWeights { w, tau_tilde })
}

#[derive(Debug, Clone)]
pub struct GkspqConfig {
    /// Fixed iteration budget; completing it counts as normal termination.
    pub max_iterations: usize,
    pub budget_matvecs: Option<u64>,
}

impl Default for GkspqConfig {
    fn default() -> Self {
        Self { max_iterations: 100, budget_matvecs: None }
    }
}

#[derive(Debug)]
pub struct GkspqOutcome {
    pub x: DVector<f64>,
    pub status: PnStatus,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    /// Multiply-accumulate work spent in reduced-dimension QR per iteration
    /// (incremental update of AV plus the from-scratch weighted QR).
    pub qr_work_per_iter: Vec<u64>,
}

/// IRN method on a generalized Krylov subspace for the `ℓ1`-regularized
/// problem with a fixed regularization parameter `α`.
pub fn solve_gkspq(
    problem: &ProblemInstance,
    alpha: f64,
    tau_tilde: f64,
    cfg: &GkspqConfig,
) -> Result<GkspqOutcome> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
    }
    if !(tau_tilde > 0.0) {
        return Err(Error::InvalidParameter(format!("tau_tilde must be > 0, got {tau_tilde}")));
    }
    let (a, l, b, sigma) = (&problem.a, &problem.l, &problem.b, problem.sigma);
    a.reset_counters();
    l.reset_counters();
    let started = Instant::now();
    let mut state = GKSubspaceState::init(a, l, b, SubspaceMode::data_side_only(), cfg.max_iterations)?;
    let mut qtb: Vec<f64> = Vec::new();
    // x₀ = 0, so the first weights are fully clamped at 1/√τ̃
    let mut prev_lvy = DVector::zeros(l.nrows());
    let mut x = DVector::zeros(a.ncols());
    let mut x_prev: Option<DVector<f64>> = None;
    let mut trace = Vec::new();
    let mut qr_work_per_iter = Vec::new();
    let mut qr_a_work_seen = 0u64;
    let mut status = PnStatus::Converged;

    for _ in 0..cfg.max_iterations {
        if let Some(budget) = cfg.budget_matvecs {
            let total = a.forward_count() + a.adjoint_count() + l.forward_count() + l.adjoint_count();
            if total >= budget {
                status = PnStatus::BudgetExhausted;
                break;
            }
        }
        state.sync_caches(a, l)?;
        while qtb.len() < state.qr_a().k() {
            qtb.push(state.qr_a().q_col(qtb.len()).dot(b));
        }
        let k = state.k();
        let weights = irn_weights(&prev_lvy, tau_tilde)?;
        // weighted QR from scratch: the weights change every iteration
        let wlv: Vec<DVector<f64>> = state
            .lv_cols()
            .iter()
            .map(|col| col.component_mul(&weights.w))
            .collect();
        let (rbar, scratch_work) = mgs_qr_r(&wlv);
        let inc_work = state.qr_a().work() - qr_a_work_seen;
        qr_a_work_seen = state.qr_a().work();
        qr_work_per_iter.push(scratch_work + inc_work);

        let mut m = rbar.transpose() * &rbar * alpha;
        m += state.qr_a().gram();
        let rhs = state.qr_a().r_matrix().transpose() * DVector::from_column_slice(&qtb);
        let y = match m.clone().cholesky().map(|ch| ch.solve(&rhs)).or_else(|| m.lu().solve(&rhs)) {
            Some(y) => y,
            None => {
                status = PnStatus::SingularJacobian;
                break;
            }
        };
        x = combine(state.v_cols(), &y);
        let t = combine(state.av_cols(), &y);
        let lvy = combine(state.lv_cols(), &y);
        // residual of the fixed-α weighted problem; one Aᵀ and one Lᵀ
        let r_data = &t - b;
        let mut wsq_lvy = lvy.clone();
        for i in 0..wsq_lvy.len() {
            wsq_lvy[i] *= weights.w[i] * weights.w[i];
        }
        let mut vtilde = a.apply_adjoint(&r_data)?;
        vtilde.axpy(alpha, &l.apply_adjoint(&wsq_lvy)?, 1.0);

        let t_res = r_data.norm();
        let mismatch = (t_res * t_res - sigma * sigma) / (t_res + sigma);
        trace.push(TraceRow {
            method: "gkspq",
            k,
            f_norm: vtilde.norm(),
            lambda: 1.0 / alpha,
            gamma: f64::NAN,
            n_backtracks: 0,
            discrepancy_mismatch: mismatch,
            rel_dlambda: 0.0,
            rel_dx: x_prev.as_ref().map_or(f64::NAN, |xp| (&x - xp).norm() / xp.norm()),
            rel_error: (&x - &problem.x_ex).norm() / problem.x_ex.norm(),
            matvec_a: a.forward_count(),
            matvec_at: a.adjoint_count(),
            matvec_l: l.forward_count(),
            matvec_lt: l.adjoint_count(),
            elapsed_seconds: started.elapsed().as_secs_f64(),
        });
        prev_lvy = lvy;
        x_prev = Some(x.clone());
        if state.expand(&vtilde)? == ExpandOutcome::ConvergedSubspace {
            status = PnStatus::SubspaceConverged;
            break;
        }
    }
    Ok(GkspqOutcome { x, status, iterations: trace.len(), trace, qr_work_per_iter })
}
