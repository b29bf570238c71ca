//! Brute-force verification solvers, kept apart from the solving API.
//!
//! Everything here works on densely assembled operators and is deliberately
//! independent of the subspace machinery in `pnkrylov`: agreement between
//! these solvers and the projected ones is evidence, not tautology. The
//! linear solves use different factorizations than the projected Newton
//! driver (QR and Cholesky here, partially pivoted LU there).
//!
//! Intended for tests and verification binaries only; sizes are guarded at
//! `n ≤ 512`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use pnkrylov::penalty::{psi_gradient, psi_hessian_diag, SmoothPenalty};
use pnkrylov::problems::ProblemInstance;

/// Largest dimension the dense oracles accept.
pub const MAX_DENSE_DIM: usize = 512;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle failure: {0}")]
    Failure(String),
    #[error("dimension {0} exceeds the dense-oracle guard {MAX_DENSE_DIM}")]
    TooLarge(usize),
    #[error("discrepancy unreachable: {0}")]
    DiscrepancyUnreachable(String),
    #[error(transparent)]
    Core(#[from] pnkrylov::Error),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Densely assembled KKT system: `F(x, λ)` and its Jacobian.
#[derive(Debug, Clone)]
pub struct DenseKkt {
    pub j: DMatrix<f64>,
    pub f: DVector<f64>,
}

impl DenseKkt {
    /// Assemble from dense operators at the point `(x, λ)`.
    pub fn assemble(
        a: &DMatrix<f64>,
        l: &DMatrix<f64>,
        b: &DVector<f64>,
        sigma: f64,
        pen: &SmoothPenalty,
        x: &DVector<f64>,
        lambda: f64,
    ) -> Self {
        let n = a.ncols();
        let r = a * x - b;
        let atr = a.transpose() * &r;
        let lx = l * x;
        let grad_pen = l.transpose() * psi_gradient(pen, &lx);
        let hd = psi_hessian_diag(pen, &lx);
        // Lᵀ diag(hd) L
        let mut scaled_l = l.clone();
        for (i, mut row) in scaled_l.row_iter_mut().enumerate() {
            row *= hd[i];
        }
        let hess_pen = l.transpose() * scaled_l;
        let mut j = DMatrix::zeros(n + 1, n + 1);
        let ata = a.transpose() * a;
        for jj in 0..n {
            for ii in 0..n {
                j[(ii, jj)] = lambda * ata[(ii, jj)] + hess_pen[(ii, jj)];
            }
        }
        for i in 0..n {
            j[(i, n)] = atr[i];
            j[(n, i)] = atr[i];
        }
        let mut f = DVector::zeros(n + 1);
        for i in 0..n {
            f[i] = lambda * atr[i] + grad_pen[i];
        }
        f[n] = 0.5 * r.norm_squared() - 0.5 * sigma * sigma;
        Self { j, f }
    }
}

/// `∇f(x, λ) = Jᵀ F` for the merit `f = ½‖F‖²`, assembled densely.
pub fn dense_merit_gradient(
    problem: &ProblemInstance,
    pen: &SmoothPenalty,
    x: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    let n = problem.n();
    if n > MAX_DENSE_DIM {
        return Err(OracleError::TooLarge(n));
    }
    let a = problem.a.to_dense();
    let l = problem.l.to_dense();
    let kkt = DenseKkt::assemble(&a, &l, &problem.b, problem.sigma, pen, x, lambda);
    Ok(kkt.j.transpose() * &kkt.f)
}

/// Full-space damped Newton on `F(x, λ) = 0` with the same Armijo rule and
/// λ-positivity safeguard as the projected solver, but solving the dense
/// `(n+1)×(n+1)` system by QR each iteration. Stops at `‖F‖ ≤ tol·‖F₀‖`.
pub fn full_newton_solve(
    problem: &ProblemInstance,
    pen: &SmoothPenalty,
    lambda0: f64,
    tol: f64,
) -> Result<(DVector<f64>, f64)> {
    let n = problem.n();
    if n > MAX_DENSE_DIM {
        return Err(OracleError::TooLarge(n));
    }
    let a = problem.a.to_dense();
    let l = problem.l.to_dense();
    let b = &problem.b;
    let sigma = problem.sigma;
    let (tau, c, gamma_min) = (0.9, 1e-4, 1e-14);

    let mut x = DVector::zeros(n);
    let mut lambda = lambda0;
    let mut kkt = DenseKkt::assemble(&a, &l, b, sigma, pen, &x, lambda);
    let f0_norm = kkt.f.norm();
    for _ in 0..500 {
        if kkt.f.norm() <= tol * f0_norm {
            return Ok((x, lambda));
        }
        let qr = kkt.j.clone().qr();
        let delta = qr
            .solve(&(-&kkt.f))
            .ok_or_else(|| OracleError::Failure("dense KKT Jacobian is singular".into()))?;
        let dx = DVector::from_column_slice(&delta.as_slice()[..n]);
        let dlambda = delta[n];
        let mut gamma = if lambda + dlambda > 0.0 { 1.0 } else { -tau * lambda / dlambda };
        let f_old_sq = kkt.f.norm_squared();
        loop {
            let x_try = &x + &dx * gamma;
            let lambda_try = lambda + gamma * dlambda;
            let kkt_try = DenseKkt::assemble(&a, &l, b, sigma, pen, &x_try, lambda_try);
            if 0.5 * kkt_try.f.norm_squared() < (0.5 - c * gamma) * f_old_sq {
                x = x_try;
                lambda = lambda_try;
                kkt = kkt_try;
                break;
            }
            gamma *= tau;
            if gamma < gamma_min {
                return Err(OracleError::Failure(
                    "full-space Newton line search stalled".into(),
                ));
            }
        }
    }
    Err(OracleError::Failure(format!(
        "full-space Newton did not reach tol {tol} in 500 iterations (‖F‖/‖F₀‖ = {:e})",
        kkt.f.norm() / f0_norm
    )))
}

/// Dense discrepancy-principle Tikhonov solve: bisection on `log₁₀ α` until
/// `|‖Ax(α) − b‖ − σ| ≤ 1e-10·σ`, where `x(α)` solves
/// `(AᵀA + αLᵀL)x = Aᵀb` by Cholesky factorization.
pub fn tikhonov_discrepancy_bisect(
    a: &DMatrix<f64>,
    l: &DMatrix<f64>,
    b: &DVector<f64>,
    sigma: f64,
) -> Result<(DVector<f64>, f64)> {
    let n = a.ncols();
    if n > MAX_DENSE_DIM {
        return Err(OracleError::TooLarge(n));
    }
    if sigma <= 0.0 {
        return Err(OracleError::DiscrepancyUnreachable("σ must be positive".into()));
    }
    let ata = a.transpose() * a;
    let ltl = l.transpose() * l;
    let atb = a.transpose() * b;
    let solve = |alpha: f64| -> Option<(f64, DVector<f64>)> {
        let m = &ata + &ltl * alpha;
        let x = m
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&atb))
            .or_else(|| m.lu().solve(&atb))?;
        let phi = (a * &x - b).norm() - sigma;
        Some((phi, x))
    };
    // hunt a sign-change bracket on log₁₀ α, starting from α = 1; φ is
    // monotone, so stepping one decade at a time is enough
    let (umin, umax) = (-16.0f64, 16.0f64);
    let mut u0 = 0.0;
    let (mut phi0, mut x0) = loop {
        match solve(10f64.powf(u0)) {
            Some(v) => break v,
            None => {
                u0 -= 1.0;
                if u0 < umin {
                    return Err(OracleError::DiscrepancyUnreachable(
                        "regularized normal equations singular over the α range".into(),
                    ));
                }
            }
        }
    };
    if phi0.abs() <= 1e-10 * sigma {
        return Ok((x0, 10f64.powf(u0)));
    }
    let up = phi0 < 0.0;
    let (mut lo, mut hi, mut phi_lo, mut phi_hi, mut x_lo, mut x_hi);
    loop {
        let u1 = if up { u0 + 1.0 } else { u0 - 1.0 };
        if u1 > umax || u1 < umin {
            return Err(OracleError::DiscrepancyUnreachable(format!(
                "no sign change up to the α range boundary (φ(1e{u0}) = {phi0:e})"
            )));
        }
        let Some((phi1, x1)) = solve(10f64.powf(u1)) else {
            return Err(OracleError::DiscrepancyUnreachable(format!(
                "normal equations became singular at α = 1e{u1} before a bracket was found"
            )));
        };
        if phi1.abs() <= 1e-10 * sigma {
            return Ok((x1, 10f64.powf(u1)));
        }
        if (phi1 < 0.0) != (phi0 < 0.0) {
            if up {
                (lo, hi, phi_lo, phi_hi, x_lo, x_hi) = (u0, u1, phi0, phi1, x0, x1);
            } else {
                (lo, hi, phi_lo, phi_hi, x_lo, x_hi) = (u1, u0, phi1, phi0, x1, x0);
            }
            break;
        }
        u0 = u1;
        phi0 = phi1;
        x0 = x1;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let Some((phi, x)) = solve(10f64.powf(mid)) else {
            return Err(OracleError::DiscrepancyUnreachable("singular inside bracket".into()));
        };
        if phi.abs() <= 1e-10 * sigma {
            return Ok((x, 10f64.powf(mid)));
        }
        if phi < 0.0 {
            lo = mid;
            phi_lo = phi;
            x_lo = x;
        } else {
            hi = mid;
            phi_hi = phi;
            x_hi = x;
        }
    }
    // interval exhausted at f64 resolution; hand back the closer endpoint
    if phi_lo.abs() <= phi_hi.abs() && phi_lo.abs() <= 1e-8 * sigma {
        return Ok((x_lo, 10f64.powf(lo)));
    }
    if phi_hi.abs() <= 1e-8 * sigma {
        return Ok((x_hi, 10f64.powf(hi)));
    }
    Err(OracleError::DiscrepancyUnreachable(
        "bisection exhausted the bracket without reaching tolerance".into(),
    ))
}

/// Reorthogonalized Lanczos-style basis for `K_k(M, start)`: each new vector
/// is `M v_j` orthogonalized twice against all previous ones. The textbook
/// construction, used as an oracle for subspace-identity checks.
pub fn krylov_basis(m: &DMatrix<f64>, start: &DVector<f64>, k: usize) -> Vec<DVector<f64>> {
    let mut v: Vec<DVector<f64>> = Vec::with_capacity(k);
    v.push(start / start.norm());
    while v.len() < k {
        let mut w = m * v.last().unwrap();
        for _ in 0..2 {
            for q in &v {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let nrm = w.norm();
        if nrm == 0.0 {
            break;
        }
        v.push(w / nrm);
    }
    v
}

/// Sine of the largest principal angle between `span(v1)` and `span(v2)`
/// (orthonormal column sets): `σ_max(V₁ − V₂(V₂ᵀV₁))`.
pub fn max_principal_angle_sin(v1: &[DVector<f64>], v2: &[DVector<f64>]) -> f64 {
    let m1 = pnkrylov::gksubspace::cols_to_matrix(v1);
    let m2 = pnkrylov::gksubspace::cols_to_matrix(v2);
    let w = &m1 - &m2 * (m2.transpose() * &m1);
    let sv = w.svd(false, false).singular_values;
    sv.iter().fold(0.0f64, |a, &b| a.max(b))
}
