//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (run with `cargo test --test acceptance -- --nocapture` to see
//! them). Tolerances are pinned in the asserts, not configurable.

use std::time::Instant;

use nalgebra::DVector;
use pnkrylov::gksubspace::cols_to_matrix;
use pnkrylov::linop;
use pnkrylov::penalty::{psi_gradient, psi_hessian_diag, psi_value, SmoothPenalty};
use pnkrylov::pnewton::{
    solve_projected_newton, solve_with_observer, PnConfig, PnMode, PnStatus, StopRule,
};
use pnkrylov::problems::{self, ProblemInstance};
use pnkrylov::reference::{self, GksConfig, GkspqConfig};
use pnkrylov::rng::SplitMix64;
use pnkrylov::trace::TraceRow;
use pnkrylov_oracle as oracle;

fn pass(criterion: u32, detail: &str) {
    println!("[criterion {criterion:2}] PASS — {detail}");
}

fn randn(n: usize, rng: &mut SplitMix64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.next_normal())
}

/// Shared floor/monotonicity checks applied to every collected trace.
fn assert_run_invariants(rows: &[TraceRow]) {
    let mut prev = f64::INFINITY;
    for row in rows {
        assert!(
            row.discrepancy_mismatch >= -1e-12,
            "{} k={}: residual floor violated by {:e}",
            row.method,
            row.k,
            row.discrepancy_mismatch
        );
        if row.method.starts_with("pn") {
            assert!(
                row.f_norm < prev,
                "{} k={}: merit not strictly decreasing",
                row.method,
                row.k
            );
            prev = row.f_norm;
            assert!(row.lambda > 0.0);
        }
    }
}

#[test]
fn criterion_01_penalty_calculus_matches_finite_differences() {
    let t0 = Instant::now();
    let mut rng = SplitMix64::new(20260810);
    let h = 1e-6;
    for p in [1.0, 1.3, 1.7, 2.0] {
        for beta in [1e-3, 1e-5] {
            let pen = SmoothPenalty::lp_smooth(p, beta).unwrap();
            for _ in 0..20 {
                let z = randn(12, &mut rng);
                let g = psi_gradient(&pen, &z);
                let g_fd = DVector::from_fn(12, |i, _| {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[i] += h;
                    zm[i] -= h;
                    (psi_value(&pen, &zp) - psi_value(&pen, &zm)) / (2.0 * h)
                });
                let rel_g = (&g - &g_fd).norm() / g.norm();
                assert!(rel_g <= 1e-6, "grad p={p} beta={beta}: rel err {rel_g:e}");

                let hd = psi_hessian_diag(&pen, &z);
                let h_fd = DVector::from_fn(12, |i, _| {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[i] += h;
                    zm[i] -= h;
                    (psi_gradient(&pen, &zp)[i] - psi_gradient(&pen, &zm)[i]) / (2.0 * h)
                });
                let rel_h = (&hd - &h_fd).norm() / hd.norm();
                assert!(rel_h <= 1e-5, "hess p={p} beta={beta}: rel err {rel_h:e}");
            }
        }
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "calculus check took {dt:?}");
    pass(1, &format!("gradient/Hessian match central differences at 160 points in {dt:?}"));
}

/// The three penalty configurations of the 200×200 desk-scale run.
fn smooth200_variants() -> Vec<(&'static str, SmoothPenalty, ProblemInstance)> {
    let mk = || problems::smooth1d_problem(200, 0.1, 3).unwrap();
    vec![
        (
            "quadratic L=I",
            SmoothPenalty::quadratic(),
            mk().with_l(linop::identity_operator(200).unwrap()).unwrap(),
        ),
        ("quadratic L=fd1d", SmoothPenalty::quadratic(), mk()),
        (
            "l1-smooth L=I",
            SmoothPenalty::lp_smooth(1.0, 1e-5).unwrap(),
            mk().with_l(linop::identity_operator(200).unwrap()).unwrap(),
        ),
    ]
}

#[test]
fn criterion_02_descent_identity_on_200x200_runs() {
    let t0 = Instant::now();
    let mut total_iters = 0usize;
    for (name, pen, p) in smooth200_variants() {
        let cfg = PnConfig { max_iterations: 150, ..Default::default() };
        let mut worst = 0.0f64;
        solve_with_observer(&p, &pen, &cfg, |rec| {
            total_iters += 1;
            let grad = oracle::dense_merit_gradient(&p, &pen, &rec.x_prev, rec.lambda_prev).unwrap();
            let mut dir = DVector::zeros(201);
            dir.rows_mut(0, 200).copy_from(&rec.delta_x);
            dir[200] = rec.delta_lambda;
            let f2 = rec.f_norm_prev * rec.f_norm_prev;
            let defect = (dir.dot(&grad) + f2).abs() / f2;
            worst = worst.max(defect);
        })
        .unwrap();
        assert!(worst <= 1e-8, "{name}: descent identity defect {worst:e}");
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 10.0, "descent check took {dt:?}");
    pass(2, &format!("Δᵀ∇f = −‖F‖² to 1e-8 over {total_iters} iterations, {dt:?}"));
}

#[test]
fn criterion_03_residual_floor_at_every_iterate_and_trial() {
    let mut checked = 0usize;
    for (_, pen, p) in smooth200_variants() {
        let cfg = PnConfig { max_iterations: 150, ..Default::default() };
        let out = solve_with_observer(&p, &pen, &cfg, |rec| {
            for r in &rec.trial_residuals {
                checked += 1;
                assert!(*r >= p.sigma - 1e-12, "trial residual {r} below σ = {}", p.sigma);
            }
        })
        .unwrap();
        assert_run_invariants(&out.trace);
    }
    // the TV pipeline exercises the floor with a rectangular L
    let p = problems::piecewise_problem(32, problems::PiecewiseKind::Blur2d, 0.1, 5).unwrap();
    let pen = SmoothPenalty::lp_smooth(1.0, 1e-5).unwrap();
    let out = solve_with_observer(&p, &pen, &PnConfig::default(), |rec| {
        for r in &rec.trial_residuals {
            checked += 1;
            assert!(*r >= p.sigma - 1e-12);
        }
    })
    .unwrap();
    assert_run_invariants(&out.trace);
    pass(3, &format!("‖Ax−b‖ ≥ σ − 1e-12 at {checked} line-search trials across 4 runs"));
}

#[test]
fn criterion_04_monotone_merit_and_positive_multiplier() {
    let mut rows_checked = 0usize;
    for (name, pen, p) in smooth200_variants() {
        let cfg = PnConfig { max_iterations: 150, ..Default::default() };
        let out = solve_projected_newton(&p, &pen, &cfg).unwrap();
        let mut prev = f64::INFINITY;
        for row in &out.trace {
            assert!(row.f_norm < prev, "{name}: ‖F‖ not strictly decreasing at k={}", row.k);
            assert!(row.lambda > 0.0, "{name}: λ ≤ 0 at k={}", row.k);
            prev = row.f_norm;
            rows_checked += 1;
        }
    }
    pass(4, &format!("‖F_k‖ strictly decreasing and λ_k > 0 over {rows_checked} iterations"));
}

#[test]
fn criterion_05_oracle_equivalence_on_smooth1d_n64() {
    let t0 = Instant::now();
    let tight = PnConfig {
        stop_rule: StopRule::KktNorm,
        stop_tol: 1e-9,
        max_iterations: 300,
        ..Default::default()
    };
    // quadratic penalty, L = fd1d and L = I, against the bisection oracle
    for with_identity in [false, true] {
        let mut p = problems::smooth1d_problem(64, 0.1, 7).unwrap();
        if with_identity {
            p = p.with_l(linop::identity_operator(64).unwrap()).unwrap();
        }
        let out = solve_projected_newton(&p, &SmoothPenalty::quadratic(), &tight).unwrap();
        let (x_b, alpha_b) =
            oracle::tikhonov_discrepancy_bisect(&p.a.to_dense(), &p.l.to_dense(), &p.b, p.sigma)
                .unwrap();
        let rel_x = (&out.x - &x_b).norm() / x_b.norm();
        let rel_a = (1.0 / out.lambda - alpha_b).abs() / alpha_b;
        assert!(rel_x <= 1e-6, "L={} rel x {rel_x:e}", if with_identity { "I" } else { "fd1d" });
        assert!(rel_a <= 1e-4, "rel alpha {rel_a:e}");
    }
    // l1-smooth penalty against the full-space Newton oracle
    let p = problems::smooth1d_problem(64, 0.1, 7).unwrap();
    let pen = SmoothPenalty::lp_smooth(1.0, 1e-5).unwrap();
    let out = solve_projected_newton(&p, &pen, &tight).unwrap();
    let (x_n, _) = oracle::full_newton_solve(&p, &pen, 10.0, 1e-12).unwrap();
    let rel_x = (&out.x - &x_n).norm() / x_n.norm();
    assert!(rel_x <= 1e-6, "l1 rel x {rel_x:e}");
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 5.0, "oracle equivalence took {dt:?}");
    pass(5, &format!("projected vs dense oracles agree (worst rel x ≤ 1e-6) in {dt:?}"));
}

#[test]
fn criterion_06_subspace_spans_krylov_space_in_standard_form() {
    let p = problems::smooth1d_problem(200, 0.15, 1)
        .unwrap()
        .with_l(linop::identity_operator(200).unwrap())
        .unwrap();
    let pen = SmoothPenalty::quadratic();
    let cfg = PnConfig {
        stop_rule: StopRule::KktNorm,
        stop_tol: 0.0,
        max_iterations: 12,
        ..Default::default()
    };
    let mut driver = pnkrylov::pnewton::PnDriver::new(&p, &pen, &cfg).unwrap();
    for _ in 0..10 {
        match driver.step().unwrap() {
            pnkrylov::pnewton::Step::Advanced { .. } => {}
            pnkrylov::pnewton::Step::Halted(s) => panic!("halted early: {s:?}"),
        }
    }
    let v_pn: Vec<DVector<f64>> = driver.subspace().v_cols()[..10].to_vec();
    let ad = p.a.to_dense();
    let ata = ad.transpose() * &ad;
    let atb = ad.transpose() * &p.b;
    let v_lz = oracle::krylov_basis(&ata, &atb, 10);
    let angle = oracle::max_principal_angle_sin(&v_pn, &v_lz)
        .max(oracle::max_principal_angle_sin(&v_lz, &v_pn));
    assert!(angle <= 1e-6, "largest principal angle sin {angle:e}");

    let vm = cols_to_matrix(&v_pn);
    let t = vm.transpose() * &ata * &vm;
    let mut max_entry = 0.0f64;
    let mut max_off = 0.0f64;
    for i in 0..10 {
        for j in 0..10 {
            let v = t[(i, j)].abs();
            max_entry = max_entry.max(v);
            if i.abs_diff(j) > 1 {
                max_off = max_off.max(v);
            }
        }
    }
    assert!(
        max_off <= 1e-8 * max_entry,
        "off-tridiagonal {max_off:e} vs max entry {max_entry:e}"
    );
    pass(6, &format!("principal angle sin {angle:.1e}, off-tridiagonal ratio {:.1e}", max_off / max_entry));
}

#[test]
fn criterion_07_general_and_qr_layouts_produce_identical_iterates() {
    let p = problems::smooth1d_problem(64, 0.1, 11).unwrap();
    let pen = SmoothPenalty::quadratic();
    let base = PnConfig {
        stop_rule: StopRule::KktNorm,
        stop_tol: 0.0,
        max_iterations: 30,
        ..Default::default()
    };
    let mut general: Vec<(DVector<f64>, f64)> = vec![];
    let mut qr: Vec<(DVector<f64>, f64)> = vec![];
    solve_with_observer(&p, &pen, &PnConfig { mode: PnMode::GeneralPenalty, ..base.clone() }, |rec| {
        general.push((rec.y.clone(), rec.lambda))
    })
    .unwrap();
    solve_with_observer(&p, &pen, &PnConfig { mode: PnMode::TikhonovQr, ..base.clone() }, |rec| {
        qr.push((rec.y.clone(), rec.lambda))
    })
    .unwrap();
    assert_eq!(general.len(), 30);
    assert_eq!(qr.len(), 30);
    let mut worst = 0.0f64;
    for ((y2, l2), (y3, l3)) in general.iter().zip(qr.iter()) {
        worst = worst.max((y2 - y3).norm() / y3.norm());
        worst = worst.max((l2 - l3).abs() / l3);
    }
    assert!(worst <= 1e-8, "layouts diverge: {worst:e}");
    pass(7, &format!("per-iteration (y_k, λ_k) agree to {worst:.1e} over 30 iterations"));
}

#[test]
fn criterion_08_matvec_accounting_is_exact() {
    // general layout: (1, 1, 1, 1 + #red_k) per iteration
    let p = problems::smooth1d_problem(64, 0.1, 13).unwrap();
    let pen = SmoothPenalty::lp_smooth(1.0, 1e-5).unwrap();
    let out = solve_projected_newton(&p, &pen, &PnConfig::default()).unwrap();
    let mut prev = (0u64, 1u64, 0u64, 0u64); // init consumed one Aᵀ
    let mut backtracks_seen = 0u32;
    for row in &out.trace {
        let da = row.matvec_a - prev.0;
        let dat = row.matvec_at - prev.1;
        let dl = row.matvec_l - prev.2;
        let dlt = row.matvec_lt - prev.3;
        assert_eq!(
            (da, dat, dl, dlt),
            (1, 1, 1, 1 + row.n_backtracks as u64),
            "general layout counts wrong at k={}",
            row.k
        );
        backtracks_seen += row.n_backtracks;
        prev = (row.matvec_a, row.matvec_at, row.matvec_l, row.matvec_lt);
    }

    // Tikhonov layout: exactly (1, 1, 1, 1)
    let p2 = problems::smooth1d_problem(64, 0.1, 13).unwrap();
    let out2 = solve_projected_newton(&p2, &SmoothPenalty::quadratic(), &PnConfig::default()).unwrap();
    let mut prev = (0u64, 1u64, 0u64, 0u64);
    for row in &out2.trace {
        let delta = (
            row.matvec_a - prev.0,
            row.matvec_at - prev.1,
            row.matvec_l - prev.2,
            row.matvec_lt - prev.3,
        );
        assert_eq!(delta, (1, 1, 1, 1), "tikhonov layout counts wrong at k={}", row.k);
        prev = (row.matvec_a, row.matvec_at, row.matvec_l, row.matvec_lt);
    }

    // GKSpq: exactly (1, 1, 1, 1)
    let p3 = problems::spike_problem(100, 0.05, 0.05, 0.1, 3, problems::SpikeDim::OneD).unwrap();
    let out3 = reference::solve_gkspq(&p3, 1e-3, 1e-4, &GkspqConfig { max_iterations: 15, ..Default::default() }).unwrap();
    for pair in out3.trace.windows(2) {
        let delta = (
            pair[1].matvec_a - pair[0].matvec_a,
            pair[1].matvec_at - pair[0].matvec_at,
            pair[1].matvec_l - pair[0].matvec_l,
            pair[1].matvec_lt - pair[0].matvec_lt,
        );
        assert_eq!(delta, (1, 1, 1, 1), "gkspq counts wrong at k={}", pair[1].k);
    }
    pass(8, &format!(
        "per-iteration counts (1,1,1,1+#red) / (1,1,1,1) / (1,1,1,1) verified ({} backtracks observed)",
        backtracks_seen
    ));
}

#[test]
fn criterion_09_gks_iterates_sit_on_discrepancy_boundary() {
    let p = problems::smooth1d_problem(200, 0.1, 17).unwrap();
    let gks = reference::solve_gks(&p, &GksConfig::default()).unwrap();
    for row in &gks.trace {
        assert!(
            row.discrepancy_mismatch.abs() <= 1e-8 * p.sigma,
            "gks k={}: |‖Ax−b‖−σ| = {:e}",
            row.k,
            row.discrepancy_mismatch.abs()
        );
    }
    let pn = solve_projected_newton(
        &p,
        &SmoothPenalty::quadratic(),
        &PnConfig {
            stop_rule: StopRule::KktNorm,
            stop_tol: 1e-9,
            max_iterations: 300,
            ..Default::default()
        },
    )
    .unwrap();
    let rel = (&gks.x - &pn.x).norm() / pn.x.norm();
    assert!(rel <= 1e-4, "gks vs pn-tik final solutions differ by {rel:e}");
    pass(9, &format!(
        "{} GKS iterates within 1e-8·σ of the boundary; final GKS/PN distance {rel:.1e}",
        gks.trace.len()
    ));
}

#[test]
fn criterion_10_smaller_beta_gives_no_worse_reconstructions() {
    let t0 = Instant::now();
    let p = problems::spike_problem(200, 0.02, 0.01, 0.1, 7, problems::SpikeDim::OneD).unwrap();
    let mut errors = Vec::new();
    for beta in [1e-3, 1e-4, 1e-5, 1e-6] {
        let pen = SmoothPenalty::lp_smooth(1.0, beta).unwrap();
        let out = solve_projected_newton(&p, &pen, &PnConfig { max_iterations: 250, ..Default::default() }).unwrap();
        assert_eq!(out.status, PnStatus::Converged, "beta {beta:e} did not converge");
        assert_run_invariants(&out.trace);
        errors.push(p.rel_error(&out.x));
    }
    for w in errors.windows(2) {
        assert!(
            w[1] <= w[0] + 1e-3,
            "relative error increased with smaller beta: {errors:?}"
        );
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 30.0, "beta sweep took {dt:?}");
    pass(10, &format!("errors {errors:.4?} are monotone non-increasing in β, {dt:?}"));
}

#[test]
fn criterion_11_irn_weights_reproduce_the_l1_norm() {
    let mut rng = SplitMix64::new(55);
    let tau = 1e-4;
    for _ in 0..50 {
        // entries bounded away from the clamp
        let z = DVector::from_fn(40, |_, _| {
            let v = rng.next_normal();
            v.signum() * (v.abs() + tau)
        });
        let w = reference::irn_weights(&z, tau).unwrap();
        let weighted_sq: f64 = z.iter().zip(w.w.iter()).map(|(zi, wi)| (wi * zi).powi(2)).sum();
        let l1: f64 = z.iter().map(|v| v.abs()).sum();
        assert!(
            (weighted_sq - l1).abs() <= 1e-12 * l1,
            "IRN identity violated: {weighted_sq} vs {l1}"
        );
    }
    pass(11, "‖W(Lx)·Lx‖² = ‖Lx‖₁ to 1e-12 relative on 50 draws");
}

#[test]
fn criterion_12_solution_is_insensitive_to_lambda0() {
    // N(A) ∩ N(L) = {0}: the blur preserves constants, which span N(fd1d)
    let p = problems::smooth1d_problem(64, 0.1, 21).unwrap();
    let pen = SmoothPenalty::lp_smooth(1.3, 1e-5).unwrap();
    let mut sols = Vec::new();
    for lambda0 in [1e3, 1e5, 1e7] {
        let cfg = PnConfig {
            lambda0,
            stop_rule: StopRule::KktNorm,
            stop_tol: 1e-10,
            max_iterations: 300,
            ..Default::default()
        };
        let out = solve_projected_newton(&p, &pen, &cfg).unwrap();
        sols.push(out.x);
    }
    let mut worst = 0.0f64;
    for i in 0..sols.len() {
        for j in i + 1..sols.len() {
            worst = worst.max((&sols[i] - &sols[j]).norm() / sols[j].norm());
        }
    }
    assert!(worst <= 1e-6, "λ₀ sensitivity: {worst:e}");
    pass(12, &format!("λ₀ ∈ {{1e3, 1e5, 1e7}} agree pairwise to {worst:.1e}"));
}

#[test]
fn criterion_13_stopping_study_completes_with_sane_statistics() {
    let t0 = Instant::now();
    let pen = SmoothPenalty::lp_smooth(1.0, 1e-5).unwrap();
    let cfg = PnConfig { max_iterations: 400, ..Default::default() };
    let (summary, finals) = pnkrylov::cli::study_stopping(
        |seed| problems::spike_problem(400, 0.02, 0.01, 0.1, seed, problems::SpikeDim::OneD),
        &pen,
        &cfg,
        1000,
        20,
    )
    .unwrap();
    // schema: every Table-style column present and finite
    let header = pnkrylov::cli::STUDY_HEADER;
    for col in [
        "mean_iterations",
        "std_iterations",
        "mean_F_norm",
        "mean_rel_dlambda",
        "mean_rel_dx",
        "mean_discrepancy_mismatch",
        "mean_rel_error",
    ] {
        assert!(header.contains(col), "missing column {col}");
    }
    let line = summary.to_csv_line();
    assert_eq!(line.split(',').count(), header.split(',').count());
    assert!(summary.std_iterations.is_finite());
    assert!(summary.mean_discrepancy_mismatch >= 0.0);
    assert!(summary.mean_discrepancy_mismatch <= 1e-3);
    assert!(summary.mean_iterations < 300.0, "mean iterations {}", summary.mean_iterations);
    assert_eq!(finals.len(), 20);
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 300.0, "study took {dt:?}");
    pass(13, &format!(
        "20 runs: mean its {:.1} (std {:.1}), mean mismatch {:.2e}, {dt:?}",
        summary.mean_iterations, summary.std_iterations, summary.mean_discrepancy_mismatch
    ));
}

#[test]
fn criterion_14_tv_deblurring_beats_standard_tikhonov() {
    let t0 = Instant::now();
    let p = problems::piecewise_problem(32, problems::PiecewiseKind::Blur2d, 0.1, 5).unwrap();
    let pen = SmoothPenalty::lp_smooth(1.0, 1e-5).unwrap();
    let cfg = PnConfig {
        stop_rule: StopRule::DiscrepancyMismatch,
        stop_tol: 1e-4 * p.sigma,
        max_iterations: 200,
        ..Default::default()
    };
    let tv = solve_projected_newton(&p, &pen, &cfg).unwrap();
    assert_eq!(tv.status, PnStatus::Converged, "TV run did not reach the mismatch target");
    assert!(tv.iterations <= 200);
    assert!(tv.trace.last().unwrap().discrepancy_mismatch <= 1e-4 * p.sigma);
    assert_run_invariants(&tv.trace);
    let tv_err = p.rel_error(&tv.x);

    let p_tik = problems::piecewise_problem(32, problems::PiecewiseKind::Blur2d, 0.1, 5)
        .unwrap()
        .with_l(linop::identity_operator(32 * 32).unwrap())
        .unwrap();
    let tik = solve_projected_newton(&p_tik, &SmoothPenalty::quadratic(), &cfg).unwrap();
    let tik_err = p_tik.rel_error(&tik.x);
    assert!(
        tv_err < tik_err,
        "TV error {tv_err:e} not below standard-form Tikhonov {tik_err:e}"
    );
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 120.0, "TV pipeline took {dt:?}");
    pass(14, &format!(
        "TV rel error {tv_err:.3e} < Tikhonov {tik_err:.3e} in {} iterations, {dt:?}",
        tv.iterations
    ));
}
