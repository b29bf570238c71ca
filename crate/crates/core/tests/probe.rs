//! Scratch numerical probes (removed before release); run with --nocapture.

use nalgebra::DVector;
use pnkrylov::penalty::SmoothPenalty;
use pnkrylov::pnewton::{solve_projected_newton, solve_with_observer, PnConfig, PnMode, StopRule};
use pnkrylov::problems;
use pnkrylov_oracle as oracle;

#[test]
#[ignore]
fn probe_oracle_equivalence_n64() {
    let p = problems::smooth1d_problem(64, 0.1, 7).unwrap();
    // quadratic, L = fd1d (instance default)
    let pen = SmoothPenalty::quadratic();
    let cfg = PnConfig {
        stop_rule: StopRule::KktNorm,
        stop_tol: 1e-9,
        max_iterations: 300,
        ..Default::default()
    };
    let out = solve_projected_newton(&p, &pen, &cfg).unwrap();
    println!("pn-tik status {:?} iters {} lambda {}", out.status, out.iterations, out.lambda);
    let (xb, alpha) = oracle::tikhonov_discrepancy_bisect(
        &p.a.to_dense(),
        &p.l.to_dense(),
        &p.b,
        p.sigma,
    )
    .unwrap();
    let relx = (&out.x - &xb).norm() / xb.norm();
    let rela = (1.0 / out.lambda - alpha).abs() / alpha;
    println!("rel x = {relx:e}, rel alpha = {rela:e}");
    let last = out.trace.last().unwrap();
    println!("final F_norm {:e} mismatch {:e}", last.f_norm, last.discrepancy_mismatch);

    // L = I variant
    let p2 = problems::smooth1d_problem(64, 0.1, 7)
        .unwrap()
        .with_l(pnkrylov::linop::identity_operator(64).unwrap())
        .unwrap();
    let out2 = solve_projected_newton(&p2, &pen, &cfg).unwrap();
    let (xb2, alpha2) = oracle::tikhonov_discrepancy_bisect(
        &p2.a.to_dense(),
        &p2.l.to_dense(),
        &p2.b,
        p2.sigma,
    )
    .unwrap();
    println!(
        "L=I: status {:?} iters {} rel x = {:e} rel alpha = {:e}",
        out2.status,
        out2.iterations,
        (&out2.x - &xb2).norm() / xb2.norm(),
        (1.0 / out2.lambda - alpha2).abs() / alpha2
    );

    // l1 penalty vs full newton
    let pen1 = SmoothPenalty::lp_smooth(1.0, 1e-5).unwrap();
    let cfg1 = PnConfig {
        stop_rule: StopRule::KktNorm,
        stop_tol: 1e-9,
        max_iterations: 300,
        ..Default::default()
    };
    let out3 = solve_projected_newton(&p, &pen1, &cfg1).unwrap();
    println!("l1 pn: status {:?} iters {} lambda {:e}", out3.status, out3.iterations, out3.lambda);
    for lam0 in [1.0, 10.0, 100.0, 1e3] {
        match oracle::full_newton_solve(&p, &pen1, lam0, 1e-12) {
            Ok((xn, lamn)) => println!(
                "l1 oracle lam0={lam0:e}: rel x = {:e} lambda {:e}",
                (&out3.x - &xn).norm() / xn.norm(),
                lamn
            ),
            Err(e) => println!("l1 oracle lam0={lam0:e}: {e}"),
        }
    }
}

#[test]
#[ignore]
fn probe_alg2_alg3_equivalence() {
    let p = problems::smooth1d_problem(64, 0.1, 11).unwrap();
    let pen = SmoothPenalty::quadratic();
    let base = PnConfig {
        stop_rule: StopRule::KktNorm,
        stop_tol: 0.0, // never fires; run the full 30
        max_iterations: 30,
        ..Default::default()
    };
    let mut ys2: Vec<(DVector<f64>, f64)> = vec![];
    let mut ys3: Vec<(DVector<f64>, f64)> = vec![];
    let cfg2 = PnConfig { mode: PnMode::GeneralPenalty, ..base.clone() };
    solve_with_observer(&p, &pen, &cfg2, |rec| ys2.push((rec.y.clone(), rec.lambda))).unwrap();
    let cfg3 = PnConfig { mode: PnMode::TikhonovQr, ..base.clone() };
    solve_with_observer(&p, &pen, &cfg3, |rec| ys3.push((rec.y.clone(), rec.lambda))).unwrap();
    let mut worst_y = 0.0f64;
    let mut worst_l = 0.0f64;
    for (k, ((y2, l2), (y3, l3))) in ys2.iter().zip(ys3.iter()).enumerate() {
        let dy = (y2 - y3).norm() / y3.norm().max(1e-300);
        let dl = (l2 - l3).abs() / l3;
        worst_y = worst_y.max(dy);
        worst_l = worst_l.max(dl);
        if k % 5 == 0 || dy > 1e-8 {
            println!("k={:2} rel dy = {dy:e} rel dl = {dl:e}", k + 1);
        }
    }
    println!("worst: dy {worst_y:e} dl {worst_l:e} over {} its", ys2.len());
}

#[test]
#[ignore]
fn probe_subspace_identity() {
    let p = problems::smooth1d_problem(200, 0.15, 1)
        .unwrap()
        .with_l(pnkrylov::linop::identity_operator(200).unwrap())
        .unwrap();
    let pen = SmoothPenalty::quadratic();
    let cfg = PnConfig {
        stop_rule: StopRule::KktNorm,
        stop_tol: 0.0,
        max_iterations: 12,
        ..Default::default()
    };
    let mut driver = pnkrylov::pnewton::PnDriver::new(&p, &pen, &cfg).unwrap();
    for _ in 0..11 {
        match driver.step().unwrap() {
            pnkrylov::pnewton::Step::Advanced { .. } => {}
            pnkrylov::pnewton::Step::Halted(s) => panic!("halted {s:?}"),
        }
    }
    let v_pn: Vec<DVector<f64>> = driver.subspace().v_cols()[..10].to_vec();
    let ad = p.a.to_dense();
    let ata = ad.transpose() * &ad;
    let atb = ad.transpose() * &p.b;
    let v_lz = oracle::krylov_basis(&ata, &atb, 10);
    let s = oracle::max_principal_angle_sin(&v_pn, &v_lz);
    let s2 = oracle::max_principal_angle_sin(&v_lz, &v_pn);
    println!("principal angle sin = {s:e} / {s2:e}");

    // off-tridiagonal magnitude of VᵀAᵀAV
    let vm = pnkrylov::gksubspace::cols_to_matrix(&v_pn);
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
    println!("tridiag: max entry {max_entry:e}, max off {max_off:e}, ratio {:e}", max_off / max_entry);
}

#[test]
#[ignore]
fn probe_descent_identity() {
    // three penalties on 200×200 smooth1d
    let mk = || problems::smooth1d_problem(200, 0.1, 3).unwrap();
    let variants: Vec<(&str, SmoothPenalty, pnkrylov::problems::ProblemInstance)> = vec![
        (
            "quad L=I",
            SmoothPenalty::quadratic(),
            mk().with_l(pnkrylov::linop::identity_operator(200).unwrap()).unwrap(),
        ),
        ("quad L=fd1d", SmoothPenalty::quadratic(), mk()),
        (
            "l1 L=I",
            SmoothPenalty::lp_smooth(1.0, 1e-5).unwrap(),
            mk().with_l(pnkrylov::linop::identity_operator(200).unwrap()).unwrap(),
        ),
    ];
    for (name, pen, p) in variants {
        let cfg = PnConfig { max_iterations: 150, ..Default::default() };
        let mut worst = 0.0f64;
        let mut iters = 0;
        let out = solve_with_observer(&p, &pen, &cfg, |rec| {
            iters += 1;
            let grad = oracle::dense_merit_gradient(&p, &pen, &rec.x_prev, rec.lambda_prev).unwrap();
            let mut dir = DVector::zeros(201);
            dir.rows_mut(0, 200).copy_from(&rec.delta_x);
            dir[200] = rec.delta_lambda;
            let lhs = dir.dot(&grad);
            let f2 = rec.f_norm_prev * rec.f_norm_prev;
            let rel = (lhs + f2).abs() / f2;
            worst = worst.max(rel);
        })
        .unwrap();
        println!("{name}: iters {iters} status {:?} worst rel descent defect {worst:e}", out.status);
    }
}

#[test]
#[ignore]
fn probe_beta_ordering() {
    for bw in [0.01, 0.02, 0.03] {
        for density in [0.02, 0.05] {
            for seed in [42u64, 7] {
                let p = problems::spike_problem(200, density, bw, 0.1, seed, problems::SpikeDim::OneD).unwrap();
                let mut line = format!("bw {bw} density {density} seed {seed}: ");
                for beta in [1e-3, 1e-4, 1e-5, 1e-6] {
                    let pen = SmoothPenalty::lp_smooth(1.0, beta).unwrap();
                    let cfg = PnConfig { max_iterations: 250, ..Default::default() };
                    let out = solve_projected_newton(&p, &pen, &cfg).unwrap();
                    line.push_str(&format!("{:.4} ({:?}/{}) ", p.rel_error(&out.x), out.status, out.iterations));
                }
                // oracle l1 solution error at beta = 1e-6
                let pen = SmoothPenalty::lp_smooth(1.0, 1e-6).unwrap();
                match oracle::full_newton_solve(&p, &pen, 10.0, 1e-10) {
                    Ok((xo, _)) => line.push_str(&format!("| oracle {:.4}", p.rel_error(&xo))),
                    Err(e) => line.push_str(&format!("| oracle ERR {e}")),
                }
                println!("{line}");
            }
        }
    }
}

#[test]
#[ignore]
fn probe_tv_pipeline() {
    let p = problems::piecewise_problem(32, problems::PiecewiseKind::Blur2d, 0.1, 5).unwrap();
    let pen = SmoothPenalty::lp_smooth(1.0, 1e-5).unwrap();
    let cfg = PnConfig {
        stop_rule: StopRule::DiscrepancyMismatch,
        stop_tol: 1e-4 * p.sigma,
        max_iterations: 200,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let out = solve_projected_newton(&p, &pen, &cfg).unwrap();
    println!(
        "TV: status {:?} iters {} rel err {:e} elapsed {:?}",
        out.status,
        out.iterations,
        p.rel_error(&out.x),
        t0.elapsed()
    );
    // standard-form Tikhonov on the same instance
    let p_tik = problems::piecewise_problem(32, problems::PiecewiseKind::Blur2d, 0.1, 5)
        .unwrap()
        .with_l(pnkrylov::linop::identity_operator(1024).unwrap())
        .unwrap();
    let out_tik = solve_projected_newton(&p_tik, &SmoothPenalty::quadratic(), &cfg).unwrap();
    println!(
        "Tik: status {:?} iters {} rel err {:e}",
        out_tik.status,
        out_tik.iterations,
        p_tik.rel_error(&out_tik.x)
    );
}

#[test]
#[ignore]
fn probe_lambda0_robustness() {
    let p = problems::smooth1d_problem(64, 0.1, 21).unwrap();
    let pen = SmoothPenalty::lp_smooth(1.3, 1e-5).unwrap();
    let mut sols = vec![];
    for lambda0 in [1e3, 1e5, 1e7] {
        let cfg = PnConfig {
            lambda0,
            stop_rule: StopRule::KktNorm,
            stop_tol: 1e-10,
            max_iterations: 300,
            ..Default::default()
        };
        let out = solve_projected_newton(&p, &pen, &cfg).unwrap();
        println!("lambda0 {lambda0:e}: status {:?} iters {} lambda {:e}", out.status, out.iterations, out.lambda);
        sols.push(out.x);
    }
    for i in 0..3 {
        for j in i + 1..3 {
            let rel = (&sols[i] - &sols[j]).norm() / sols[j].norm();
            println!("pairwise {i}{j}: {rel:e}");
        }
    }
}
