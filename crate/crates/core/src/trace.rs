//! Per-iteration solver traces and their CSV serialization.
//!
//! All solvers emit the same row schema; the `method` column distinguishes
//! them. Floats are written with 17 significant digits so runs are exactly
//! reproducible from the files (the `elapsed_seconds` column is the one
//! intentionally non-deterministic field).

use std::io::Write;
use std::path::Path;

use crate::Result;

#[derive(Debug, Clone)]
pub struct TraceRow {
    pub method: &'static str,
    /// Iteration index (equals the subspace dimension used for the step).
    pub k: usize,
    /// `‖F(x_k, λ_k)‖`; for GKSpq the fixed-α weighted optimality residual.
    pub f_norm: f64,
    /// Lagrange multiplier; reference solvers record `1/α` here.
    pub lambda: f64,
    /// Accepted step length (NaN for solvers without a line search).
    pub gamma: f64,
    pub n_backtracks: u32,
    /// `‖Ax_k − b‖ − σ`.
    pub discrepancy_mismatch: f64,
    /// `|λ_k − λ_{k−1}|/|λ_{k−1}|`; NaN when undefined.
    pub rel_dlambda: f64,
    /// `‖x_k − x_{k−1}‖/‖x_{k−1}‖`; NaN when undefined (first iterate from 0).
    pub rel_dx: f64,
    /// `‖x_k − x_ex‖/‖x_ex‖`; NaN when the exact solution is unknown.
    pub rel_error: f64,
    pub matvec_a: u64,
    pub matvec_at: u64,
    pub matvec_l: u64,
    pub matvec_lt: u64,
    pub elapsed_seconds: f64,
}

pub const CSV_HEADER: &str = "method,k,F_norm,lambda,gamma,n_backtracks,discrepancy_mismatch,rel_dlambda,rel_dx,rel_error_vs_xex,matvec_A,matvec_At,matvec_L,matvec_Lt,elapsed_seconds";

/// 17-significant-digit float formatting; NaN prints as `nan`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{:.16e}", x)
    }
}

impl TraceRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.k,
            fmt_f64(self.f_norm),
            fmt_f64(self.lambda),
            fmt_f64(self.gamma),
            self.n_backtracks,
            fmt_f64(self.discrepancy_mismatch),
            fmt_f64(self.rel_dlambda),
            fmt_f64(self.rel_dx),
            fmt_f64(self.rel_error),
            self.matvec_a,
            self.matvec_at,
            self.matvec_l,
            self.matvec_lt,
            fmt_f64(self.elapsed_seconds)
        )
    }
}

pub fn write_trace_csv<P: AsRef<Path>>(path: P, rows: &[TraceRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(f, "{}", row.to_csv_line())?;
    }
    Ok(())
}
