//! Matrix-free linear operators with matvec instrumentation.
//!
//! Every operator counts its forward and adjoint applications so that the
//! per-iteration matvec budgets of the solvers can be verified exactly.
//! Counters are atomic; the operator itself is immutable after construction
//! and safe to share across threads.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::Result;

/// Dense row-major matrix storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    /// Row-major entries, `data[i * ncols + j]`.
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::InvalidDimension(format!(
                "dense matrix {nrows}x{ncols} needs {} entries, got {}",
                nrows * ncols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dense matrix entries must be finite".into()));
        }
        Ok(Self { nrows, ncols, data })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self::new(m.nrows(), m.ncols(), data)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.nrows, self.ncols, &self.data)
    }

    fn matvec(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        for i in 0..self.nrows {
            let row = &self.data[i * self.ncols..(i + 1) * self.ncols];
            let mut acc = 0.0;
            for (a, xi) in row.iter().zip(x.iter()) {
                acc += a * xi;
            }
            out[i] = acc;
        }
    }

    fn rmatvec(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
        for i in 0..self.nrows {
            let row = &self.data[i * self.ncols..(i + 1) * self.ncols];
            let yi = y[i];
            for (o, a) in out.iter_mut().zip(row.iter()) {
                *o += a * yi;
            }
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCsr {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCsr {
    pub fn new(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != nrows + 1 || row_offsets[0] != 0 {
            return Err(Error::InvalidDimension("csr: row offsets malformed".into()));
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidInput("csr: row offsets must be non-decreasing".into()));
        }
        if *row_offsets.last().unwrap() != values.len() || col_indices.len() != values.len() {
            return Err(Error::InvalidDimension("csr: index/value length mismatch".into()));
        }
        for r in 0..nrows {
            let cols = &col_indices[row_offsets[r]..row_offsets[r + 1]];
            if cols.iter().any(|&c| c >= ncols) {
                return Err(Error::InvalidInput("csr: column index out of range".into()));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidInput("csr: column indices must be sorted per row".into()));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("csr: values must be finite".into()));
        }
        Ok(Self { nrows, ncols, row_offsets, col_indices, values })
    }

    /// Build from (row, col, value) triplets; duplicate entries are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::InvalidInput(format!("triplet ({i},{j}) out of range")));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(i, j, _)| (i, j));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for (i, j, v) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        let mut row_offsets = vec![0usize; nrows + 1];
        for &(i, _, _) in &merged {
            row_offsets[i + 1] += 1;
        }
        for r in 0..nrows {
            row_offsets[r + 1] += row_offsets[r];
        }
        let col_indices = merged.iter().map(|t| t.1).collect();
        let values = merged.iter().map(|t| t.2).collect();
        Self::new(nrows, ncols, row_offsets, col_indices, values)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                out.push((i, self.col_indices[k], self.values[k]));
            }
        }
        out
    }

    fn matvec(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            out[i] = acc;
        }
    }

    fn rmatvec(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
        for i in 0..self.nrows {
            let yi = y[i];
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                out[self.col_indices[k]] += self.values[k] * yi;
            }
        }
    }
}

/// The concrete realization behind a [`LinearOperator`].
#[derive(Debug, Clone)]
enum Kernel {
    Dense(DenseMatrix),
    Sparse(SparseCsr),
    Identity,
    /// Forward difference, (n−1)×n, row i maps x to `x_i − x_{i+1}`.
    Fd1d,
    /// Stacked 2-D differences `[D ⊗ I_N; I_N ⊗ D]` on column-stacked N×N images.
    Tv2d { n_img: usize },
    /// Separable blur `B ⊗ B` applied as `vec(B X Bᵀ)`.
    Blur2d { b: DenseMatrix },
}

/// A linear map with instrumented forward and adjoint applications.
pub struct LinearOperator {
    nrows: usize,
    ncols: usize,
    kernel: Kernel,
    forward_count: AtomicU64,
    adjoint_count: AtomicU64,
}

impl std::fmt::Debug for LinearOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearOperator")
            .field("nrows", &self.nrows)
            .field("ncols", &self.ncols)
            .field("kernel", &kernel_name(&self.kernel))
            .field("forward_count", &self.forward_count())
            .field("adjoint_count", &self.adjoint_count())
            .finish()
    }
}

fn kernel_name(k: &Kernel) -> &'static str {
    match k {
        Kernel::Dense(_) => "dense",
        Kernel::Sparse(_) => "sparse-csr",
        Kernel::Identity => "identity",
        Kernel::Fd1d => "fd1d",
        Kernel::Tv2d { .. } => "tv2d",
        Kernel::Blur2d { .. } => "blur2d",
    }
}

/// Clones share the kernel but start with fresh zero counters; counters are
/// per-instance instrumentation, not part of the operator's value.
impl Clone for LinearOperator {
    fn clone(&self) -> Self {
        Self {
            nrows: self.nrows,
            ncols: self.ncols,
            kernel: self.kernel.clone(),
            forward_count: AtomicU64::new(0),
            adjoint_count: AtomicU64::new(0),
        }
    }
}

impl LinearOperator {
    fn from_kernel(nrows: usize, ncols: usize, kernel: Kernel) -> Self {
        Self {
            nrows,
            ncols,
            kernel,
            forward_count: AtomicU64::new(0),
            adjoint_count: AtomicU64::new(0),
        }
    }

    pub fn from_dense(m: DenseMatrix) -> Self {
        let (r, c) = (m.nrows(), m.ncols());
        Self::from_kernel(r, c, Kernel::Dense(m))
    }

    pub fn from_sparse(m: SparseCsr) -> Self {
        let (r, c) = (m.nrows, m.ncols);
        Self::from_kernel(r, c, Kernel::Sparse(m))
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn forward_count(&self) -> u64 {
        self.forward_count.load(Ordering::Relaxed)
    }

    pub fn adjoint_count(&self) -> u64 {
        self.adjoint_count.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.forward_count.store(0, Ordering::Relaxed);
        self.adjoint_count.store(0, Ordering::Relaxed);
    }

    /// Forward application `A x`. Increments the forward counter by one.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.ncols {
            return Err(Error::ShapeMismatch(format!(
                "apply: operator is {}x{}, vector has length {}",
                self.nrows,
                self.ncols,
                x.len()
            )));
        }
        self.forward_count.fetch_add(1, Ordering::Relaxed);
        Ok(self.apply_raw(x))
    }

    /// Adjoint application `Aᵀ y`. Increments the adjoint counter by one.
    pub fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.nrows {
            return Err(Error::ShapeMismatch(format!(
                "apply_adjoint: operator is {}x{}, vector has length {}",
                self.nrows,
                self.ncols,
                y.len()
            )));
        }
        self.adjoint_count.fetch_add(1, Ordering::Relaxed);
        Ok(self.apply_adjoint_raw(y))
    }

    fn apply_raw(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows);
        match &self.kernel {
            Kernel::Dense(m) => m.matvec(x, &mut out),
            Kernel::Sparse(m) => m.matvec(x, &mut out),
            Kernel::Identity => out.copy_from(x),
            Kernel::Fd1d => {
                for i in 0..self.nrows {
                    out[i] = x[i] - x[i + 1];
                }
            }
            Kernel::Tv2d { n_img } => tv2d_forward(*n_img, x, &mut out),
            Kernel::Blur2d { b } => kron2_forward(b, x, &mut out, false),
        }
        out
    }

    fn apply_adjoint_raw(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        match &self.kernel {
            Kernel::Dense(m) => m.rmatvec(y, &mut out),
            Kernel::Sparse(m) => m.rmatvec(y, &mut out),
            Kernel::Identity => out.copy_from(y),
            Kernel::Fd1d => {
                // Dᵀ: column j of D has +1 at row j (j<nrows) and −1 at row j−1.
                for i in 0..self.nrows {
                    out[i] += y[i];
                    out[i + 1] -= y[i];
                }
            }
            Kernel::Tv2d { n_img } => tv2d_adjoint(*n_img, y, &mut out),
            Kernel::Blur2d { b } => kron2_forward(b, y, &mut out, true),
        }
        out
    }

    /// Materialize the operator as a dense matrix by applying it to the
    /// canonical basis. Does not touch the instrumentation counters.
    pub fn to_dense(&self) -> DMatrix<f64> {
        if let Kernel::Dense(m) = &self.kernel {
            return m.to_dmatrix();
        }
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        let mut e = DVector::zeros(self.ncols);
        for j in 0..self.ncols {
            e[j] = 1.0;
            let col = self.apply_raw(&e);
            out.column_mut(j).copy_from(&col);
            e[j] = 0.0;
        }
        out
    }
}

/// `vec(B X Bᵀ)` on column-stacked N×N images; with `adjoint` the factor is
/// transposed, giving `vec(Bᵀ X B)`.
fn kron2_forward(b: &DenseMatrix, x: &DVector<f64>, out: &mut DVector<f64>, adjoint: bool) {
    let n = b.nrows();
    debug_assert_eq!(x.len(), n * n);
    // y = B X (or Bᵀ X)
    let mut tmp = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                let bik = if adjoint { b.get(k, i) } else { b.get(i, k) };
                acc += bik * x[k + j * n];
            }
            tmp[i + j * n] = acc;
        }
    }
    // out = Y Bᵀ (or Y B), i.e. out[:, j] = Σ_k Y[:, k] B[j, k]
    for j in 0..n {
        for i in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                let bjk = if adjoint { b.get(k, j) } else { b.get(j, k) };
                acc += tmp[i + k * n] * bjk;
            }
            out[i + j * n] = acc;
        }
    }
}

fn tv2d_forward(n: usize, x: &DVector<f64>, out: &mut DVector<f64>) {
    // horizontal block (D ⊗ I_N) = vec(X Dᵀ): entries X[i,j] − X[i,j+1]
    let h = n * (n - 1);
    for j in 0..n - 1 {
        for i in 0..n {
            out[i + j * n] = x[i + j * n] - x[i + (j + 1) * n];
        }
    }
    // vertical block (I_N ⊗ D) = vec(D X): entries X[i,j] − X[i+1,j]
    for j in 0..n {
        for i in 0..n - 1 {
            out[h + i + j * (n - 1)] = x[i + j * n] - x[i + 1 + j * n];
        }
    }
}

fn tv2d_adjoint(n: usize, y: &DVector<f64>, out: &mut DVector<f64>) {
    let h = n * (n - 1);
    // (D ⊗ I_N)ᵀ u = vec(U D) with U the N×(N−1) horizontal-difference image
    for j in 0..n - 1 {
        for i in 0..n {
            let u = y[i + j * n];
            out[i + j * n] += u;
            out[i + (j + 1) * n] -= u;
        }
    }
    // (I_N ⊗ D)ᵀ w = vec(Dᵀ W) with W the (N−1)×N vertical-difference image
    for j in 0..n {
        for i in 0..n - 1 {
            let w = y[h + i + j * (n - 1)];
            out[i + j * n] += w;
            out[i + 1 + j * n] -= w;
        }
    }
}

/// Forward finite-difference operator of shape (n−1)×n; row i maps x to
/// `x_i − x_{i+1}`.
pub fn fd1d(n: usize) -> Result<LinearOperator> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!("fd1d requires n >= 2, got {n}")));
    }
    Ok(LinearOperator::from_kernel(n - 1, n, Kernel::Fd1d))
}

/// Anisotropic total-variation stack `[D ⊗ I_N; I_N ⊗ D]` of shape
/// (2N²−2N)×N² acting on column-stacked N×N images.
pub fn tv2d_operator(n_img: usize) -> Result<LinearOperator> {
    if n_img < 2 {
        return Err(Error::InvalidDimension(format!("tv2d requires N >= 2, got {n_img}")));
    }
    let n = n_img * n_img;
    Ok(LinearOperator::from_kernel(2 * n - 2 * n_img, n, Kernel::Tv2d { n_img }))
}

pub fn identity_operator(n: usize) -> Result<LinearOperator> {
    if n < 1 {
        return Err(Error::InvalidDimension("identity requires n >= 1".into()));
    }
    Ok(LinearOperator::from_kernel(n, n, Kernel::Identity))
}

/// Dense n×n Gaussian convolution matrix, `a_ij ∝ exp(−((i−j)/(bandwidth·n))²)`,
/// each row rescaled to sum to one. Severely ill-conditioned for wide kernels.
pub fn gaussian_blur_1d(n: usize, bandwidth: f64) -> Result<LinearOperator> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!("gaussian_blur_1d requires n >= 2, got {n}")));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gaussian_blur_1d requires bandwidth > 0, got {bandwidth}"
        )));
    }
    Ok(LinearOperator::from_dense(blur_factor(n, bandwidth)))
}

fn blur_factor(n: usize, bandwidth: f64) -> DenseMatrix {
    let w = bandwidth * n as f64;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            let d = (i as f64 - j as f64) / w;
            let v = (-d * d).exp();
            data[i * n + j] = v;
            sum += v;
        }
        for j in 0..n {
            data[i * n + j] /= sum;
        }
    }
    DenseMatrix::new(n, n, data).expect("blur factor entries are finite")
}

/// Separable 2-D blur `B ⊗ B` with `B = gaussian_blur_1d(N, bandwidth)`,
/// applied matrix-free to column-stacked N×N images.
pub fn gaussian_blur_2d(n_img: usize, bandwidth: f64) -> Result<LinearOperator> {
    if n_img < 2 {
        return Err(Error::InvalidDimension(format!(
            "gaussian_blur_2d requires N >= 2, got {n_img}"
        )));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gaussian_blur_2d requires bandwidth > 0, got {bandwidth}"
        )));
    }
    let b = blur_factor(n_img, bandwidth);
    let n = n_img * n_img;
    Ok(LinearOperator::from_kernel(n, n, Kernel::Blur2d { b }))
}

// ---------------------------------------------------------------------------
// MatrixMarket coordinate I/O
// ---------------------------------------------------------------------------

/// Write a matrix in MatrixMarket coordinate format (1-based indices).
/// Dense matrices are written entry by entry; exact zeros are skipped.
pub fn write_matrix_market<P: AsRef<Path>>(path: P, triplets: &[(usize, usize, f64)], nrows: usize, ncols: usize) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(f, "{} {} {}", nrows, ncols, triplets.len())?;
    for &(i, j, v) in triplets {
        writeln!(f, "{} {} {:.17e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

pub fn write_matrix_market_dense<P: AsRef<Path>>(path: P, m: &DMatrix<f64>) -> Result<()> {
    let mut trips = Vec::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)] != 0.0 {
                trips.push((i, j, m[(i, j)]));
            }
        }
    }
    write_matrix_market(path, &trips, m.nrows(), m.ncols())
}

/// Read a MatrixMarket coordinate file into a sparse CSR matrix. Supports
/// `real general` and `real symmetric` headers.
pub fn read_matrix_market<P: AsRef<Path>>(path: P) -> Result<SparseCsr> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("matrix market: empty file".into()))?;
    let head_lower = header.to_ascii_lowercase();
    if !head_lower.starts_with("%%matrixmarket matrix coordinate real") {
        return Err(Error::Parse(format!("matrix market: unsupported header '{header}'")));
    }
    let symmetric = head_lower.contains("symmetric");
    let mut size_line = None;
    for line in lines.by_ref() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        size_line = Some(line.to_string());
        break;
    }
    let size_line = size_line.ok_or_else(|| Error::Parse("matrix market: missing size line".into()))?;
    let dims: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("matrix market: {e}"))))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(Error::Parse("matrix market: size line needs 3 fields".into()));
    }
    let (nrows, ncols, nnz) = (dims[0], dims[1], dims[2]);
    let mut trips = Vec::with_capacity(nnz);
    for line in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let mut it = line.split_whitespace();
        let i: usize = it
            .next()
            .ok_or_else(|| Error::Parse("matrix market: short entry line".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("matrix market: {e}")))?;
        let j: usize = it
            .next()
            .ok_or_else(|| Error::Parse("matrix market: short entry line".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("matrix market: {e}")))?;
        let v: f64 = it
            .next()
            .ok_or_else(|| Error::Parse("matrix market: short entry line".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("matrix market: {e}")))?;
        if i == 0 || j == 0 || i > nrows || j > ncols {
            return Err(Error::Parse(format!("matrix market: index ({i},{j}) out of range")));
        }
        trips.push((i - 1, j - 1, v));
        if symmetric && i != j {
            trips.push((j - 1, i - 1, v));
        }
    }
    SparseCsr::from_triplets(nrows, ncols, &trips)
}
