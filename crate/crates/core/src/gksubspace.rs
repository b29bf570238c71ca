//! Generalized Krylov subspace state: orthonormal basis growth by modified
//! Gram–Schmidt, cached tall-skinny operator products, and incrementally
//! updated QR factorizations of `AV_k` (and `LV_k` in general-Tikhonov mode).

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::linop::LinearOperator;
use crate::rng::SplitMix64;
use crate::Result;

/// Threshold below which a column is treated as linearly dependent, relative
/// to its pre-orthogonalization norm.
const DEGENERATE_TOL: f64 = 1e-14;

/// Norm-drop trigger for a second orthogonalization pass.
const REORTH_TRIGGER: f64 = 0.7;

/// Seed for the deterministic replacement vector used when a QR column
/// degenerates exactly.
const QR_REPLACEMENT_SEED: u64 = 0x0051_5eed;

/// Incrementally updated reduced QR factorization of a tall-skinny matrix,
/// one appended column at a time. Also maintains the Gram matrix `RᵀR` by
/// the corresponding block update, and counts the multiply-accumulate work
/// spent in the factorization so reduced-dimension cost scaling can be
/// asserted structurally in tests.
pub struct IncrementalQr {
    m: usize,
    q: Vec<DVector<f64>>,
    /// Column j of R, entries `R[0..=j, j]`.
    r_cols: Vec<Vec<f64>>,
    /// Column j of RᵀR, entries `(RᵀR)[0..=j, j]` (upper triangle; mirrored on demand).
    rtr_cols: Vec<Vec<f64>>,
    rng: SplitMix64,
    work: u64,
}

impl IncrementalQr {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            q: Vec::new(),
            r_cols: Vec::new(),
            rtr_cols: Vec::new(),
            rng: SplitMix64::new(QR_REPLACEMENT_SEED),
            work: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.q.len()
    }

    /// Multiply-accumulate operations spent inside the factorization so far.
    pub fn work(&self) -> u64 {
        self.work
    }

    pub fn q_col(&self, j: usize) -> &DVector<f64> {
        &self.q[j]
    }

    pub fn q_cols(&self) -> &[DVector<f64>] {
        &self.q
    }

    pub fn r_entry(&self, i: usize, j: usize) -> f64 {
        if i <= j {
            self.r_cols[j][i]
        } else {
            0.0
        }
    }

    pub fn r_matrix(&self) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_fn(k, k, |i, j| self.r_entry(i, j))
    }

    /// `RᵀR`, exactly symmetric (upper triangle stored, mirrored here).
    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.k();
        let mut g = DMatrix::zeros(k, k);
        for j in 0..k {
            for i in 0..=j {
                g[(i, j)] = self.rtr_cols[j][i];
                g[(j, i)] = self.rtr_cols[j][i];
            }
        }
        g
    }

    /// Append one column. When the orthogonalized remainder vanishes
    /// (exact linear dependence) the new Q column is a deterministic random
    /// vector orthogonalized against the existing ones and `r_kk = 0`.
    pub fn push_column(&mut self, col: &DVector<f64>) {
        assert_eq!(col.len(), self.m, "qr column length mismatch");
        let k = self.q.len();
        let norm0 = col.norm();
        let mut r = vec![0.0; k + 1];
        let mut qn = col.clone();
        for j in 0..k {
            let c = self.q[j].dot(&qn);
            r[j] += c;
            qn.axpy(-c, &self.q[j], 1.0);
        }
        self.work += (4 * self.m * k) as u64;
        if k > 0 && qn.norm() < REORTH_TRIGGER * norm0 {
            for j in 0..k {
                let c = self.q[j].dot(&qn);
                r[j] += c;
                qn.axpy(-c, &self.q[j], 1.0);
            }
            self.work += (4 * self.m * k) as u64;
        }
        let nrm = qn.norm();
        if norm0 == 0.0 || nrm <= DEGENERATE_TOL * norm0 {
            r[k] = 0.0;
            let repl = self.replacement_column();
            self.q.push(repl);
        } else {
            r[k] = nrm;
            self.q.push(qn / nrm);
        }
        // RᵀR block update: new column is (R_{k-1}ᵀ r; rᵀr + r_kk²)
        let mut rtr_new = vec![0.0; k + 1];
        for i in 0..k {
            let ri = &self.r_cols[i];
            let mut acc = 0.0;
            for j in 0..=i {
                acc += ri[j] * r[j];
            }
            rtr_new[i] = acc;
        }
        rtr_new[k] = r.iter().map(|v| v * v).sum();
        self.work += ((k + 1) * (k + 2)) as u64;
        self.r_cols.push(r);
        self.rtr_cols.push(rtr_new);
    }

    fn replacement_column(&mut self) -> DVector<f64> {
        loop {
            let mut cand = DVector::from_fn(self.m, |_, _| self.rng.next_normal());
            for _ in 0..2 {
                for q in &self.q {
                    let c = q.dot(&cand);
                    cand.axpy(-c, q, 1.0);
                }
            }
            let cn = cand.norm();
            if cn > 1e-8 * (self.m as f64).sqrt() {
                return cand / cn;
            }
        }
    }
}

/// From-scratch two-pass modified Gram–Schmidt QR of a tall-skinny matrix
/// given by columns. Returns the upper-triangular factor and the
/// multiply-accumulate operation count.
pub fn mgs_qr_r(cols: &[DVector<f64>]) -> (DMatrix<f64>, u64) {
    let k = cols.len();
    let mut r = DMatrix::zeros(k, k);
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut work = 0u64;
    for (jc, col) in cols.iter().enumerate() {
        let m = col.len();
        let mut v = col.clone();
        for _pass in 0..2 {
            for (jq, qj) in q.iter().enumerate() {
                let c = qj.dot(&v);
                v.axpy(-c, qj, 1.0);
                r[(jq, jc)] += c;
            }
            work += (4 * m * jc) as u64;
        }
        let nrm = v.norm();
        r[(jc, jc)] = nrm;
        if nrm > 0.0 {
            q.push(v / nrm);
        } else {
            q.push(DVector::zeros(m));
        }
    }
    (r, work)
}

/// Which tall-skinny caches a subspace maintains. Each tracked cache costs
/// exactly one operator application per new basis vector during
/// [`GKSubspaceState::sync_caches`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubspaceMode {
    pub track_atav: bool,
    pub track_ltlv: bool,
    pub track_qr_l: bool,
}

impl SubspaceMode {
    /// Mode for the general-penalty projected Newton iteration: caches
    /// `AV`, `AᵀAV`, `LV` and the QR of `AV`.
    pub fn general_penalty() -> Self {
        Self { track_atav: true, track_ltlv: false, track_qr_l: false }
    }

    /// Mode for general-form Tikhonov solvers: additionally caches `LᵀLV`
    /// and the QR of `LV`.
    pub fn general_tikhonov() -> Self {
        Self { track_atav: true, track_ltlv: true, track_qr_l: true }
    }

    /// Mode for solvers that recompute their weighted QR from scratch:
    /// caches only `AV`, `LV` and the QR of `AV`.
    pub fn data_side_only() -> Self {
        Self { track_atav: false, track_ltlv: false, track_qr_l: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpandOutcome {
    Expanded,
    /// The candidate vector lies (numerically) in the span of the current
    /// basis; the subspace cannot grow. A termination signal, not an error.
    ConvergedSubspace,
}

/// Orthonormal basis `V_k` with cached products and QR factors.
pub struct GKSubspaceState {
    v: Vec<DVector<f64>>,
    av: Vec<DVector<f64>>,
    atav: Vec<DVector<f64>>,
    lv: Vec<DVector<f64>>,
    ltlv: Vec<DVector<f64>>,
    qr_a: IncrementalQr,
    qr_l: Option<IncrementalQr>,
    /// `‖Aᵀb‖`; the projected data vector is `d_k = ‖Aᵀb‖ e₁` by construction.
    d1: f64,
    /// `Aᵀb`, kept for the solvers' residual recurrences.
    vtilde0: DVector<f64>,
    mode: SubspaceMode,
}

impl GKSubspaceState {
    /// Start the basis from `v₀ = Aᵀb/‖Aᵀb‖`. Consumes exactly one adjoint
    /// application of `A`; the forward caches are filled by the first
    /// [`Self::sync_caches`] call.
    pub fn init(
        a: &LinearOperator,
        l: &LinearOperator,
        b: &DVector<f64>,
        mode: SubspaceMode,
        capacity_hint: usize,
    ) -> Result<Self> {
        if l.ncols() != a.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "A has {} columns but L has {}",
                a.ncols(),
                l.ncols()
            )));
        }
        let vtilde0 = a.apply_adjoint(b)?;
        let d1 = vtilde0.norm();
        if d1 < 1e-300 {
            return Err(Error::DegenerateProblem("Aᵀb = 0: data is orthogonal to range(A)".into()));
        }
        let cap = capacity_hint.min(a.ncols()) + 1;
        let mut v = Vec::with_capacity(cap);
        v.push(&vtilde0 / d1);
        Ok(Self {
            v,
            av: Vec::with_capacity(cap),
            atav: Vec::with_capacity(cap),
            lv: Vec::with_capacity(cap),
            ltlv: Vec::with_capacity(cap),
            qr_a: IncrementalQr::new(a.nrows()),
            qr_l: mode.track_qr_l.then(|| IncrementalQr::new(l.nrows())),
            d1,
            vtilde0,
            mode,
        })
    }

    /// Basis dimension `k`.
    pub fn k(&self) -> usize {
        self.v.len()
    }

    /// Number of basis vectors whose caches are current.
    pub fn synced(&self) -> usize {
        self.av.len()
    }

    pub fn d1(&self) -> f64 {
        self.d1
    }

    pub fn vtilde0(&self) -> &DVector<f64> {
        &self.vtilde0
    }

    pub fn v_cols(&self) -> &[DVector<f64>] {
        &self.v
    }

    pub fn av_cols(&self) -> &[DVector<f64>] {
        &self.av
    }

    pub fn atav_cols(&self) -> &[DVector<f64>] {
        &self.atav
    }

    pub fn lv_cols(&self) -> &[DVector<f64>] {
        &self.lv
    }

    pub fn ltlv_cols(&self) -> &[DVector<f64>] {
        &self.ltlv
    }

    pub fn qr_a(&self) -> &IncrementalQr {
        &self.qr_a
    }

    pub fn qr_l(&self) -> Option<&IncrementalQr> {
        self.qr_l.as_ref()
    }

    /// `d_k = V_kᵀAᵀb = ‖Aᵀb‖ e₁`, exact by construction of the basis.
    pub fn d_vector(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.k());
        d[0] = self.d1;
        d
    }

    pub fn v_matrix(&self) -> DMatrix<f64> {
        cols_to_matrix(&self.v)
    }

    /// Extend all tracked caches to cover every basis vector, consuming
    /// exactly one application of each tracked operator per new vector.
    pub fn sync_caches(&mut self, a: &LinearOperator, l: &LinearOperator) -> Result<()> {
        while self.av.len() < self.v.len() {
            let j = self.av.len();
            let av = a.apply(&self.v[j])?;
            if self.mode.track_atav {
                self.atav.push(a.apply_adjoint(&av)?);
            }
            let lv = l.apply(&self.v[j])?;
            if self.mode.track_ltlv {
                self.ltlv.push(l.apply_adjoint(&lv)?);
            }
            self.qr_a.push_column(&av);
            if let Some(qr_l) = self.qr_l.as_mut() {
                qr_l.push_column(&lv);
            }
            self.av.push(av);
            self.lv.push(lv);
        }
        Ok(())
    }

    /// Orthogonalize `v_tilde` against the basis (modified Gram–Schmidt, with
    /// a second pass when the norm drops by more than the trigger factor),
    /// normalize and append. Returns [`ExpandOutcome::ConvergedSubspace`]
    /// when the remainder vanishes, i.e. the candidate is already in the span.
    pub fn expand(&mut self, v_tilde: &DVector<f64>) -> Result<ExpandOutcome> {
        let n = self.v[0].len();
        if v_tilde.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expansion vector has length {}, basis vectors {}",
                v_tilde.len(),
                n
            )));
        }
        if !v_tilde.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("expansion vector must be finite".into()));
        }
        if self.v.len() >= n {
            return Ok(ExpandOutcome::ConvergedSubspace);
        }
        let norm0 = v_tilde.norm();
        if norm0 == 0.0 {
            return Ok(ExpandOutcome::ConvergedSubspace);
        }
        let mut w = v_tilde.clone();
        for q in &self.v {
            let c = q.dot(&w);
            w.axpy(-c, q, 1.0);
        }
        if w.norm() < REORTH_TRIGGER * norm0 {
            for q in &self.v {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let nrm = w.norm();
        if nrm <= DEGENERATE_TOL * norm0 {
            return Ok(ExpandOutcome::ConvergedSubspace);
        }
        self.v.push(w / nrm);
        Ok(ExpandOutcome::Expanded)
    }

    /// `max |VᵀV − I|`, for orthonormality checks.
    pub fn orthonormality_defect(&self) -> f64 {
        let k = self.k();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in i..k {
                let g = self.v[i].dot(&self.v[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }
}

/// Tall-skinny matrix-vector product `Σ_j y_j · cols[j]`.
pub fn combine(cols: &[DVector<f64>], y: &DVector<f64>) -> DVector<f64> {
    assert_eq!(cols.len(), y.len(), "combine: dimension mismatch");
    let n = cols.first().map_or(0, |c| c.len());
    let mut out = DVector::zeros(n);
    for (c, &yj) in cols.iter().zip(y.iter()) {
        out.axpy(yj, c, 1.0);
    }
    out
}

/// Inner products of every column with a vector: `colsᵀ x`.
pub fn project(cols: &[DVector<f64>], x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(cols.len(), cols.iter().map(|c| c.dot(x)))
}

pub fn cols_to_matrix(cols: &[DVector<f64>]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, |c| c.len());
    let mut m = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.column_mut(j).copy_from(c);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop;
    use crate::rng::SplitMix64;

    fn randn(n: usize, rng: &mut SplitMix64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.next_normal())
    }

    #[test]
    fn qr_single_column_is_trivial() {
        let mut qr = IncrementalQr::new(5);
        let c = DVector::from_vec(vec![3.0, 0.0, 4.0, 0.0, 0.0]);
        qr.push_column(&c);
        assert!((qr.r_entry(0, 0) - 5.0).abs() < 1e-15);
        assert!((qr.q_col(0) * 5.0 - c).amax() < 1e-15);
        assert!((qr.gram()[(0, 0)] - 25.0).abs() < 1e-12);
    }

    #[test]
    fn qr_matches_full_recomputation() {
        let mut rng = SplitMix64::new(2);
        let m = 40;
        let mut qr = IncrementalQr::new(m);
        let mut cols = Vec::new();
        for _ in 0..2 {
            let c = randn(m, &mut rng);
            qr.push_column(&c);
            cols.push(c);
        }
        let a = cols_to_matrix(&cols);
        let full = a.clone().qr();
        let r_full = full.r();
        // signs of QR factors are only defined up to a diagonal ±1
        for j in 0..2 {
            for i in 0..=j {
                assert!(
                    (qr.r_entry(i, j).abs() - r_full[(i, j)].abs()).abs() <= 1e-12,
                    "entry ({i},{j})"
                );
            }
        }
        // reconstruction Q R = A
        let k = qr.k();
        let qmat = cols_to_matrix(qr.q_cols());
        let recon = &qmat * qr.r_matrix();
        assert!((recon - &a).amax() <= 1e-12 * a.amax().max(1.0));
        let _ = k;
    }

    #[test]
    fn qr_duplicate_column_degenerates_gracefully() {
        let mut rng = SplitMix64::new(5);
        let c = randn(12, &mut rng);
        let mut qr = IncrementalQr::new(12);
        qr.push_column(&c);
        qr.push_column(&c);
        assert_eq!(qr.r_entry(1, 1), 0.0);
        // Q stays orthonormal
        let q0 = qr.q_col(0).clone();
        let q1 = qr.q_col(1).clone();
        assert!(q0.dot(&q1).abs() <= 1e-12);
        assert!((q1.norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn gram_matches_explicit_product() {
        let mut rng = SplitMix64::new(9);
        let m = 30;
        let mut qr = IncrementalQr::new(m);
        let mut cols = Vec::new();
        for _ in 0..5 {
            let c = randn(m, &mut rng);
            qr.push_column(&c);
            cols.push(c);
        }
        let a = cols_to_matrix(&cols);
        let explicit = a.transpose() * &a;
        let g = qr.gram();
        let scale = explicit.amax();
        assert!((&g - &explicit).amax() <= 1e-10 * scale);
        // exact symmetry by mirroring
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(g[(i, j)], g[(j, i)]);
            }
        }
    }

    #[test]
    fn init_normalizes_and_records_d1() {
        let a = linop::gaussian_blur_1d(20, 0.1).unwrap();
        let mut rng = SplitMix64::new(3);
        let b = randn(20, &mut rng);
        let s = GKSubspaceState::init(&a, &linop::identity_operator(20).unwrap(), &b, SubspaceMode::general_penalty(), 10).unwrap();
        let atb = a.to_dense().transpose() * &b;
        assert!((s.d1() - atb.norm()).abs() <= 1e-12 * atb.norm());
        assert!((s.v_cols()[0].norm() - 1.0).abs() <= 1e-14);
        assert_eq!(a.adjoint_count(), 1);
        assert_eq!(a.forward_count(), 0);
    }

    #[test]
    fn init_rejects_orthogonal_data() {
        // A maps everything into the first coordinate; b lives in the second.
        let m = crate::linop::DenseMatrix::new(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let a = linop::LinearOperator::from_dense(m);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let r = GKSubspaceState::init(&a, &linop::identity_operator(2).unwrap(), &b, SubspaceMode::general_penalty(), 4);
        assert!(matches!(r, Err(Error::DegenerateProblem(_))));
    }

    #[test]
    fn expand_detects_vectors_in_span() {
        let a = linop::gaussian_blur_1d(15, 0.1).unwrap();
        let l = linop::identity_operator(15).unwrap();
        let mut rng = SplitMix64::new(7);
        let b = randn(15, &mut rng);
        let mut s = GKSubspaceState::init(&a, &l, &b, SubspaceMode::general_penalty(), 8).unwrap();
        let v0 = s.v_cols()[0].clone();
        assert_eq!(s.expand(&(v0 * 2.5)).unwrap(), ExpandOutcome::ConvergedSubspace);
        assert_eq!(s.k(), 1);
    }

    #[test]
    fn expand_appends_orthogonal_vectors_unchanged() {
        let a = linop::identity_operator(6).unwrap();
        let l = linop::identity_operator(6).unwrap();
        let b = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut s = GKSubspaceState::init(&a, &l, &b, SubspaceMode::general_penalty(), 4).unwrap();
        let mut cand = DVector::zeros(6);
        cand[3] = -2.0;
        assert_eq!(s.expand(&cand).unwrap(), ExpandOutcome::Expanded);
        let v1 = &s.v_cols()[1];
        assert!((v1[3].abs() - 1.0).abs() <= 1e-15);
        assert!((v1.norm() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn basis_stays_orthonormal_under_many_expansions() {
        let n = 40;
        let a = linop::gaussian_blur_1d(n, 0.08).unwrap();
        let l = linop::fd1d(n).unwrap();
        let mut rng = SplitMix64::new(13);
        let b = randn(n, &mut rng);
        let mut s = GKSubspaceState::init(&a, &l, &b, SubspaceMode::general_tikhonov(), 30).unwrap();
        for _ in 0..25 {
            s.sync_caches(&a, &l).unwrap();
            // deliberately feed nearly-dependent candidates to stress MGS
            let mut cand = s.atav_cols().last().unwrap().clone();
            cand.axpy(1e-6, &randn(n, &mut rng), 1.0);
            if s.expand(&cand).unwrap() == ExpandOutcome::ConvergedSubspace {
                break;
            }
        }
        assert!(s.orthonormality_defect() <= 1e-10, "defect {:e}", s.orthonormality_defect());
    }

    #[test]
    fn sync_consumes_exactly_one_application_per_operator() {
        let n = 25;
        let a = linop::gaussian_blur_1d(n, 0.1).unwrap();
        let l = linop::fd1d(n).unwrap();
        let mut rng = SplitMix64::new(4);
        let b = randn(n, &mut rng);
        let mut s = GKSubspaceState::init(&a, &l, &b, SubspaceMode::general_tikhonov(), 10).unwrap();
        a.reset_counters();
        l.reset_counters();
        s.sync_caches(&a, &l).unwrap();
        assert_eq!(
            (a.forward_count(), a.adjoint_count(), l.forward_count(), l.adjoint_count()),
            (1, 1, 1, 1)
        );
        let cand = randn(n, &mut rng);
        s.expand(&cand).unwrap();
        s.sync_caches(&a, &l).unwrap();
        assert_eq!(
            (a.forward_count(), a.adjoint_count(), l.forward_count(), l.adjoint_count()),
            (2, 2, 2, 2)
        );
        // caches really hold A·v, AᵀA·v, L·v, LᵀL·v
        let ad = a.to_dense();
        let ld = l.to_dense();
        for j in 0..s.synced() {
            let vj = &s.v_cols()[j];
            assert!((&ad * vj - &s.av_cols()[j]).amax() <= 1e-12);
            assert!((ad.transpose() * (&ad * vj) - &s.atav_cols()[j]).amax() <= 1e-12);
            assert!((&ld * vj - &s.lv_cols()[j]).amax() <= 1e-12);
            assert!((ld.transpose() * (&ld * vj) - &s.ltlv_cols()[j]).amax() <= 1e-12);
        }
    }

    #[test]
    fn from_scratch_qr_agrees_with_incremental_on_independent_columns() {
        let mut rng = SplitMix64::new(31);
        let cols: Vec<DVector<f64>> = (0..4).map(|_| randn(20, &mut rng)).collect();
        let mut inc = IncrementalQr::new(20);
        for c in &cols {
            inc.push_column(c);
        }
        let (r, work) = mgs_qr_r(&cols);
        assert!(work > 0);
        for j in 0..4 {
            for i in 0..=j {
                assert!((r[(i, j)].abs() - inc.r_entry(i, j).abs()).abs() <= 1e-10);
            }
        }
    }
}
