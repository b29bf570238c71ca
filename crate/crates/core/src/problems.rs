//! Deterministic test-problem generation.
//!
//! Every generator produces a [`ProblemInstance`] with an exact solution,
//! seeded Gaussian noise scaled to a prescribed relative level, and the
//! discrepancy target `σ = η‖e‖`. Generation is bit-deterministic for a
//! fixed parameter set and seed; see [`crate::rng`] for the stream spec.

use std::path::Path;

use nalgebra::DVector;

use crate::error::Error;
use crate::linop::{self, LinearOperator};
use crate::rng::{mix64, SplitMix64};
use crate::Result;

/// Domain tags for deriving independent sub-streams from one user seed.
const TAG_POSITIONS: u64 = 0x706f_7369_7469_6f6e; // "position"
const TAG_NOISE: u64 = 0x6e6f_6973_6500_0000; // "noise"

/// What kind of instance this is, with the parameters needed to rebuild its
/// operators. Serialized to the metadata file.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    Spike1d { n: usize, density: f64, bandwidth: f64 },
    Spike2d { n_img: usize, density: f64, bandwidth: f64 },
    Piecewise { n_img: usize, bandwidth: f64 },
    Smooth1d { n: usize },
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Spike1d { .. } => "spike1d",
            ProblemKind::Spike2d { .. } => "spike2d",
            ProblemKind::Piecewise { .. } => "piecewise",
            ProblemKind::Smooth1d { .. } => "smooth1d",
        }
    }
}

/// A generated inverse-problem instance.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub a: LinearOperator,
    pub l: LinearOperator,
    /// Noisy data `b = b_ex + e`.
    pub b: DVector<f64>,
    pub b_ex: DVector<f64>,
    pub x_ex: DVector<f64>,
    /// Discrepancy target `σ = η‖e‖`.
    pub sigma: f64,
    /// Safety factor `η ≥ 1`.
    pub eta: f64,
    /// Relative noise level `‖e‖/‖b_ex‖`.
    pub noise_level: f64,
    pub seed: u64,
    pub kind: ProblemKind,
}

impl ProblemInstance {
    fn assemble(
        a: LinearOperator,
        l: LinearOperator,
        x_ex: DVector<f64>,
        level: f64,
        seed: u64,
        kind: ProblemKind,
    ) -> Result<Self> {
        let b_ex = a.apply(&x_ex)?;
        let e = make_noise(&b_ex, level, mix64(seed ^ TAG_NOISE))?;
        let b = &b_ex + &e;
        let eta = 1.0;
        let sigma = eta * e.norm();
        a.reset_counters();
        let inst = Self { a, l, b, b_ex, x_ex, sigma, eta, noise_level: level, seed, kind };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        if self.b.norm() <= self.sigma {
            return Err(Error::DegenerateProblem(format!(
                "noise dominates the data: ‖b‖ = {} ≤ σ = {}",
                self.b.norm(),
                self.sigma
            )));
        }
        Ok(())
    }

    /// Same instance with a different safety factor `η`; recomputes `σ = η‖e‖`.
    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        if !(eta >= 1.0) {
            return Err(Error::InvalidParameter(format!("eta must be >= 1, got {eta}")));
        }
        self.eta = eta;
        self.sigma = eta * (&self.b - &self.b_ex).norm();
        self.validate()?;
        Ok(self)
    }

    /// Same instance with the regularization operator replaced (e.g. the
    /// identity for standard-form Tikhonov). Dimensions must conform.
    pub fn with_l(mut self, l: LinearOperator) -> Result<Self> {
        if l.ncols() != self.a.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "replacement L has {} columns, operator A has {}",
                l.ncols(),
                self.a.ncols()
            )));
        }
        self.l = l;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    /// Relative reconstruction error `‖x − x_ex‖/‖x_ex‖`.
    pub fn rel_error(&self, x: &DVector<f64>) -> f64 {
        (x - &self.x_ex).norm() / self.x_ex.norm()
    }
}

/// Seeded Gaussian noise rescaled so that `‖e‖ = level·‖b_ex‖` exactly.
pub fn make_noise(b_ex: &DVector<f64>, level: f64, seed: u64) -> Result<DVector<f64>> {
    if level < 0.0 {
        return Err(Error::InvalidParameter(format!("noise level must be >= 0, got {level}")));
    }
    if level == 0.0 {
        return Ok(DVector::zeros(b_ex.len()));
    }
    if b_ex.norm() == 0.0 {
        return Err(Error::InvalidInput("cannot scale noise relative to zero data".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut e = DVector::from_fn(b_ex.len(), |_, _| rng.next_normal());
    let scale = level * b_ex.norm() / e.norm();
    e *= scale;
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpikeDim {
    OneD,
    TwoD,
}

/// Sparse-spike deconvolution instance: `⌈density·n⌉` unit spikes at seeded
/// random positions, Gaussian blur forward operator, `L = I`.
///
/// For [`SpikeDim::TwoD`], `n` is the total pixel count and must be a perfect
/// square; the blur is the separable 2-D kernel on the N×N image.
pub fn spike_problem(
    n: usize,
    density: f64,
    blur_bandwidth: f64,
    level: f64,
    seed: u64,
    dim: SpikeDim,
) -> Result<ProblemInstance> {
    if !(density > 0.0 && density < 1.0) {
        return Err(Error::InvalidParameter(format!("density must be in (0,1), got {density}")));
    }
    let (a, kind) = match dim {
        SpikeDim::OneD => (
            linop::gaussian_blur_1d(n, blur_bandwidth)?,
            ProblemKind::Spike1d { n, density, bandwidth: blur_bandwidth },
        ),
        SpikeDim::TwoD => {
            let n_img = (n as f64).sqrt().round() as usize;
            if n_img * n_img != n {
                return Err(Error::InvalidParameter(format!(
                    "2-D spike problem needs a square pixel count, got {n}"
                )));
            }
            (
                linop::gaussian_blur_2d(n_img, blur_bandwidth)?,
                ProblemKind::Spike2d { n_img, density, bandwidth: blur_bandwidth },
            )
        }
    };
    let k = (density * n as f64).ceil() as usize;
    let mut rng = SplitMix64::new(mix64(seed ^ TAG_POSITIONS));
    // partial Fisher-Yates: the first k entries of a seeded permutation
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.next_below((n - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut x_ex = DVector::zeros(n);
    for &p in &idx[..k] {
        x_ex[p] = 1.0;
    }
    let l = linop::identity_operator(n)?;
    ProblemInstance::assemble(a, l, x_ex, level, seed, kind)
}

/// How a piecewise-constant 2-D instance is blurred. Single variant today;
/// kept as an enum so the metadata format names the forward model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiecewiseKind {
    Blur2d,
}

const PIECEWISE_BANDWIDTH: f64 = 0.05;

/// Piecewise-constant image (three nested axis-aligned rectangles with values
/// 0, 0.5, 1) blurred by the separable Gaussian kernel, with anisotropic
/// total-variation regularization `L = tv2d_operator(N)`.
pub fn piecewise_problem(n_img: usize, _kind: PiecewiseKind, level: f64, seed: u64) -> Result<ProblemInstance> {
    if n_img < 8 {
        return Err(Error::InvalidParameter(format!("piecewise problem needs N >= 8, got {n_img}")));
    }
    let n = n_img * n_img;
    let mut x_ex = DVector::zeros(n);
    let set_rect = |x: &mut DVector<f64>, lo: usize, hi: usize, v: f64| {
        for j in lo..hi {
            for i in lo..hi {
                x[i + j * n_img] = v;
            }
        }
    };
    set_rect(&mut x_ex, n_img / 4, (3 * n_img) / 4, 0.5);
    set_rect(&mut x_ex, (3 * n_img) / 8, (5 * n_img) / 8, 1.0);
    let a = linop::gaussian_blur_2d(n_img, PIECEWISE_BANDWIDTH)?;
    let l = linop::tv2d_operator(n_img)?;
    ProblemInstance::assemble(a, l, x_ex, level, seed, ProblemKind::Piecewise { n_img, bandwidth: PIECEWISE_BANDWIDTH })
}

/// Smooth 1-D deconvolution instance: `x_ex(t) = sin(πt)·exp(−t)` sampled
/// uniformly on `[0, 2]`, Gaussian blur forward operator, `L = fd1d(n)`.
pub fn smooth1d_problem(n: usize, level: f64, seed: u64) -> Result<ProblemInstance> {
    if n < 16 {
        return Err(Error::InvalidDimension(format!("smooth1d problem needs n >= 16, got {n}")));
    }
    let x_ex = DVector::from_fn(n, |i, _| {
        let t = 2.0 * i as f64 / (n - 1) as f64;
        (std::f64::consts::PI * t).sin() * (-t).exp()
    });
    let a = linop::gaussian_blur_1d(n, 0.05)?;
    let l = linop::fd1d(n)?;
    ProblemInstance::assemble(a, l, x_ex, level, seed, ProblemKind::Smooth1d { n })
}

// ---------------------------------------------------------------------------
// Directory serialization
// ---------------------------------------------------------------------------

/// Write a vector as flat little-endian 64-bit floats.
pub fn write_vector<P: AsRef<Path>>(path: P, v: &DVector<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(v.len() * 8);
    for x in v.iter() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Read a vector written by [`write_vector`].
pub fn read_vector<P: AsRef<Path>>(path: P) -> Result<DVector<f64>> {
    let bytes = std::fs::read(&path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse(format!(
            "{}: length {} is not a multiple of 8",
            path.as_ref().display(),
            bytes.len()
        )));
    }
    Ok(DVector::from_iterator(
        bytes.len() / 8,
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())),
    ))
}

impl ProblemInstance {
    /// Serialize to a directory: flat little-endian `f64` vectors plus a
    /// `meta.toml` with the generation parameters. With `with_operators`,
    /// also writes assembled `A` and `L` in MatrixMarket coordinate format.
    pub fn save_dir<P: AsRef<Path>>(&self, dir: P, with_operators: bool) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_vector(dir.join("b.f64"), &self.b)?;
        write_vector(dir.join("b_ex.f64"), &self.b_ex)?;
        write_vector(dir.join("x_ex.f64"), &self.x_ex)?;
        let mut meta = String::new();
        meta.push_str(&format!("kind = \"{}\"\n", self.kind.name()));
        match &self.kind {
            ProblemKind::Spike1d { n, density, bandwidth } => {
                meta.push_str(&format!("n = {n}\ndensity = {density:e}\nbandwidth = {bandwidth:e}\n"));
            }
            ProblemKind::Spike2d { n_img, density, bandwidth } => {
                meta.push_str(&format!("N = {n_img}\ndensity = {density:e}\nbandwidth = {bandwidth:e}\n"));
            }
            ProblemKind::Piecewise { n_img, bandwidth } => {
                meta.push_str(&format!("N = {n_img}\nbandwidth = {bandwidth:e}\n"));
            }
            ProblemKind::Smooth1d { n } => {
                meta.push_str(&format!("n = {n}\n"));
            }
        }
        meta.push_str(&format!("level = {:e}\n", self.noise_level));
        meta.push_str(&format!("seed = {}\n", self.seed));
        meta.push_str(&format!("eta = {:e}\n", self.eta));
        meta.push_str(&format!("sigma = {:.17e}\n", self.sigma));
        std::fs::write(dir.join("meta.toml"), meta)?;
        if with_operators {
            let a = self.a.to_dense();
            let l = self.l.to_dense();
            linop::write_matrix_market_dense(dir.join("A.mtx"), &a)?;
            linop::write_matrix_market_dense(dir.join("L.mtx"), &l)?;
        }
        Ok(())
    }

    /// Reconstruct an instance from a directory written by [`Self::save_dir`].
    /// Operators are rebuilt from the metadata parameters; vectors are read
    /// back bit-exactly.
    pub fn load_dir<P: AsRef<Path>>(dir: P) -> Result<Self> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("meta.toml"))?;
        let meta: toml::Table = text.parse().map_err(|e| Error::Parse(format!("meta.toml: {e}")))?;
        let get_f = |k: &str| -> Result<f64> {
            meta.get(k)
                .and_then(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
                .ok_or_else(|| Error::Parse(format!("meta.toml: missing float key '{k}'")))
        };
        let get_u = |k: &str| -> Result<usize> {
            meta.get(k)
                .and_then(|v| v.as_integer())
                .map(|i| i as usize)
                .ok_or_else(|| Error::Parse(format!("meta.toml: missing integer key '{k}'")))
        };
        let kind_name = meta
            .get("kind")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Parse("meta.toml: missing 'kind'".into()))?;
        let (a, l, kind) = match kind_name {
            "spike1d" => {
                let (n, density, bandwidth) = (get_u("n")?, get_f("density")?, get_f("bandwidth")?);
                (
                    linop::gaussian_blur_1d(n, bandwidth)?,
                    linop::identity_operator(n)?,
                    ProblemKind::Spike1d { n, density, bandwidth },
                )
            }
            "spike2d" => {
                let (n_img, density, bandwidth) = (get_u("N")?, get_f("density")?, get_f("bandwidth")?);
                (
                    linop::gaussian_blur_2d(n_img, bandwidth)?,
                    linop::identity_operator(n_img * n_img)?,
                    ProblemKind::Spike2d { n_img, density, bandwidth },
                )
            }
            "piecewise" => {
                let (n_img, bandwidth) = (get_u("N")?, get_f("bandwidth")?);
                (
                    linop::gaussian_blur_2d(n_img, bandwidth)?,
                    linop::tv2d_operator(n_img)?,
                    ProblemKind::Piecewise { n_img, bandwidth },
                )
            }
            "smooth1d" => {
                let n = get_u("n")?;
                (linop::gaussian_blur_1d(n, 0.05)?, linop::fd1d(n)?, ProblemKind::Smooth1d { n })
            }
            other => return Err(Error::Parse(format!("meta.toml: unknown kind '{other}'"))),
        };
        let b = read_vector(dir.join("b.f64"))?;
        let b_ex = read_vector(dir.join("b_ex.f64"))?;
        let x_ex = read_vector(dir.join("x_ex.f64"))?;
        if b.len() != a.nrows() || x_ex.len() != a.ncols() || b_ex.len() != a.nrows() {
            return Err(Error::ShapeMismatch("problem directory vectors do not match operator".into()));
        }
        let inst = Self {
            a,
            l,
            noise_level: get_f("level")?,
            seed: get_u("seed")? as u64,
            eta: get_f("eta")?,
            sigma: get_f("sigma")?,
            b,
            b_ex,
            x_ex,
            kind,
        };
        inst.validate()?;
        Ok(inst)
    }
}
