//! Dense linear algebra kernels and deterministic random streams.
//!
//! Everything here is `f64`. Symmetric positive definite systems are always
//! solved through a Cholesky factor; general square systems (the tabular
//! Bellman equations) go through LU with partial pivoting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric positive definite matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SpdMatrix {
    /// Validates shape and symmetry. Definiteness is only checked by
    /// [`cholesky`].
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidCount("matrix dimension must be positive"));
        }
        if entries.len() != dim * dim {
            return Err(Error::dims("SpdMatrix::new", dim * dim, entries.len()));
        }
        let scale = entries.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..dim {
            for j in (i + 1)..dim {
                let a = entries[i * dim + j];
                let b = entries[j * dim + i];
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::NonFiniteInput("SpdMatrix::new"));
                }
                if (a - b).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = scale;
        }
        Self { dim, entries }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut entries = vec![0.0; dim * dim];
        for (i, d) in diag.iter().enumerate() {
            entries[i * dim + i] = *d;
        }
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.dim + col]
    }

    /// `self += x xᵀ`, which keeps the matrix symmetric exactly.
    pub fn add_outer(&mut self, x: &[f64]) {
        let d = self.dim;
        for i in 0..d {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let row = &mut self.entries[i * d..(i + 1) * d];
            for (r, xj) in row.iter_mut().zip(x) {
                *r += xi * xj;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.entries
            .chunks_exact(self.dim)
            .map(|row| dot(row, x))
            .collect()
    }
}

/// Lower-triangular Cholesky factor `L` with `m = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

pub fn cholesky(m: &SpdMatrix) -> Result<Cholesky> {
    let n = m.dim;
    let a = &m.entries;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: diag,
            });
        }
        let ljj = diag.sqrt();
        l[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(Cholesky { dim: n, lower: l })
}

impl Cholesky {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major lower factor.
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            let s = dot(row, &y[..i]);
            y[i] = (y[i] - s) / self.lower[i * n + i];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.lower[k * n + i] * x[k];
            }
            x[i] = s / self.lower[i * n + i];
        }
        x
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim {
            return Err(Error::dims("Cholesky::solve", self.dim, b.len()));
        }
        Ok(self.solve_upper(&self.solve_lower(b)))
    }

    /// `xᵀ m⁻¹ x`, computed as `‖L⁻¹ x‖²` so it is never negative.
    pub fn inverse_quadratic_form(&self, x: &[f64]) -> f64 {
        self.solve_lower(x).iter().map(|v| v * v).sum()
    }

    pub fn log_det(&self) -> f64 {
        let n = self.dim;
        2.0 * (0..n).map(|i| self.lower[i * n + i].ln()).sum::<f64>()
    }
}

pub fn solve_spd(m: &SpdMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != m.dim {
        return Err(Error::dims("solve_spd", m.dim, rhs.len()));
    }
    cholesky(m)?.solve(rhs)
}

/// Solves a general square system `a x = b` (row-major `a`) by LU with
/// partial pivoting.
pub fn solve_dense(n: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::dims("solve_dense", n * n, a.len()));
    }
    if b.len() != n {
        return Err(Error::dims("solve_dense", n, b.len()));
    }
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap_or(col);
        if m[pivot * n + col].abs() <= f64::EPSILON * scale * n as f64 {
            return Err(Error::SingularSystem);
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            x.swap(col, pivot);
        }
        let p = m[col * n + col];
        for row in (col + 1)..n {
            let f = m[row * n + col] / p;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            x[row] -= f * x[col];
        }
    }
    for row in (0..n).rev() {
        let mut s = x[row];
        for k in (row + 1)..n {
            s -= m[row * n + k] * x[k];
        }
        x[row] = s / m[row * n + row];
    }
    Ok(x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Immutable handle onto a counter-based random stream.
///
/// A stream is fully identified by `(seed, stream_id)`; [`RngStream::rng`]
/// always starts the same sequence from the beginning. Sub-streams for
/// individual rollouts or perturbations are obtained with
/// [`RngStream::derive`], which never touches the parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn derive(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: splitmix64(splitmix64(self.stream_id) ^ splitmix64(tag.rotate_left(17))),
        }
    }

    pub fn derive2(&self, tag: u64, index: u64) -> Self {
        self.derive(tag).derive(index)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

pub fn gaussian_vector(stream: RngStream, dim: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    fill_gaussian(&mut rng, dim)
}

pub fn fill_gaussian<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}
