//! Sparse matrices, direct solves and 2-norm condition estimates.
//!
//! Assembly produces triplets; [`SparseMatrix::from_triplets`] sums
//! duplicates into compressed rows and drops entries below
//! `1e-14 · max|a_ij|`, so `nnz` compares stabilization variants fairly.
//! Factorizations use faer's sparse LU.

use std::io::Write;
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Relative threshold below which assembled entries are not stored.
pub const DROP_TOL: f64 = 1e-14;
/// Relative residual accepted from a direct solve.
pub const SOLVE_TOL: f64 = 1e-10;

/// Square matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Sums duplicate `(row, col)` entries and drops negligible ones.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|t| t.0 >= n || t.1 >= n) {
            return Err(Error::OutOfRange(format!("entry ({r}, {c}) outside a {n}x{n} matrix")));
        }
        if triplets.iter().any(|t| !t.2.is_finite()) {
            return Err(Error::NonFinite("matrix entry"));
        }
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let max = merged.iter().fold(0.0f64, |m, t| m.max(t.2.abs()));
        let cut = DROP_TOL * max;
        merged.retain(|t| t.2.abs() > cut);
        let mut row_ptr = vec![0usize; n + 1];
        for t in &merged {
            row_ptr[t.0 + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx: merged.iter().map(|t| t.1).collect(),
            values: merged.iter().map(|t| t.2).collect(),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self { n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries (all above the drop tolerance).
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(p) => self.values[span.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n).flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v))).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for (r, &xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        y
    }

    /// `self + other`, re-applying the drop tolerance.
    pub fn add(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.n != other.n {
            return Err(Error::Config(format!("dimension mismatch {} vs {}", self.n, other.n)));
        }
        let mut t = self.triplets();
        t.extend(other.triplets());
        SparseMatrix::from_triplets(self.n, t)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (r, c, v) in self.triplets() {
            d[r][c] = v;
        }
        d
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, _)| {
            let span = self.row_ptr[c]..self.row_ptr[c + 1];
            self.col_idx[span].binary_search(&r).is_ok()
        }))
    }

    /// Matrix Market coordinate export.
    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(f, "{} {} {}", self.n, self.n, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(f, "{} {} {:.17e}", r + 1, c + 1, v)?;
        }
        Ok(())
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::try_new_from_triplets(self.n, self.n, &t)
            .map_err(|e| Error::Singular { slab: None, reason: format!("matrix conversion failed: {e:?}") })
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Sparse LU factors of a square matrix.
pub struct Factorization {
    lu: Lu<usize, f64>,
    n: usize,
}

impl Factorization {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        if a.n == 0 {
            return Err(Error::Singular { slab: None, reason: "empty matrix".into() });
        }
        let lu = a
            .to_faer()?
            .sp_lu()
            .map_err(|e| Error::Singular { slab: None, reason: format!("LU failed: {e:?}") })?;
        Ok(Self { lu, n: a.n })
    }

    fn apply(&self, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.n);
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = if transpose { self.lu.solve_transpose(&rhs) } else { self.lu.solve(&rhs) };
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::Singular { slab: None, reason: "non-finite solution (numerically singular)".into() })
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.apply(b, false)
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.apply(b, true)
    }
}

/// `‖b − Ax‖ / max(‖b‖, ‖A‖_max ‖x‖)`.
pub fn relative_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| q - p).collect();
    let scale = norm2(b).max(a.max_abs() * norm2(x));
    if scale == 0.0 {
        0.0
    } else {
        norm2(&r) / scale
    }
}

/// Direct solve with a residual check.
pub fn solve_direct(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.n {
        return Err(Error::Config(format!("right-hand side has length {}, expected {}", b.len(), a.n)));
    }
    let x = Factorization::new(a)?.solve(b)?;
    let res = relative_residual(a, &x, b);
    if !(res <= SOLVE_TOL) {
        return Err(Error::SolveResidual { residual: res });
    }
    Ok(x)
}

const MAX_ITER: usize = 10_000;
const EIG_TOL: f64 = 1e-7;

fn start_vector(n: usize, seed: u64) -> Vec<f64> {
    // deterministic pseudo-random start, avoids accidental orthogonality
    let mut s = seed;
    let v: Vec<f64> = (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
        .collect();
    let nv = norm2(&v);
    v.into_iter().map(|x| x / nv).collect()
}

/// Dominant eigenvalue of a symmetric positive operator by power iteration.
fn power_iteration(n: usize, seed: u64, op: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<f64> {
    let mut x = start_vector(n, seed);
    let mut lambda = 0.0;
    for _ in 0..MAX_ITER {
        let y = op(&x)?;
        let next: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ny = norm2(&y);
        if ny == 0.0 {
            return Ok(0.0);
        }
        x = y.into_iter().map(|v| v / ny).collect();
        if (next - lambda).abs() <= EIG_TOL * next.abs() {
            return Ok(next);
        }
        lambda = next;
    }
    Err(Error::NonConvergence(format!("power iteration did not converge in {MAX_ITER} iterations")))
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn sigma_max(a: &SparseMatrix) -> Result<f64> {
    let l = power_iteration(a.n, 17, |x| Ok(a.matvec_transpose(&a.matvec(x))))?;
    Ok(l.sqrt())
}

/// Smallest singular value by inverse iteration on `AᵀA` through the LU factors.
pub fn sigma_min(a: &SparseMatrix) -> Result<f64> {
    let f = Factorization::new(a)?;
    // (AᵀA)⁻¹ x = A⁻¹ A⁻ᵀ x
    let l = power_iteration(a.n, 29, |x| f.solve(&f.solve_transpose(x)?))?;
    if l <= 0.0 {
        return Err(Error::Singular { slab: None, reason: "inverse iteration collapsed".into() });
    }
    Ok(1.0 / l.sqrt())
}

/// `σ_max / σ_min` in the 2-norm.
pub fn condition_number_2(a: &SparseMatrix) -> Result<f64> {
    Ok(sigma_max(a)? / sigma_min(a)?)
}
