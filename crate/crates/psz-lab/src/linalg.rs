//! Small dense complex linear algebra used by the per-bin solvers.
//!
//! Systems here are tiny (L = 8 loudspeakers), so everything is hand-rolled
//! column-free row-major code with no BLAS.

use crate::error::{PszError, Result};
use num_complex::Complex64;

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let row = &self.data[i * self.cols..(i + 1) * self.cols];
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// A^H A (Hermitian, cols x cols).
    pub fn gram(&self) -> CMat {
        let n = self.cols;
        let mut g = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..self.rows {
                    acc += self[(r, i)].conj() * self[(r, j)];
                }
                g[(i, j)] = acc;
            }
        }
        g
    }

    /// A^H y.
    pub fn herm_matvec(&self, y: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(y.len(), self.rows);
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].conj() * y[i]).sum())
            .collect()
    }

    /// Stacks `self` on top of `other` (shared column count).
    pub fn vstack(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.cols);
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        CMat { rows: self.rows + other.rows, cols: self.cols, data }
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = Complex64;
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Solves A x = b for Hermitian positive definite A via Cholesky.
pub fn cholesky_solve(a: &CMat, b: &[Complex64]) -> Result<Vec<Complex64>> {
    assert_eq!(a.rows, a.cols);
    assert_eq!(b.len(), a.rows);
    let n = a.rows;
    // lower-triangular factor, row-major
    let mut l = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a[(i, j)];
            for k in 0..j {
                acc -= l[i * n + k] * l[j * n + k].conj();
            }
            if i == j {
                let d = acc.re;
                if d <= 0.0 || !d.is_finite() {
                    return Err(PszError::Singular(format!(
                        "cholesky pivot {d} at index {i}"
                    )));
                }
                l[i * n + i] = Complex64::new(d.sqrt(), 0.0);
            } else {
                l[i * n + j] = acc / l[j * n + j];
            }
        }
    }
    // forward: L y = b
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l[i * n + k] * y[k];
        }
        y[i] = acc / l[i * n + i];
    }
    // backward: L^H x = y
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let mut acc = y[i];
        for k in (i + 1)..n {
            acc -= l[k * n + i].conj() * x[k];
        }
        x[i] = acc / l[i * n + i];
    }
    Ok(x)
}

/// Largest singular value of `a` by power iteration on A^H A.
///
/// Converges to relative tolerance `tol` on the sigma estimate; returns 0 for
/// the zero matrix.
pub fn sigma_max(a: &CMat, tol: f64, max_iters: usize) -> f64 {
    let gram = a.gram();
    let n = a.cols;
    if a.data.iter().all(|z| z.norm_sqr() == 0.0) {
        return 0.0;
    }
    // deterministic non-degenerate start vector
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + 0.37 * i as f64, 0.11 * (i as f64 + 1.0)))
        .collect();
    let norm = |x: &[Complex64]| x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.iter_mut().for_each(|z| *z /= nv);
    let mut prev = 0.0f64;
    for _ in 0..max_iters {
        let w = gram.matvec(&v);
        let lambda = norm(&w);
        if lambda == 0.0 {
            return 0.0;
        }
        v = w.iter().map(|z| z / lambda).collect();
        let sigma = lambda.sqrt();
        if (sigma - prev).abs() <= tol * sigma {
            return sigma;
        }
        prev = sigma;
    }
    prev
}
