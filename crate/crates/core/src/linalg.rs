//! Small dense linear algebra: a row-major matrix, Cholesky factorisation
//! and a one-sided Jacobi SVD. Sizes here are tens of rows, so clarity wins
//! over blocking.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn diagonal(diag: &[F]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<F> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimensions");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == F::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[F]) -> Vec<F> {
        assert_eq!(self.cols, v.len(), "matvec dimensions");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// Replaces the matrix by `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        let half = F::lit(0.5);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let s = half * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = s;
                self[(j, i)] = s;
            }
        }
    }

    /// Largest absolute entry of `A - Aᵀ`.
    pub fn asymmetry(&self) -> F {
        let mut worst = F::zero();
        for i in 0..self.rows {
            for j in 0..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl<F> Index<(usize, usize)> for Matrix<F> {
    type Output = F;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &F {
        &self.data[i * self.cols + j]
    }
}

impl<F> IndexMut<(usize, usize)> for Matrix<F> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut F {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<F> {
    l: Matrix<F>,
}

impl<F: Scalar> Cholesky<F> {
    /// Factorises a symmetric positive-definite matrix. Returns `None` when a
    /// pivot is not strictly positive.
    pub fn new(a: &Matrix<F>) -> Option<Self> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "Cholesky needs a square matrix");
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > F::zero()) || !d.is_finite() {
                return None;
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Some(Self { l })
    }

    /// Factorises `a`; on failure retries once with `jitter` added to the
    /// diagonal.
    pub fn with_jitter(a: &Matrix<F>, jitter: F) -> Option<Self> {
        Self::new(a).or_else(|| {
            let mut b = a.clone();
            for i in 0..b.rows() {
                b[(i, i)] += jitter;
            }
            Self::new(&b)
        })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn factor(&self) -> &Matrix<F> {
        &self.l
    }

    /// `ln |A|`.
    pub fn log_det(&self) -> F {
        let two = F::lit(2.0);
        (0..self.dim()).map(|i| two * self.l[(i, i)].ln()).sum()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// `A⁻¹`, symmetrised.
    pub fn inverse(&self) -> Matrix<F> {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![F::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = F::zero());
            e[j] = F::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv.symmetrize();
        inv
    }
}

/// Solves the square system `A x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` for a numerically singular matrix.
pub fn solve_general<F: Scalar>(a: &Matrix<F>, b: &[F]) -> Option<Vec<F>> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    assert_eq!(n, b.len());
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.as_slice().iter().fold(F::zero(), |s, v| s.max(v.abs()));
    if scale == F::zero() {
        return None;
    }
    let tiny = scale * F::epsilon() * F::from_usize_lossy(n.max(1));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap())
            .unwrap();
        if !(m[(pivot, col)].abs() > tiny) {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(pivot, j)];
                m[(pivot, j)] = tmp;
            }
            x.swap(col, pivot);
        }
        let d = m[(col, col)];
        for i in (col + 1)..n {
            let f = m[(i, col)] / d;
            if f == F::zero() {
                continue;
            }
            for j in col..n {
                let v = m[(col, j)];
                m[(i, j)] -= f * v;
            }
            let xc = x[col];
            x[i] -= f * xc;
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    Some(x)
}

/// Thin singular value decomposition `A = Σ_i ρ_i u_i v_iᵀ` with singular
/// values in descending order.
#[derive(Debug, Clone)]
pub struct Svd<F> {
    /// Left singular vectors, one per entry (length = rows of A).
    pub u: Vec<Vec<F>>,
    pub singular_values: Vec<F>,
    /// Right singular vectors, one per entry (length = cols of A).
    pub v: Vec<Vec<F>>,
}

impl<F: Scalar> Svd<F> {
    /// Number of singular values above `max(rows, cols) · ε · ρ_max`.
    pub fn rank(&self, rows: usize, cols: usize) -> usize {
        let top = self.singular_values.first().copied().unwrap_or_else(F::zero);
        if top == F::zero() {
            return 0;
        }
        let tol = F::from_usize_lossy(rows.max(cols)) * F::epsilon() * top;
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// The rows of `A` are orthogonalised by plane rotations accumulated in `J`;
/// at convergence row `i` equals `ρ_i v_iᵀ` and column `i` of `J` is `u_i`.
pub fn svd<F: Scalar>(a: &Matrix<F>) -> Svd<F> {
    let p = a.rows();
    let mut w: Vec<Vec<F>> = (0..p).map(|i| a.row(i).to_vec()).collect();
    let mut j = Matrix::<F>::identity(p);
    let eps = F::epsilon();
    for _sweep in 0..80 {
        let mut rotated = false;
        for r in 0..p {
            for s in (r + 1)..p {
                let alpha = dot(&w[r], &w[r]);
                let beta = dot(&w[s], &w[s]);
                let gamma = dot(&w[r], &w[s]);
                if gamma == F::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (F::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (F::one() + zeta * zeta).sqrt());
                let c = F::one() / (F::one() + t * t).sqrt();
                let sn = c * t;
                let (lo, hi) = w.split_at_mut(s);
                for (x, y) in lo[r].iter_mut().zip(hi[0].iter_mut()) {
                    let (xr, ys) = (*x, *y);
                    *x = c * xr - sn * ys;
                    *y = sn * xr + c * ys;
                }
                for k in 0..p {
                    let (jr, js) = (j[(k, r)], j[(k, s)]);
                    j[(k, r)] = c * jr - sn * js;
                    j[(k, s)] = sn * jr + c * js;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(usize, F)> =
        w.iter().enumerate().map(|(i, row)| (i, dot(row, row).sqrt())).collect();
    order.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = Svd { u: Vec::new(), singular_values: Vec::new(), v: Vec::new() };
    for (i, rho) in order {
        out.u.push(j.column(i));
        out.singular_values.push(rho);
        out.v.push(if rho > F::zero() {
            w[i].iter().map(|&x| x / rho).collect()
        } else {
            vec![F::zero(); w[i].len()]
        });
    }
    out
}
