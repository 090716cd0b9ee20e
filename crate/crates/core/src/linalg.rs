//! Small sparse/banded solvers and the discrete Dirichlet sine basis.

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("zero pivot at row {0}")]
    ZeroPivot(usize),
    #[error("iterative solver stalled after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds from per-row `(column, value)` lists; duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, T)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![(i, T::one())]).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row(i)
            .find(|&(c, _)| c == j)
            .map(|(_, v)| v)
            .unwrap_or_else(T::zero)
    }

    pub fn matvec(&self, x: ArrayView1<T>) -> Array1<T> {
        let mut y = Array1::zeros(self.n);
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: ArrayView1<T>, y: &mut Array1<T>) {
        for i in 0..self.n {
            let mut acc = T::zero();
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[i] = acc;
        }
    }

    /// `alpha I + beta self`.
    pub fn shifted(&self, alpha: T, beta: T) -> Self {
        let rows = (0..self.n)
            .map(|i| {
                let mut r: Vec<(usize, T)> = self.row(i).map(|(c, v)| (c, beta * v)).collect();
                r.push((i, alpha));
                r
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn diagonal(&self) -> Array1<T> {
        Array1::from_shape_fn(self.n, |i| self.get(i, i))
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(c, _)| c.abs_diff(i)))
            .max()
            .unwrap_or(0)
    }

    pub fn to_tridiagonal(&self) -> Option<Tridiagonal<T>> {
        if self.bandwidth() > 1 {
            return None;
        }
        let n = self.n;
        let lower = Array1::from_shape_fn(n, |i| if i > 0 { self.get(i, i - 1) } else { T::zero() });
        let upper = Array1::from_shape_fn(n, |i| {
            if i + 1 < n {
                self.get(i, i + 1)
            } else {
                T::zero()
            }
        });
        Some(Tridiagonal {
            lower,
            diag: self.diagonal(),
            upper,
        })
    }

    pub fn to_dense(&self) -> Array2<T> {
        let mut m = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                m[[i, c]] += v;
            }
        }
        m
    }
}

/// Tridiagonal matrix; `lower[0]` and `upper[n-1]` are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal<T> {
    pub lower: Array1<T>,
    pub diag: Array1<T>,
    pub upper: Array1<T>,
}

impl<T: Real> Tridiagonal<T> {
    pub fn factor(&self) -> Result<TridiagonalLu<T>, LinalgError> {
        let n = self.diag.len();
        let mut c_prime = Array1::zeros(n);
        let mut inv_denom = Array1::zeros(n);
        let mut denom = self.diag[0];
        for i in 0..n {
            if i > 0 {
                denom = self.diag[i] - self.lower[i] * c_prime[i - 1];
            }
            if denom == T::zero() {
                return Err(LinalgError::ZeroPivot(i));
            }
            inv_denom[i] = T::one() / denom;
            c_prime[i] = self.upper[i] * inv_denom[i];
        }
        Ok(TridiagonalLu {
            lower: self.lower.clone(),
            c_prime,
            inv_denom,
        })
    }
}

/// Precomputed Thomas-algorithm factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalLu<T> {
    lower: Array1<T>,
    c_prime: Array1<T>,
    inv_denom: Array1<T>,
}

impl<T: Real> TridiagonalLu<T> {
    pub fn solve_in_place(&self, rhs: &mut Array1<T>) {
        let n = rhs.len();
        rhs[0] = rhs[0] * self.inv_denom[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.inv_denom[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            let next = rhs[i + 1];
            rhs[i] = rhs[i] - self.c_prime[i] * next;
        }
    }
}

/// Jacobi-preconditioned BiCGSTAB for general sparse systems.
pub fn bicgstab<T: Real>(
    a: &CsrMatrix<T>,
    b: ArrayView1<T>,
    x0: Option<ArrayView1<T>>,
    rel_tol: T,
    max_iter: usize,
) -> Result<Array1<T>, LinalgError> {
    let n = a.dim();
    if b.len() != n {
        return Err(LinalgError::Shape {
            expected: n,
            got: b.len(),
        });
    }
    let inv_diag = a.diagonal().mapv(|d| if d == T::zero() { T::one() } else { T::one() / d });
    let mut x = match x0 {
        Some(v) => v.to_owned(),
        None => Array1::zeros(n),
    };
    let b_norm = norm2(b);
    if b_norm == T::zero() {
        return Ok(Array1::zeros(n));
    }
    let mut r = &b - &a.matvec(x.view());
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (T::one(), T::one(), T::one());
    let mut v = Array1::zeros(n);
    let mut p = Array1::zeros(n);
    for iter in 0..max_iter {
        if norm2(r.view()) <= rel_tol * b_norm {
            return Ok(x);
        }
        let rho_new = r_hat.dot(&r);
        if rho_new == T::zero() {
            return Err(LinalgError::NoConvergence {
                iterations: iter,
                residual: (norm2(r.view()) / b_norm).to_f64_lossy(),
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p = &r + &((&p - &(&v * omega)) * beta);
        let p_hat = &p * &inv_diag;
        v = a.matvec(p_hat.view());
        alpha = rho / r_hat.dot(&v);
        let s = &r - &(&v * alpha);
        if norm2(s.view()) <= rel_tol * b_norm {
            x = x + &p_hat * alpha;
            return Ok(x);
        }
        let s_hat = &s * &inv_diag;
        let t = a.matvec(s_hat.view());
        let tt = t.dot(&t);
        omega = if tt == T::zero() { T::zero() } else { t.dot(&s) / tt };
        x = x + &p_hat * alpha + &s_hat * omega;
        r = &s - &(&t * omega);
        if omega == T::zero() {
            break;
        }
    }
    let residual = norm2(r.view()) / b_norm;
    if residual <= rel_tol {
        Ok(x)
    } else {
        Err(LinalgError::NoConvergence {
            iterations: max_iter,
            residual: residual.to_f64_lossy(),
        })
    }
}

fn norm2<T: Real>(v: ArrayView1<T>) -> T {
    v.dot(&v).sqrt()
}

/// Orthonormal discrete sine basis on the interior nodes of `[0,1]`:
/// `phi_k(x_i) = sqrt(2) sin(k pi x_i)` with weights `h`, `k = 1..=modes`.
///
/// The basis is exactly orthonormal on the grid when `modes = nx - 2`.
#[derive(Debug, Clone)]
pub struct SineBasis<T> {
    nx: usize,
    /// `table[[k-1, i-1]] = phi_k(x_i)`.
    table: Array2<T>,
    /// `h * table^T`, for the forward transform.
    weighted_t: Array2<T>,
}

impl<T: Real> SineBasis<T> {
    pub fn new(nx: usize, modes: usize) -> Self {
        let n = nx - 2;
        let modes = modes.min(n);
        let h = 1.0 / (nx - 1) as f64;
        let table = Array2::from_shape_fn((modes, n), |(k, i)| {
            let arg = std::f64::consts::PI * ((k + 1) * (i + 1)) as f64 * h;
            T::lit(std::f64::consts::SQRT_2 * arg.sin())
        });
        let weighted_t = table.t().mapv(|v| v * T::lit(h));
        Self {
            nx,
            table,
            weighted_t,
        }
    }

    pub fn modes(&self) -> usize {
        self.table.nrows()
    }

    pub fn interior_len(&self) -> usize {
        self.nx - 2
    }

    /// Rows are modes, columns interior nodes.
    pub fn table(&self) -> &Array2<T> {
        &self.table
    }

    /// Dirichlet eigenvalue `(k pi)^2` of mode `k` (1-based).
    pub fn eigenvalue(k: usize) -> T {
        let kp = T::from_usize_exact(k) * T::PI();
        kp * kp
    }

    pub fn forward(&self, interior: ArrayView1<T>) -> Array1<T> {
        interior.dot(&self.weighted_t)
    }

    pub fn inverse(&self, coeffs: ArrayView1<T>) -> Array1<T> {
        coeffs.dot(&self.table)
    }

    /// Forward transform along both axes of an `n x n` interior block.
    pub fn forward_2d(&self, block: &Array2<T>) -> Array2<T> {
        // C = W^T B W with W = weighted_t (n x m)
        self.weighted_t.t().dot(block).dot(&self.weighted_t)
    }

    pub fn inverse_2d(&self, coeffs: &Array2<T>) -> Array2<T> {
        self.table.t().dot(coeffs).dot(&self.table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn laplacian_1d(n: usize) -> CsrMatrix<f64> {
        CsrMatrix::from_rows(
            (0..n)
                .map(|i| {
                    let mut r = vec![(i, -2.0)];
                    if i > 0 {
                        r.push((i - 1, 1.0));
                    }
                    if i + 1 < n {
                        r.push((i + 1, 1.0));
                    }
                    r
                })
                .collect(),
        )
    }

    #[test]
    fn thomas_matches_dense_solution() {
        let a = laplacian_1d(6).shifted(3.0, -1.0);
        let tri = a.to_tridiagonal().unwrap();
        let lu = tri.factor().unwrap();
        let x_true = Array1::from(vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.5]);
        let mut b = a.matvec(x_true.view());
        lu.solve_in_place(&mut b);
        for (u, v) in b.iter().zip(x_true.iter()) {
            assert_abs_diff_eq!(*u, *v, epsilon = 1e-12);
        }
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let n = 30;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 4.0)];
                if i > 0 {
                    r.push((i - 1, -1.5));
                }
                if i + 1 < n {
                    r.push((i + 1, -0.5));
                }
                if i + 5 < n {
                    r.push((i + 5, 0.3));
                }
                r
            })
            .collect();
        let a = CsrMatrix::from_rows(rows);
        let x_true = Array1::from_shape_fn(n, |i| (i as f64 * 0.37).sin());
        let b = a.matvec(x_true.view());
        let x = bicgstab(&a, b.view(), None, 1e-12, 500).unwrap();
        for (u, v) in x.iter().zip(x_true.iter()) {
            assert_abs_diff_eq!(*u, *v, epsilon = 1e-9);
        }
    }

    #[test]
    fn duplicate_entries_are_summed() {
        let m = CsrMatrix::from_rows(vec![vec![(0, 1.0), (0, 2.0)], vec![(1, 1.0)]]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.bandwidth(), 0);
    }

    #[test]
    fn sine_basis_is_orthonormal_and_invertible() {
        let basis = SineBasis::<f64>::new(17, 15);
        let gram = basis.table().dot(&basis.weighted_t);
        for i in 0..15 {
            for j in 0..15 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[[i, j]], want, epsilon = 1e-12);
            }
        }
        let u = Array1::from_shape_fn(15, |i| ((i * i) as f64).cos());
        let back = basis.inverse(basis.forward(u.view()).view());
        for (a, b) in u.iter().zip(back.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
        let block = Array2::from_shape_fn((15, 15), |(i, j)| (i as f64 - j as f64 * 0.3).sin());
        let back2 = basis.inverse_2d(&basis.forward_2d(&block));
        for (a, b) in block.iter().zip(back2.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}
