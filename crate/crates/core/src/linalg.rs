//! Small dense linear algebra: a row-major matrix and a Cholesky factor
//! that supports the append/drop-oldest updates of a sliding window.

use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
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
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `vᵀ M v` for a square matrix.
    pub fn quad_form(&self, v: &[T]) -> T {
        debug_assert_eq!(self.rows, self.cols);
        let mut acc = T::zero();
        for i in 0..self.rows {
            acc += v[i] * dot(self.row(i), v);
        }
        acc
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

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn add_diagonal(&mut self, v: T) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Index and value of a non-positive (or non-finite) pivot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub index: usize,
    pub pivot: f64,
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`, stored as packed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<T> {
    rows: Vec<Vec<T>>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn empty() -> Self {
        Self { rows: Vec::new() }
    }

    /// Factors a symmetric matrix; only the lower triangle is read.
    pub fn factor(a: &Matrix<T>) -> Result<Self, NotPositiveDefinite> {
        let n = a.rows();
        debug_assert_eq!(n, a.cols());
        let mut rows: Vec<Vec<T>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(i + 1);
            for j in 0..i {
                let s = a[(i, j)] - dot(&row[..j], &rows[j][..j]);
                row.push(s / rows[j][j]);
            }
            let d = a[(i, i)] - dot(&row[..i], &row[..i]);
            if !(d > T::zero()) || !d.is_finite() {
                return Err(NotPositiveDefinite {
                    index: i,
                    pivot: d.as_f64(),
                });
            }
            row.push(d.sqrt());
            rows.push(row);
        }
        Ok(Self { rows })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn diag(&self, i: usize) -> T {
        self.rows[i][i]
    }

    pub fn lower(&self) -> Matrix<T> {
        let n = self.dim();
        let mut m = Matrix::zeros(n, n);
        for (i, r) in self.rows.iter().enumerate() {
            m.row_mut(i)[..=i].copy_from_slice(r);
        }
        m
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let mut x: Vec<T> = Vec::with_capacity(b.len());
        for (i, r) in self.rows.iter().enumerate() {
            let s = b[i] - dot(&r[..i], &x[..i]);
            x.push(s / r[i]);
        }
        x
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[T]) -> Vec<T> {
        let n = self.dim();
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            x[i] /= self.rows[i][i];
            let xi = x[i];
            for j in 0..i {
                x[j] -= self.rows[i][j] * xi;
            }
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| two * r[i].ln())
            .sum()
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.dim();
        // Rows of X = L⁻¹ (lower-triangular): X[i] = (e_i − Σ_k L[i,k] X[k]) / L[i,i].
        let mut x: Vec<Vec<T>> = Vec::with_capacity(n);
        for (i, r) in self.rows.iter().enumerate() {
            let mut xi = vec![T::zero(); i + 1];
            for (k, xk) in x.iter().enumerate() {
                let l = r[k];
                if l != T::zero() {
                    xi[..=k].iter_mut().zip(xk).for_each(|(a, &b)| *a -= l * b);
                }
            }
            xi[i] += T::one();
            let d = r[i];
            xi.iter_mut().for_each(|v| *v /= d);
            x.push(xi);
        }
        // A⁻¹ = Xᵀ X, accumulated row by row into the lower triangle.
        let mut inv = Matrix::zeros(n, n);
        for xk in &x {
            for (i, &a) in xk.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let row = inv.row_mut(i);
                row[..=i].iter_mut().zip(&xk[..=i]).for_each(|(v, &b)| *v += a * b);
            }
        }
        for i in 0..n {
            for j in 0..i {
                let v = inv[(i, j)];
                inv.row_mut(j)[i] = v;
            }
        }
        inv
    }

    /// Extends the factor of `A` to the factor of `[[A, b], [bᵀ, d]]`.
    pub fn append(&mut self, b: &[T], d: T) -> Result<(), NotPositiveDefinite> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let mut row = self.solve_lower(b);
        let s = d - dot(&row, &row);
        if !(s > T::zero()) || !s.is_finite() {
            return Err(NotPositiveDefinite {
                index: n,
                pivot: s.as_f64(),
            });
        }
        row.push(s.sqrt());
        self.rows.push(row);
        Ok(())
    }

    /// Turns the factor of `A` into the factor of `A` with its first row and
    /// column deleted (rank-one update of the trailing block).
    pub fn remove_first(&mut self) {
        if self.rows.is_empty() {
            return;
        }
        self.rows.remove(0);
        let mut x: Vec<T> = self.rows.iter_mut().map(|r| r.remove(0)).collect();
        let n = self.rows.len();
        for k in 0..n {
            let lkk = self.rows[k][k];
            let r = lkk.hypot(x[k]);
            let c = r / lkk;
            let s = x[k] / lkk;
            self.rows[k][k] = r;
            for i in (k + 1)..n {
                let lik = (self.rows[i][k] + s * x[i]) / c;
                x[i] = c * x[i] - s * lik;
                self.rows[i][k] = lik;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> Matrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = Matrix::from_row_major(n, n, g);
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = (0..n).map(|k| g[(i, k)] * g[(j, k)]).sum();
            }
        }
        a.add_diagonal(0.1);
        a
    }

    #[test]
    fn factor_reproduces_matrix() {
        let a = spd(6, 1);
        let l = Cholesky::factor(&a).unwrap().lower();
        for i in 0..6 {
            for j in 0..6 {
                let v: f64 = (0..6).map(|k| l[(i, k)] * l[(j, k)]).sum();
                assert!((v - a[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_and_solve_agree() {
        let a = spd(5, 2);
        let ch = Cholesky::factor(&a).unwrap();
        let inv = ch.inverse();
        let b = [1.0, -2.0, 0.5, 3.0, 0.0];
        let x = ch.solve(&b);
        let x2 = inv.mul_vec(&b);
        for (p, q) in x.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-10);
        }
        let back = a.mul_vec(&x);
        for (p, q) in back.iter().zip(&b) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn append_matches_full_factor() {
        let a = spd(7, 3);
        let mut ch = Cholesky::empty();
        for i in 0..7 {
            let b: Vec<f64> = (0..i).map(|j| a[(i, j)]).collect();
            ch.append(&b, a[(i, i)]).unwrap();
        }
        let full = Cholesky::factor(&a).unwrap();
        assert!(ch
            .lower()
            .as_slice()
            .iter()
            .zip(full.lower().as_slice())
            .all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn remove_first_matches_refactor() {
        let a = spd(8, 4);
        let mut ch = Cholesky::factor(&a).unwrap();
        ch.remove_first();
        ch.remove_first();
        let mut sub = Matrix::zeros(6, 6);
        for i in 0..6 {
            for j in 0..6 {
                sub[(i, j)] = a[(i + 2, j + 2)];
            }
        }
        let direct = Cholesky::factor(&sub).unwrap();
        assert!(ch
            .lower()
            .as_slice()
            .iter()
            .zip(direct.lower().as_slice())
            .all(|(p, q)| (p - q).abs() < 1e-10));
    }

    #[test]
    fn rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let err = Cholesky::factor(&a).unwrap_err();
        assert_eq!(err.index, 1);
        assert!(err.pivot < 0.0);
    }

    #[test]
    fn log_det_of_diagonal() {
        let mut a = Matrix::<f32>::identity(3);
        a[(0, 0)] = 4.0;
        let ch = Cholesky::factor(&a).unwrap();
        assert!((ch.log_det() - 4.0f32.ln()).abs() < 1e-6);
    }
}
