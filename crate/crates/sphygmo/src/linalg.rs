//! Dense row-major matrix plus the small SPD solvers the pipeline needs.
//!
//! Feature counts stay in the dozens for every workload this crate
//! targets, so normal equations with a Cholesky factorization are both
//! adequate and easy to make deterministic. Nothing here allocates per
//! element or hides the memory layout: `data[i * cols + j]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { data: vec![0.0; rows * cols], rows, cols }
    }

    pub fn from_flat(data: Vec<f64>, rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "flat data length mismatch");
        Matrix { data, rows, cols }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            assert_eq!(r.len(), d, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix { data, rows: n, cols: d }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn select_cols(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, idx.len());
        for i in 0..self.rows {
            for (k, &j) in idx.iter().enumerate() {
                out.set(i, k, self.get(i, j));
            }
        }
        out
    }

    /// Horizontal concatenation; all parts must agree on row count.
    pub fn hstack(parts: &[&Matrix]) -> Matrix {
        assert!(!parts.is_empty());
        let rows = parts[0].rows;
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let dst = out.row_mut(i);
            let mut at = 0;
            for m in parts {
                assert_eq!(m.rows, rows, "hstack row mismatch");
                dst[at..at + m.cols].copy_from_slice(m.row(i));
                at += m.cols;
            }
        }
        out
    }
}

/// In-place lower Cholesky factorization of a symmetric matrix stored
/// row-major. Returns false when the matrix is not positive definite.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// Solve `a x = b` for symmetric positive definite `a` (n x n, row-major).
/// Returns None when the Cholesky factorization fails.
pub fn solve_spd(a: &[f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    let mut l = a.to_vec();
    if !cholesky_in_place(&mut l, n) {
        return None;
    }
    // Forward then back substitution with the lower factor.
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

/// Solve `a x = b`, retrying once with `jitter` added to the diagonal when
/// the plain factorization fails.
pub fn solve_spd_jittered(a: &[f64], n: usize, b: &[f64], jitter: f64) -> Option<Vec<f64>> {
    if let Some(x) = solve_spd(a, n, b) {
        return Some(x);
    }
    let mut aj = a.to_vec();
    for i in 0..n {
        aj[i * n + i] += jitter;
    }
    solve_spd(&aj, n, b)
}

/// Linear least squares with an intercept via centered normal equations.
///
/// Returns `(coefficients, intercept)`. A singular design falls back to a
/// diagonal jitter of 1e-6 on the centered Gram matrix; if that still
/// fails the design is reported as degenerate.
pub fn lstsq(x: &Matrix, y: &[f64], jitter: f64) -> Result<(Vec<f64>, f64)> {
    ridge(x, y, 0.0, jitter)
}

/// Ridge regression with an unpenalized intercept.
///
/// Columns and the response are centered, so the penalty applies to the
/// slope coefficients only. `penalty = 0` gives ordinary least squares.
pub fn ridge(x: &Matrix, y: &[f64], penalty: f64, jitter: f64) -> Result<(Vec<f64>, f64)> {
    let n = x.rows();
    let d = x.cols();
    assert_eq!(y.len(), n, "response length mismatch");
    if n == 0 {
        return Err(Error::data("regression on an empty design"));
    }
    if d == 0 {
        return Ok((Vec::new(), crate::stats::mean(y)));
    }

    let col_means: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let y_mean = crate::stats::mean(y);

    // Centered Gram matrix and cross-products.
    let mut g = vec![0.0; d * d];
    let mut c = vec![0.0; d];
    for i in 0..n {
        let row = x.row(i);
        let yc = y[i] - y_mean;
        for j in 0..d {
            let xj = row[j] - col_means[j];
            c[j] += xj * yc;
            for k in j..d {
                g[j * d + k] += xj * (row[k] - col_means[k]);
            }
        }
    }
    for j in 0..d {
        for k in 0..j {
            g[j * d + k] = g[k * d + j];
        }
        g[j * d + j] += penalty;
    }

    let coefs = solve_spd_jittered(&g, d, &c, jitter)
        .ok_or_else(|| Error::data("degenerate regression design (singular after jitter)"))?;
    let intercept = y_mean - coefs.iter().zip(&col_means).map(|(b, m)| b * m).sum::<f64>();
    Ok((coefs, intercept))
}

pub fn predict_linear(x: &Matrix, coefs: &[f64], intercept: f64) -> Vec<f64> {
    assert_eq!(x.cols(), coefs.len(), "coefficient length mismatch");
    (0..x.rows())
        .map(|i| intercept + x.row(i).iter().zip(coefs).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_known_spd_system() {
        // a = [[4,2],[2,3]], b = [10, 9] -> x = [1.5, 2]
        let a = vec![4.0, 2.0, 2.0, 3.0];
        let x = solve_spd(&a, 2, &[10.0, 9.0]).expect("spd solve");
        assert!((x[0] - 1.5).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_matrices() {
        let a = vec![1.0, 2.0, 2.0, 1.0];
        assert!(solve_spd(&a, 2, &[1.0, 1.0]).is_none());
    }

    #[test]
    fn least_squares_recovers_planted_coefficients() {
        // y = 3 + 2 x0 - x1, exact (no noise), so lstsq must recover it.
        let mut x = Matrix::zeros(50, 2);
        let mut y = vec![0.0; 50];
        for i in 0..50 {
            let a = (i as f64) * 0.3;
            let b = ((i * 7) % 13) as f64;
            x.set(i, 0, a);
            x.set(i, 1, b);
            y[i] = 3.0 + 2.0 * a - b;
        }
        let (coefs, intercept) = lstsq(&x, &y, 1e-6).unwrap();
        assert!((coefs[0] - 2.0).abs() < 1e-9, "got {coefs:?}");
        assert!((coefs[1] + 1.0).abs() < 1e-9);
        assert!((intercept - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ridge_shrinks_toward_zero() {
        let mut x = Matrix::zeros(40, 1);
        let mut y = vec![0.0; 40];
        for i in 0..40 {
            x.set(i, 0, i as f64);
            y[i] = 2.0 * i as f64;
        }
        let (b0, _) = ridge(&x, &y, 0.0, 0.0).unwrap();
        let (b1, _) = ridge(&x, &y, 1e4, 0.0).unwrap();
        let (b2, _) = ridge(&x, &y, 1e6, 0.0).unwrap();
        assert!(b0[0] > b1[0] && b1[0] > b2[0]);
        assert!((b0[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn ridge_splits_weight_between_duplicate_columns() {
        let n = 30;
        let mut x1 = Matrix::zeros(n, 1);
        let mut x2 = Matrix::zeros(n, 2);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let v = (i as f64).sin() * 3.0 + i as f64 * 0.1;
            x1.set(i, 0, v);
            x2.set(i, 0, v);
            x2.set(i, 1, v);
            y[i] = 1.0 + 0.8 * v + ((i * 31 % 17) as f64 - 8.0) * 0.05;
        }
        // Duplicating a column at penalty p is equivalent to the single
        // column at penalty p/2, with the weight split evenly.
        let (dup, b_dup) = ridge(&x2, &y, 1.0, 0.0).unwrap();
        let (single, b_single) = ridge(&x1, &y, 0.5, 0.0).unwrap();
        assert!((dup[0] - dup[1]).abs() < 1e-9, "weights should split evenly");
        assert!((dup[0] + dup[1] - single[0]).abs() < 1e-9);
        assert!((b_dup - b_single).abs() < 1e-9);
    }

    #[test]
    fn singular_design_falls_back_to_jitter() {
        // Two identical columns: plain normal equations are singular.
        let mut x = Matrix::zeros(10, 2);
        let mut y = vec![0.0; 10];
        for i in 0..10 {
            x.set(i, 0, i as f64);
            x.set(i, 1, i as f64);
            y[i] = i as f64;
        }
        let (coefs, _) = lstsq(&x, &y, 1e-6).unwrap();
        let pred = predict_linear(&x, &coefs, 0.0);
        // The fit still reproduces y up to the jitter scale.
        for (p, t) in pred.iter().zip(&y) {
            assert!((p - t).abs() < 1e-3);
        }
    }

    #[test]
    fn hstack_and_selection_preserve_layout() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]);
        let h = Matrix::hstack(&[&a, &b]);
        assert_eq!(h.row(0), &[1.0, 2.0, 5.0]);
        assert_eq!(h.row(1), &[3.0, 4.0, 6.0]);
        let s = h.select_cols(&[2, 0]);
        assert_eq!(s.row(1), &[6.0, 3.0]);
        let r = h.select_rows(&[1]);
        assert_eq!(r.row(0), &[3.0, 4.0, 6.0]);
    }
}
