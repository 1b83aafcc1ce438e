//! Dense row-major f64 matrix and the small kernel of operations the rest of
//! the crate is built on. Rows are batch samples, columns are features.
//!
//! All arithmetic is 64-bit; gradient checks at 1e-4 relative tolerance are
//! not reachable in f32.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Matrix {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive");
        assert!(value.is_finite(), "matrix entries must be finite");
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!(
                "matrix dims must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Config(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry {bad} of a {rows}x{cols} matrix is {}",
                data[bad]
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        if rows.is_empty() {
            return Err(Error::Config("matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Config(format!(
                    "ragged rows: expected {cols} entries, got {}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn row_vector(data: Vec<f64>) -> Result<Matrix> {
        let cols = data.len();
        Matrix::from_vec(1, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Checks the container invariants after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.data.len() != self.rows * self.cols {
            return Err(Error::Malformed(format!(
                "matrix shape {}x{} inconsistent with data length {}",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{}x{} matrix contains a non-finite entry",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    fn shape_err(&self, op: &'static str, other: &Matrix) -> Error {
        Error::Shape {
            op,
            left: self.shape(),
            right: other.shape(),
        }
    }

    /// Standard matrix product; `self.cols` must equal `other.rows`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(self.shape_err("matmul", other));
        }
        let (m, n) = (self.rows, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a_ik * b;
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    fn zip(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(self.shape_err(op, other));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, "mul", |a, b| a * b)
    }

    /// In-place `self += scale * other`; the gradient-accumulation primitive.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(self.shape_err("add_scaled", other));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Matrix {
        self.map(|v| v * k)
    }

    pub fn tanh(&self) -> Matrix {
        self.map(f64::tanh)
    }

    pub fn sigmoid(&self) -> Matrix {
        self.map(sigmoid)
    }

    /// Derivative of tanh expressed in the already-activated value y = tanh(x).
    pub fn tanh_prime_from_y(&self) -> Matrix {
        self.map(|y| 1.0 - y * y)
    }

    /// Derivative of the sigmoid expressed in the already-activated value y.
    pub fn sigmoid_prime_from_y(&self) -> Matrix {
        self.map(|y| y * (1.0 - y))
    }

    fn zip_row(&self, row: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(self.shape_err(op, row));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                data.push(f(self.data[r * self.cols + c], row.data[c]));
            }
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Adds a 1xF row vector to every row.
    pub fn add_row(&self, row: &Matrix) -> Result<Matrix> {
        self.zip_row(row, "add_row", |a, b| a + b)
    }

    pub fn sub_row(&self, row: &Matrix) -> Result<Matrix> {
        self.zip_row(row, "sub_row", |a, b| a - b)
    }

    pub fn mul_row(&self, row: &Matrix) -> Result<Matrix> {
        self.zip_row(row, "mul_row", |a, b| a * b)
    }

    pub fn div_row(&self, row: &Matrix) -> Result<Matrix> {
        self.zip_row(row, "div_row", |a, b| a / b)
    }

    /// Column sums as a 1xF matrix.
    pub fn col_sum(&self) -> Matrix {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                sums[c] += self.data[r * self.cols + c];
            }
        }
        Matrix {
            rows: 1,
            cols: self.cols,
            data: sums,
        }
    }

    /// Per-column mean and population variance (divide by B, not B-1).
    pub fn col_stats(&self) -> (Matrix, Matrix) {
        let b = self.rows as f64;
        let mean = self.col_sum().scale(1.0 / b);
        let mut var = vec![0.0; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let d = self.data[r * self.cols + c] - mean.data[c];
                var[c] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= b;
        }
        (
            mean,
            Matrix {
                rows: 1,
                cols: self.cols,
                data: var,
            },
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn abs_max(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Numerically symmetric logistic sigmoid: sigmoid(x) + sigmoid(-x) == 1
/// to within an ulp or two for all finite x.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Euclidean norm over the concatenation of all entries of all matrices.
pub fn global_norm(ms: &[&Matrix]) -> f64 {
    let mut acc = 0.0;
    for m in ms {
        for &v in &m.data {
            acc += v * v;
        }
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_is_exact() {
        let a = mat(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let i = Matrix::identity(2);
        assert_eq!(i.matmul(&a).unwrap(), a);
        assert_eq!(a.matmul(&i).unwrap(), a);
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = mat(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        // Oracle: naive i/j/k accumulation, computed independently.
        let mut expect = Matrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                expect.set(i, j, acc);
            }
        }
        assert_eq!(expect, mat(2, 2, &[19.0, 22.0, 43.0, 50.0]));
        assert_eq!(a.matmul(&b).unwrap(), expect);
    }

    #[test]
    fn matmul_zero_row() {
        let a = mat(1, 2, &[0.0, 0.0]);
        let b = mat(2, 1, &[1.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap(), mat(1, 1, &[0.0]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn elementwise_ops() {
        let a = mat(1, 2, &[1.0, 2.0]);
        let b = mat(1, 2, &[3.0, 4.0]);
        assert_eq!(a.mul(&b).unwrap(), mat(1, 2, &[3.0, 8.0]));
        let ones = Matrix::filled(1, 2, 1.0);
        assert_eq!(a.mul(&ones).unwrap(), a);
        let zeros = Matrix::zeros(1, 2);
        assert_eq!(a.add(&zeros).unwrap(), a);
        assert!(a.add(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn activations_at_zero() {
        let z = Matrix::zeros(1, 1);
        assert_eq!(z.sigmoid().get(0, 0), 0.5);
        assert_eq!(z.tanh().get(0, 0), 0.0);
    }

    #[test]
    fn sigmoid_prime_from_activated_value() {
        let y = mat(1, 1, &[0.5]);
        // y(1-y) at 0.5, by hand: 0.25.
        assert_eq!(y.sigmoid_prime_from_y().get(0, 0), 0.25);
        // 1-y^2 at tanh output 0.6: 0.64.
        let t = mat(1, 1, &[0.6]);
        assert!((t.tanh_prime_from_y().get(0, 0) - 0.64).abs() < 1e-15);
    }

    #[test]
    fn col_stats_direct_formula() {
        let a = mat(2, 1, &[1.0, 3.0]);
        let (mean, var) = a.col_stats();
        assert_eq!(mean, mat(1, 1, &[2.0]));
        assert_eq!(var, mat(1, 1, &[1.0]));
    }

    #[test]
    fn col_stats_constant_column_and_single_row() {
        let c = Matrix::filled(3, 1, 4.25);
        let (mean, var) = c.col_stats();
        assert_eq!(mean.get(0, 0), 4.25);
        assert_eq!(var.get(0, 0), 0.0);

        let single = mat(1, 2, &[4.0, 7.0]);
        let (mean, var) = single.col_stats();
        assert_eq!(mean, mat(1, 2, &[4.0, 7.0]));
        assert_eq!(var, mat(1, 2, &[0.0, 0.0]));
    }

    #[test]
    fn global_norm_cases() {
        let m = mat(1, 2, &[3.0, 4.0]);
        assert_eq!(global_norm(&[&m]), 5.0);
        let z = Matrix::zeros(2, 2);
        assert_eq!(global_norm(&[&z, &z]), 0.0);
        let one = mat(1, 1, &[1.0]);
        assert_eq!(global_norm(&[&one, &one, &one, &one]), 2.0);
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(0, 2, vec![]).is_err());
    }

    #[test]
    fn broadcast_row_ops() {
        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let r = mat(1, 2, &[10.0, 20.0]);
        assert_eq!(a.add_row(&r).unwrap(), mat(2, 2, &[11.0, 22.0, 13.0, 24.0]));
        assert_eq!(a.sub_row(&r).unwrap(), mat(2, 2, &[-9.0, -18.0, -7.0, -16.0]));
        assert_eq!(a.mul_row(&r).unwrap(), mat(2, 2, &[10.0, 40.0, 30.0, 80.0]));
        assert!(a.add_row(&mat(1, 3, &[0.0; 3])).is_err());
    }

    #[test]
    fn transpose_roundtrip() {
        let a = mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.transpose().get(2, 1), 6.0);
    }
}
