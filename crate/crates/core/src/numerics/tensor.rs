use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::Shape(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        assert_eq!(rows * cols, data.len(), "matrix {rows}x{cols}");
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn row_vector(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows and columns, treating 1-d tensors as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => {
                let c = *s.last().unwrap_or(&1);
                (self.data.len() / c.max(1), c)
            }
        }
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NumericsError> {
        let (m, k) = self.dims2();
        let (k2, n) = other.dims2();
        if k != k2 {
            return Err(NumericsError::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, 0.0);
        Ok(Tensor::matrix(m, n, out))
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = self.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, out)
    }
}

/// `c = op(a) * op(b) + beta * c` where `op(a)` is `m x k` and `op(b)` is
/// `k x n`. A transposed operand is stored row-major in its untransposed
/// shape.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe in-bounds views of `a` (m*k), `b` (k*n) and `c` (m*n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numerically stable in-place softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// In-place log-softmax of one row.
pub fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}
