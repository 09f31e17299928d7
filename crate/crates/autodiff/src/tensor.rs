//! Dense row-major arrays of rank 0, 1 or 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense array of `f64` values stored in row-major order.
///
/// Rank is limited to 2; a scalar has the empty shape `[]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(Error::Shape(format!("rank {} tensors are not supported", shape.len())));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a rank-0 tensor (or the single element of any one-element tensor).
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Number of rows when the tensor is viewed as a matrix. Vectors are a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Number of columns when viewed as a matrix.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Copies rows `start..end` into a new tensor (matrix input) or elements (vector input).
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        match self.shape.len() {
            2 => {
                let c = self.shape[1];
                Tensor {
                    shape: vec![end - start, c],
                    data: self.data[start * c..end * c].to_vec(),
                }
            }
            _ => Tensor::vector(self.data[start..end].to_vec()),
        }
    }
}

/// `C = A · B` for row-major matrices, optionally transposing either operand.
pub(crate) fn gemm(
    a: &[f64],
    a_shape: (usize, usize),
    trans_a: bool,
    b: &[f64],
    b_shape: (usize, usize),
    trans_b: bool,
    out: &mut [f64],
    accumulate: bool,
) {
    let (ar, ac) = a_shape;
    let (br, bc) = b_shape;
    let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
    debug_assert_eq!(k, k2);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if trans_b { (1, bc as isize) } else { (bc as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides and extents describe exactly the slices passed in.
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
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
