//! Dense row-major `f64` tensors.

use crate::error::{Error, Result};

/// A dense tensor with row-major layout (outermost dimension slowest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero dimension in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![value; len] }
    }

    /// Builds a tensor without re-validating; callers guarantee the length.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
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

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    /// Number of elements in one slice along the leading axis.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, index: usize) -> &[f64] {
        let n = self.row_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn row_mut(&mut self, index: usize) -> &mut [f64] {
        let n = self.row_len();
        &mut self.data[index * n..(index + 1) * n]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Gathers the given leading-axis rows into a new tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("cannot select zero rows".into()));
        }
        let n = self.row_len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= self.shape[0] {
                return Err(Error::Shape(format!(
                    "row {r} out of range for leading dimension {}",
                    self.shape[0]
                )));
            }
            data.extend_from_slice(self.row(r));
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Ok(Self { shape, data })
    }

    /// Removes the given indices along `axis`. Indices must be unique and in range.
    pub fn remove_indices(&self, axis: usize, remove: &[usize]) -> Result<Self> {
        let extent = self.shape[axis];
        let mut keep_mask = vec![true; extent];
        for &i in remove {
            if i >= extent {
                return Err(Error::Shape(format!("index {i} out of range for axis {axis} (extent {extent})")));
            }
            keep_mask[i] = false;
        }
        let keep: Vec<usize> = (0..extent).filter(|&i| keep_mask[i]).collect();
        if keep.is_empty() {
            return Err(Error::Shape(format!("removing every index along axis {axis}")));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * keep.len() * inner);
        for o in 0..outer {
            let base = o * extent * inner;
            for &k in &keep {
                data.extend_from_slice(&self.data[base + k * inner..base + (k + 1) * inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = keep.len();
        Ok(Self { shape, data })
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}
