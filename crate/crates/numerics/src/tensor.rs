use thiserror::Error;

/// Contract violations raised by the numeric kernels.
#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("non-finite value produced: {context}")]
    NonFinite { context: String },
}

/// Shape-carrying n-dimensional array of f64, row-major.
///
/// The single numeric currency of the workspace: latents, noise, text
/// embeddings and weights are all `DenseTensor`s.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    /// Builds a tensor, checking that `data.len()` equals the shape product
    /// and that every extent is positive.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(NumericsError::InvalidShape {
                shape,
                reason: "extents must be positive".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(NumericsError::InvalidShape {
                shape,
                reason: format!("data length {} != shape product {}", data.len(), numel),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..numel {
            data.push(f(&idx));
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Self { shape: shape.to_vec(), data }
    }

    /// Standard-normal entries drawn in row-major order from `rng`.
    pub fn randn(shape: &[usize], rng: &mut crate::SeededRng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.normal()).collect();
        Self { shape: shape.to_vec(), data }
    }

    /// Uniform entries in `[lo, hi)` drawn in row-major order.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut crate::SeededRng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| lo + (hi - lo) * rng.uniform()).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (d, &i) in index.iter().enumerate() {
            debug_assert!(i < self.shape[d]);
            off = off * self.shape[d] + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Reinterprets the data with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.iter().any(|&e| e == 0) {
            return Err(NumericsError::ShapeMismatch {
                context: "reshape",
                expected: self.shape.clone(),
                got: shape.to_vec(),
            });
        }
        Ok(Self { shape: shape.to_vec(), data: self.data.clone() })
    }

    fn check_same_shape(&self, other: &Self, context: &'static str) -> Result<(), NumericsError> {
        if self.shape != other.shape {
            return Err(NumericsError::ShapeMismatch {
                context,
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, NumericsError> {
        self.check_same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NumericsError> {
        self.check_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn mul(&self, other: &Self) -> Result<Self, NumericsError> {
        self.check_same_shape(other, "mul")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn scale(&self, s: f64) -> Self {
        let data = self.data.iter().map(|a| a * s).collect();
        Self { shape: self.shape.clone(), data }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let data = self.data.iter().map(|&a| f(a)).collect();
        Self { shape: self.shape.clone(), data }
    }

    /// `self + s * other`, elementwise.
    pub fn add_scaled(&self, other: &Self, s: f64) -> Result<Self, NumericsError> {
        self.check_same_shape(other, "add_scaled")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + s * b).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose2d(&self) -> Result<Self, NumericsError> {
        if self.rank() != 2 {
            return Err(NumericsError::InvalidShape {
                shape: self.shape.clone(),
                reason: "transpose2d requires rank 2".into(),
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = Self::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(out)
    }

    /// Rows `[from, to)` of a 2-D tensor.
    pub fn slice_rows(&self, from: usize, to: usize) -> Result<Self, NumericsError> {
        if self.rank() != 2 || to > self.shape[0] || from >= to {
            return Err(NumericsError::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("slice_rows {from}..{to} out of range"),
            });
        }
        let n = self.shape[1];
        Ok(Self {
            shape: vec![to - from, n],
            data: self.data[from * n..to * n].to_vec(),
        })
    }

    /// Columns `[from, to)` of a 2-D tensor.
    pub fn slice_cols(&self, from: usize, to: usize) -> Result<Self, NumericsError> {
        if self.rank() != 2 || to > self.shape[1] || from >= to {
            return Err(NumericsError::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("slice_cols {from}..{to} out of range"),
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let w = to - from;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&self.data[i * n + from..i * n + to]);
        }
        Ok(Self { shape: vec![m, w], data })
    }

    /// Concatenates 2-D tensors along rows, in argument order.
    pub fn concat_rows(parts: &[Self]) -> Result<Self, NumericsError> {
        let first = parts.first().ok_or_else(|| NumericsError::InvalidShape {
            shape: vec![],
            reason: "concat_rows of empty list".into(),
        })?;
        let n = first.shape[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.rank() != 2 || p.shape[1] != n {
                return Err(NumericsError::ShapeMismatch {
                    context: "concat_rows",
                    expected: vec![0, n],
                    got: p.shape.clone(),
                });
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Self { shape: vec![rows, n], data })
    }

    /// Concatenates 2-D tensors along columns, in argument order.
    pub fn concat_cols(parts: &[Self]) -> Result<Self, NumericsError> {
        let first = parts.first().ok_or_else(|| NumericsError::InvalidShape {
            shape: vec![],
            reason: "concat_cols of empty list".into(),
        })?;
        let m = first.shape[0];
        let total: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for p in parts {
                if p.rank() != 2 || p.shape[0] != m {
                    return Err(NumericsError::ShapeMismatch {
                        context: "concat_cols",
                        expected: vec![m, 0],
                        got: p.shape.clone(),
                    });
                }
                let n = p.shape[1];
                data.extend_from_slice(&p.data[i * n..(i + 1) * n]);
            }
        }
        Ok(Self { shape: vec![m, total], data })
    }

    /// Sum of all elements, accumulated left to right.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Mean of all elements.
    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max absolute elementwise difference; tensors must share a shape.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, NumericsError> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_zero_extent() {
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(DenseTensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn offset_is_row_major() {
        let t = DenseTensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.get(&[1, 2]), 5.0);
        assert_eq!(t.get(&[0, 1]), 1.0);
    }

    #[test]
    fn slice_concat_roundtrip() {
        let t = DenseTensor::new(vec![2, 4], (0..8).map(|v| v as f64).collect()).unwrap();
        let a = t.slice_cols(0, 2).unwrap();
        let b = t.slice_cols(2, 4).unwrap();
        assert_eq!(DenseTensor::concat_cols(&[a, b]).unwrap(), t);
        let r0 = t.slice_rows(0, 1).unwrap();
        let r1 = t.slice_rows(1, 2).unwrap();
        assert_eq!(DenseTensor::concat_rows(&[r0, r1]).unwrap(), t);
    }
}
