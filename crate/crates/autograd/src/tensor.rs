use crate::error::{AutogradError, Result};
use crate::scalar::Scalar;

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutogradError::InvalidShape {
                op: "from_vec",
                reason: format!("shape {shape:?} needs {expected} elements, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| S::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> S {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} of size {dim}");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(AutogradError::InvalidShape {
                op: "reshape",
                reason: format!("cannot reshape {:?} into {shape:?}", self.shape),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last_two(&self) -> Result<Self> {
        let rank = self.shape.len();
        if rank < 2 {
            return Err(AutogradError::InvalidShape {
                op: "transpose_last_two",
                reason: format!("needs rank >= 2, got {:?}", self.shape),
            });
        }
        let (m, n) = (self.shape[rank - 2], self.shape[rank - 1]);
        let mut shape = self.shape.clone();
        shape.swap(rank - 2, rank - 1);
        Ok(Self {
            shape,
            data: transpose_blocks(&self.data, m, n),
        })
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Transposes every trailing `m×n` block of a buffer.
pub(crate) fn transpose_blocks<S: Copy>(data: &[S], m: usize, n: usize) -> Vec<S> {
    let block = m * n;
    let mut out = Vec::with_capacity(data.len());
    if block == 0 {
        return out;
    }
    for chunk in data.chunks_exact(block) {
        for j in 0..n {
            for i in 0..m {
                out.push(chunk[i * n + j]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f64>::from_vec(vec![2, 2], vec![1.0; 3]).is_err());
        let t = Tensor::<f64>::from_vec(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.at(&[1, 2]), 5.0);
    }

    #[test]
    fn transpose_twice_is_identity() {
        let t = Tensor::<f64>::from_vec(vec![2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let tt = t.transpose_last_two().unwrap();
        assert_eq!(tt.shape(), &[2, 4, 3]);
        assert_eq!(tt.at(&[1, 3, 2]), t.at(&[1, 2, 3]));
        assert_eq!(tt.transpose_last_two().unwrap(), t);
    }

    #[test]
    fn scalar_has_one_element() {
        let s = Tensor::scalar(2.5f32);
        assert_eq!(s.numel(), 1);
        assert!(s.shape().is_empty());
    }
}
