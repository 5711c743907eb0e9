//! Shaped f64 arrays, the storage type behind every tensor in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("element count {count} does not match shape {shape:?}")]
    BadElementCount { count: usize, shape: Vec<usize> },
    #[error("expected scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad container: {0}")]
    BadContainer(String),
}

/// Dense row-major array of f64 values.
///
/// Training state is held in 64-bit floats throughout; the checkpoint
/// container optionally narrows to f32 on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
}

impl Array {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumError> {
        let count: usize = shape.iter().product();
        if count != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(NumError::BadElementCount {
                count: data.len(),
                shape,
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let count: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; count],
            requires_grad: false,
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let count: usize = shape.iter().product();
        Self {
            shape,
            data: vec![value; count],
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn item(&self) -> Result<f64, NumError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(NumError::NotScalar(self.shape.clone()))
        }
    }

    /// Rows of a 2-D array (a rank-1 array counts as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Columns of a 2-D array (a rank-1 array is one row wide).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, NumError> {
        let count: usize = shape.iter().product();
        if count != self.data.len() {
            return Err(NumError::BadElementCount {
                count: self.data.len(),
                shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_count_must_match_shape() {
        assert!(Array::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Array::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Array::from_vec(vec![0], vec![]).is_err());
    }

    #[test]
    fn scalar_item() {
        assert_eq!(Array::scalar(4.5).item().unwrap(), 4.5);
        assert!(Array::zeros(vec![2]).item().is_err());
    }

    #[test]
    fn rows_cols_views() {
        let a = Array::zeros(vec![3, 4]);
        assert_eq!((a.rows(), a.cols()), (3, 4));
        let v = Array::zeros(vec![5]);
        assert_eq!((v.rows(), v.cols()), (1, 5));
        let m = Array::zeros(vec![2, 3, 4]);
        assert_eq!((m.rows(), m.cols()), (2, 12));
    }
}
