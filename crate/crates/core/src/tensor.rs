//! Dense float64 tensors in flat row-major storage.
//!
//! Leaf construction rejects NaN and infinite entries so bad values surface
//! at the boundary where data enters the graph, not deep inside a training
//! step. Results of arithmetic are not re-validated; overflow is caught by
//! the training loops' loss checks instead.

use std::fmt;

/// Errors from tensor construction and graph operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes are incompatible for the named op.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Data length does not match the product of the requested shape.
    LengthMismatch { shape: Vec<usize>, len: usize },
    /// A non-finite value appeared; the context says where (and, for
    /// training aborts, carries the run diagnostics).
    NonFinite { context: String },
    /// Backward was started from a node that is not a scalar.
    NotScalar { shape: Vec<usize> },
    /// Anything else: empty axes, bad hyperparameters, mismatched counts.
    Invalid { op: &'static str, msg: String },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            TensorError::LengthMismatch { shape, len } => {
                write!(f, "tensor: shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())
            }
            TensorError::NonFinite { context } => write!(f, "{context}: non-finite value"),
            TensorError::NotScalar { shape } => {
                write!(f, "backward: root must be a scalar, got shape {shape:?}")
            }
            TensorError::Invalid { op, msg } => write!(f, "{op}: {msg}"),
        }
    }
}

impl std::error::Error for TensorError {}

/// A dense tensor of 64-bit floats. Scalars have the empty shape `[]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a leaf tensor, validating length and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch { shape, len: data.len() });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { context: "tensor".into() });
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for op results; skips the finiteness scan.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Result<Tensor, TensorError> {
        Tensor::new(Vec::new(), vec![value])
    }

    /// Rank-1 tensor from a value list.
    pub fn vector(data: Vec<f64>) -> Result<Tensor, TensorError> {
        Tensor::new(vec![data.len()], data)
    }

    /// Rank-2 tensor from row-major values.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor, TensorError> {
        Tensor::new(vec![rows, cols], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of rows of a rank-2 tensor.
    ///
    /// Panics on other ranks; callers check rank at the op boundary.
    pub fn rows(&self) -> usize {
        assert_eq!(self.rank(), 2, "rows() needs a rank-2 tensor");
        self.shape[0]
    }

    /// Number of columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.rank(), 2, "cols() needs a rank-2 tensor");
        self.shape[1]
    }

    /// The single value of a one-element tensor.
    ///
    /// Panics if the tensor holds more than one value; this is a programmer
    /// error, not a data error.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() needs a one-element tensor, shape is {:?}", self.shape);
        self.data[0]
    }

    /// One row of a rank-2 tensor as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_validates_length() {
        let err = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, TensorError::LengthMismatch { .. }));
    }

    #[test]
    fn construction_rejects_non_finite() {
        assert!(matches!(
            Tensor::vector(vec![1.0, f64::NAN]).unwrap_err(),
            TensorError::NonFinite { .. }
        ));
        assert!(matches!(
            Tensor::vector(vec![f64::INFINITY]).unwrap_err(),
            TensorError::NonFinite { .. }
        ));
        assert!(Tensor::vector(vec![1.0, -2.5]).is_ok());
    }

    #[test]
    fn scalar_shape_is_empty() {
        let s = Tensor::scalar(4.25).unwrap();
        assert_eq!(s.shape(), &[] as &[usize]);
        assert_eq!(s.item(), 4.25);
    }

    #[test]
    fn row_access() {
        let m = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(m.rows(), 2);
        assert_eq!(m.cols(), 3);
    }
}
