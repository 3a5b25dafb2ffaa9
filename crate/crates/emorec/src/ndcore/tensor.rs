use super::{NdError, NodeId};

/// Shape-tagged row-major array of 64-bit floats, optionally tracked on a
/// [`Tape`](super::Tape).
///
/// Construction from external data rejects NaN/Inf and shape/length
/// mismatches. Vectors are represented as `[1, n]` row matrices so every
/// operation can stay 2-D.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    node: Option<NodeId>,
}

impl Tensor {
    /// Validating constructor for external data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NdError> {
        if shape.contains(&0) {
            return Err(NdError::BadShape {
                op: "Tensor::new",
                expected: "positive dimensions",
                shape,
            });
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(NdError::LengthMismatch {
                len: data.len(),
                shape,
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(NdError::NonFinite {
                value: data[index],
                index,
            });
        }
        Ok(Self {
            shape,
            data,
            node: None,
        })
    }

    /// Constructor for internally computed values; skips finiteness checks.
    pub(crate) fn unchecked(shape: Vec<usize>, data: Vec<f64>, node: Option<NodeId>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data, node }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Result<Self, NdError> {
        Self::new(vec![1, 1], vec![value])
    }

    /// A `[1, n]` row vector.
    pub fn row_vector(data: Vec<f64>) -> Result<Self, NdError> {
        let n = data.len();
        Self::new(vec![1, n], data)
    }

    /// A `[rows.len(), width]` matrix from equal-width rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NdError> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(height * width);
        for row in rows {
            if row.len() != width {
                return Err(NdError::ShapeMismatch {
                    op: "Tensor::from_rows",
                    lhs: vec![1, width],
                    rhs: vec![1, row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![height, width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Row count of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    /// Borrow row `i` of a 2-D tensor.
    pub fn row_slice(&self, i: usize) -> &[f64] {
        let w = self.cols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_length_against_shape() {
        let err = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, NdError::LengthMismatch { len: 3, .. }));
    }

    #[test]
    fn new_rejects_non_finite() {
        let err = Tensor::new(vec![1, 3], vec![1.0, f64::NAN, 3.0]).unwrap_err();
        assert!(matches!(err, NdError::NonFinite { index: 1, .. }));
        let err = Tensor::new(vec![1, 1], vec![f64::INFINITY]).unwrap_err();
        assert!(matches!(err, NdError::NonFinite { index: 0, .. }));
    }

    #[test]
    fn new_rejects_zero_dimension() {
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn from_rows_requires_equal_widths() {
        let err = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert!(matches!(err, NdError::ShapeMismatch { .. }));
    }

    #[test]
    fn accessors() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.at(1, 0), 3.0);
        assert_eq!(t.row_slice(1), &[3.0, 4.0]);
        assert!(t.node().is_none());
    }
}
