use crate::error::{GnhError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// `n` input/label pairs stored column-wise (one column per data point).
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    inputs: Matrix<T>,
    labels: Matrix<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(inputs: Matrix<T>, labels: Matrix<T>) -> Result<Self> {
        if inputs.cols() == 0 {
            return Err(GnhError::shape("batch needs at least one data point"));
        }
        if inputs.cols() != labels.cols() {
            return Err(GnhError::shape(format!(
                "{} inputs but {} labels",
                inputs.cols(),
                labels.cols()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    /// One-hot labels from class indices.
    pub fn from_classes(inputs: Matrix<T>, classes: &[usize], num_classes: usize) -> Result<Self> {
        if let Some(&bad) = classes.iter().find(|&&c| c >= num_classes) {
            return Err(GnhError::shape(format!("class {bad} >= {num_classes}")));
        }
        let mut labels = Matrix::zeros(num_classes, classes.len());
        for (i, &c) in classes.iter().enumerate() {
            labels[(c, i)] = T::one();
        }
        Self::new(inputs, labels)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.inputs.cols()
    }

    /// Always false; a batch holds at least one point.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.rows()
    }

    pub fn label_dim(&self) -> usize {
        self.labels.rows()
    }

    pub fn inputs(&self) -> &Matrix<T> {
        &self.inputs
    }

    pub fn labels(&self) -> &Matrix<T> {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &[T] {
        self.inputs.col(i)
    }

    pub fn label(&self, i: usize) -> &[T] {
        self.labels.col(i)
    }

    pub fn labels_mut(&mut self) -> &mut Matrix<T> {
        &mut self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.inputs.select_cols(indices),
            self.labels.select_cols(indices),
        )
    }
}
