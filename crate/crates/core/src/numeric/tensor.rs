use crate::error::{ensure, Error, Result};

/// Dense row-major array of `f64` with an optional gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        ensure!(
            shape.iter().all(|&d| d > 0) || data.is_empty(),
            Contract,
            "shape {shape:?} has a zero dimension but {} values",
            data.len()
        );
        let expected: usize = shape.iter().product();
        ensure!(
            expected == data.len(),
            Contract,
            "shape {shape:?} needs {expected} values, got {}",
            data.len()
        );
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    /// Builds an `rows × cols` matrix. `rows` may be zero.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            rows * cols == data.len(),
            Contract,
            "{rows}x{cols} matrix needs {} values, got {}",
            rows * cols,
            data.len()
        );
        Ok(Self {
            shape: vec![rows, cols],
            data,
            grad: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        ensure!(
            rows.iter().all(|r| r.len() == cols),
            Contract,
            "ragged rows"
        );
        Self::matrix(rows.len(), cols, rows.concat())
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

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        ensure!(
            grad.len() == self.data.len(),
            Contract,
            "gradient length {} does not match {} values",
            grad.len(),
            self.data.len()
        );
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn item(&self) -> Result<f64> {
        ensure!(
            self.data.len() == 1,
            Contract,
            "item() on tensor of shape {:?}",
            self.shape
        );
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        ensure!(
            expected == self.data.len(),
            Contract,
            "cannot reshape {:?} into {shape:?}",
            self.shape
        );
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `(rows, cols)` for a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Contract(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        let c = self.cols().max(1);
        self.data.chunks_exact(c)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
