use crate::error::{Error, Result};

/// Dense 64-bit float tensor stored row-major.
///
/// Shapes are one- or two-dimensional: `[n]` for vectors (biases), `[m, n]`
/// for matrices, and `[1, 1]` for scalars produced by full reductions.
/// Zero-row matrices (`[0, n]`) are legal and flow through row-wise ops;
/// reductions reject them explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor, validating that the data length matches the shape and
    /// that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "tensor construction",
                value: bad,
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Internal constructor for op outputs whose invariants were already
    /// checked by the tape.
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![1, 1], vec![v])
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// (rows, cols) view of the shape: vectors are `1 × n`.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1]),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// First non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<f64> {
        self.data.iter().copied().find(|v| !v.is_finite())
    }
}
