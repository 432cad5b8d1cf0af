use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` in row-major order.
///
/// A rank-0 tensor (empty shape) holds a single scalar. All forward ops in
/// this crate keep values finite for finite inputs; serialization narrows to
/// `f32` (see [`crate::nn::weights`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} implies {} values, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!(
                    "cannot reshape {} values into {:?} ({} values)",
                    self.data.len(),
                    shape,
                    n
                ),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute difference to another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Flat offset of `[n, c, h, w]` for an NCHW tensor.
    #[inline]
    pub fn idx4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    /// Dimensions of an NCHW tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("expected a rank-4 NCHW tensor, got shape {:?}", self.shape),
            });
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    /// Dimensions of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("expected a rank-2 tensor, got shape {:?}", self.shape),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }
}
