use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Per-pixel error estimate in `[0,1]`, stored as `[H,W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap(Tensor);

impl ErrorMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_tensor(Tensor::new([height, width], data)?)
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        t.expect_rank("error_map", 2)?;
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("error score {v} outside [0,1]")));
        }
        Ok(ErrorMap(t))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ErrorMap(Tensor::zeros([height, width]))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.0.data()[y * self.width() + x]
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}
