//! Dense 4D tensor (batch, channels, height, width) in f64.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
    /// Optional gradient of identical shape.
    pub grad: Option<Vec<f64>>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 { n, c, h, w, data: vec![0.0; n * c * h * w], grad: None }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::Shape {
                expected: format!("({n}, {c}, {h}, {w}) = {} values", n * c * h * w),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Tensor4 { n, c, h, w, data, grad: None })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    /// Offset of the (n, c) plane.
    #[inline]
    pub fn plane_offset(&self, n: usize, c: usize) -> usize {
        (n * self.c + c) * self.h * self.w
    }

    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let o = self.plane_offset(n, c);
        &self.data[o..o + self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let o = self.plane_offset(n, c);
        let len = self.h * self.w;
        &mut self.data[o..o + len]
    }

    pub fn attach_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Shape {
                expected: format!("{} gradient values", self.data.len()),
                actual: format!("{}", grad.len()),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }
}
