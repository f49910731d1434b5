use crate::{Error, Result};

/// `(N, C, H, W)` extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one `H × W` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

/// Dense `f64` array with a same-shape gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::Shape(format!("{} values for shape {:?}", values.len(), shape.dims())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor values".into()));
        }
        let grad = vec![0.0; values.len()];
        Ok(Self { shape, values, grad })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self { shape, values: vec![0.0; shape.len()], grad: vec![0.0; shape.len()] }
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(Shape::scalar(), vec![v])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Channel `c` of batch item `n`.
    pub fn channel(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.values[start..start + p]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }

    pub(crate) fn take_grad(&mut self) -> Vec<f64> {
        std::mem::take(&mut self.grad)
    }

    pub(crate) fn set_grad(&mut self, grad: Vec<f64>) {
        self.grad = grad;
    }

    pub(crate) fn split_mut(&mut self) -> (&[f64], &mut [f64]) {
        (&self.values, &mut self.grad)
    }

    pub(crate) fn from_parts(shape: Shape, values: Vec<f64>) -> Self {
        let grad = vec![0.0; values.len()];
        Self { shape, values, grad }
    }
}
