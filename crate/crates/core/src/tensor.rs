//! Dense row-major tensors over `f64` and complex `f64`.

use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Ordered list of positive extents.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.contains(&0) {
            return Err(Error::shape(format!("zero extent in {dims:?}")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::shape(format!("element count of {dims:?} overflows")))?;
        Ok(Shape(dims))
    }

    pub fn scalar() -> Self {
        Shape(vec![1])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0[axis]
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&[usize]> for Shape {
    /// Panics on a zero extent; use [`Shape::new`] for untrusted input.
    fn from(dims: &[usize]) -> Self {
        Shape::new(dims.to_vec()).expect("invalid shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.numel() != data.len() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_shape(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn ones(dims: &[usize]) -> Self {
        Self::full(dims, 1.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let shape = Shape::from(dims);
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = Shape::from(dims);
        let data = (0..shape.numel()).map(&mut f).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.numel() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`, elementwise.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Channel `c` of a rank-3 `[C, H, W]` tensor as `[H, W]`.
    pub fn channel(&self, c: usize) -> Result<Tensor> {
        let [ch, h, w] = self.dims3()?;
        if c >= ch {
            return Err(Error::shape(format!(
                "channel {c} out of range for {ch} channels"
            )));
        }
        Tensor::new(&[h, w], self.data[c * h * w..(c + 1) * h * w].to_vec())
    }

    /// First `n` channels of a `[C, H, W]` tensor.
    pub fn leading_channels(&self, n: usize) -> Result<Tensor> {
        let [ch, h, w] = self.dims3()?;
        if n == 0 || n > ch {
            return Err(Error::shape(format!("cannot take {n} of {ch} channels")));
        }
        Tensor::new(&[n, h, w], self.data[..n * h * w].to_vec())
    }

    pub fn stack_channels(channels: &[Tensor]) -> Result<Tensor> {
        let first = channels
            .first()
            .ok_or_else(|| Error::shape("no channels to stack"))?;
        let [h, w] = first.dims2()?;
        let mut data = Vec::with_capacity(channels.len() * h * w);
        for c in channels {
            first.expect_same_shape(c)?;
            data.extend_from_slice(&c.data);
        }
        Tensor::new(&[channels.len(), h, w], data)
    }

    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.dims() {
            &[a, b] => Ok([a, b]),
            d => Err(Error::shape(format!("expected rank 2, got {d:?}"))),
        }
    }

    pub fn dims3(&self) -> Result<[usize; 3]> {
        match self.dims() {
            &[a, b, c] => Ok([a, b, c]),
            d => Err(Error::shape(format!("expected rank 3, got {d:?}"))),
        }
    }

    pub fn to_complex(&self) -> ComplexTensor {
        ComplexTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&re| Complex64::new(re, 0.0))
                .collect(),
        }
    }

    /// Little-endian bytes of the payload.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Shape,
    data: Vec<Complex64>,
}

impl ComplexTensor {
    pub fn new(dims: &[usize], data: Vec<Complex64>) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.numel() != data.len() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(ComplexTensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let shape = Shape::from(dims);
        let n = shape.numel();
        ComplexTensor {
            shape,
            data: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn re(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z.re).collect(),
        }
    }

    pub fn im(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z.im).collect(),
        }
    }

    pub fn abs(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z.norm()).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_extent_rejected() {
        assert!(Shape::new(vec![2, 0]).is_err());
        assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn overflowing_shape_rejected() {
        assert!(Shape::new(vec![usize::MAX, 2]).is_err());
    }

    #[test]
    fn channel_slicing() {
        let t = Tensor::from_fn(&[3, 2, 2], |i| i as f64);
        assert_eq!(t.channel(1).unwrap().data(), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(t.leading_channels(2).unwrap().numel(), 8);
        let back = Tensor::stack_channels(&[
            t.channel(0).unwrap(),
            t.channel(1).unwrap(),
            t.channel(2).unwrap(),
        ])
        .unwrap();
        assert_eq!(back, t);
    }
}
