//! Dense NCHW tensors and integer label maps.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Batch, channel, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape::new(1, 1, 1, 1);

    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Row-major N→C→H→W array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {} tensor",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn from_f64(shape: Shape, values: &[f64]) -> Result<Self> {
        Self::from_vec(shape, values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::SCALAR, value)
    }

    /// Per-channel vector stored as `1×C×1×1`.
    pub fn channel_vector(values: Vec<T>) -> Self {
        let shape = Shape::new(1, values.len(), 1, 1);
        Tensor {
            shape,
            data: values,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| T::lit(rng.random_range(lo..hi)))
            .collect();
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn accumulate_grad(&mut self, g: &[T]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    /// Contiguous `H×W` plane of item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let start = self.index(n, c, 0, 0);
        &self.data[start..start + self.shape.plane()]
    }

    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.item();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {} into {}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| U::from(v).expect("finite scalar cast"))
                .collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Split along channels into consecutive groups of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
        if sizes.iter().sum::<usize>() != self.shape.c {
            return Err(Error::Shape(format!(
                "channel split {:?} does not cover {} channels",
                sizes, self.shape.c
            )));
        }
        let plane = self.shape.plane();
        let mut out: Vec<Tensor<T>> = sizes
            .iter()
            .map(|&c| Tensor::zeros(self.shape.with_c(c)))
            .collect();
        for n in 0..self.shape.n {
            let mut c0 = 0;
            for (part, &c) in out.iter_mut().zip(sizes) {
                let src = self.index(n, c0, 0, 0);
                let dst = n * c * plane;
                part.data[dst..dst + c * plane].copy_from_slice(&self.data[src..src + c * plane]);
                c0 += c;
            }
        }
        Ok(out)
    }

    /// Stack along channels in argument order.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?
            .shape;
        for p in parts {
            let s = p.shape;
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::Shape(format!(
                    "concat mismatch: {} vs {}",
                    first, s
                )));
            }
        }
        let c_total: usize = parts.iter().map(|p| p.shape.c).sum();
        let shape = first.with_c(c_total);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for p in parts {
                data.extend_from_slice(p.item(n));
            }
        }
        Tensor::from_vec(shape, data)
    }
}

/// Integer class map `N×H×W`; [`crate::IGNORE_INDEX`] marks unlabeled pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labels {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Labels {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != n * h * w {
            return Err(Error::Shape(format!(
                "{} labels cannot fill {}x{}x{}",
                data.len(),
                n,
                h,
                w
            )));
        }
        Ok(Labels { n, h, w, data })
    }

    pub fn item(&self, n: usize) -> &[u8] {
        let len = self.h * self.w;
        &self.data[n * len..(n + 1) * len]
    }
}
