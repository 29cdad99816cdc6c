//! Dense rank-4 tensors in `(n, c, h, w)` layout.

use std::fmt;

use thiserror::Error;

/// Errors raised by tensor construction, operators and the autodiff graph.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("invalid spec for {op}: {detail}")]
    InvalidSpec { op: &'static str, detail: String },
    #[error("invalid input to {op}: {detail}")]
    InvalidInput { op: &'static str, detail: String },
    #[error("backward seed must be a scalar, got shape {0}")]
    NonScalarSeed(Shape),
    #[error("function is not deterministic: re-evaluation differs by {0:e}")]
    NonDeterministic(f64),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn spec(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::InvalidSpec { op, detail: detail.into() }
    }

    pub(crate) fn input(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::InvalidInput { op, detail: detail.into() }
    }
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Shape of a rank-4 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Number of elements in one `(h, w)` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

/// Dense double-precision tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(TensorError::dim(
                "from_vec",
                format!("shape {shape} needs {} elements, got {}", shape.numel(), data.len()),
            ));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Shape>, value: f64) -> Self {
        let shape = shape.into();
        Tensor { shape, data: vec![value; shape.numel()], requires_grad: false, grad: None }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Shape::scalar(), value)
    }

    /// Builds a tensor by evaluating `f` at every `(n, c, h, w)` coordinate.
    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = v;
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.shape.is_scalar());
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_requires_grad(mut self, on: bool) -> Self {
        self.set_requires_grad(on);
        self
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub(crate) fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn reshape(mut self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != self.shape.numel() {
            return Err(TensorError::dim("reshape", format!("{} -> {shape}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Samples `[n0, n0 + count)` along the batch axis.
    pub fn batch_slice(&self, n0: usize, count: usize) -> Tensor {
        let per = self.shape.c * self.shape.plane();
        let data = self.data[n0 * per..(n0 + count) * per].to_vec();
        Tensor { shape: Shape::new(count, self.shape.c, self.shape.h, self.shape.w), data, requires_grad: false, grad: None }
    }

    /// Stacks same-shaped tensors along the batch axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| TensorError::input("stack", "no tensors"))?.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            let s = p.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(TensorError::dim("stack", format!("{s} vs {first}")));
            }
            n += s.n;
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(Shape::new(n, first.c, first.h, first.w), data)
    }
}

/// Geometry of a (possibly transposed) 2-D convolution.
///
/// For a transposed spec, `in_channels` is the channel count of the tensor
/// being upsampled, i.e. the leading dimension of the weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub transposed: bool,
}

impl ConvSpec {
    /// Square kernel, stride 1, no padding, no dilation.
    pub fn new(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: 1,
            padding: 0,
            dilation: 1,
            transposed: false,
        }
    }

    pub fn transposed(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvSpec { transposed: true, ..Self::new(in_channels, out_channels, k) }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    /// Shape of the weight tensor this spec expects.
    pub fn weight_shape(&self) -> Shape {
        let (kh, kw) = self.kernel;
        if self.transposed {
            Shape::new(self.in_channels, self.out_channels, kh, kw)
        } else {
            Shape::new(self.out_channels, self.in_channels, kh, kw)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let op = if self.transposed { "conv_transpose2d" } else { "conv2d" };
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(TensorError::spec(op, "channel counts must be positive"));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(TensorError::spec(op, "kernel, stride and dilation must be positive"));
        }
        Ok(())
    }

    /// Output spatial size for an input of `(h, w)`, or an error when the
    /// result would be empty.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let op = if self.transposed { "conv_transpose2d" } else { "conv2d" };
        let one = |len: usize, k: usize| -> Option<usize> {
            let (len, k) = (len as i64, k as i64);
            let (s, p, d) = (self.stride as i64, self.padding as i64, self.dilation as i64);
            let out = if self.transposed {
                (len - 1) * s - 2 * p + d * (k - 1) + 1
            } else {
                let span = len + 2 * p - d * (k - 1) - 1;
                if span < 0 {
                    return None;
                }
                span / s + 1
            };
            (out > 0 && len > 0).then_some(out as usize)
        };
        match (one(h, self.kernel.0), one(w, self.kernel.1)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(TensorError::spec(op, format!("input {h}x{w} gives an empty output with {self:?}"))),
        }
    }
}
