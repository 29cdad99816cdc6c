//! Pointwise arithmetic, activations, channel concatenation and broadcasting.

use crate::tensor::{Result, Shape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Sub,
    Relu,
    Sigmoid,
    OneMinus,
    ConcatChannels,
}

/// Applies `op` to `operands` (one for unary ops, two for binary ones, any
/// positive number for channel concatenation).
pub fn elementwise(op: Elementwise, operands: &[&Tensor]) -> Result<Tensor> {
    let arity = |want: usize| {
        if operands.len() == want {
            Ok(())
        } else {
            Err(TensorError::input("elementwise", format!("{op:?} takes {want} operands, got {}", operands.len())))
        }
    };
    match op {
        Elementwise::Add => arity(2).and_then(|_| add(operands[0], operands[1])),
        Elementwise::Mul => arity(2).and_then(|_| mul(operands[0], operands[1])),
        Elementwise::Sub => arity(2).and_then(|_| sub(operands[0], operands[1])),
        Elementwise::Relu => arity(1).map(|_| relu(operands[0])),
        Elementwise::Sigmoid => arity(1).map(|_| operands[0].map(sigmoid)),
        Elementwise::OneMinus => arity(1).map(|_| operands[0].map(|v| 1.0 - v)),
        Elementwise::ConcatChannels => concat_channels(operands),
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::dim(op, format!("{} vs {}", a.shape(), b.shape())))
    }
}

fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    same_shape(op, a, b)?;
    Tensor::from_vec(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("mul", a, b, |x, y| x * y)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Concatenates along the channel axis, in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| TensorError::input("concat", "no operands"))?.shape();
    let mut channels = 0;
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(TensorError::dim("concat", format!("{s} does not match {first} outside channels")));
        }
        channels += s.c;
    }
    let out = Shape::new(first.n, channels, first.h, first.w);
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..first.n {
        for p in parts {
            let per = p.shape().c * first.plane();
            data.extend_from_slice(&p.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::from_vec(out, data)
}

/// Splits a channel-concatenated gradient back into per-operand pieces.
pub(crate) fn split_channels(dy: &[f64], out: Shape, channels: &[usize]) -> Vec<Vec<f64>> {
    let plane = out.plane();
    let mut parts: Vec<Vec<f64>> = channels.iter().map(|c| Vec::with_capacity(out.n * c * plane)).collect();
    for n in 0..out.n {
        let mut off = n * out.c * plane;
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&dy[off..off + c * plane]);
            off += c * plane;
        }
    }
    parts
}

/// Broadcasts size-1 axes of `x` up to `target`.
pub fn expand(x: &Tensor, target: Shape) -> Result<Tensor> {
    let s = x.shape();
    let ok = |a: usize, b: usize| a == b || a == 1;
    if !(ok(s.n, target.n) && ok(s.c, target.c) && ok(s.h, target.h) && ok(s.w, target.w)) {
        return Err(TensorError::dim("expand", format!("cannot broadcast {s} to {target}")));
    }
    let pick = |a: usize, i: usize| if a == 1 { 0 } else { i };
    Ok(Tensor::from_fn(target, |n, c, h, w| x.at(pick(s.n, n), pick(s.c, c), pick(s.h, h), pick(s.w, w))))
}

pub(crate) fn expand_backward(x: Shape, target: Shape, dy: &[f64]) -> Vec<f64> {
    let pick = |a: usize, i: usize| if a == 1 { 0 } else { i };
    let mut dx = vec![0.0; x.numel()];
    let mut i = 0;
    for n in 0..target.n {
        for c in 0..target.c {
            for h in 0..target.h {
                for w in 0..target.w {
                    dx[x.index(pick(x.n, n), pick(x.c, c), pick(x.h, h), pick(x.w, w))] += dy[i];
                    i += 1;
                }
            }
        }
    }
    dx
}
