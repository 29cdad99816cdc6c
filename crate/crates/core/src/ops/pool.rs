//! Average, max and global-average pooling.

use crate::tensor::{Result, Shape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Average,
    Max,
    GlobalAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn output(&self, s: Shape, op: &'static str) -> Result<Shape> {
        if self.k == 0 || self.stride == 0 {
            return Err(TensorError::spec(op, "kernel and stride must be positive"));
        }
        if self.k > s.h + 2 * self.pad || self.k > s.w + 2 * self.pad {
            return Err(TensorError::spec(op, format!("kernel {} exceeds padded input {}x{}", self.k, s.h, s.w)));
        }
        let oh = (s.h + 2 * self.pad - self.k) / self.stride + 1;
        let ow = (s.w + 2 * self.pad - self.k) / self.stride + 1;
        Ok(Shape::new(s.n, s.c, oh, ow))
    }

    /// Input rows (or columns) covered by output index `o`, clipped to the input.
    fn span(&self, o: usize, len: usize) -> std::ops::Range<usize> {
        let start = (o * self.stride) as isize - self.pad as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + self.k as isize).max(0) as usize).min(len);
        lo..hi
    }
}

/// Zero-padded average pooling; the divisor is always `k·k`.
pub(crate) fn avg_forward(x: &Tensor, win: Window) -> Result<Tensor> {
    let s = x.shape();
    let o = win.output(s, "avg_pool")?;
    let norm = 1.0 / (win.k * win.k) as f64;
    let mut out = Vec::with_capacity(o.numel());
    for plane in x.data().chunks(s.plane()) {
        for oy in 0..o.h {
            let rows = win.span(oy, s.h);
            for ox in 0..o.w {
                let cols = win.span(ox, s.w);
                let mut acc = 0.0;
                for iy in rows.clone() {
                    acc += plane[iy * s.w + cols.start..iy * s.w + cols.end].iter().sum::<f64>();
                }
                out.push(acc * norm);
            }
        }
    }
    Tensor::from_vec(o, out)
}

pub(crate) fn avg_backward(x: Shape, win: Window, dy: &[f64]) -> Vec<f64> {
    let o = win.output(x, "avg_pool").expect("validated in forward");
    let norm = 1.0 / (win.k * win.k) as f64;
    let mut dx = vec![0.0; x.numel()];
    for (dplane, gplane) in dx.chunks_mut(x.plane()).zip(dy.chunks(o.plane())) {
        for oy in 0..o.h {
            let rows = win.span(oy, x.h);
            for ox in 0..o.w {
                let g = gplane[oy * o.w + ox] * norm;
                for iy in rows.clone() {
                    for ix in win.span(ox, x.w) {
                        dplane[iy * x.w + ix] += g;
                    }
                }
            }
        }
    }
    dx
}

/// Max pooling without padding; returns the flat argmax (first maximum) of
/// every window alongside the output.
pub(crate) fn max_forward(x: &Tensor, win: Window) -> Result<(Tensor, Vec<usize>)> {
    let s = x.shape();
    let o = win.output(s, "max_pool")?;
    let mut out = Vec::with_capacity(o.numel());
    let mut arg = Vec::with_capacity(o.numel());
    for (p, plane) in x.data().chunks(s.plane()).enumerate() {
        for oy in 0..o.h {
            for ox in 0..o.w {
                let mut best = (f64::NEG_INFINITY, 0);
                for iy in win.span(oy, s.h) {
                    for ix in win.span(ox, s.w) {
                        let v = plane[iy * s.w + ix];
                        if v > best.0 {
                            best = (v, p * s.plane() + iy * s.w + ix);
                        }
                    }
                }
                out.push(best.0);
                arg.push(best.1);
            }
        }
    }
    Ok((Tensor::from_vec(o, out)?, arg))
}

pub(crate) fn global_avg_forward(x: &Tensor) -> Tensor {
    let s = x.shape();
    let data = x.data().chunks(s.plane()).map(|p| p.iter().sum::<f64>() / p.len() as f64).collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data).expect("one value per plane")
}

/// Pools `x` with a `k×k` window and stride `s` (no padding). The global
/// variant ignores `k` and `s` and yields `(n, c, 1, 1)`.
pub fn pool(x: &Tensor, kind: PoolKind, k: usize, s: usize) -> Result<Tensor> {
    let win = Window { k, stride: s, pad: 0 };
    match kind {
        PoolKind::Average => avg_forward(x, win),
        PoolKind::Max => Ok(max_forward(x, win)?.0),
        PoolKind::GlobalAverage => Ok(global_avg_forward(x)),
    }
}

/// Average pooling with symmetric zero padding, counting padded cells in the
/// divisor.
pub fn avg_pool_padded(x: &Tensor, k: usize, stride: usize, pad: usize) -> Result<Tensor> {
    avg_forward(x, Window { k, stride, pad })
}
