//! Cross-correlation and its adjoint, lowered to im2col + GEMM.

use rayon::prelude::*;

use crate::tensor::{ConvSpec, Result, Shape, Tensor, TensorError};

/// Sliding-window geometry between an "image" grid and a "column" grid.
///
/// For `conv2d` the image is the input; for `conv_transpose2d` it is the
/// output, since the transposed op scatters columns back onto it.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dil: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate touched by output `o` at kernel tap `k`, if in range.
    #[inline]
    fn source(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        let pos = (o * self.stride + k * self.dil) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }
}

fn im2col(img: &[f64], g: &Geometry, col: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match g.source(oy, ki, g.h) {
                        None => line.fill(0.0),
                        Some(iy) => {
                            let src = &plane[iy * g.w..(iy + 1) * g.w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = g.source(ox, kj, g.w).map_or(0.0, |ix| src[ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &Geometry, img: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let Some(iy) = g.source(oy, ki, g.h) else { continue };
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for (ox, v) in line.iter().enumerate() {
                        if let Some(ix) = g.source(ox, kj, g.w) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c = a·b + beta·c` where `a` is `m×k` (or `k×m` when
/// `a_t`) and `b` is `k×n` (or `n×k` when `b_t`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold at least the m×k, k×n and m×n elements addressed
    // by these strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_weights(op: &'static str, x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<()> {
    spec.validate()?;
    if w.shape() != spec.weight_shape() {
        return Err(TensorError::dim(op, format!("weight {} but spec wants {}", w.shape(), spec.weight_shape())));
    }
    if x.shape().c != spec.in_channels {
        return Err(TensorError::dim(op, format!("input has {} channels, spec {}", x.shape().c, spec.in_channels)));
    }
    if let Some(b) = b {
        if b.len() != spec.out_channels {
            return Err(TensorError::dim(op, format!("bias has {} entries for {} channels", b.len(), spec.out_channels)));
        }
    }
    Ok(())
}

fn conv_geometry(x: Shape, spec: &ConvSpec) -> Result<Geometry> {
    let (oh, ow) = spec.output_hw(x.h, x.w)?;
    Ok(Geometry {
        c: spec.in_channels,
        h: x.h,
        w: x.w,
        oh,
        ow,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
        dil: spec.dilation,
    })
}

fn transposed_geometry(x: Shape, spec: &ConvSpec) -> Result<Geometry> {
    let (oh, ow) = spec.output_hw(x.h, x.w)?;
    Ok(Geometry {
        c: spec.out_channels,
        h: oh,
        w: ow,
        oh: x.h,
        ow: x.w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
        dil: spec.dilation,
    })
}

fn add_bias(out: &mut [f64], bias: Option<&Tensor>, plane: usize) {
    if let Some(b) = bias {
        for (chunk, &bv) in out.chunks_mut(plane).zip(b.data()) {
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
}

/// 2-D cross-correlation (no kernel flip) with weight `(out_c, in_c, kh, kw)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    if spec.transposed {
        return Err(TensorError::spec("conv2d", "spec is transposed"));
    }
    check_weights("conv2d", x, weight, bias, spec)?;
    let g = conv_geometry(x.shape(), spec)?;
    let s = x.shape();
    let in_per = s.c * s.plane();
    let out_c = spec.out_channels;
    let per_sample: Vec<Vec<f64>> = (0..s.n)
        .into_par_iter()
        .map(|n| {
            let mut col = vec![0.0; g.rows() * g.cols()];
            im2col(&x.data()[n * in_per..(n + 1) * in_per], &g, &mut col);
            let mut out = vec![0.0; out_c * g.cols()];
            gemm(out_c, g.rows(), g.cols(), weight.data(), false, &col, false, 0.0, &mut out);
            add_bias(&mut out, bias, g.cols());
            out
        })
        .collect();
    Tensor::from_vec(Shape::new(s.n, out_c, g.oh, g.ow), per_sample.concat())
}

/// Adjoint of [`conv2d`]: weight `(in_c, out_c, kh, kw)` where `in_c` is the
/// channel count of `x`.
pub fn conv_transpose2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    if !spec.transposed {
        return Err(TensorError::spec("conv_transpose2d", "spec is not transposed"));
    }
    check_weights("conv_transpose2d", x, weight, bias, spec)?;
    let g = transposed_geometry(x.shape(), spec)?;
    let s = x.shape();
    let in_per = s.c * s.plane();
    let out_plane = g.h * g.w;
    let per_sample: Vec<Vec<f64>> = (0..s.n)
        .into_par_iter()
        .map(|n| {
            let mut col = vec![0.0; g.rows() * g.cols()];
            gemm(g.rows(), s.c, g.cols(), weight.data(), true, &x.data()[n * in_per..(n + 1) * in_per], false, 0.0, &mut col);
            let mut out = vec![0.0; spec.out_channels * out_plane];
            col2im(&col, &g, &mut out);
            add_bias(&mut out, bias, out_plane);
            out
        })
        .collect();
    Tensor::from_vec(Shape::new(s.n, spec.out_channels, g.h, g.w), per_sample.concat())
}

/// Gradients of a convolution with respect to its input, weight and bias.
#[derive(Debug, Default)]
pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

fn bias_grad(dy: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; c];
    for s in 0..n {
        for (ch, acc) in db.iter_mut().enumerate() {
            let off = (s * c + ch) * plane;
            *acc += dy[off..off + plane].iter().sum::<f64>();
        }
    }
    db
}

/// Per-sample partial weight gradients reduced in sample order, so the result
/// does not depend on how samples were scheduled across threads.
fn reduce_ordered(parts: Vec<(Option<Vec<f64>>, Option<Vec<f64>>)>) -> (Vec<Vec<f64>>, Option<Vec<f64>>) {
    let mut dxs = Vec::with_capacity(parts.len());
    let mut dw: Option<Vec<f64>> = None;
    for (dx, dwp) in parts {
        if let Some(dx) = dx {
            dxs.push(dx);
        }
        if let Some(p) = dwp {
            match &mut dw {
                Some(acc) => acc.iter_mut().zip(&p).for_each(|(a, b)| *a += b),
                None => dw = Some(p),
            }
        }
    }
    (dxs, dw)
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    dy: &[f64],
    need: (bool, bool, bool),
) -> Result<ConvGrads> {
    let g = conv_geometry(x.shape(), spec)?;
    let s = x.shape();
    let in_per = s.c * s.plane();
    let out_c = spec.out_channels;
    let out_per = out_c * g.cols();
    let (need_dx, need_dw, need_db) = need;
    let parts: Vec<_> = (0..s.n)
        .into_par_iter()
        .map(|n| {
            let dy_n = &dy[n * out_per..(n + 1) * out_per];
            let mut col = vec![0.0; g.rows() * g.cols()];
            let dw = need_dw.then(|| {
                im2col(&x.data()[n * in_per..(n + 1) * in_per], &g, &mut col);
                let mut dw = vec![0.0; out_c * g.rows()];
                gemm(out_c, g.cols(), g.rows(), dy_n, false, &col, true, 0.0, &mut dw);
                dw
            });
            let dx = need_dx.then(|| {
                gemm(g.rows(), out_c, g.cols(), weight.data(), true, dy_n, false, 0.0, &mut col);
                let mut dx = vec![0.0; in_per];
                col2im(&col, &g, &mut dx);
                dx
            });
            (dx, dw)
        })
        .collect();
    let (dxs, dw) = reduce_ordered(parts);
    Ok(ConvGrads {
        dx: need_dx.then(|| dxs.concat()),
        dw,
        db: need_db.then(|| bias_grad(dy, s.n, out_c, g.cols())),
    })
}

pub(crate) fn conv_transpose2d_backward(
    x: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    dy: &[f64],
    need: (bool, bool, bool),
) -> Result<ConvGrads> {
    let g = transposed_geometry(x.shape(), spec)?;
    let s = x.shape();
    let in_per = s.c * s.plane();
    let out_per = spec.out_channels * g.h * g.w;
    let (need_dx, need_dw, need_db) = need;
    let parts: Vec<_> = (0..s.n)
        .into_par_iter()
        .map(|n| {
            let mut col = vec![0.0; g.rows() * g.cols()];
            im2col(&dy[n * out_per..(n + 1) * out_per], &g, &mut col);
            let dx = need_dx.then(|| {
                let mut dx = vec![0.0; in_per];
                gemm(s.c, g.rows(), g.cols(), weight.data(), false, &col, false, 0.0, &mut dx);
                dx
            });
            let dw = need_dw.then(|| {
                let mut dw = vec![0.0; s.c * g.rows()];
                gemm(s.c, g.cols(), g.rows(), &x.data()[n * in_per..(n + 1) * in_per], false, &col, true, 0.0, &mut dw);
                dw
            });
            (dx, dw)
        })
        .collect();
    let (dxs, dw) = reduce_ordered(parts);
    Ok(ConvGrads {
        dx: need_dx.then(|| dxs.concat()),
        dw,
        db: need_db.then(|| bias_grad(dy, s.n, spec.out_channels, g.h * g.w)),
    })
}
