//! Bilinear (half-pixel centers) and nearest-neighbour resizing.

use crate::tensor::{Result, Shape, Tensor, TensorError};

/// Interpolation taps along one axis: `(i0, i1, w0, w1)` per output index.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let frac = pos - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

fn check(x: Shape, target: (usize, usize)) -> Result<()> {
    if target.0 == 0 || target.1 == 0 {
        return Err(TensorError::input("upsample_bilinear", format!("target {}x{} is empty", target.0, target.1)));
    }
    if x.h == 0 || x.w == 0 {
        return Err(TensorError::input("upsample_bilinear", "source is empty"));
    }
    Ok(())
}

/// Bilinear resize with align-corners off. Same-size resizes copy `x`.
pub fn upsample_bilinear(x: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let s = x.shape();
    check(s, target)?;
    if (s.h, s.w) == target {
        return Ok(Tensor::from_vec(s, x.data().to_vec())?);
    }
    let (th, tw) = target;
    let ty = taps(s.h, th);
    let tx = taps(s.w, tw);
    let mut out = Vec::with_capacity(s.n * s.c * th * tw);
    for plane in x.data().chunks(s.plane()) {
        for &(y0, y1, wy0, wy1) in &ty {
            let r0 = &plane[y0 * s.w..(y0 + 1) * s.w];
            let r1 = &plane[y1 * s.w..(y1 + 1) * s.w];
            for &(x0, x1, wx0, wx1) in &tx {
                out.push(wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]));
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, th, tw), out)
}

pub(crate) fn upsample_backward(x: Shape, target: (usize, usize), dy: &[f64]) -> Vec<f64> {
    if (x.h, x.w) == target {
        return dy.to_vec();
    }
    let (th, tw) = target;
    let ty = taps(x.h, th);
    let tx = taps(x.w, tw);
    let mut dx = vec![0.0; x.numel()];
    for (dplane, gplane) in dx.chunks_mut(x.plane()).zip(dy.chunks(th * tw)) {
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let g = gplane[oy * tw + ox];
                dplane[y0 * x.w + x0] += g * wy0 * wx0;
                dplane[y0 * x.w + x1] += g * wy0 * wx1;
                dplane[y1 * x.w + x0] += g * wy1 * wx0;
                dplane[y1 * x.w + x1] += g * wy1 * wx1;
            }
        }
    }
    dx
}

/// Nearest-neighbour resize (`src = floor(dst · in / out)`), used for masks
/// so they stay binary.
pub fn resize_nearest(x: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let s = x.shape();
    check(s, target)?;
    let (th, tw) = target;
    let ys: Vec<usize> = (0..th).map(|o| (o * s.h / th).min(s.h - 1)).collect();
    let xs: Vec<usize> = (0..tw).map(|o| (o * s.w / tw).min(s.w - 1)).collect();
    let mut out = Vec::with_capacity(s.n * s.c * th * tw);
    for plane in x.data().chunks(s.plane()) {
        for &y in &ys {
            for &xx in &xs {
                out.push(plane[y * s.w + xx]);
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, th, tw), out)
}
