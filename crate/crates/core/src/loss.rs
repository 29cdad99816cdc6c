//! Boundary-weighted BCE + IoU objective applied to both prediction heads.
//!
//! Every loss takes logits and applies the sigmoid internally. For batched
//! inputs each term is computed per image and then averaged over the batch.

use crate::graph::{Graph, Var};
use crate::ops::sigmoid;
use crate::tensor::{Result, Tensor, TensorError};

/// Extra weight given to pixels whose neighbourhood disagrees with them.
pub const WEIGHT_LAMBDA: f64 = 5.0;
/// Side of the neighbourhood window used by [`pixel_weights`].
pub const WEIGHT_WINDOW: usize = 15;

/// Loss terms of one supervision head.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeadLoss {
    pub bce: f64,
    pub iou: f64,
}

impl HeadLoss {
    pub fn total(&self) -> f64 {
        self.bce + self.iou
    }
}

/// Loss of the coarse map and of the final prediction, and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub coarse: HeadLoss,
    pub fine: HeadLoss,
    pub total: f64,
}

fn check_binary(gt: &Tensor) -> Result<()> {
    match gt.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(v) => Err(TensorError::input("pixel_weights", format!("mask value {v} is not 0 or 1"))),
        None => Ok(()),
    }
}

/// Mean over the `k×k` window centred on each pixel, counting only cells
/// inside the image.
fn box_mean(x: &Tensor, k: usize) -> Tensor {
    let s = x.shape();
    let r = k / 2;
    let (h, w) = (s.h, s.w);
    let mut out = Vec::with_capacity(x.len());
    for plane in x.data().chunks(s.plane()) {
        // summed-area table with a zero first row and column
        let mut sat = vec![0.0; (h + 1) * (w + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for xx in 0..w {
                row += plane[y * w + xx];
                sat[(y + 1) * (w + 1) + xx + 1] = sat[y * (w + 1) + xx + 1] + row;
            }
        }
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
            for xx in 0..w {
                let (x0, x1) = (xx.saturating_sub(r), (xx + r + 1).min(w));
                let sum = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] + sat[y0 * (w + 1) + x0];
                out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    Tensor::from_vec(s, out).expect("same shape")
}

/// `1 + λ·|mean_k(G) − G|`, so `w ∈ [1, 1 + λ]`. The neighbourhood mean
/// ignores out-of-image cells, which keeps flat masks at unit weight.
pub fn pixel_weights_with(gt: &Tensor, window: usize, lambda: f64) -> Result<Tensor> {
    check_binary(gt)?;
    if window % 2 == 0 {
        return Err(TensorError::spec("pixel_weights", format!("window {window} must be odd")));
    }
    let local = box_mean(gt, window);
    Tensor::from_vec(gt.shape(), local.data().iter().zip(gt.data()).map(|(a, g)| 1.0 + lambda * (a - g).abs()).collect())
}

/// Pixel weights with the default window and λ.
pub fn pixel_weights(gt: &Tensor) -> Result<Tensor> {
    pixel_weights_with(gt, WEIGHT_WINDOW, WEIGHT_LAMBDA)
}

fn check_shapes(op: &'static str, z: &Tensor, gt: &Tensor, w: &Tensor) -> Result<()> {
    if z.shape() != gt.shape() || z.shape() != w.shape() {
        return Err(TensorError::dim(op, format!("logits {}, target {}, weights {}", z.shape(), gt.shape(), w.shape())));
    }
    Ok(())
}

/// `-[g·ln σ(z) + (1-g)·ln(1-σ(z))]` in the overflow-free form.
#[inline]
fn bce_term(z: f64, g: f64) -> f64 {
    z.max(0.0) - z * g + (-z.abs()).exp().ln_1p()
}

/// Iterates `(logits, target, weight)` slices per image.
fn per_image<'a>(z: &'a Tensor, gt: &'a Tensor, w: &'a Tensor) -> impl Iterator<Item = (&'a [f64], &'a [f64], &'a [f64])> {
    let per = z.shape().c * z.shape().plane();
    z.data().chunks(per).zip(gt.data().chunks(per)).zip(w.data().chunks(per)).map(|((a, b), c)| (a, b, c))
}

pub(crate) fn weighted_bce_value(z: &Tensor, gt: &Tensor, w: &Tensor) -> Result<f64> {
    check_shapes("weighted_bce", z, gt, w)?;
    let n = z.shape().n as f64;
    Ok(per_image(z, gt, w)
        .map(|(z, g, w)| {
            let num: f64 = z.iter().zip(g).zip(w).map(|((&z, &g), &w)| w * bce_term(z, g)).sum();
            num / w.iter().sum::<f64>()
        })
        .sum::<f64>()
        / n)
}

pub(crate) fn weighted_bce_grad(z: &Tensor, gt: &Tensor, w: &Tensor, upstream: f64) -> Vec<f64> {
    let n = z.shape().n as f64;
    let mut out = Vec::with_capacity(z.len());
    for (z, g, w) in per_image(z, gt, w) {
        let k = upstream / (n * w.iter().sum::<f64>());
        out.extend(z.iter().zip(g).zip(w).map(|((&z, &g), &w)| k * w * (sigmoid(z) - g)));
    }
    out
}

/// Per-image `(inter + 1, Σw(p+g) − inter + 1)`.
fn iou_parts(z: &[f64], g: &[f64], w: &[f64]) -> (f64, f64) {
    let (mut inter, mut total) = (0.0, 0.0);
    for ((&z, &g), &w) in z.iter().zip(g).zip(w) {
        let p = sigmoid(z);
        inter += w * p * g;
        total += w * (p + g);
    }
    (inter + 1.0, total - inter + 1.0)
}

pub(crate) fn weighted_iou_value(z: &Tensor, gt: &Tensor, w: &Tensor) -> Result<f64> {
    check_shapes("weighted_iou", z, gt, w)?;
    let n = z.shape().n as f64;
    Ok(per_image(z, gt, w)
        .map(|(z, g, w)| {
            let (a, b) = iou_parts(z, g, w);
            1.0 - a / b
        })
        .sum::<f64>()
        / n)
}

pub(crate) fn weighted_iou_grad(z: &Tensor, gt: &Tensor, w: &Tensor, upstream: f64) -> Vec<f64> {
    let n = z.shape().n as f64;
    let mut out = Vec::with_capacity(z.len());
    for (z, g, w) in per_image(z, gt, w) {
        let (a, b) = iou_parts(z, g, w);
        let k = upstream / (n * b * b);
        out.extend(z.iter().zip(g).zip(w).map(|((&z, &g), &w)| {
            let p = sigmoid(z);
            // d(1 - a/b)/dp = -(w·g·b - a·w·(1-g)) / b²
            -k * w * (g * b - a * (1.0 - g)) * p * (1.0 - p)
        }));
    }
    out
}

/// Weighted binary cross-entropy of logits against a binary target.
pub fn weighted_bce(logits: &Tensor, gt: &Tensor, w: &Tensor) -> Result<f64> {
    weighted_bce_value(logits, gt, w)
}

/// Weighted IoU loss `1 − (inter+1)/(union+1)`, in `[0, 1)`.
pub fn weighted_iou(logits: &Tensor, gt: &Tensor, w: &Tensor) -> Result<f64> {
    weighted_iou_value(logits, gt, w)
}

/// Records `L(f_D, G) + L(P, G)` on `graph`, where `L` is weighted BCE plus
/// weighted IoU. Both heads must already be at the mask's resolution.
pub fn total_loss(graph: &mut Graph, coarse: Var, fine: Var, gt: &Tensor) -> Result<(Var, LossBreakdown)> {
    let w = pixel_weights(gt)?;
    let mut head = |z: Var| -> Result<(Var, HeadLoss)> {
        let bce = graph.weighted_bce(z, gt, &w)?;
        let iou = graph.weighted_iou(z, gt, &w)?;
        let parts = HeadLoss { bce: graph.value(bce).item(), iou: graph.value(iou).item() };
        Ok((graph.add(bce, iou)?, parts))
    };
    let (lc, coarse) = head(coarse)?;
    let (lf, fine) = head(fine)?;
    let total = graph.add(lc, lf)?;
    let breakdown = LossBreakdown { coarse, fine, total: graph.value(total).item() };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8], h: usize, w: usize) -> Tensor {
        Tensor::from_vec([1, 1, h, w], bits.iter().map(|&b| b as f64).collect()).unwrap()
    }

    #[test]
    fn flat_masks_have_unit_weights() {
        for v in [0.0, 1.0] {
            let w = pixel_weights(&Tensor::full([1, 1, 20, 20], v)).unwrap();
            assert!(w.data().iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn isolated_pixel_weight() {
        let mut g = Tensor::zeros([1, 1, 7, 7]);
        g.set(0, 0, 3, 3, 1.0);
        let w = pixel_weights_with(&g, 3, WEIGHT_LAMBDA).unwrap();
        assert!((w.at(0, 0, 3, 3) - (1.0 + 5.0 * 8.0 / 9.0)).abs() < 1e-12);
        assert!((w.at(0, 0, 2, 2) - (1.0 + 5.0 / 9.0)).abs() < 1e-12);
        assert_eq!(w.at(0, 0, 0, 0), 1.0);
    }

    #[test]
    fn non_binary_mask_is_rejected() {
        let g = Tensor::full([1, 1, 2, 2], 0.5);
        assert!(pixel_weights(&g).is_err());
    }

    #[test]
    fn zero_logits_give_ln2() {
        let g = mask(&[1, 0, 0, 1, 1, 1, 0, 0, 1], 3, 3);
        let z = Tensor::zeros([1, 1, 3, 3]);
        let w = Tensor::ones([1, 1, 3, 3]);
        assert!((weighted_bce(&z, &g, &w).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let g = mask(&[1, 0, 1, 0], 2, 2);
        let z = Tensor::from_vec([1, 1, 2, 2], vec![-1e4, 1e4, 1e4, -1e4]).unwrap();
        let w = Tensor::ones([1, 1, 2, 2]);
        let b = weighted_bce(&z, &g, &w).unwrap();
        let i = weighted_iou(&z, &g, &w).unwrap();
        assert!(b.is_finite() && i.is_finite());
        assert!((b - 1e4 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let z = Tensor::zeros([1, 1, 2, 2]);
        let g = Tensor::zeros([1, 1, 2, 3]);
        assert!(weighted_bce(&z, &g, &g).is_err());
        assert!(weighted_iou(&z, &g, &g).is_err());
    }
}
