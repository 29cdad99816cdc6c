//! MAE, S-measure, adaptive F-measure and adaptive E-measure.

use super::MaskPair;

pub const EPS: f64 = 1e-8;
pub const BETA2: f64 = 0.3;

pub fn mae(pair: &MaskPair) -> f64 {
    let sum: f64 = pair.pred.iter().zip(&pair.gt).map(|(&p, &g)| (p - f64::from(u8::from(g))).abs()).sum();
    sum / pair.len() as f64
}

/// `min(2·mean(P), 1)`.
pub fn adaptive_threshold(pred: &[f64]) -> f64 {
    (2.0 * mean(pred)).min(1.0)
}

/// Adaptive binarization. An all-zero prediction selects nothing.
pub fn binarize(pred: &[f64]) -> Vec<bool> {
    let t = adaptive_threshold(pred);
    if t <= 0.0 {
        return vec![false; pred.len()];
    }
    pred.iter().map(|&p| p >= t).collect()
}

pub fn f_measure_adaptive(pair: &MaskPair) -> f64 {
    let b = binarize(&pair.pred);
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&b, &g) in b.iter().zip(&pair.gt) {
        match (b, g) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    let precision = tp / (tp + fp + EPS);
    let recall = tp / (tp + fn_ + EPS);
    (1.0 + BETA2) * precision * recall / (BETA2 * precision + recall + EPS)
}

pub fn e_measure_adaptive(pair: &MaskPair) -> f64 {
    let b: Vec<f64> = binarize(&pair.pred).into_iter().map(|b| f64::from(u8::from(b))).collect();
    let g = pair.gt_f64();
    let n = pair.len() as f64;
    let fg = g.iter().sum::<f64>();
    if fg == 0.0 {
        return b.iter().map(|b| 1.0 - b).sum::<f64>() / n;
    }
    if fg == n {
        return b.iter().sum::<f64>() / n;
    }
    let (mb, mg) = (mean(&b), fg / n);
    let mut total = 0.0;
    for (&b, &g) in b.iter().zip(&g) {
        let (pb, pg) = (b - mb, g - mg);
        let xi = 2.0 * pb * pg / (pb * pb + pg * pg + EPS);
        total += (1.0 + xi) * (1.0 + xi) / 4.0;
    }
    total / n
}

pub fn s_measure(pair: &MaskPair) -> f64 {
    let g = pair.gt_f64();
    let y = mean(&g);
    if y == 0.0 {
        return 1.0 - mean(&pair.pred);
    }
    if y == 1.0 {
        return mean(&pair.pred);
    }
    let s = 0.5 * object_score(&pair.pred, &g, y) + 0.5 * region_score(pair, &g);
    s.max(0.0)
}

fn object_score(pred: &[f64], g: &[f64], u: f64) -> f64 {
    let fg: Vec<f64> = pred.iter().zip(g).filter(|(_, &g)| g == 1.0).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pred.iter().zip(g).filter(|(_, &g)| g == 0.0).map(|(&p, _)| 1.0 - p).collect();
    u * region_object(&fg) + (1.0 - u) * region_object(&bg)
}

fn region_object(x: &[f64]) -> f64 {
    let m = mean(x);
    2.0 * m / (m * m + 1.0 + std_unbiased(x) + EPS)
}

/// Centroid of the foreground as 1-based `(col, row)` split points.
pub(crate) fn centroid(gt: &[bool], h: usize, w: usize) -> (usize, usize) {
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if gt[r * w + c] {
                sr += r as f64;
                sc += c as f64;
                n += 1.0;
            }
        }
    }
    if n == 0.0 {
        return ((w as f64 / 2.0).round_ties_even() as usize, (h as f64 / 2.0).round_ties_even() as usize);
    }
    ((sc / n).round_ties_even() as usize + 1, (sr / n).round_ties_even() as usize + 1)
}

fn region_score(pair: &MaskPair, g: &[f64]) -> f64 {
    let (h, w) = (pair.h, pair.w);
    let (x, y) = centroid(&pair.gt, h, w);
    let (x, y) = (x.min(w), y.min(h));
    let area = (h * w) as f64;
    let blocks = [(0, y, 0, x), (0, y, x, w), (y, h, 0, x), (y, h, x, w)];
    let mut score = 0.0;
    for (r0, r1, c0, c1) in blocks {
        let n = (r1 - r0) * (c1 - c0);
        if n == 0 {
            continue;
        }
        let mut p = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        for r in r0..r1 {
            p.extend_from_slice(&pair.pred[r * w + c0..r * w + c1]);
            q.extend_from_slice(&g[r * w + c0..r * w + c1]);
        }
        score += n as f64 / area * ssim(&p, &q);
    }
    score
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let denom = (p.len() as f64 - 1.0).max(1.0);
    let (x, y) = (mean(p), mean(g));
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(g) {
        sx += (a - x) * (a - x);
        sy += (b - y) * (b - y);
        sxy += (a - x) * (b - y);
    }
    let (sx, sy, sxy) = (sx / denom, sy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    // machine epsilon here: beta can be far below EPS on a block holding a
    // handful of foreground pixels, and P = G must still score 1
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

fn std_unbiased(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}
