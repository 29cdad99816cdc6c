//! Weighted F-measure with dependency (Gaussian) and location (distance)
//! weighting of errors.

use super::measures::EPS;
use super::MaskPair;

pub const GAUSS_SIZE: usize = 7;
pub const GAUSS_SIGMA: f64 = 5.0;

/// Result of [`weighted_f_measure`]; `degenerate` is set for an empty
/// ground truth, where the value is defined as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedF {
    pub value: f64,
    pub degenerate: bool,
}

/// Euclidean distance from every pixel to the nearest `true` pixel, with the
/// flat index of that pixel. Ties go to the smallest `(col, row)`.
/// Foreground pixels map to themselves at distance 0.
pub fn distance_transform(fg: &[bool], h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    // Per column: nearest foreground row for each row (smaller row on ties).
    let mut near = vec![None::<usize>; h * w];
    for c in 0..w {
        let mut last = None;
        for r in 0..h {
            if fg[r * w + c] {
                last = Some(r);
            }
            near[r * w + c] = last;
        }
        let mut next = None;
        for r in (0..h).rev() {
            if fg[r * w + c] {
                next = Some(r);
            }
            let up = near[r * w + c];
            near[r * w + c] = match (up, next) {
                (Some(u), Some(d)) if d - r < r - u => Some(d),
                (None, d) => d,
                (u, _) => u,
            };
        }
    }
    let mut dist = vec![f64::INFINITY; h * w];
    let mut idx = vec![usize::MAX; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut best: Option<(usize, usize, usize)> = None;
            for c2 in 0..w {
                if let Some(r2) = near[r * w + c2] {
                    let d2 = r.abs_diff(r2).pow(2) + c.abs_diff(c2).pow(2);
                    if best.is_none_or(|(b, _, _)| d2 < b) {
                        best = Some((d2, r2, c2));
                    }
                }
            }
            if let Some((d2, r2, c2)) = best {
                dist[r * w + c] = (d2 as f64).sqrt();
                idx[r * w + c] = r2 * w + c2;
            }
        }
    }
    (dist, idx)
}

/// Normalized `size×size` Gaussian, MATLAB `fspecial` style.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - half, (i % size) as f64 - half);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let max = k.iter().cloned().fold(0.0, f64::max);
    for v in k.iter_mut() {
        if *v < f64::EPSILON * max {
            *v = 0.0;
        }
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Same-size correlation with zero padding.
fn filter_zero_pad(x: &[f64], h: usize, w: usize, k: &[f64], size: usize) -> Vec<f64> {
    let half = (size / 2) as isize;
    let mut out = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut acc = 0.0;
            for i in 0..size as isize {
                let rr = r + i - half;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for j in 0..size as isize {
                    let cc = c + j - half;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    acc += k[(i * size as isize + j) as usize] * x[(rr * w as isize + cc) as usize];
                }
            }
            out[(r * w as isize + c) as usize] = acc;
        }
    }
    out
}

pub fn weighted_f_measure(pair: &MaskPair) -> WeightedF {
    let (h, w) = (pair.h, pair.w);
    let gt = &pair.gt;
    if !gt.iter().any(|&g| g) {
        return WeightedF { value: 0.0, degenerate: true };
    }
    let e: Vec<f64> = pair.pred.iter().zip(gt).map(|(&p, &g)| (p - f64::from(u8::from(g))).abs()).collect();
    let (dist, nearest) = distance_transform(gt, h, w);
    let et: Vec<f64> = (0..h * w).map(|i| if gt[i] { e[i] } else { e[nearest[i]] }).collect();
    let k = gaussian_kernel(GAUSS_SIZE, GAUSS_SIGMA);
    let ea = filter_zero_pad(&et, h, w, &k, GAUSS_SIZE);
    let decay = 0.5f64.ln() / 5.0;
    let (mut fg_n, mut fg_err, mut bg_err) = (0.0, 0.0, 0.0);
    for i in 0..h * w {
        if gt[i] {
            let m = if ea[i] < e[i] { ea[i] } else { e[i] };
            fg_n += 1.0;
            fg_err += m;
        } else {
            bg_err += e[i] * (2.0 - (decay * dist[i]).exp());
        }
    }
    let tp = fg_n - fg_err;
    let recall = 1.0 - fg_err / fg_n;
    let precision = tp / (tp + bg_err + EPS);
    let value = 2.0 * recall * precision / (recall + precision + EPS);
    WeightedF { value, degenerate: false }
}
