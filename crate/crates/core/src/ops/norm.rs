//! Per-channel batch normalization.

use crate::tensor::{Result, Tensor, TensorError};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running mean/variance tracked across training batches.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }

    /// Blends in one batch's moments with [`BN_MOMENTUM`].
    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        for (r, &m) in self.mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, &v) in self.var.iter_mut().zip(batch_var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

pub(crate) struct BnForward {
    pub out: Tensor,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Batch mean and unbiased variance; present in training mode only.
    pub batch_moments: Option<(Vec<f64>, Vec<f64>)>,
}

pub(crate) fn forward(x: &Tensor, gamma: &Tensor, beta: &Tensor, stats: &RunningStats, training: bool) -> Result<BnForward> {
    let s = x.shape();
    if gamma.len() != s.c || beta.len() != s.c || stats.mean.len() != s.c || stats.var.len() != s.c {
        return Err(TensorError::dim(
            "batch_norm",
            format!("{} channels but gamma {}, beta {}, stats {}", s.c, gamma.len(), beta.len(), stats.mean.len()),
        ));
    }
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; s.c];
    let mut moments = training.then(|| (vec![0.0; s.c], vec![0.0; s.c]));
    for c in 0..s.c {
        let offsets = (0..s.n).map(|n| (n * s.c + c) * plane);
        let (mean, var) = if training {
            let mut sum = 0.0;
            for off in offsets.clone() {
                sum += x.data()[off..off + plane].iter().sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0;
            for off in offsets.clone() {
                sq += x.data()[off..off + plane].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            }
            let var = sq / count;
            if let Some((bm, bv)) = &mut moments {
                bm[c] = mean;
                bv[c] = if count > 1.0 { sq / (count - 1.0) } else { var };
            }
            (mean, var)
        } else {
            (stats.mean[c], stats.var[c])
        };
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[c] = is;
        let (g, b) = (gamma.data()[c], beta.data()[c]);
        for off in offsets {
            for i in off..off + plane {
                let h = (x.data()[i] - mean) * is;
                xhat[i] = h;
                out[i] = g * h + b;
            }
        }
    }
    Ok(BnForward { out: Tensor::from_vec(s, out)?, xhat, inv_std, batch_moments: moments })
}

/// Normalizes `x` per channel. In training mode the batch moments are used
/// and folded into `stats`; otherwise `stats` drives the normalization.
pub fn batch_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, stats: &mut RunningStats, training: bool) -> Result<Tensor> {
    let fwd = forward(x, gamma, beta, stats, training)?;
    if let Some((m, v)) = &fwd.batch_moments {
        stats.update(m, v);
    }
    Ok(fwd.out)
}

pub(crate) struct BnGrads {
    pub dx: Vec<f64>,
    pub dgamma: Vec<f64>,
    pub dbeta: Vec<f64>,
}

pub(crate) fn backward(x: &Tensor, gamma: &Tensor, xhat: &[f64], inv_std: &[f64], training: bool, dy: &[f64]) -> BnGrads {
    let s = x.shape();
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut dx = vec![0.0; x.len()];
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    for c in 0..s.c {
        let offsets = (0..s.n).map(|n| (n * s.c + c) * plane);
        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
        for off in offsets.clone() {
            for i in off..off + plane {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xhat[i];
            }
        }
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        let g = gamma.data()[c];
        let is = inv_std[c];
        for off in offsets {
            for i in off..off + plane {
                dx[i] = if training {
                    g * is * (dy[i] - sum_dy / count - xhat[i] * sum_dy_xhat / count)
                } else {
                    g * is * dy[i]
                };
            }
        }
    }
    BnGrads { dx, dgamma, dbeta }
}
