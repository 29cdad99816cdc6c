//! Shared helpers for the integration tests: random tensors, blocks rebuilt
//! from primitive kernels, and loop-level reference versions of the metrics
//! and losses.
#![allow(dead_code)]

pub mod oracle;
pub mod scripted;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use c2fnet::{ParamStore, Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: impl Into<Shape>, lo: f64, hi: f64) -> Tensor {
    let s = shape.into();
    Tensor::from_vec(s, (0..s.numel()).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn normal_ish(rng: &mut impl Rng, shape: impl Into<Shape>) -> Tensor {
    // sum of three uniforms: cheap, centred, unit-ish spread
    let s = shape.into();
    Tensor::from_vec(s, (0..s.numel()).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>()).collect()).unwrap()
}

pub fn binary_mask(rng: &mut impl Rng, shape: impl Into<Shape>, p: f64) -> Tensor {
    let s = shape.into();
    Tensor::from_vec(s, (0..s.numel()).map(|_| f64::from(u8::from(rng.random_bool(p)))).collect()).unwrap()
}

/// Random values in every parameter, with positive running variances.
pub fn scramble_params(store: &mut ParamStore, rng: &mut impl Rng) {
    for e in store.entries_mut() {
        let var = e.name.ends_with(".running_var");
        let gamma = e.name.ends_with(".gamma");
        for v in e.tensor.data_mut() {
            *v = if var {
                rng.random_range(0.5..2.0)
            } else if gamma {
                rng.random_range(0.5..1.5)
            } else {
                rng.random_range(-0.5..0.5)
            };
        }
    }
}

pub fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.max_abs_diff(b)
}
