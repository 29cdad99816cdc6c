//! The standing gradient-check suite: every operator and block over many
//! random instances, plus an end-to-end check of the network and its loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, grad_check_params, GradCheckOptions, GradCheckReport};
use crate::blocks::{Acfm, C2fNet, Cim, Ctx, Dgcm, Mrb, Msca, NetConfig, Rfb};
use crate::graph::{Graph, Var};
use crate::loss::{pixel_weights, total_loss};
use crate::ops::RunningStats;
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{ConvSpec, Result, Tensor};

pub const DEFAULT_SEEDS: usize = 20;

/// Aggregate over all seeds of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub seeds: usize,
    pub coords: usize,
    /// Coordinates re-measured because a kink lies within one step.
    pub nonsmooth: usize,
    /// Coordinates limited by roundoff, see [`super::InputReport`].
    pub noisy: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    fn absorb(&mut self, r: &GradCheckReport) {
        self.coords += r.coords_checked();
        self.nonsmooth += r.coords_nonsmooth();
        self.noisy += r.coords_noisy();
        self.max_rel_error = self.max_rel_error.max(r.max_rel_error());
    }
}

fn uniform(shape: [usize; 4], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

fn binary(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| f64::from(u8::from(rng.random_bool(0.4))))
}

/// Moves every learnable entry away from its (often degenerate) initial
/// value: BN scales into `[0.5, 1.5)`, biases and shifts into `[-0.2, 0.2)`.
pub fn randomize_params(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for e in store.entries_mut() {
        if e.kind != ParamKind::Learnable {
            continue;
        }
        let (lo, hi) = if e.name.ends_with(".gamma") {
            (0.5, 1.5)
        } else if e.name.ends_with(".beta") || e.name.ends_with(".bias") {
            (-0.2, 0.2)
        } else {
            continue;
        };
        e.tensor.data_mut().iter_mut().for_each(|v| *v = rng.random_range(lo..hi));
    }
}

fn opts(seed: u64, max_coords: Option<usize>) -> GradCheckOptions {
    GradCheckOptions { seed, max_coords, ..Default::default() }
}

type OpFn = fn(&mut Graph, &[Var], &[Tensor]) -> Result<Var>;

/// `(name, inputs, constants, f)`: `inputs` are differentiated, `constants`
/// (masks, weights) are passed through unchanged.
fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor>, Vec<Tensor>, OpFn)> {
    let x = |rng: &mut ChaCha8Rng, s: [usize; 4]| uniform(s, -2.0, 2.0, rng);
    let mask = binary([2, 1, 5, 5], rng);
    let w = pixel_weights(&mask).expect("binary mask");
    vec![
        ("conv2d", vec![x(rng, [2, 3, 7, 6]), x(rng, [4, 3, 3, 3]), x(rng, [1, 4, 1, 1])], vec![], |g, v, _| {
            g.conv2d(v[0], v[1], Some(v[2]), ConvSpec::new(3, 4, 3).stride(2).padding(2).dilation(2))
        }),
        ("conv_transpose2d", vec![x(rng, [2, 3, 4, 5]), x(rng, [3, 2, 3, 3]), x(rng, [1, 2, 1, 1])], vec![], |g, v, _| {
            g.conv_transpose2d(v[0], v[1], Some(v[2]), ConvSpec::transposed(3, 2, 3).stride(2).padding(1))
        }),
        ("batch_norm_train", vec![x(rng, [3, 2, 3, 3]), uniform([1, 2, 1, 1], 0.5, 1.5, rng), x(rng, [1, 2, 1, 1])], vec![], |g, v, _| {
            g.batch_norm(v[0], v[1], v[2], &RunningStats::new(2), true, "bn")
        }),
        ("batch_norm_eval", vec![x(rng, [2, 2, 3, 3]), uniform([1, 2, 1, 1], 0.5, 1.5, rng), x(rng, [1, 2, 1, 1])], vec![], |g, v, _| {
            let stats = RunningStats { mean: vec![0.3, -0.2], var: vec![1.7, 0.6] };
            g.batch_norm(v[0], v[1], v[2], &stats, false, "bn")
        }),
        ("avg_pool", vec![x(rng, [2, 2, 6, 6])], vec![], |g, v, _| g.avg_pool(v[0], 2, 2)),
        ("max_pool", vec![x(rng, [2, 2, 6, 6])], vec![], |g, v, _| g.max_pool(v[0], 2, 2)),
        ("global_avg_pool", vec![x(rng, [2, 3, 4, 5])], vec![], |g, v, _| Ok(g.global_avg_pool(v[0]))),
        ("upsample_bilinear", vec![x(rng, [2, 2, 3, 4])], vec![], |g, v, _| g.upsample(v[0], (7, 5))),
        ("expand", vec![x(rng, [2, 3, 1, 1])], vec![], |g, v, _| g.expand(v[0], [2, 3, 4, 4].into())),
        ("add", vec![x(rng, [2, 2, 3, 3]), x(rng, [2, 2, 3, 3])], vec![], |g, v, _| g.add(v[0], v[1])),
        ("sub", vec![x(rng, [2, 2, 3, 3]), x(rng, [2, 2, 3, 3])], vec![], |g, v, _| g.sub(v[0], v[1])),
        ("mul", vec![x(rng, [2, 2, 3, 3]), x(rng, [2, 2, 3, 3])], vec![], |g, v, _| g.mul(v[0], v[1])),
        ("scale", vec![x(rng, [1, 2, 3, 3])], vec![], |g, v, _| Ok(g.scale(v[0], -1.7))),
        ("relu", vec![x(rng, [2, 2, 4, 4])], vec![], |g, v, _| Ok(g.relu(v[0]))),
        ("sigmoid", vec![x(rng, [2, 2, 4, 4])], vec![], |g, v, _| Ok(g.sigmoid(v[0]))),
        ("one_minus", vec![x(rng, [1, 2, 3, 3])], vec![], |g, v, _| Ok(g.one_minus(v[0]))),
        ("concat", vec![x(rng, [2, 1, 3, 3]), x(rng, [2, 3, 3, 3])], vec![], |g, v, _| g.concat(&[v[0], v[1]])),
        ("sum", vec![x(rng, [2, 2, 3, 3])], vec![], |g, v, _| Ok(g.sum(v[0]))),
        ("mean", vec![x(rng, [2, 2, 3, 3])], vec![], |g, v, _| Ok(g.mean(v[0]))),
        ("weighted_bce", vec![x(rng, [2, 1, 5, 5])], vec![mask.clone(), w.clone()], |g, v, c| g.weighted_bce(v[0], &c[0], &c[1])),
        ("weighted_iou", vec![x(rng, [2, 1, 5, 5])], vec![mask.clone(), w], |g, v, c| g.weighted_iou(v[0], &c[0], &c[1])),
        ("total_loss", vec![x(rng, [2, 1, 5, 5]), x(rng, [2, 1, 5, 5])], vec![mask], |g, v, c| Ok(total_loss(g, v[0], v[1], &c[0])?.0)),
    ]
}

/// Every operator, `seeds` random instances each, all coordinates.
pub fn run_op_suite(seeds: usize) -> Result<Vec<CaseResult>> {
    let mut results: Vec<CaseResult> = Vec::new();
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0b5 ^ seed);
        for (i, (name, inputs, consts, f)) in op_cases(&mut rng).into_iter().enumerate() {
            let r = grad_check(|g, v| f(g, v, &consts), &inputs, &opts(seed, None))?;
            if results.len() <= i {
                results.push(CaseResult { name: name.into(), seeds: 0, coords: 0, nonsmooth: 0, noisy: 0, max_rel_error: 0.0, tolerance: r.tolerance });
            }
            results[i].seeds += 1;
            results[i].absorb(&r);
        }
    }
    Ok(results)
}

/// Checks a block with respect to its inputs and every learnable parameter.
fn check_block<B>(
    name: &str,
    seeds: usize,
    max_coords: Option<usize>,
    build: impl Fn(&mut ParamStore, &mut ChaCha8Rng) -> Result<B>,
    inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    forward: impl Fn(&B, &mut Ctx, &[Var]) -> Result<Var>,
) -> Result<CaseResult> {
    let mut res = CaseResult { name: name.into(), seeds, coords: 0, nonsmooth: 0, noisy: 0, max_rel_error: 0.0, tolerance: 0.0 };
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xb10c ^ (seed << 8));
        let mut store = ParamStore::new();
        let block = build(&mut store, &mut rng)?;
        randomize_params(&mut store, &mut rng);
        let xs = inputs(&mut rng);
        let o = opts(seed, max_coords);

        let r = grad_check(
            |g, v| {
                let mut cx = Ctx::new(g, &store, true);
                forward(&block, &mut cx, v)
            },
            &xs,
            &o,
        )?;
        res.tolerance = r.tolerance;
        res.absorb(&r);

        let names: Vec<String> = store.learnable().map(|e| e.name.clone()).collect();
        let r = grad_check_params(
            &store,
            &names,
            |g, st| {
                let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
                let mut cx = Ctx::new(g, st, true);
                forward(&block, &mut cx, &vars)
            },
            &o,
        )?;
        res.absorb(&r);
    }
    Ok(res)
}

fn feat(rng: &mut ChaCha8Rng, s: [usize; 4]) -> Tensor {
    uniform(s, -1.0, 1.0, rng)
}

/// RFB, MSCA, ACFM, DGCM, MRB and CIM on small random instances.
pub fn run_block_suite(seeds: usize) -> Result<Vec<CaseResult>> {
    let c = 4;
    let cap = Some(6);
    Ok(vec![
        check_block("rfb", seeds, cap, |s, r| Rfb::new(s, r, "rfb", 3, c, 5), |r| vec![feat(r, [4, 3, 6, 6])], |b, cx, v| b.forward(cx, v[0]))?,
        check_block(
            "rfb_modified",
            seeds,
            cap,
            |s, r| Rfb::new(s, r, "rfb", 3, c, 4),
            |r| vec![feat(r, [4, 3, 6, 6])],
            |b, cx, v| b.forward(cx, v[0]),
        )?,
        check_block("msca", seeds, cap, |s, r| Msca::new(s, r, "msca", c, 2), |r| vec![feat(r, [4, c, 4, 4])], |b, cx, v| b.forward(cx, v[0]))?,
        check_block(
            "acfm",
            seeds,
            cap,
            |s, r| Acfm::new(s, r, "acfm", c, 2),
            |r| vec![feat(r, [4, c, 4, 4]), feat(r, [4, c, 2, 2])],
            |b, cx, v| b.forward(cx, v[0], v[1]),
        )?,
        check_block("dgcm", seeds, cap, |s, r| Dgcm::new(s, r, "dgcm", c, 2), |r| vec![feat(r, [4, c, 4, 4])], |b, cx, v| b.forward(cx, v[0]))?,
        check_block("mrb", seeds, cap, |s, r| Mrb::new(s, r, "mrb", c), |r| vec![feat(r, [4, c, 4, 4])], |b, cx, v| b.forward(cx, v[0]))?,
        check_block("cim", seeds, cap, |s, r| Cim::new(s, r, "cim", c), |r| vec![feat(r, [4, c, 4, 4])], |b, cx, v| b.forward(cx, v[0]))?,
    ])
}

/// The tiny network plus the two-head loss on one `3×32×32` image, with
/// respect to the image and a sample of every parameter tensor.
pub fn run_network_check(seed: u64, coords_per_tensor: usize) -> Result<CaseResult> {
    let (net, mut store) = C2fNet::new(NetConfig::tiny(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2e7);
    randomize_params(&mut store, &mut rng);
    let image = uniform([1, 3, 32, 32], 0.0, 1.0, &mut rng);
    let gt = Tensor::from_fn([1, 1, 32, 32], |_, _, y, x| f64::from(u8::from((8..22).contains(&y) && (10..26).contains(&x))));
    let forward = |g: &mut Graph, st: &ParamStore, x: Var| -> Result<Var> {
        let out = {
            let mut cx = Ctx::new(g, st, true);
            net.forward(&mut cx, x)?
        };
        Ok(total_loss(g, out.coarse, out.fine, &gt)?.0)
    };
    let o = opts(seed, Some(coords_per_tensor));
    let mut res = CaseResult { name: "network+loss".into(), seeds: 1, coords: 0, nonsmooth: 0, noisy: 0, max_rel_error: 0.0, tolerance: o.tolerance };
    let r = grad_check(|g, v| forward(g, &store, v[0]), std::slice::from_ref(&image), &GradCheckOptions { max_coords: Some(32), ..o })?;
    res.absorb(&r);
    let names: Vec<String> = store.learnable().map(|e| e.name.clone()).collect();
    let r = grad_check_params(
        &store,
        &names,
        |g, st| {
            let x = g.input(image.clone());
            forward(g, st, x)
        },
        &o,
    )?;
    res.absorb(&r);
    Ok(res)
}
