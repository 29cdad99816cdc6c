//! Central finite-difference verification of [`Graph::backward`].

pub mod suite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::{Result, Tensor, TensorError};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Step reduction used near a kink.
pub const NONSMOOTH_SHRINK: f64 = 1e-2;
/// Tolerated multiple of the measured finite-difference noise.
pub const NOISE_MARGIN: f64 = 3.0;
/// Floor on the denominator of the relative error.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many coordinates per input (chosen at random);
    /// `None` checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: DEFAULT_STEP, tolerance: DEFAULT_TOLERANCE, max_coords: None, seed: 0 }
    }
}

/// Worst relative error seen for one checked input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputReport {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinates where a ReLU kink lies within one step; these are
    /// re-measured with a smaller step instead.
    pub coords_nonsmooth: usize,
    /// Coordinates whose finite difference is dominated by roundoff; the
    /// analytic value agreed with it to within the measured noise.
    pub coords_noisy: usize,
    /// `(coordinate, analytic, numeric)` at the worst coordinate.
    pub worst: (usize, f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn coords_checked(&self) -> usize {
        self.inputs.iter().map(|r| r.coords_checked).sum()
    }

    pub fn coords_nonsmooth(&self) -> usize {
        self.inputs.iter().map(|r| r.coords_nonsmooth).sum()
    }

    pub fn coords_noisy(&self) -> usize {
        self.inputs.iter().map(|r| r.coords_noisy).sum()
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Reduces `out` to a scalar. Non-scalar outputs are contracted with a fixed
/// pseudo-random weighting so that every element influences the result.
fn scalarize(g: &mut Graph, out: Var) -> Result<Var> {
    let s = g.shape(out);
    if s.is_scalar() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_9a_d1);
    let r = Tensor::from_fn(s, |_, _, _, _| rng.random_range(0.5..1.5));
    let r = g.input(r);
    let prod = g.mul(out, r)?;
    Ok(g.sum(prod))
}

fn pick_coords(len: usize, max: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match max {
        Some(m) if m < len => {
            let mut all: Vec<usize> = (0..len).collect();
            for i in 0..m {
                let j = rng.random_range(i..len);
                all.swap(i, j);
            }
            let mut picked = all[..m].to_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..len).collect(),
    }
}

/// Shared driver: `eval` maps the current buffers to the scalar objective.
fn compare(
    names: &[String],
    mut buffers: Vec<Vec<f64>>,
    analytic: &[Vec<f64>],
    mut eval: impl FnMut(&[Vec<f64>]) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let base = eval(&buffers)?;
    let again = eval(&buffers)?;
    if base.to_bits() != again.to_bits() {
        return Err(TensorError::NonDeterministic((base - again).abs()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut inputs = Vec::with_capacity(buffers.len());
    for k in 0..buffers.len() {
        let coords = pick_coords(buffers[k].len(), opts.max_coords, &mut rng);
        let mut report =
            InputReport { name: names[k].clone(), max_rel_error: 0.0, coords_checked: coords.len(), coords_nonsmooth: 0, coords_noisy: 0, worst: (0, 0.0, 0.0) };
        for &i in &coords {
            let mut eval_at = |d: f64| -> Result<f64> {
                let orig = buffers[k][i];
                buffers[k][i] = orig + d;
                let v = eval(&buffers);
                buffers[k][i] = orig;
                v
            };
            let (plus, minus) = (eval_at(opts.step)?, eval_at(-opts.step)?);
            let mut numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[k][i];
            let mut err = relative_error(a, numeric);
            if err >= opts.tolerance {
                // For a smooth objective halving the step moves the central
                // difference by O(h²). A larger move means either a ReLU kink
                // inside the step, resolved by re-measuring with a step small
                // enough to stay on one side of it, or roundoff, which shows
                // as scatter between the one-sided small-step quotients; then
                // the analytic value must agree to within the noise.
                let half = (eval_at(opts.step / 2.0)? - eval_at(-opts.step / 2.0)?) / opts.step;
                if relative_error(numeric, half) >= opts.tolerance {
                    let h = opts.step * NONSMOOTH_SHRINK;
                    let (p, m, c) = (eval_at(h)?, eval_at(-h)?, eval(&buffers)?);
                    let (fwd, bwd) = ((p - c) / h, (c - m) / h);
                    let (mut best, mut at) = (f64::INFINITY, numeric);
                    for d in [(p - m) / (2.0 * h), fwd, bwd] {
                        if relative_error(a, d) < best {
                            (best, at) = (relative_error(a, d), d);
                        }
                    }
                    if best < opts.tolerance {
                        report.coords_nonsmooth += 1;
                        (err, numeric) = (best, at);
                    } else if relative_error(fwd, bwd) >= opts.tolerance && (a - numeric).abs() <= NOISE_MARGIN * (numeric - half).abs() {
                        report.coords_noisy += 1;
                        continue;
                    }
                }
            }
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                report.worst = (i, a, numeric);
            }
        }
        inputs.push(report);
    }
    Ok(GradCheckReport { inputs, tolerance: opts.tolerance })
}

/// Checks the gradient of `f` with respect to each tensor in `inputs`.
///
/// `f` receives one leaf per input and may return any shape; non-scalar
/// outputs are reduced with a fixed random weighting.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let loss = scalarize(&mut g, out)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> =
        vars.iter().zip(inputs).map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)).collect();
    let names: Vec<String> = (0..inputs.len()).map(|i| format!("input{i}")).collect();
    let shapes: Vec<_> = inputs.iter().map(Tensor::shape).collect();
    let eval = |bufs: &[Vec<f64>]| -> Result<f64> {
        let mut g = Graph::inference();
        let mut vars = Vec::with_capacity(bufs.len());
        for (b, &s) in bufs.iter().zip(&shapes) {
            vars.push(g.input(Tensor::from_vec(s, b.clone())?));
        }
        let out = f(&mut g, &vars)?;
        let loss = scalarize(&mut g, out)?;
        Ok(g.value(loss).item())
    };
    compare(&names, inputs.iter().map(|t| t.data().to_vec()).collect(), &analytic, eval, opts)
}

/// Checks the gradient of `f` with respect to the named entries of `store`.
///
/// `f` builds its computation from the store it is handed (via
/// [`Graph::param`]); perturbed copies of `store` are passed for the
/// numerical side.
pub fn grad_check_params<F>(store: &ParamStore, names: &[String], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let loss = scalarize(&mut g, out)?;
    g.backward(loss)?;
    let mut analytic = Vec::with_capacity(names.len());
    let mut buffers = Vec::with_capacity(names.len());
    for name in names {
        let t = store.get(name)?;
        analytic.push(g.param_grad(name).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec));
        buffers.push(t.data().to_vec());
    }
    let mut scratch = store.clone();
    let eval = |bufs: &[Vec<f64>]| -> Result<f64> {
        for (name, b) in names.iter().zip(bufs) {
            scratch.set_data(name, b)?;
        }
        let mut g = Graph::inference();
        let out = f(&mut g, &scratch)?;
        let loss = scalarize(&mut g, out)?;
        Ok(g.value(loss).item())
    };
    compare(names, buffers, &analytic, eval, opts)
}
