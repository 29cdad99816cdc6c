//! Receptive field block: parallel branches of growing kernel size and
//! dilation, fused by a 1×1 convolution plus a residual branch.

use rand::Rng;

use super::layers::{Conv, Ctx};
use crate::graph::Var;
use crate::params::ParamStore;
use crate::tensor::{ConvSpec, Result, TensorError};

/// Branch `k` (1-based) is a 1×1 reduction to `out` channels, then for
/// `k ≥ 2` a `(2k−1)×(2k−1)` convolution, then for `k > 2` a 3×3 convolution
/// with dilation `2k−1`. All branches but the last are concatenated and fused
/// by a 1×1 convolution; the last branch is added to the fused map before the
/// final ReLU.
#[derive(Debug, Clone)]
pub struct Rfb {
    pub in_channels: usize,
    pub out_channels: usize,
    branches: Vec<Vec<Conv>>,
    fuse: Conv,
}

/// Layer specs of branch `k` (1-based).
pub fn branch_specs(k: usize, cin: usize, cout: usize) -> Vec<ConvSpec> {
    let mut specs = vec![ConvSpec::new(cin, cout, 1)];
    if k >= 2 {
        let size = 2 * k - 1;
        specs.push(ConvSpec::new(cout, cout, size).padding(k - 1));
    }
    if k > 2 {
        let d = 2 * k - 1;
        specs.push(ConvSpec::new(cout, cout, 3).dilation(d).padding(d));
    }
    specs
}

impl Rfb {
    /// Builds an RFB with `branches` branches (five for the full block).
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cin: usize, cout: usize, branches: usize) -> Result<Self> {
        if branches < 2 {
            return Err(TensorError::spec("rfb", "needs at least two branches"));
        }
        let mut built = Vec::with_capacity(branches);
        for k in 1..=branches {
            let layers = branch_specs(k, cin, cout)
                .into_iter()
                .enumerate()
                .map(|(j, spec)| Conv::new(store, rng, &format!("{name}.b{k}.{j}"), spec, true))
                .collect::<Result<Vec<_>>>()?;
            built.push(layers);
        }
        let fuse = Conv::new(store, rng, &format!("{name}.fuse"), ConvSpec::new((branches - 1) * cout, cout, 1), true)?;
        Ok(Rfb { in_channels: cin, out_channels: cout, branches: built, fuse })
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let c = cx.graph.shape(x).c;
        if c != self.in_channels {
            return Err(TensorError::dim("rfb", format!("input has {c} channels, block expects {}", self.in_channels)));
        }
        let mut outs = Vec::with_capacity(self.branches.len());
        for layers in &self.branches {
            let mut y = x;
            for conv in layers {
                y = conv.forward(cx, y)?;
            }
            outs.push(y);
        }
        let residual = outs.pop().expect("at least two branches");
        let cat = cx.graph.concat(&outs)?;
        let fused = self.fuse.forward(cx, cat)?;
        let sum = cx.graph.add(fused, residual)?;
        Ok(cx.graph.relu(sum))
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }
}
