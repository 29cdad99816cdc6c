//! Multi-scale channel attention.

use rand::Rng;

use super::layers::{BatchNorm, Conv, Ctx};
use crate::graph::Var;
use crate::params::ParamStore;
use crate::tensor::{ConvSpec, Result, TensorError};

pub const DEFAULT_REDUCTION: usize = 4;

/// Point-wise bottleneck `BN(PW₂(ReLU(BN(PW₁(x)))))`.
#[derive(Debug, Clone)]
struct Bottleneck {
    pw1: Conv,
    bn1: BatchNorm,
    pw2: Conv,
    bn2: BatchNorm,
}

impl Bottleneck {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c: usize, mid: usize) -> Result<Self> {
        Ok(Bottleneck {
            pw1: Conv::new(store, rng, &format!("{name}.pw1"), ConvSpec::new(c, mid, 1), false)?,
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), mid)?,
            pw2: Conv::new(store, rng, &format!("{name}.pw2"), ConvSpec::new(mid, c, 1), false)?,
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), c)?,
        })
    }

    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.pw1.forward(cx, x)?;
        let y = self.bn1.forward(cx, y)?;
        let y = cx.graph.relu(y);
        let y = self.pw2.forward(cx, y)?;
        self.bn2.forward(cx, y)
    }
}

/// Gate `M(x) = σ(L(x) + G(x))`: `L` runs the bottleneck at full resolution,
/// `G` runs its own bottleneck on the globally pooled map and is broadcast
/// back over the spatial grid.
#[derive(Debug, Clone)]
pub struct Msca {
    pub channels: usize,
    pub name: String,
    local: Bottleneck,
    global: Bottleneck,
}

impl Msca {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 || channels < reduction {
            return Err(TensorError::spec("msca", format!("{channels} channels not divisible by reduction {reduction}")));
        }
        let mid = channels / reduction;
        Ok(Msca {
            channels,
            name: name.to_string(),
            local: Bottleneck::new(store, rng, &format!("{name}.local"), channels, mid)?,
            global: Bottleneck::new(store, rng, &format!("{name}.global"), channels, mid)?,
        })
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let s = cx.graph.shape(x);
        if s.c != self.channels {
            return Err(TensorError::dim("msca", format!("input has {} channels, gate expects {}", s.c, self.channels)));
        }
        let local = self.local.forward(cx, x)?;
        let pooled = cx.graph.global_avg_pool(x);
        let global = self.global.forward(cx, pooled)?;
        let global = cx.graph.expand(global, s)?;
        let sum = cx.graph.add(local, global)?;
        Ok(cx.graph.sigmoid(sum))
    }
}
