//! Low-level feature refinement and the camouflage inference head.

use rand::Rng;

use super::layers::{resize_to, BatchNorm, Conv, ConvBn, Ctx};
use super::rfb::Rfb;
use crate::graph::Var;
use crate::params::ParamStore;
use crate::tensor::{ConvSpec, Result, TensorError};

/// Branch count of the lighter RFB used on low-level features.
pub const MODIFIED_RFB_BRANCHES: usize = 4;

/// Transposed convolution → BN → ReLU.
#[derive(Debug, Clone)]
struct DeconvBn {
    conv: Conv,
    bn: BatchNorm,
}

impl DeconvBn {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c: usize, k: usize) -> Result<Self> {
        let spec = ConvSpec::transposed(c, c, k).padding(k / 2);
        Ok(DeconvBn {
            conv: Conv::new(store, rng, &format!("{name}.conv"), spec, false)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), c)?,
        })
    }

    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.conv.forward(cx, x)?;
        let y = self.bn.forward(cx, y)?;
        Ok(cx.graph.relu(y))
    }
}

/// Multi-scale residual block:
///
/// ```text
/// F_conv3 = B_Dconv3(B_conv3(X)),  F_conv5 = B_Dconv5(B_conv5(X))
/// out     = X + B_conv3(Cat(F_conv3, F_conv5))
/// ```
#[derive(Debug, Clone)]
pub struct Mrb {
    pub channels: usize,
    conv3: ConvBn,
    dconv3: DeconvBn,
    conv5: ConvBn,
    dconv5: DeconvBn,
    fuse: ConvBn,
}

impl Mrb {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c: usize) -> Result<Self> {
        Ok(Mrb {
            channels: c,
            conv3: ConvBn::same(store, rng, &format!("{name}.conv3"), c, c, 3)?,
            dconv3: DeconvBn::new(store, rng, &format!("{name}.dconv3"), c, 3)?,
            conv5: ConvBn::same(store, rng, &format!("{name}.conv5"), c, c, 5)?,
            dconv5: DeconvBn::new(store, rng, &format!("{name}.dconv5"), c, 5)?,
            fuse: ConvBn::same(store, rng, &format!("{name}.fuse"), 2 * c, c, 3)?,
        })
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let c = cx.graph.shape(x).c;
        if c != self.channels {
            return Err(TensorError::dim("mrb", format!("input has {c} channels, block expects {}", self.channels)));
        }
        let a = self.conv3.forward(cx, x)?;
        let a = self.dconv3.forward(cx, a)?;
        let b = self.conv5.forward(cx, x)?;
        let b = self.dconv5.forward(cx, b)?;
        let cat = cx.graph.concat(&[a, b])?;
        let fused = self.fuse.forward(cx, cat)?;
        cx.graph.add(x, fused)
    }
}

/// Camouflage inference module: `1×1 → MRB → 1×1 → MRB → 1×1(→1)`.
#[derive(Debug, Clone)]
pub struct Cim {
    pub channels: usize,
    c1: Conv,
    mrb1: Mrb,
    c2: Conv,
    mrb2: Mrb,
    c3: Conv,
}

impl Cim {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c: usize) -> Result<Self> {
        Ok(Cim {
            channels: c,
            c1: Conv::new(store, rng, &format!("{name}.c1"), ConvSpec::new(c, c, 1), true)?,
            mrb1: Mrb::new(store, rng, &format!("{name}.mrb1"), c)?,
            c2: Conv::new(store, rng, &format!("{name}.c2"), ConvSpec::new(c, c, 1), true)?,
            mrb2: Mrb::new(store, rng, &format!("{name}.mrb2"), c)?,
            c3: Conv::new(store, rng, &format!("{name}.c3"), ConvSpec::new(c, 1, 1), true)?,
        })
    }

    /// Single-channel logits at the input's resolution.
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let c = cx.graph.shape(x).c;
        if c != self.channels {
            return Err(TensorError::dim("cim", format!("input has {c} channels, head expects {}", self.channels)));
        }
        let y = self.c1.forward(cx, x)?;
        let y = self.mrb1.forward(cx, y)?;
        let y = self.c2.forward(cx, y)?;
        let y = self.mrb2.forward(cx, y)?;
        self.c3.forward(cx, y)
    }
}

/// Gates `f1..f3` with `σ(f_D)`, passes each through a modified RFB and
/// merges them at `f1`'s resolution:
///
/// ```text
/// g_i = R_i(f_i · up(σ(f_D)))
/// out = ConvBlock(Cat(ConvBlock(Cat(g_1, up(g_2))), up(g_3)))
/// ```
#[derive(Debug, Clone)]
pub struct Refinement {
    rfbs: [Rfb; 3],
    merge12: ConvBn,
    merge3: ConvBn,
    pub out_channels: usize,
}

impl Refinement {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, widths: [usize; 3], rfb_width: usize, out: usize) -> Result<Self> {
        let mk = |i: usize, store: &mut ParamStore, rng: &mut _| {
            Rfb::new(store, rng, &format!("{name}.rfb{}", i + 1), widths[i], rfb_width, MODIFIED_RFB_BRANCHES)
        };
        let rfbs = [mk(0, store, rng)?, mk(1, store, rng)?, mk(2, store, rng)?];
        Ok(Refinement {
            rfbs,
            merge12: ConvBn::same(store, rng, &format!("{name}.merge12"), 2 * rfb_width, rfb_width, 3)?,
            merge3: ConvBn::same(store, rng, &format!("{name}.merge3"), 2 * rfb_width, out, 3)?,
            out_channels: out,
        })
    }

    /// The per-level refined features `g_1, g_2, g_3`.
    pub fn refined_levels(&self, cx: &mut Ctx, low: [Var; 3], coarse: Var) -> Result<[Var; 3]> {
        if cx.graph.shape(coarse).c != 1 {
            return Err(TensorError::dim("refine", format!("coarse map must be single-channel, got {}", cx.graph.shape(coarse))));
        }
        let gate = cx.graph.sigmoid(coarse);
        let mut out = [low[0]; 3];
        for (i, (&f, rfb)) in low.iter().zip(&self.rfbs).enumerate() {
            let s = cx.graph.shape(f);
            let a = resize_to(cx, gate, (s.h, s.w))?;
            let a = cx.graph.expand(a, s)?;
            let gated = cx.graph.mul(f, a)?;
            out[i] = rfb.forward(cx, gated)?;
        }
        Ok(out)
    }

    pub fn forward(&self, cx: &mut Ctx, low: [Var; 3], coarse: Var) -> Result<Var> {
        let [g1, g2, g3] = self.refined_levels(cx, low, coarse)?;
        let s = cx.graph.shape(g1);
        let g2 = resize_to(cx, g2, (s.h, s.w))?;
        let cat = cx.graph.concat(&[g1, g2])?;
        let merged = self.merge12.forward(cx, cat)?;
        let g3 = resize_to(cx, g3, (s.h, s.w))?;
        let cat = cx.graph.concat(&[merged, g3])?;
        self.merge3.forward(cx, cat)
    }
}
