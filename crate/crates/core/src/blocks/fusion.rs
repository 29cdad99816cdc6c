//! Cross-level fusion (ACFM) and dual-branch global context (DGCM) modules.

use rand::Rng;

use super::layers::{resize_to, ConvBn, Ctx};
use super::msca::Msca;
use crate::graph::Var;
use crate::params::ParamStore;
use crate::tensor::{Result, TensorError};

/// Attention-induced cross-level fusion of a fine map `F_a` with a coarser
/// map `F_b`:
///
/// ```text
/// u    = F_a + up(F_b)
/// F_ab = M(u)·F_a + (1 − M(u))·up(F_b)
/// out  = ReLU(BN(conv3×3(F_ab)))
/// ```
#[derive(Debug, Clone)]
pub struct Acfm {
    pub channels: usize,
    pub msca: Msca,
    pub conv: ConvBn,
}

impl Acfm {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        Ok(Acfm {
            channels,
            msca: Msca::new(store, rng, &format!("{name}.msca"), channels, reduction)?,
            conv: ConvBn::same(store, rng, &format!("{name}.conv"), channels, channels, 3)?,
        })
    }

    /// The gated combination `F_ab`, before the output convolution.
    pub fn fuse(&self, cx: &mut Ctx, fa: Var, fb: Var) -> Result<Var> {
        let (a, b) = (cx.graph.shape(fa), cx.graph.shape(fb));
        let same = (a.h, a.w) == (b.h, b.w);
        let half = a.h == 2 * b.h && a.w == 2 * b.w;
        if a.n != b.n || a.c != self.channels || b.c != self.channels || !(same || half) {
            return Err(TensorError::dim("acfm", format!("cannot fuse {a} with {b} at {} channels", self.channels)));
        }
        let fb = resize_to(cx, fb, (a.h, a.w))?;
        let u = cx.graph.add(fa, fb)?;
        let m = self.msca.forward(cx, u)?;
        let gated_a = cx.graph.mul(m, fa)?;
        let inv = cx.graph.one_minus(m);
        let gated_b = cx.graph.mul(inv, fb)?;
        cx.graph.add(gated_a, gated_b)
    }

    pub fn forward(&self, cx: &mut Ctx, fa: Var, fb: Var) -> Result<Var> {
        let fab = self.fuse(cx, fa, fb)?;
        self.conv.forward(cx, fab)
    }
}

/// Dual-branch global context module:
///
/// ```text
/// F_c  = C(F),        F_cm = F_c · M_c(F_c)
/// F_p  = C(pool₂(F)), F_pm = F_p · M_p(F_p)
/// F'   = C(F + C(F_cm + up(F_pm)))
/// ```
///
/// where every `C` is its own conv3×3 → BN → ReLU.
#[derive(Debug, Clone)]
pub struct Dgcm {
    pub channels: usize,
    conv_c: ConvBn,
    conv_p: ConvBn,
    msca_c: Msca,
    msca_p: Msca,
    inner: ConvBn,
    outer: ConvBn,
}

impl Dgcm {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let c = channels;
        Ok(Dgcm {
            channels,
            conv_c: ConvBn::same(store, rng, &format!("{name}.conv_c"), c, c, 3)?,
            conv_p: ConvBn::same(store, rng, &format!("{name}.conv_p"), c, c, 3)?,
            msca_c: Msca::new(store, rng, &format!("{name}.msca_c"), c, reduction)?,
            msca_p: Msca::new(store, rng, &format!("{name}.msca_p"), c, reduction)?,
            inner: ConvBn::same(store, rng, &format!("{name}.inner"), c, c, 3)?,
            outer: ConvBn::same(store, rng, &format!("{name}.outer"), c, c, 3)?,
        })
    }

    pub fn forward(&self, cx: &mut Ctx, f: Var) -> Result<Var> {
        let s = cx.graph.shape(f);
        if s.c != self.channels {
            return Err(TensorError::dim("dgcm", format!("input has {} channels, module expects {}", s.c, self.channels)));
        }
        if s.h % 2 != 0 || s.w % 2 != 0 {
            return Err(TensorError::input("dgcm", format!("spatial size {}x{} must be even", s.h, s.w)));
        }
        let fc = self.conv_c.forward(cx, f)?;
        let mc = self.msca_c.forward(cx, fc)?;
        let fcm = cx.graph.mul(fc, mc)?;

        let pooled = cx.graph.avg_pool(f, 2, 2)?;
        let fp = self.conv_p.forward(cx, pooled)?;
        let mp = self.msca_p.forward(cx, fp)?;
        let fpm = cx.graph.mul(fp, mp)?;
        let fpm = cx.graph.upsample(fpm, (s.h, s.w))?;

        let fcpm = cx.graph.add(fcm, fpm)?;
        let inner = self.inner.forward(cx, fcpm)?;
        let residual = cx.graph.add(f, inner)?;
        self.outer.forward(cx, residual)
    }
}
