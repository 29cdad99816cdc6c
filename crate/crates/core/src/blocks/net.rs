//! Backbone pyramid and the full coarse-to-fine network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fusion::{Acfm, Dgcm};
use super::inference::{Cim, Refinement};
use super::layers::{Conv, ConvBn, Ctx};
use super::msca::DEFAULT_REDUCTION;
use super::rfb::Rfb;
use crate::graph::Var;
use crate::params::ParamStore;
use crate::tensor::{ConvSpec, Result, TensorError};

/// Channel widths of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Backbone output widths for `f1..f5`.
    pub widths: [usize; 5],
    /// Width every high-level feature is reduced to by its RFB.
    pub unified: usize,
    /// Width of the modified RFBs on low-level features.
    pub refine_rfb: usize,
    /// Width of the refined low-level feature fed to the inference head.
    pub head: usize,
    pub reduction: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { widths: [16, 24, 32, 48, 64], unified: 64, refine_rfb: 32, head: 16, reduction: DEFAULT_REDUCTION }
    }
}

impl NetConfig {
    /// A very small network for end-to-end gradient checks.
    pub fn tiny() -> Self {
        NetConfig { widths: [4, 4, 8, 8, 8], unified: 8, refine_rfb: 4, head: 4, reduction: 4 }
    }
}

/// Backbone outputs at strides 2, 4, 8, 16 and 32.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeaturePyramid {
    pub levels: [Var; 5],
}

impl FeaturePyramid {
    /// `f_i` for `i` in `1..=5`.
    pub fn f(&self, i: usize) -> Var {
        self.levels[i - 1]
    }

    /// `Q_l = {f1, f2, f3}`.
    pub fn low(&self) -> [Var; 3] {
        [self.levels[0], self.levels[1], self.levels[2]]
    }

    /// `Q_h = {f3, f4, f5}`.
    pub fn high(&self) -> [Var; 3] {
        [self.levels[2], self.levels[3], self.levels[4]]
    }
}

/// One encoder stage: strided conv, then a residual 3×3 block.
#[derive(Debug, Clone)]
struct Stage {
    down: ConvBn,
    res: ConvBn,
}

/// Five-stage convolutional encoder standing in for a pretrained backbone.
#[derive(Debug, Clone)]
pub struct Backbone {
    stages: Vec<Stage>,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, widths: [usize; 5]) -> Result<Self> {
        let mut cin = 3;
        let mut stages = Vec::with_capacity(5);
        for (i, &w) in widths.iter().enumerate() {
            let down = ConvBn::new(store, rng, &format!("{name}.s{}.down", i + 1), ConvSpec::new(cin, w, 3).stride(2).padding(1), true)?;
            let res = ConvBn::new(store, rng, &format!("{name}.s{}.res", i + 1), ConvSpec::new(w, w, 3).padding(1), false)?;
            stages.push(Stage { down, res });
            cin = w;
        }
        Ok(Backbone { stages })
    }

    pub fn forward(&self, cx: &mut Ctx, image: Var) -> Result<FeaturePyramid> {
        let s = cx.graph.shape(image);
        if s.c != 3 {
            return Err(TensorError::input("backbone", format!("expected a 3-channel image, got {s}")));
        }
        if s.h % 32 != 0 || s.w % 32 != 0 || s.h == 0 || s.w == 0 {
            return Err(TensorError::input("backbone", format!("image {}x{} is not divisible by 32", s.h, s.w)));
        }
        let mut x = image;
        let mut levels = [image; 5];
        for (i, st) in self.stages.iter().enumerate() {
            let d = st.down.forward(cx, x)?;
            let r = st.res.forward(cx, d)?;
            let sum = cx.graph.add(d, r)?;
            x = cx.graph.relu(sum);
            levels[i] = x;
        }
        Ok(FeaturePyramid { levels })
    }
}

/// Logit maps produced by the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetOutputs {
    /// Coarse map `f_D` at stride 8.
    pub coarse_raw: Var,
    /// Final prediction `P` at stride 2.
    pub fine_raw: Var,
    /// `f_D` resized to the input resolution.
    pub coarse: Var,
    /// `P` resized to the input resolution.
    pub fine: Var,
}

#[derive(Debug, Clone)]
pub struct C2fNet {
    pub config: NetConfig,
    pub backbone: Backbone,
    pub rfb: [Rfb; 3],
    pub acfm: [Acfm; 2],
    pub dgcm: [Dgcm; 2],
    pub coarse_head: Conv,
    pub refine: Refinement,
    pub cim: Cim,
}

impl C2fNet {
    /// Builds the network and a freshly initialized parameter store.
    pub fn new(config: NetConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Self::build(config, &mut store, &mut rng)?;
        Ok((net, store))
    }

    fn build(cfg: NetConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let [w1, w2, w3, w4, w5] = cfg.widths;
        let u = cfg.unified;
        let backbone = Backbone::new(store, rng, "backbone", cfg.widths)?;
        let rfb = [
            Rfb::new(store, rng, "rfb3", w3, u, 5)?,
            Rfb::new(store, rng, "rfb4", w4, u, 5)?,
            Rfb::new(store, rng, "rfb5", w5, u, 5)?,
        ];
        let acfm = [Acfm::new(store, rng, "acfm1", u, cfg.reduction)?, Acfm::new(store, rng, "acfm2", u, cfg.reduction)?];
        let dgcm = [Dgcm::new(store, rng, "dgcm1", u, cfg.reduction)?, Dgcm::new(store, rng, "dgcm2", u, cfg.reduction)?];
        let coarse_head = Conv::new(store, rng, "coarse_head", ConvSpec::new(u, 1, 1), true)?;
        let refine = Refinement::new(store, rng, "refine", [w1, w2, w3], cfg.refine_rfb, cfg.head)?;
        let cim = Cim::new(store, rng, "cim", cfg.head)?;
        Ok(C2fNet { config: cfg, backbone, rfb, acfm, dgcm, coarse_head, refine, cim })
    }

    /// Recovers the channel configuration from a parameter store's shapes.
    pub fn config_from_params(store: &ParamStore) -> Result<NetConfig> {
        let out_c = |name: &str| store.get(name).map(|t| t.shape().n);
        let mut widths = [0; 5];
        for (i, w) in widths.iter_mut().enumerate() {
            *w = out_c(&format!("backbone.s{}.down.conv.weight", i + 1))?;
        }
        let unified = out_c("rfb3.b1.0.weight")?;
        let mid = out_c("acfm1.msca.local.pw1.weight")?;
        Ok(NetConfig {
            widths,
            unified,
            refine_rfb: out_c("refine.rfb1.b1.0.weight")?,
            head: out_c("refine.merge3.conv.weight")?,
            reduction: unified / mid.max(1),
        })
    }

    /// Builds the network structure matching an existing store.
    pub fn for_params(store: &ParamStore) -> Result<Self> {
        let cfg = Self::config_from_params(store)?;
        let (net, fresh) = Self::new(cfg, 0)?;
        for e in fresh.entries() {
            let have = store.get(&e.name)?;
            if have.shape() != e.tensor.shape() {
                return Err(TensorError::dim("C2fNet::for_params", format!("`{}` is {} but the network needs {}", e.name, have.shape(), e.tensor.shape())));
            }
        }
        if fresh.len() != store.len() {
            return Err(TensorError::input("C2fNet::for_params", format!("store has {} entries, network {}", store.len(), fresh.len())));
        }
        Ok(net)
    }

    pub fn backbone_forward(&self, cx: &mut Ctx, image: Var) -> Result<FeaturePyramid> {
        self.backbone.forward(cx, image)
    }

    /// High-level cascade: RFBs on `Q_h`, then two ACFM → DGCM stages, then
    /// a 1×1 projection to the coarse logit map at stride 8.
    pub fn cascade_forward(&self, cx: &mut Ctx, pyramid: &FeaturePyramid) -> Result<Var> {
        let [f3, f4, f5] = pyramid.high();
        let r3 = self.rfb[0].forward(cx, f3)?;
        let r4 = self.rfb[1].forward(cx, f4)?;
        let r5 = self.rfb[2].forward(cx, f5)?;
        let a1 = self.acfm[0].forward(cx, r4, r5)?;
        let d1 = self.dgcm[0].forward(cx, a1)?;
        let a2 = self.acfm[1].forward(cx, r3, d1)?;
        let d2 = self.dgcm[1].forward(cx, a2)?;
        self.coarse_head.forward(cx, d2)
    }

    pub fn refine_low_levels(&self, cx: &mut Ctx, pyramid: &FeaturePyramid, coarse: Var) -> Result<Var> {
        self.refine.forward(cx, pyramid.low(), coarse)
    }

    pub fn forward(&self, cx: &mut Ctx, image: Var) -> Result<NetOutputs> {
        let s = cx.graph.shape(image);
        let pyramid = self.backbone_forward(cx, image)?;
        let coarse_raw = self.cascade_forward(cx, &pyramid)?;
        let refined = self.refine_low_levels(cx, &pyramid, coarse_raw)?;
        let fine_raw = self.cim.forward(cx, refined)?;
        let coarse = cx.graph.upsample(coarse_raw, (s.h, s.w))?;
        let fine = cx.graph.upsample(fine_raw, (s.h, s.w))?;
        Ok(NetOutputs { coarse_raw, fine_raw, coarse, fine })
    }
}
