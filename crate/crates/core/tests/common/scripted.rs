//! Blocks rebuilt step by step from the plain tensor kernels in `ops`,
//! reading weights from a parameter store by name. Nothing here goes
//! through the block types or the autodiff graph.

use c2fnet::ops::{self, PoolKind, RunningStats};
use c2fnet::{ConvSpec, ParamStore, Tensor};

pub struct Script<'a> {
    pub store: &'a ParamStore,
    pub training: bool,
}

impl Script<'_> {
    fn p(&self, name: &str) -> &Tensor {
        self.store.get(name).unwrap_or_else(|_| panic!("missing `{name}`"))
    }

    /// Convolution with channels taken from the stored weight.
    pub fn conv(&self, x: &Tensor, name: &str, stride: usize, pad: usize, dil: usize) -> Tensor {
        let w = self.p(&format!("{name}.weight"));
        let s = w.shape();
        let spec = ConvSpec::new(s.c, s.n, s.h).stride(stride).padding(pad).dilation(dil);
        let bias_name = format!("{name}.bias");
        let b = self.store.contains(&bias_name).then(|| self.p(&bias_name));
        ops::conv2d(x, w, b, &spec).unwrap()
    }

    /// Transposed convolution; weights are stored `(in, out, k, k)`.
    pub fn deconv(&self, x: &Tensor, name: &str, pad: usize) -> Tensor {
        let w = self.p(&format!("{name}.weight"));
        let s = w.shape();
        let spec = ConvSpec::transposed(s.n, s.c, s.h).padding(pad);
        ops::conv_transpose2d(x, w, None, &spec).unwrap()
    }

    pub fn bn(&self, x: &Tensor, name: &str) -> Tensor {
        let mut stats = RunningStats {
            mean: self.p(&format!("{name}.running_mean")).data().to_vec(),
            var: self.p(&format!("{name}.running_var")).data().to_vec(),
        };
        ops::batch_norm(x, self.p(&format!("{name}.gamma")), self.p(&format!("{name}.beta")), &mut stats, self.training).unwrap()
    }

    /// conv(k×k, same padding, no bias) → BN → optional ReLU.
    pub fn cbr(&self, x: &Tensor, name: &str, relu: bool) -> Tensor {
        let k = self.p(&format!("{name}.conv.weight")).shape().h;
        let y = self.bn(&self.conv(x, &format!("{name}.conv"), 1, k / 2, 1), &format!("{name}.bn"));
        if relu {
            ops::relu(&y)
        } else {
            y
        }
    }

    pub fn rfb(&self, x: &Tensor, name: &str, branches: usize) -> Tensor {
        let mut outs = Vec::new();
        for k in 1..=branches {
            let mut y = self.conv(x, &format!("{name}.b{k}.0"), 1, 0, 1);
            if k >= 2 {
                y = self.conv(&y, &format!("{name}.b{k}.1"), 1, k - 1, 1);
            }
            if k > 2 {
                let d = 2 * k - 1;
                y = self.conv(&y, &format!("{name}.b{k}.2"), 1, d, d);
            }
            outs.push(y);
        }
        let last = outs.pop().unwrap();
        let refs: Vec<&Tensor> = outs.iter().collect();
        let fused = self.conv(&ops::concat_channels(&refs).unwrap(), &format!("{name}.fuse"), 1, 0, 1);
        ops::relu(&ops::add(&fused, &last).unwrap())
    }

    pub fn bottleneck(&self, x: &Tensor, name: &str) -> Tensor {
        let y = self.bn(&self.conv(x, &format!("{name}.pw1"), 1, 0, 1), &format!("{name}.bn1"));
        let y = ops::relu(&y);
        self.bn(&self.conv(&y, &format!("{name}.pw2"), 1, 0, 1), &format!("{name}.bn2"))
    }

    pub fn msca(&self, x: &Tensor, name: &str) -> Tensor {
        let local = self.bottleneck(x, &format!("{name}.local"));
        let pooled = ops::pool(x, PoolKind::GlobalAverage, 1, 1).unwrap();
        let global = ops::expand(&self.bottleneck(&pooled, &format!("{name}.global")), x.shape()).unwrap();
        ops::add(&local, &global).unwrap().map(ops::sigmoid)
    }

    fn to_size(x: &Tensor, h: usize, w: usize) -> Tensor {
        if (x.shape().h, x.shape().w) == (h, w) {
            x.clone()
        } else {
            ops::upsample_bilinear(x, (h, w)).unwrap()
        }
    }

    pub fn acfm_fuse(&self, fa: &Tensor, fb: &Tensor, name: &str) -> Tensor {
        let fb = Self::to_size(fb, fa.shape().h, fa.shape().w);
        let m = self.msca(&ops::add(fa, &fb).unwrap(), &format!("{name}.msca"));
        let inv = m.map(|v| 1.0 - v);
        ops::add(&ops::mul(&m, fa).unwrap(), &ops::mul(&inv, &fb).unwrap()).unwrap()
    }

    pub fn acfm(&self, fa: &Tensor, fb: &Tensor, name: &str) -> Tensor {
        self.cbr(&self.acfm_fuse(fa, fb, name), &format!("{name}.conv"), true)
    }

    pub fn dgcm(&self, f: &Tensor, name: &str) -> Tensor {
        let s = f.shape();
        let fc = self.cbr(f, &format!("{name}.conv_c"), true);
        let fcm = ops::mul(&fc, &self.msca(&fc, &format!("{name}.msca_c"))).unwrap();
        let fp = self.cbr(&ops::pool(f, PoolKind::Average, 2, 2).unwrap(), &format!("{name}.conv_p"), true);
        let fpm = ops::mul(&fp, &self.msca(&fp, &format!("{name}.msca_p"))).unwrap();
        let fcpm = ops::add(&fcm, &ops::upsample_bilinear(&fpm, (s.h, s.w)).unwrap()).unwrap();
        let inner = self.cbr(&fcpm, &format!("{name}.inner"), true);
        self.cbr(&ops::add(f, &inner).unwrap(), &format!("{name}.outer"), true)
    }

    fn dcbr(&self, x: &Tensor, name: &str) -> Tensor {
        let k = self.p(&format!("{name}.conv.weight")).shape().h;
        ops::relu(&self.bn(&self.deconv(x, &format!("{name}.conv"), k / 2), &format!("{name}.bn")))
    }

    pub fn mrb(&self, x: &Tensor, name: &str) -> Tensor {
        let a = self.dcbr(&self.cbr(x, &format!("{name}.conv3"), true), &format!("{name}.dconv3"));
        let b = self.dcbr(&self.cbr(x, &format!("{name}.conv5"), true), &format!("{name}.dconv5"));
        let f = self.cbr(&ops::concat_channels(&[&a, &b]).unwrap(), &format!("{name}.fuse"), true);
        ops::add(x, &f).unwrap()
    }

    pub fn cim(&self, x: &Tensor, name: &str) -> Tensor {
        let y = self.conv(x, &format!("{name}.c1"), 1, 0, 1);
        let y = self.mrb(&y, &format!("{name}.mrb1"));
        let y = self.conv(&y, &format!("{name}.c2"), 1, 0, 1);
        let y = self.mrb(&y, &format!("{name}.mrb2"));
        self.conv(&y, &format!("{name}.c3"), 1, 0, 1)
    }

    /// The gated, refined levels `g_1..g_3`.
    pub fn refine_levels(&self, low: [&Tensor; 3], coarse: &Tensor, name: &str) -> Vec<Tensor> {
        let gate = coarse.map(ops::sigmoid);
        low.iter()
            .enumerate()
            .map(|(i, f)| {
                let s = f.shape();
                let a = ops::expand(&Self::to_size(&gate, s.h, s.w), s).unwrap();
                self.rfb(&ops::mul(f, &a).unwrap(), &format!("{name}.rfb{}", i + 1), 4)
            })
            .collect()
    }

    pub fn refine(&self, low: [&Tensor; 3], coarse: &Tensor, name: &str) -> Tensor {
        let g = self.refine_levels(low, coarse, name);
        let (h, w) = (g[0].shape().h, g[0].shape().w);
        let m = self.cbr(&ops::concat_channels(&[&g[0], &Self::to_size(&g[1], h, w)]).unwrap(), &format!("{name}.merge12"), true);
        self.cbr(&ops::concat_channels(&[&m, &Self::to_size(&g[2], h, w)]).unwrap(), &format!("{name}.merge3"), true)
    }

    pub fn backbone(&self, image: &Tensor) -> Vec<Tensor> {
        let mut x = image.clone();
        let mut levels = Vec::new();
        for i in 1..=5 {
            let d = ops::relu(&self.bn(&self.conv(&x, &format!("backbone.s{i}.down.conv"), 2, 1, 1), &format!("backbone.s{i}.down.bn")));
            let r = self.cbr(&d, &format!("backbone.s{i}.res"), false);
            x = ops::relu(&ops::add(&d, &r).unwrap());
            levels.push(x.clone());
        }
        levels
    }

    /// `(f_D, P)` at their native strides.
    pub fn network(&self, image: &Tensor) -> (Tensor, Tensor) {
        let f = self.backbone(image);
        let r3 = self.rfb(&f[2], "rfb3", 5);
        let r4 = self.rfb(&f[3], "rfb4", 5);
        let r5 = self.rfb(&f[4], "rfb5", 5);
        let d1 = self.dgcm(&self.acfm(&r4, &r5, "acfm1"), "dgcm1");
        let d2 = self.dgcm(&self.acfm(&r3, &d1, "acfm2"), "dgcm2");
        let coarse = self.conv(&d2, "coarse_head", 1, 0, 1);
        let refined = self.refine([&f[0], &f[1], &f[2]], &coarse, "refine");
        (coarse.clone(), self.cim(&refined, "cim"))
    }
}
