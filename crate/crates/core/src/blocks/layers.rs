//! Parameterized layers shared by the blocks: convolution, batch norm and
//! the conv → BN → ReLU stack.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::ops::RunningStats;
use crate::params::{fan_in_uniform, ParamKind, ParamStore};
use crate::tensor::{ConvSpec, Result, Shape, Tensor};

/// Everything a block needs to run forward.
pub struct Ctx<'a> {
    pub graph: &'a mut Graph,
    pub params: &'a ParamStore,
    /// Batch norm uses batch statistics (and queues running-stat updates).
    pub training: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(graph: &'a mut Graph, params: &'a ParamStore, training: bool) -> Self {
        Ctx { graph, params, training }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        self.graph.param(self.params, name)
    }
}

/// Plain or transposed convolution with an optional bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub name: String,
    pub spec: ConvSpec,
    pub bias: bool,
}

impl Conv {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, spec: ConvSpec, bias: bool) -> Result<Self> {
        spec.validate()?;
        let conv = Conv { name: name.to_string(), spec, bias };
        let fan_in = spec.in_channels * spec.kernel.0 * spec.kernel.1;
        store.insert(conv.weight_name(), ParamKind::Learnable, fan_in_uniform(spec.weight_shape(), fan_in, rng))?;
        if bias {
            store.insert(conv.bias_name(), ParamKind::Learnable, Tensor::zeros([1, spec.out_channels, 1, 1]))?;
        }
        Ok(conv)
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let w = cx.param(&self.weight_name())?;
        let b = if self.bias { Some(cx.param(&self.bias_name())?) } else { None };
        if self.spec.transposed {
            cx.graph.conv_transpose2d(x, w, b, self.spec)
        } else {
            cx.graph.conv2d(x, w, b, self.spec)
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let shape = Shape::new(1, channels, 1, 1);
        store.insert(format!("{name}.gamma"), ParamKind::Learnable, Tensor::ones(shape))?;
        store.insert(format!("{name}.beta"), ParamKind::Learnable, Tensor::zeros(shape))?;
        store.insert(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(shape))?;
        store.insert(format!("{name}.running_var"), ParamKind::Buffer, Tensor::ones(shape))?;
        Ok(BatchNorm { name: name.to_string(), channels })
    }

    pub fn stats(&self, store: &ParamStore) -> Result<RunningStats> {
        Ok(RunningStats {
            mean: store.get(&format!("{}.running_mean", self.name))?.data().to_vec(),
            var: store.get(&format!("{}.running_var", self.name))?.data().to_vec(),
        })
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let gamma = cx.param(&format!("{}.gamma", self.name))?;
        let beta = cx.param(&format!("{}.beta", self.name))?;
        let stats = self.stats(cx.params)?;
        cx.graph.batch_norm(x, gamma, beta, &stats, cx.training, &self.name)
    }
}

/// Folds queued batch statistics into the running-stat buffers of `store`.
pub fn apply_bn_updates(store: &mut ParamStore, graph: &mut Graph) -> Result<()> {
    for u in graph.take_bn_updates() {
        let mean_name = format!("{}.running_mean", u.name);
        let var_name = format!("{}.running_var", u.name);
        let mut stats = RunningStats { mean: store.get(&mean_name)?.data().to_vec(), var: store.get(&var_name)?.data().to_vec() };
        stats.update(&u.mean, &u.var);
        store.set_data(&mean_name, &stats.mean)?;
        store.set_data(&var_name, &stats.var)?;
    }
    Ok(())
}

/// Bias-free convolution followed by batch norm and, optionally, ReLU.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, spec: ConvSpec, relu: bool) -> Result<Self> {
        let conv = Conv::new(store, rng, &format!("{name}.conv"), spec, false)?;
        let bn = BatchNorm::new(store, &format!("{name}.bn"), spec.out_channels)?;
        Ok(ConvBn { conv, bn, relu })
    }

    /// `k×k` stride-1 convolution padded to keep the spatial size.
    pub fn same(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Self::new(store, rng, name, ConvSpec::new(cin, cout, k).padding(k / 2), true)
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.conv.forward(cx, x)?;
        let y = self.bn.forward(cx, y)?;
        Ok(if self.relu { cx.graph.relu(y) } else { y })
    }
}

/// Resizes `x` to `(h, w)` unless it is already that size.
pub(crate) fn resize_to(cx: &mut Ctx, x: Var, hw: (usize, usize)) -> Result<Var> {
    let s = cx.graph.shape(x);
    if (s.h, s.w) == hw {
        Ok(x)
    } else {
        cx.graph.upsample(x, hw)
    }
}
