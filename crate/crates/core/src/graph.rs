//! Reverse-mode automatic differentiation over a recorded operation list.
//!
//! Nodes are appended in execution order, so the node list is already a
//! topological order; [`Graph::backward`] walks it once in reverse.

use std::collections::HashMap;
use std::rc::Rc;

use crate::loss;
use crate::ops::{conv, norm, pointwise, pool, resize};
use crate::params::ParamStore;
use crate::tensor::{ConvSpec, Result, Shape, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, training: bool },
    AvgPool { x: Var, win: pool::Window },
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool { x: Var },
    Upsample { x: Var },
    Expand { x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    OneMinus(Var),
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    WeightedBce { z: Var, target: Rc<Tensor>, weight: Rc<Tensor> },
    WeightedIou { z: Var, target: Rc<Tensor>, weight: Rc<Tensor> },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Conv2d { x, w, b, .. } | ConvTranspose2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            AvgPool { x, .. } | MaxPool { x, .. } | GlobalAvgPool { x } | Upsample { x } | Expand { x } => vec![*x],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Scale(a, _) | Relu(a) | Sigmoid(a) | OneMinus(a) | Sum(a) | Mean(a) => vec![*a],
            Concat(parts) => parts.clone(),
            WeightedBce { z, .. } | WeightedIou { z, .. } => vec![*z],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics observed by a training-mode batch norm, to be folded
/// into the running statistics named `name` once the step completes.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Operation record for one forward pass.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
    params: HashMap<String, Var>,
    bn_updates: Vec<BnUpdate>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph that records operations for [`backward`](Self::backward).
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), recording: true, params: HashMap::new(), bn_updates: Vec::new() }
    }

    /// A graph that only evaluates; nothing is saved for differentiation.
    pub fn inference() -> Self {
        Graph { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let (op, needs_grad) = if self.recording {
            let needs = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
            if needs {
                (op, true)
            } else {
                (Op::Leaf, false)
            }
        } else {
            (Op::Leaf, false)
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t.with_requires_grad(false), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is accumulated by [`backward`](Self::backward).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = self.recording;
        self.nodes.push(Node { value: t.with_requires_grad(needs), op: Op::Leaf, needs_grad: needs });
        Var(self.nodes.len() - 1)
    }

    /// The leaf holding parameter `name`, created from `store` on first use.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let v = self.leaf(store.get(name)?.clone());
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Accumulated gradient of parameter `name`.
    pub fn param_grad(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).and_then(|&v| self.grad(v))
    }

    /// Parameter names used in this graph together with their leaves.
    pub fn param_vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.value.zero_grad());
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    // ---- operators -------------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, spec }))
    }

    /// Batch norm over `x`. In training mode the batch moments are also
    /// queued as a [`BnUpdate`] under `stats_name`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &norm::RunningStats,
        training: bool,
        stats_name: &str,
    ) -> Result<Var> {
        let fwd = norm::forward(self.value(x), self.value(gamma), self.value(beta), stats, training)?;
        if let Some((mean, var)) = fwd.batch_moments {
            self.bn_updates.push(BnUpdate { name: stats_name.to_string(), mean, var });
        }
        let op = if self.recording {
            Op::BatchNorm { x, gamma, beta, xhat: fwd.xhat, inv_std: fwd.inv_std, training }
        } else {
            Op::Leaf
        };
        Ok(self.push(fwd.out, op))
    }

    pub fn avg_pool(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let win = pool::Window { k, stride, pad: 0 };
        let out = pool::avg_forward(self.value(x), win)?;
        Ok(self.push(out, Op::AvgPool { x, win }))
    }

    pub fn max_pool(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = pool::max_forward(self.value(x), pool::Window { k, stride, pad: 0 })?;
        Ok(self.push(out, Op::MaxPool { x, argmax }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let out = pool::global_avg_forward(self.value(x));
        self.push(out, Op::GlobalAvgPool { x })
    }

    pub fn upsample(&mut self, x: Var, target: (usize, usize)) -> Result<Var> {
        let out = resize::upsample_bilinear(self.value(x), target)?;
        Ok(self.push(out, Op::Upsample { x }))
    }

    pub fn expand(&mut self, x: Var, target: Shape) -> Result<Var> {
        let out = pointwise::expand(self.value(x), target)?;
        Ok(self.push(out, Op::Expand { x }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = pointwise::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = pointwise::sub(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = pointwise::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = pointwise::relu(self.value(a));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(pointwise::sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| 1.0 - v);
        self.push(out, Op::OneMinus(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = pointwise::concat_channels(&tensors)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        self.push(out, Op::Mean(a))
    }

    /// Pixel-weighted binary cross-entropy on logits `z`.
    pub fn weighted_bce(&mut self, z: Var, target: &Tensor, weight: &Tensor) -> Result<Var> {
        let v = loss::weighted_bce_value(self.value(z), target, weight)?;
        let op = Op::WeightedBce { z, target: Rc::new(target.clone()), weight: Rc::new(weight.clone()) };
        Ok(self.push(Tensor::scalar(v), op))
    }

    /// Pixel-weighted soft IoU loss on logits `z`.
    pub fn weighted_iou(&mut self, z: Var, target: &Tensor, weight: &Tensor) -> Result<Var> {
        let v = loss::weighted_iou_value(self.value(z), target, weight)?;
        let op = Op::WeightedIou { z, target: Rc::new(target.clone()), weight: Rc::new(weight.clone()) };
        Ok(self.push(Tensor::scalar(v), op))
    }

    // ---- reverse pass ----------------------------------------------------

    /// Propagates d`loss`/d(·) to every leaf created with [`leaf`](Self::leaf)
    /// or [`param`](Self::param), adding to any gradient already present.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let s = self.shape(loss);
        if !s.is_scalar() {
            return Err(TensorError::NonScalarSeed(s));
        }
        if !self.recording {
            return Err(TensorError::input("backward", "graph was built in inference mode"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                if self.nodes[i].value.requires_grad() {
                    self.nodes[i].value.accumulate_grad(&dy);
                }
                continue;
            }
            for (p, g) in self.local_grads(i, &dy)? {
                if !self.nodes[p.0].needs_grad {
                    continue;
                }
                match &mut grads[p.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Vector-Jacobian products of node `i` for each of its parents.
    fn local_grads(&self, i: usize, dy: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, spec } | Op::ConvTranspose2d { x, w, b, spec } => {
                let need = (self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b)));
                let g = if spec.transposed {
                    conv::conv_transpose2d_backward(self.value(*x), self.value(*w), spec, dy, need)?
                } else {
                    conv::conv2d_backward(self.value(*x), self.value(*w), spec, dy, need)?
                };
                if let Some(dx) = g.dx {
                    out.push((*x, dx));
                }
                if let Some(dw) = g.dw {
                    out.push((*w, dw));
                }
                if let (Some(b), Some(db)) = (b, g.db) {
                    out.push((*b, db));
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, training } => {
                let g = norm::backward(self.value(*x), self.value(*gamma), xhat, inv_std, *training, dy);
                out.push((*x, g.dx));
                out.push((*gamma, g.dgamma));
                out.push((*beta, g.dbeta));
            }
            Op::AvgPool { x, win } => out.push((*x, pool::avg_backward(self.shape(*x), *win, dy))),
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (&j, &g) in argmax.iter().zip(dy) {
                    dx[j] += g;
                }
                out.push((*x, dx));
            }
            Op::GlobalAvgPool { x } => {
                let s = self.shape(*x);
                let inv = 1.0 / s.plane() as f64;
                let dx = dy.iter().flat_map(|&g| std::iter::repeat_n(g * inv, s.plane())).collect();
                out.push((*x, dx));
            }
            Op::Upsample { x } => {
                let t = node.value.shape();
                out.push((*x, resize::upsample_backward(self.shape(*x), (t.h, t.w), dy)));
            }
            Op::Expand { x } => out.push((*x, pointwise::expand_backward(self.shape(*x), node.value.shape(), dy))),
            Op::Add(a, b) => {
                out.push((*a, dy.to_vec()));
                out.push((*b, dy.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, dy.to_vec()));
                out.push((*b, dy.iter().map(|g| -g).collect()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                out.push((*a, dy.iter().zip(vb).map(|(g, y)| g * y).collect()));
                out.push((*b, dy.iter().zip(va).map(|(g, x)| g * x).collect()));
            }
            Op::Scale(a, k) => out.push((*a, dy.iter().map(|g| g * k).collect())),
            Op::Relu(a) => {
                let va = self.value(*a).data();
                out.push((*a, dy.iter().zip(va).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect()));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                out.push((*a, dy.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()));
            }
            Op::OneMinus(a) => out.push((*a, dy.iter().map(|g| -g).collect())),
            Op::Concat(parts) => {
                let channels: Vec<usize> = parts.iter().map(|&p| self.shape(p).c).collect();
                let pieces = pointwise::split_channels(dy, node.value.shape(), &channels);
                out.extend(parts.iter().copied().zip(pieces));
            }
            Op::Sum(a) => out.push((*a, vec![dy[0]; self.value(*a).len()])),
            Op::Mean(a) => {
                let n = self.value(*a).len();
                out.push((*a, vec![dy[0] / n as f64; n]));
            }
            Op::WeightedBce { z, target, weight } => {
                out.push((*z, loss::weighted_bce_grad(self.value(*z), target, weight, dy[0])));
            }
            Op::WeightedIou { z, target, weight } => {
                out.push((*z, loss::weighted_iou_grad(self.value(*z), target, weight, dy[0])));
            }
        }
        Ok(out)
    }
}
