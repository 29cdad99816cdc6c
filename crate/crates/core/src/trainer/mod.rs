//! Multi-scale training loop, checkpoints and prediction.

mod checkpoint;
mod config;
mod optim;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::blocks::{apply_bn_updates, C2fNet, Ctx};
use crate::datagen::{hash, read_manifest, read_png, DataError, Image};
use crate::graph::Graph;
use crate::loss::total_loss;
use crate::ops::{resize_nearest, upsample_bilinear};
use crate::params::ParamStore;
use crate::tensor::{Tensor, TensorError};

pub use checkpoint::{Checkpoint, Entry, MAGIC, VERSION};
pub use config::{lr_schedule, round32, TrainConfig, SCALES};
pub use optim::{clip_grad_norm, optimizer_step, AdamParams, AdamState};

pub const TRACE_HEADER: &str = "step\tscale\tloss_total\tloss_fd\tloss_p";

const TAG_SCALE: u64 = 11;
const TAG_SHUFFLE: u64 = 12;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("sample `{id}`: {detail}")]
    Sample { id: String, detail: String },
    #[error("config: {0}")]
    Config(String),
    #[error("config line {line}: {detail}")]
    ConfigLine { line: usize, detail: String },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(u64),
    #[error("corrupt checkpoint at byte {offset}: {detail}")]
    Corrupt { offset: usize, detail: String },
    #[error("checkpoint does not match the network: {0}")]
    Checkpoint(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io { path: path.to_path_buf(), source }
    }
}

/// `1×3×H×W` in `[0, 1]`; gray images are replicated across channels.
pub fn image_to_tensor(img: &Image) -> Tensor {
    let c = img.channels;
    Tensor::from_fn([1, 3, img.height, img.width], |_, ch, y, x| {
        f64::from(img.data[(y * img.width + x) * c + ch.min(c - 1)]) / 255.0
    })
}

/// `1×1×H×W` binary mask from an 8-bit image (threshold 128).
pub fn mask_to_tensor(img: &Image) -> Tensor {
    let gray = img.to_gray();
    Tensor::from_fn([1, 1, img.height, img.width], |_, _, y, x| f64::from(u8::from(gray[y * img.width + x] >= 128)))
}

/// 8-bit gray image of `round(255·p)` for a `1×1×H×W` probability map.
pub fn prob_to_image(p: &Tensor) -> Image {
    let s = p.shape();
    let data = p.data().iter().map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8).collect();
    Image { width: s.w, height: s.h, channels: 1, data }
}

/// Images and masks held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub images: Vec<Tensor>,
    pub masks: Vec<Tensor>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn load(manifest: &Path) -> Result<Self, TrainError> {
        let entries = read_manifest(manifest)?;
        if entries.is_empty() {
            return Err(TrainError::Data(DataError::Invalid(format!("{}: no samples", manifest.display()))));
        }
        let mut ds = Dataset { ids: Vec::new(), images: Vec::new(), masks: Vec::new() };
        for e in entries {
            let img = read_png(&e.image)?;
            let mask = read_png(&e.mask)?;
            if (img.width, img.height) != (mask.width, mask.height) {
                return Err(TrainError::Sample {
                    id: e.id,
                    detail: format!("image is {}x{} but mask is {}x{}", img.width, img.height, mask.width, mask.height),
                });
            }
            ds.ids.push(e.id);
            ds.images.push(image_to_tensor(&img));
            ds.masks.push(mask_to_tensor(&mask));
        }
        Ok(ds)
    }
}

/// Index into `scales` drawn for a 0-based global step.
pub fn scale_index(seed: u64, step: u64, n_scales: usize) -> usize {
    (hash(&[seed, TAG_SCALE, step]) % n_scales as u64) as usize
}

/// Sample order for an epoch (Fisher-Yates driven by the stateless hash).
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (hash(&[seed, TAG_SHUFFLE, epoch, i as u64]) % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    /// 1-based global step.
    pub step: u64,
    pub scale: f64,
    pub total: f64,
    pub coarse: f64,
    pub fine: f64,
}

pub fn trace_to_tsv(rows: &[TraceRow]) -> String {
    let mut s = format!("{TRACE_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{:.10e}\t{:.10e}\t{:.10e}", r.step, r.scale, r.total, r.coarse, r.fine);
    }
    s
}

fn round_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = f64::from(*x as f32));
}

/// Owns the parameters for the duration of a run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: C2fNet,
    pub store: ParamStore,
    pub adam: AdamState,
    /// Completed global steps.
    pub step: u64,
    data: Dataset,
    resized: HashMap<usize, Vec<(Tensor, Tensor)>>,
}

/// Outcome of [`Trainer::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub row: TraceRow,
    pub epoch_finished: bool,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data: Dataset) -> Result<Self, TrainError> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(TrainError::Config("dataset is empty".into()));
        }
        let (net, store) = C2fNet::new(cfg.net, cfg.seed)?;
        let adam = AdamState::new(&store);
        Ok(Trainer { cfg, net, store, adam, step: 0, data, resized: HashMap::new() })
    }

    /// Continues a run from a checkpoint written by the same configuration.
    pub fn resume(cfg: TrainConfig, data: Dataset, ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let mut t = Self::new(cfg, data)?;
        if ckpt.seed != t.cfg.seed {
            return Err(TrainError::Checkpoint(format!("checkpoint seed {} differs from config seed {}", ckpt.seed, t.cfg.seed)));
        }
        ckpt.restore(&mut t.store, Some(&mut t.adam))?;
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.data.len().div_ceil(self.cfg.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let all = self.cfg.epochs as u64 * self.steps_per_epoch();
        if self.cfg.max_steps > 0 {
            all.min(self.cfg.max_steps as u64)
        } else {
            all
        }
    }

    pub fn epoch(&self) -> u64 {
        self.step / self.steps_per_epoch()
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.store, Some(&self.adam), self.epoch(), self.step, self.cfg.seed)
    }

    fn batch_at(&mut self, size: usize, idx: &[usize]) -> Result<(Tensor, Tensor), TrainError> {
        if !self.resized.contains_key(&size) {
            let mut v = Vec::with_capacity(self.data.len());
            for (img, mask) in self.data.images.iter().zip(&self.data.masks) {
                v.push((upsample_bilinear(img, (size, size))?, resize_nearest(mask, (size, size))?));
            }
            self.resized.insert(size, v);
        }
        let cache = &self.resized[&size];
        let imgs: Vec<Tensor> = idx.iter().map(|&i| cache[i].0.clone()).collect();
        let masks: Vec<Tensor> = idx.iter().map(|&i| cache[i].1.clone()).collect();
        Ok((Tensor::stack(&imgs)?, Tensor::stack(&masks)?))
    }

    /// Runs one optimization step, or returns `None` once training is done.
    pub fn step(&mut self) -> Result<Option<StepReport>, TrainError> {
        if self.is_done() {
            return Ok(None);
        }
        let spe = self.steps_per_epoch();
        let (epoch, b) = (self.step / spe, (self.step % spe) as usize);
        let bs = self.cfg.batch_size;
        let order = epoch_order(self.cfg.seed, epoch, self.data.len());
        let idx = order[b * bs..((b + 1) * bs).min(order.len())].to_vec();
        let scale = self.cfg.scales[scale_index(self.cfg.seed, self.step, self.cfg.scales.len())];
        let (images, masks) = self.batch_at(self.cfg.scaled_size(scale), &idx)?;

        let mut graph = Graph::new();
        let x = graph.input(images);
        let out = {
            let mut cx = Ctx::new(&mut graph, &self.store, true);
            self.net.forward(&mut cx, x)?
        };
        let (loss, br) = total_loss(&mut graph, out.coarse, out.fine, &masks)?;
        if !br.total.is_finite() {
            return Err(TrainError::NonFiniteLoss(self.step + 1));
        }
        graph.backward(loss)?;
        let mut grads: Vec<(String, Vec<f64>)> = self
            .store
            .learnable()
            .map(|e| (e.name.clone(), graph.param_grad(&e.name).map_or_else(|| vec![0.0; e.tensor.len()], <[f64]>::to_vec)))
            .collect();
        clip_grad_norm(&mut grads, self.cfg.grad_clip);
        let hp = AdamParams { beta1: self.cfg.beta1, beta2: self.cfg.beta2, eps: self.cfg.eps };
        optimizer_step(&mut self.store, &grads, &mut self.adam, lr_schedule(epoch as usize, &self.cfg), hp)?;
        apply_bn_updates(&mut self.store, &mut graph)?;

        self.step += 1;
        let epoch_finished = self.step % spe == 0;
        if epoch_finished || self.is_done() {
            // Checkpoints hold single precision; keeping the live state on the
            // same grid makes a resumed run follow the uninterrupted one.
            self.store.entries_mut().for_each(|e| round_f32(e.tensor.data_mut()));
            self.adam.m.iter_mut().chain(self.adam.v.iter_mut()).for_each(|(_, m)| round_f32(m));
        }
        let row = TraceRow { step: self.step, scale, total: br.total, coarse: br.coarse.total(), fine: br.fine.total() };
        Ok(Some(StepReport { row, epoch_finished }))
    }

    /// Trains to completion. With `out_dir`, writes `config.txt`, per-epoch
    /// `latest.ckpt` (plus `epoch_NNNN.ckpt` every `keep_every` epochs),
    /// `final.ckpt` and `trace.tsv`.
    pub fn run(&mut self, out_dir: Option<&Path>, mut on_step: impl FnMut(&TraceRow)) -> Result<Vec<TraceRow>, TrainError> {
        if let Some(d) = out_dir {
            std::fs::create_dir_all(d).map_err(|e| TrainError::io(d, e))?;
            let p = d.join("config.txt");
            std::fs::write(&p, self.cfg.to_text()).map_err(|e| TrainError::io(&p, e))?;
        }
        let mut trace = Vec::new();
        while let Some(rep) = self.step()? {
            on_step(&rep.row);
            trace.push(rep.row);
            if let (Some(d), true) = (out_dir, rep.epoch_finished) {
                let ck = self.checkpoint();
                ck.save(&d.join("latest.ckpt"))?;
                let e = ck.epoch as usize;
                if self.cfg.keep_every > 0 && e % self.cfg.keep_every == 0 {
                    ck.save(&d.join(format!("epoch_{e:04}.ckpt")))?;
                }
            }
        }
        if let Some(d) = out_dir {
            self.checkpoint().save(&d.join("final.ckpt"))?;
            let p = d.join("trace.tsv");
            std::fs::write(&p, trace_to_tsv(&trace)).map_err(|e| TrainError::io(&p, e))?;
        }
        Ok(trace)
    }
}

/// Rebuilds the network and its parameters from a checkpoint file.
pub fn load_model(path: &Path) -> Result<(C2fNet, ParamStore), TrainError> {
    let ckpt = Checkpoint::load(path)?;
    let cfg = C2fNet::config_from_params(&ckpt.to_store()?)?;
    let (net, mut store) = C2fNet::new(cfg, 0)?;
    ckpt.restore(&mut store, None)?;
    Ok((net, store))
}

/// Foreground probabilities at the image's own resolution. Inputs whose
/// sides are not multiples of 32 are resized for the network and the
/// logits resized back.
pub fn predict(net: &C2fNet, store: &ParamStore, image: &Tensor) -> Result<Tensor, TrainError> {
    let s = image.shape();
    let target = (round32(s.h as f64).max(32), round32(s.w as f64).max(32));
    let input = if (s.h, s.w) == target { image.clone() } else { upsample_bilinear(image, target)? };
    let mut graph = Graph::inference();
    let x = graph.input(input);
    let out = {
        let mut cx = Ctx::new(&mut graph, store, false);
        net.forward(&mut cx, x)?
    };
    let logits = graph.upsample(out.fine, (s.h, s.w))?;
    let p = graph.sigmoid(logits);
    Ok(graph.value(p).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_is_a_permutation() {
        let mut o = epoch_order(5, 3, 10);
        assert_ne!(o, (0..10).collect::<Vec<_>>());
        o.sort();
        assert_eq!(o, (0..10).collect::<Vec<_>>());
        assert_eq!(epoch_order(5, 3, 10), epoch_order(5, 3, 10));
    }

    #[test]
    fn tensor_image_conversions() {
        let img = Image::new(2, 1, 3, vec![255, 0, 51, 0, 255, 0]).unwrap();
        let t = image_to_tensor(&img);
        assert_eq!(t.at(0, 0, 0, 0), 1.0);
        assert!((t.at(0, 2, 0, 0) - 0.2).abs() < 1e-15);
        let m = mask_to_tensor(&Image::new(3, 1, 1, vec![0, 127, 128]).unwrap());
        assert_eq!(m.data(), &[0.0, 0.0, 1.0]);
        let p = prob_to_image(&Tensor::from_vec([1, 1, 1, 3], vec![0.0, 0.5, 1.0]).unwrap());
        assert_eq!(p.data, vec![0, 128, 255]);
    }

    #[test]
    fn trace_layout() {
        let s = trace_to_tsv(&[TraceRow { step: 1, scale: 0.75, total: 1.5, coarse: 1.0, fine: 0.5 }]);
        assert!(s.starts_with("step\tscale\tloss_total\tloss_fd\tloss_p\n1\t0.75\t"));
    }
}
