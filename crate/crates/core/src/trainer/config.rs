//! Training configuration and its `key = value` file format.

use std::fmt::Write as _;
use std::path::Path;

use super::TrainError;
use crate::blocks::NetConfig;

/// Scales of the multi-scale training strategy.
pub const SCALES: [f64; 3] = [0.75, 1.0, 1.25];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub decay_epoch: usize,
    pub epochs: usize,
    /// Stop after this many steps even if epochs remain; 0 disables the cap.
    pub max_steps: usize,
    pub batch_size: usize,
    pub input_size: usize,
    pub scales: Vec<f64>,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    /// Keep a numbered checkpoint every this many epochs; 0 keeps none.
    pub keep_every: usize,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-4,
            lr_decay_factor: 10.0,
            decay_epoch: 30,
            epochs: 100,
            max_steps: 0,
            batch_size: 4,
            input_size: 64,
            scales: SCALES.to_vec(),
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 10.0,
            keep_every: 0,
            net: NetConfig::default(),
        }
    }
}

/// Nearest multiple of 32 (ties round up).
pub fn round32(x: f64) -> usize {
    ((x / 32.0).round() as usize) * 32
}

impl TrainConfig {
    /// The protocol at full scale: 352-pixel inputs, batch 30, 100 epochs.
    pub fn full_scale() -> Self {
        TrainConfig { input_size: 352, batch_size: 30, epochs: 100, ..Default::default() }
    }

    /// Input side length for scale `s`.
    pub fn scaled_size(&self, s: f64) -> usize {
        round32(self.input_size as f64 * s)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr {} must be finite and non-negative", self.base_lr));
        }
        if self.lr_decay_factor <= 0.0 {
            return bad("lr_decay_factor must be positive".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.scales.is_empty() {
            return bad("at least one scale is required".into());
        }
        for &s in &self.scales {
            if !(s > 0.0) || self.scaled_size(s) < 32 {
                return bad(format!("scale {s} at input size {} rounds below 32 pixels", self.input_size));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("need 0 <= beta1, beta2 < 1 and eps > 0".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive".into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| TrainError::ConfigLine { line: i + 1, detail };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("`{key}`: `{v}` is not a number")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| err(format!("`{key}`: `{v}` is not a non-negative integer")));
            match key {
                "base_lr" => cfg.base_lr = num(value)?,
                "lr_decay_factor" => cfg.lr_decay_factor = num(value)?,
                "decay_epoch" => cfg.decay_epoch = int(value)?,
                "epochs" => cfg.epochs = int(value)?,
                "max_steps" => cfg.max_steps = int(value)?,
                "batch_size" => cfg.batch_size = int(value)?,
                "input_size" => cfg.input_size = int(value)?,
                "scales" => cfg.scales = value.split(',').map(|v| num(v.trim())).collect::<Result<_, _>>()?,
                "seed" => cfg.seed = value.parse().map_err(|_| err(format!("`seed`: `{value}` is not a 64-bit integer")))?,
                "beta1" => cfg.beta1 = num(value)?,
                "beta2" => cfg.beta2 = num(value)?,
                "eps" => cfg.eps = num(value)?,
                "grad_clip" => cfg.grad_clip = num(value)?,
                "keep_every" => cfg.keep_every = int(value)?,
                "widths" => {
                    let w: Vec<usize> = value.split(',').map(|v| int(v.trim())).collect::<Result<_, _>>()?;
                    cfg.net.widths = w.try_into().map_err(|w: Vec<usize>| err(format!("`widths` needs 5 values, got {}", w.len())))?;
                }
                "unified_width" => cfg.net.unified = int(value)?,
                "refine_width" => cfg.net.refine_rfb = int(value)?,
                "head_width" => cfg.net.head = int(value)?,
                "reduction" => cfg.net.reduction = int(value)?,
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        Self::parse(&text)
    }

    /// Inverse of [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "base_lr = {:?}", self.base_lr);
        let _ = writeln!(s, "lr_decay_factor = {:?}", self.lr_decay_factor);
        let _ = writeln!(s, "decay_epoch = {}", self.decay_epoch);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "max_steps = {}", self.max_steps);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "input_size = {}", self.input_size);
        let _ = writeln!(s, "scales = {}", list(&self.scales));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "beta1 = {:?}", self.beta1);
        let _ = writeln!(s, "beta2 = {:?}", self.beta2);
        let _ = writeln!(s, "eps = {:?}", self.eps);
        let _ = writeln!(s, "grad_clip = {:?}", self.grad_clip);
        let _ = writeln!(s, "keep_every = {}", self.keep_every);
        let w = self.net.widths.map(|w| w.to_string()).join(", ");
        let _ = writeln!(s, "widths = {w}");
        let _ = writeln!(s, "unified_width = {}", self.net.unified);
        let _ = writeln!(s, "refine_width = {}", self.net.refine_rfb);
        let _ = writeln!(s, "head_width = {}", self.net.head);
        let _ = writeln!(s, "reduction = {}", self.net.reduction);
        s
    }
}

/// Learning rate for a 0-based epoch: a single step decay.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.decay_epoch {
        cfg.base_lr
    } else {
        cfg.base_lr / cfg.lr_decay_factor
    }
}
