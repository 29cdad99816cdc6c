//! Camouflaged-object evaluation measures and dataset-level reports.

mod measures;
mod weighted;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::tensor::{Result, TensorError};

pub use measures::{adaptive_threshold, binarize, e_measure_adaptive, f_measure_adaptive, mae, s_measure, BETA2, EPS};
pub use weighted::{distance_transform, gaussian_kernel, weighted_f_measure, WeightedF, GAUSS_SIGMA, GAUSS_SIZE};

/// A prediction in `[0, 1]` and its binary ground truth, row-major `h×w`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub h: usize,
    pub w: usize,
    pub pred: Vec<f64>,
    pub gt: Vec<bool>,
}

impl MaskPair {
    /// Clamps `pred` into `[0, 1]`; `gt` must be exactly 0 or 1.
    pub fn new(h: usize, w: usize, pred: Vec<f64>, gt: &[f64]) -> Result<Self> {
        if pred.len() != h * w || gt.len() != h * w || h * w == 0 {
            return Err(TensorError::dim("MaskPair", format!("{h}x{w} map with {} prediction and {} ground-truth values", pred.len(), gt.len())));
        }
        if let Some(bad) = gt.iter().find(|&&g| g != 0.0 && g != 1.0) {
            return Err(TensorError::input("MaskPair", format!("ground truth must be binary, found {bad}")));
        }
        if pred.iter().any(|p| p.is_nan()) {
            return Err(TensorError::input("MaskPair", "prediction contains NaN"));
        }
        let pred = pred.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        Ok(MaskPair { h, w, pred, gt: gt.iter().map(|&g| g == 1.0).collect() })
    }

    /// 8-bit maps: prediction divided by 255, ground truth `≥ 128`.
    pub fn from_u8(h: usize, w: usize, pred: &[u8], gt: &[u8]) -> Result<Self> {
        if pred.len() != h * w || gt.len() != h * w || h * w == 0 {
            return Err(TensorError::dim("MaskPair", format!("{h}x{w} map with {} prediction and {} ground-truth values", pred.len(), gt.len())));
        }
        Ok(MaskPair {
            h,
            w,
            pred: pred.iter().map(|&p| f64::from(p) / 255.0).collect(),
            gt: gt.iter().map(|&g| g >= 128).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn gt_f64(&self) -> Vec<f64> {
        self.gt.iter().map(|&g| f64::from(u8::from(g))).collect()
    }
}

/// The five measures for one sample (or their means).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measures {
    pub mae: f64,
    pub s: f64,
    pub f: f64,
    pub fw: f64,
    pub e: f64,
}

impl Measures {
    pub fn of(pair: &MaskPair) -> Self {
        Measures {
            mae: mae(pair),
            s: s_measure(pair),
            f: f_measure_adaptive(pair),
            fw: weighted_f_measure(pair).value,
            e: e_measure_adaptive(pair),
        }
    }

    fn values(&self) -> [f64; 5] {
        [self.mae, self.s, self.f, self.fw, self.e]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetrics {
    pub name: String,
    pub measures: Measures,
    /// Ground truth was empty, so the weighted F-measure is 0 by definition.
    pub fw_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub samples: Vec<SampleMetrics>,
    pub mean: Measures,
}

impl MetricReport {
    pub fn count(&self) -> usize {
        self.samples.len()
    }

    /// Tab-separated table: header, one row per sample, then `MEAN`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("name\tM\tS\tF\tFw\tE\n");
        let mut row = |name: &str, m: &Measures| {
            let _ = writeln!(out, "{name}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}", m.mae, m.s, m.f, m.fw, m.e);
        };
        for s in &self.samples {
            row(&s.name, &s.measures);
        }
        row("MEAN", &self.mean);
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| TensorError::input("write report", format!("{}: {e}", path.display())))
    }
}

/// Running mean over the sorted values: independent of sample order, and
/// exact when all values agree.
fn order_free_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let mut m = 0.0;
    for (k, x) in v.iter().enumerate() {
        m += (x - m) / (k + 1) as f64;
    }
    m
}

/// Per-sample measures and their per-image means.
pub fn evaluate_dataset(pairs: &[(String, MaskPair)]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(TensorError::input("evaluate_dataset", "empty dataset"));
    }
    let samples: Vec<SampleMetrics> = pairs
        .par_iter()
        .map(|(name, pair)| {
            let fw_degenerate = !pair.gt.iter().any(|&g| g);
            SampleMetrics { name: name.clone(), measures: Measures::of(pair), fw_degenerate }
        })
        .collect();
    let col = |i: usize| order_free_mean(samples.iter().map(|s| s.measures.values()[i]).collect());
    let mean = Measures { mae: col(0), s: col(1), f: col(2), fw: col(3), e: col(4) };
    Ok(MetricReport { samples, mean })
}
