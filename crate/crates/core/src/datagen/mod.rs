//! Synthetic camouflage datasets: textured backgrounds with a low-contrast
//! object, written as PNG pairs plus a `manifest.tsv`.

mod noise;
mod png_io;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use noise::{hash, splitmix64, unit, value_noise, OCTAVES, PERSISTENCE};
pub use png_io::{decode_png, encode_png, read_png, write_png, Image};

pub const MANIFEST_HEADER: &str = "id\timage\tmask\tseed";
pub const MAX_BISECTIONS: usize = 32;

// Stream tags mixed into the per-sample hash.
const TAG_SEED: u64 = 1;
const TAG_TEXTURE: u64 = 2;
const TAG_TINT: u64 = 3;
const TAG_BLOB: u64 = 4;
const TAG_CENTER: u64 = 5;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: unsupported image format: {detail}", path.display())]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("{}: cannot decode: {detail}", path.display())]
    Decode { path: PathBuf, detail: String },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("sample {index}: {detail}")]
    Generation { index: usize, detail: String },
    #[error("{}:{line}: {detail}", path.display())]
    Manifest { path: PathBuf, line: usize, detail: String },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub image_size: usize,
    /// Mean-intensity shift of the object relative to the background.
    pub contrast_delta: f64,
    /// Lattice period in pixels of the coarsest noise octave.
    pub texture_scale: f64,
    /// Allowed fraction of foreground pixels.
    pub coverage: (f64, f64),
    pub seed: u64,
    pub count: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { image_size: 64, contrast_delta: 0.15, texture_scale: 16.0, coverage: (0.15, 0.35), seed: 0, count: 8 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Invalid(m));
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return bad(format!("image size {} is not a positive multiple of 32", self.image_size));
        }
        if !(self.contrast_delta > 0.0 && self.contrast_delta <= 1.0) {
            return bad(format!("contrast delta {} outside (0, 1]", self.contrast_delta));
        }
        if !(self.texture_scale > 0.0 && self.texture_scale.is_finite()) {
            return bad(format!("texture scale {} must be positive", self.texture_scale));
        }
        let (lo, hi) = self.coverage;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return bad(format!("coverage range ({lo}, {hi}) must satisfy 0 < min <= max < 1"));
        }
        if self.count == 0 {
            return bad("count must be positive".into());
        }
        Ok(())
    }

    /// Zero-padded id of sample `index`.
    pub fn sample_id(&self, index: usize) -> String {
        let width = self.count.saturating_sub(1).to_string().len().max(4);
        format!("{index:0width$}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: Image,
    pub seed: u64,
}

impl Sample {
    pub fn coverage(&self) -> f64 {
        self.mask.data.iter().filter(|&&m| m == 255).count() as f64 / self.mask.data.len() as f64
    }
}

/// Threshold `score` so the fraction of pixels above it lies in `range`.
fn threshold_to_coverage(score: &[f64], range: (f64, f64), index: usize) -> Result<Vec<bool>, DataError> {
    let n = score.len() as f64;
    let mut lo = score.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = score.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..MAX_BISECTIONS {
        let t = 0.5 * (lo + hi);
        let cov = score.iter().filter(|&&s| s > t).count() as f64 / n;
        if cov > range.1 {
            lo = t;
        } else if cov < range.0 {
            hi = t;
        } else {
            return Ok(score.iter().map(|&s| s > t).collect());
        }
    }
    Err(DataError::Generation { index, detail: format!("coverage range {range:?} not reached after {MAX_BISECTIONS} bisections") })
}

pub fn generate_sample(cfg: &SynthConfig, index: usize) -> Result<Sample, DataError> {
    cfg.validate()?;
    let s = cfg.image_size;
    let seed = hash(&[cfg.seed, index as u64, TAG_SEED]);

    let texture = value_noise(s, s, cfg.texture_scale, OCTAVES, PERSISTENCE, hash(&[seed, TAG_TEXTURE]));
    let blob = value_noise(s, s, s as f64 / 2.0, 2, PERSISTENCE, hash(&[seed, TAG_BLOB]));
    let cy = (0.3 + 0.4 * unit(hash(&[seed, TAG_CENTER, 0]))) * s as f64;
    let cx = (0.3 + 0.4 * unit(hash(&[seed, TAG_CENTER, 1]))) * s as f64;
    let score: Vec<f64> = (0..s * s)
        .map(|i| {
            let (y, x) = ((i / s) as f64, (i % s) as f64);
            let r = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt() / (0.5 * s as f64);
            0.6 * (1.0 - r) + 0.4 * blob[i]
        })
        .collect();
    let fg = threshold_to_coverage(&score, cfg.coverage, index)?;

    let tint: Vec<f64> = (0..3).map(|c| 0.1 * unit(hash(&[seed, TAG_TINT, c])) - 0.05).collect();
    let mut rgb = Vec::with_capacity(3 * s * s);
    for (i, &t) in texture.iter().enumerate() {
        let shift = if fg[i] { cfg.contrast_delta } else { 0.0 };
        for tc in &tint {
            let v = (0.2 + 0.6 * t + tc + shift).clamp(0.0, 1.0);
            rgb.push((255.0 * v).round() as u8);
        }
    }
    let mask = fg.iter().map(|&f| if f { 255 } else { 0 }).collect();
    Ok(Sample { id: cfg.sample_id(index), image: Image::new(s, s, 3, rgb)?, mask: Image::new(s, s, 1, mask)?, seed })
}

/// One manifest row with paths resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub seed: u64,
}

/// Writes `images/`, `masks/` and `manifest.tsv` under `out_dir`.
pub fn write_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf, DataError> {
    cfg.validate()?;
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| DataError::io(&d, e))?;
    }
    let rows: Vec<(String, u64)> = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let sample = generate_sample(cfg, i)?;
            write_png(&out_dir.join("images").join(format!("{}.png", sample.id)), &sample.image)?;
            write_png(&out_dir.join("masks").join(format!("{}.png", sample.id)), &sample.mask)?;
            Ok((sample.id, sample.seed))
        })
        .collect::<Result<_, DataError>>()?;
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for (id, seed) in rows {
        let _ = writeln!(manifest, "{id}\timages/{id}.png\tmasks/{id}.png\t{seed}");
    }
    let path = out_dir.join("manifest.tsv");
    std::fs::write(&path, manifest).map_err(|e| DataError::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let err = |line: usize, detail: String| DataError::Manifest { path: path.to_path_buf(), line, detail };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == MANIFEST_HEADER => {}
        _ => return Err(err(1, format!("expected header `{}`", MANIFEST_HEADER.replace('\t', "\\t")))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(err(i + 1, format!("expected 4 fields, got {}", f.len())));
        }
        let seed = f[3].parse().map_err(|_| err(i + 1, format!("bad seed `{}`", f[3])))?;
        out.push(ManifestEntry { id: f[0].to_string(), image: base.join(f[1]), mask: base.join(f[2]), seed });
    }
    Ok(out)
}
