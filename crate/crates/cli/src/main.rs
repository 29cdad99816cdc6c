//! `c2fnet`: synthesize data, train, predict, score and check gradients.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 on a runtime failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use c2fnet::datagen::{read_manifest, read_png, write_dataset, write_png, SynthConfig};
use c2fnet::gradcheck::suite::{run_block_suite, run_network_check, run_op_suite, CaseResult, DEFAULT_SEEDS};
use c2fnet::metrics::{evaluate_dataset, MaskPair};
use c2fnet::trainer::{image_to_tensor, load_model, predict, prob_to_image, Checkpoint, Dataset, TrainConfig, Trainer};

#[derive(Parser, Debug)]
#[command(name = "c2fnet", version, about = "Coarse-to-fine camouflaged object segmentation at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic camouflage dataset: images/, masks/ and manifest.tsv.
    Synth(SynthArgs),
    /// Train a network on a manifest.
    Train(TrainArgs),
    /// Write 8-bit foreground maps `<id>.png` for every sample of a manifest.
    Predict(PredictArgs),
    /// Score prediction PNGs against ground-truth PNGs paired by file stem.
    Score(ScoreArgs),
    /// Check analytic gradients of every operator and block against
    /// central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Side length in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Dataset seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Foreground/background intensity offset in [0, 1].
    #[arg(long, default_value_t = 0.15)]
    contrast: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset manifest (manifest.tsv).
    #[arg(long)]
    data: PathBuf,
    /// `key = value` training configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints, config.txt and trace.tsv.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Suppress the per-step trace on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest of the images to segment.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Directory of prediction PNGs.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth mask PNGs.
    #[arg(long)]
    gt: PathBuf,
    /// Report path (TSV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Also check the end-to-end network and loss.
    #[arg(long)]
    full: bool,
    /// Random instances per case.
    #[arg(long, default_value_t = DEFAULT_SEEDS)]
    seeds: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `C2F_THREADS` caps the worker pool; 0 or unset means one per core.
fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("C2F_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("C2F_THREADS must be a non-negative integer, got `{v}`"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Score(a) => score(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn synth(a: SynthArgs) -> Result<u8> {
    let cfg = SynthConfig { image_size: a.size, contrast_delta: a.contrast, seed: a.seed, count: a.count, ..Default::default() };
    let manifest = write_dataset(&cfg, &a.out)?;
    println!("wrote {} samples, manifest {}", cfg.count, manifest.display());
    Ok(0)
}

fn train(a: TrainArgs) -> Result<u8> {
    let cfg = match &a.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    let data = Dataset::load(&a.data)?;
    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(cfg, data, &Checkpoint::load(p)?).with_context(|| format!("resuming from {}", p.display()))?,
        None => Trainer::new(cfg, data)?,
    };
    let quiet = a.quiet;
    let trace = trainer.run(Some(&a.out), |r| {
        if !quiet {
            eprintln!("step {:>6}  scale {:.2}  loss {:.6}  (coarse {:.6}, fine {:.6})", r.step, r.scale, r.total, r.coarse, r.fine);
        }
    })?;
    match (trace.first(), trace.last()) {
        (Some(f), Some(l)) => println!("{} steps, loss {:.6} -> {:.6}, checkpoint {}", trace.len(), f.total, l.total, a.out.join("final.ckpt").display()),
        _ => println!("nothing to do: checkpoint already at the end of training"),
    }
    Ok(0)
}

fn predict_cmd(a: PredictArgs) -> Result<u8> {
    let (net, store) = load_model(&a.checkpoint)?;
    let entries = read_manifest(&a.data)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for e in &entries {
        let img = read_png(&e.image)?;
        let p = predict(&net, &store, &image_to_tensor(&img)).with_context(|| format!("sample {}", e.id))?;
        write_png(&a.out.join(format!("{}.png", e.id)), &prob_to_image(&p))?;
    }
    println!("wrote {} predictions to {}", entries.len(), a.out.display());
    Ok(0)
}

/// PNG files of `dir` keyed by file stem.
fn pngs_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                map.insert(stem.to_string(), path);
            }
        }
    }
    Ok(map)
}

fn score(a: ScoreArgs) -> Result<u8> {
    let preds = pngs_by_stem(&a.pred)?;
    let gts = pngs_by_stem(&a.gt)?;
    let unmatched: Vec<String> = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .map(|k| format!("{k} (prediction only)"))
        .chain(gts.keys().filter(|k| !preds.contains_key(*k)).map(|k| format!("{k} (ground truth only)")))
        .collect();
    if !unmatched.is_empty() {
        eprintln!("unmatched stems:");
        for u in &unmatched {
            eprintln!("  {u}");
        }
        return Ok(2);
    }
    if preds.is_empty() {
        bail!("no PNG files in {}", a.pred.display());
    }
    let mut pairs = Vec::with_capacity(preds.len());
    for (stem, pp) in &preds {
        let (p, g) = (read_png(pp)?, read_png(&gts[stem])?);
        if (p.width, p.height) != (g.width, g.height) {
            bail!("{stem}: prediction is {}x{} but ground truth is {}x{}", p.width, p.height, g.width, g.height);
        }
        let pair = MaskPair::from_u8(p.height, p.width, &p.to_gray(), &g.to_gray()).with_context(|| stem.clone())?;
        pairs.push((stem.clone(), pair));
    }
    let report = evaluate_dataset(&pairs)?;
    report.write_tsv(&a.out)?;
    let m = &report.mean;
    println!("{} pairs  M {:.4}  S {:.4}  F {:.4}  Fw {:.4}  E {:.4}", report.count(), m.mae, m.s, m.f, m.fw, m.e);
    Ok(0)
}

fn gradcheck(a: GradcheckArgs) -> Result<u8> {
    let mut cases: Vec<CaseResult> = run_op_suite(a.seeds)?;
    cases.extend(run_block_suite(a.seeds)?);
    if a.full {
        let mut net = run_network_check(0, 2)?;
        for seed in 1..a.seeds as u64 {
            let r = run_network_check(seed, 2)?;
            net.seeds += 1;
            net.coords += r.coords;
            net.nonsmooth += r.nonsmooth;
            net.noisy += r.noisy;
            net.max_rel_error = net.max_rel_error.max(r.max_rel_error);
        }
        cases.push(net);
    }
    println!("{:<20} {:>5} {:>7} {:>6} {:>6} {:>11}  status", "case", "seeds", "coords", "kinks", "noisy", "max rel err");
    let mut failed = 0;
    for c in &cases {
        let ok = c.passed();
        failed += usize::from(!ok);
        println!(
            "{:<20} {:>5} {:>7} {:>6} {:>6} {:>11.3e}  {}",
            c.name,
            c.seeds,
            c.coords,
            c.nonsmooth,
            c.noisy,
            c.max_rel_error,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failed > 0 {
        eprintln!("{failed} case(s) above tolerance {:e}", cases[0].tolerance);
        return Ok(2);
    }
    Ok(0)
}
