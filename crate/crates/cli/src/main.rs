use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use dcssr::data::manifest::{generate_dataset, load_split};
use dcssr::data::{bicubic, load_image, save_image, DatasetManifest, Split, SplitCounts, SynthConfig};
use dcssr::metrics::{evaluate, Method};
use dcssr::model::{DisparityMask, Model};
use dcssr::train::gradcheck::{gradcheck, GradcheckConfig, Worst};
use dcssr::train::{train_from_manifest, Checkpoint, TrainConfig};
use dcssr::{Execution, Tensor};

/// Stereo super-resolution with disparity-constrained parallax attention.
#[derive(Parser, Debug)]
#[command(name = "dcssr", version, about)]
struct Cli {
    /// Process batches and evaluation sets on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic stereo dataset with ground-truth disparity.
    GenData(GenDataArgs),
    /// Train a model on a dataset manifest.
    Train(TrainArgs),
    /// Score bicubic or a trained model on one split.
    Eval(EvalArgs),
    /// Super-resolve one LR stereo pair.
    Sr(SrArgs),
    /// Write the LR disparity masks of one stereo pair.
    DumpMasks(DumpMasksArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Output directory (receives the images and manifest.tsv).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    train: usize,
    #[arg(long, default_value_t = 8)]
    val: usize,
    #[arg(long, default_value_t = 8)]
    test: usize,
    /// HR frame height.
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// HR frame width.
    #[arg(long, default_value_t = 192)]
    width: usize,
    /// Image channels (1 or 3).
    #[arg(long, default_value_t = 1)]
    channels: usize,
    /// HR disparity range, `LO:HI` pixels.
    #[arg(long, default_value = "0:8", value_parser = parse_range)]
    disparity: (f64, f64),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Paper,
    Desk,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Starting point for every setting.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// `key = value` file applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (overridden by DCSSR_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Any configuration key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Bicubic,
    Model,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, value_enum, default_value_t = MethodArg::Model)]
    method: MethodArg,
    /// Model checkpoint (required for `--method model`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Scale for the bicubic baseline; a model uses its own.
    #[arg(long, default_value_t = 2)]
    scale: usize,
    /// CSV destination; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SrArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long)]
    out_left: PathBuf,
    #[arg(long)]
    out_right: PathBuf,
    /// Model checkpoint; plain bicubic upscaling when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Scale for bicubic upscaling without a checkpoint.
    #[arg(long, default_value_t = 2)]
    scale: usize,
    /// Also write a 2x2 comparison panel: bicubic on top, SR below.
    #[arg(long)]
    panel: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DumpMasksArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 2)]
    scale: usize,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    /// LR patch, `HxW`.
    #[arg(long, default_value = "6x12", value_parser = parse_patch)]
    patch: (usize, usize),
    #[arg(long, default_value_t = 0.005)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number '{a}'"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number '{b}'"))?;
    Ok((lo, hi))
}

fn parse_patch(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    let h = a.trim().parse().map_err(|_| format!("bad height '{a}'"))?;
    let w = b.trim().parse().map_err(|_| format!("bad width '{b}'"))?;
    Ok((h, w))
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(Checkpoint::load(path)?.model)
}

fn gen_data(a: GenDataArgs, exec: Execution) -> Result<()> {
    let cfg = SynthConfig {
        height: a.height,
        width: a.width,
        channels: a.channels,
        disparity: a.disparity,
        ..SynthConfig::default()
    };
    let counts = SplitCounts {
        train: a.train,
        val: a.val,
        test: a.test,
    };
    let m = generate_dataset(&a.out, a.seed, counts, &cfg, exec)?;
    println!("wrote {} stereo pairs to {}", m.entries.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs, exec: Execution) -> Result<()> {
    let scale = a.scale.unwrap_or(2);
    let mut cfg = match a.preset {
        Preset::Paper => TrainConfig::paper(scale),
        Preset::Desk => TrainConfig::desk(scale),
    };
    if let Some(path) = &a.config {
        cfg.apply_file(path)?;
    }
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects key=value, got '{kv}'"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = a.scale {
        cfg.scale = s;
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch = a.batch.unwrap_or(cfg.batch);
    cfg.lr0 = a.lr.unwrap_or(cfg.lr0);
    cfg.alpha = a.alpha.unwrap_or(cfg.alpha);
    cfg.channels = a.channels.unwrap_or(cfg.channels);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.max_steps = a.max_steps.or(cfg.max_steps);
    if let Some(d) = a.data {
        cfg.data = Some(d);
    }
    if let Some(o) = a.out {
        cfg.out_dir = o;
    }
    let summary = train_from_manifest(&cfg, a.resume.as_deref(), exec)?;
    if let Some(last) = summary.last() {
        println!(
            "finished epoch {}: loss {:.6} (mse {:.6})",
            last.epoch, last.mean.total, last.mean.mse
        );
        if let Some(v) = &last.validation {
            println!("validation: psnr {:.3} dB, ssim {:.4}", v.mean_psnr, v.mean_ssim);
        }
    }
    Ok(())
}

fn eval(a: EvalArgs, exec: Execution) -> Result<()> {
    let model = match (a.method, &a.checkpoint) {
        (MethodArg::Model, Some(p)) => Some(load_model(p)?),
        (MethodArg::Model, None) => bail!("--method model needs --checkpoint"),
        (MethodArg::Bicubic, _) => None,
    };
    let scale = model.as_ref().map_or(a.scale, |m| m.config().scale);
    let samples = load_split(&a.data, a.split, scale, exec)?;
    if samples.is_empty() {
        bail!("split '{}' of {} is empty", a.split, a.data.display());
    }
    let manifest = DatasetManifest::read(&a.data)?;
    let ids: Vec<String> = manifest
        .split(a.split)
        .map(|e| {
            let stem = e.left.file_stem().unwrap_or_default().to_string_lossy();
            stem.strip_suffix("_L").unwrap_or(&stem).to_string()
        })
        .collect();
    let method = match &model {
        Some(m) => Method::Model(m),
        None => Method::Bicubic,
    };
    let report = evaluate(method, &samples, &ids, exec)?;
    match &a.out {
        Some(p) => {
            report.write_csv(p)?;
            println!(
                "{} on {} {} pairs: psnr {:.3} dB, ssim {:.4}",
                report.method,
                samples.len(),
                a.split,
                report.mean_psnr,
                report.mean_ssim
            );
        }
        None => print!("{}", report.to_csv()),
    }
    Ok(())
}

/// Tiles `[[a, b], [c, d]]`, all `[C, H, W]`, into `[C, 2H, 2W]`.
fn panel(tiles: [&Tensor<f32>; 4]) -> Tensor<f32> {
    let s = tiles[0].shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    Tensor::from_indices([c, 2 * h, 2 * w], |ix| {
        let t = tiles[2 * (ix[1] / h) + ix[2] / w];
        t.data()[(ix[0] * h + ix[1] % h) * w + ix[2] % w]
    })
}

fn sr(a: SrArgs) -> Result<()> {
    let left = load_image(&a.left)?;
    let right = load_image(&a.right)?;
    if left.shape() != right.shape() {
        bail!("left {:?} and right {:?} differ in shape", left.shape(), right.shape());
    }
    let model = a.checkpoint.as_deref().map(load_model).transpose()?;
    let scale = model.as_ref().map_or(a.scale, |m| m.config().scale);
    let bl = bicubic::upscale(&left, scale)?.map(|v| v.clamp(0.0, 1.0));
    let br = bicubic::upscale(&right, scale)?.map(|v| v.clamp(0.0, 1.0));
    let (l, r) = match &model {
        Some(m) => {
            let (l, r) = m.super_resolve(&left, &right)?;
            (l.map(|v| v.clamp(0.0, 1.0)), r.map(|v| v.clamp(0.0, 1.0)))
        }
        None => (bl.clone(), br.clone()),
    };
    save_image(&a.out_left, &l)?;
    save_image(&a.out_right, &r)?;
    if let Some(p) = &a.panel {
        save_image(p, &panel([&bl, &br, &l, &r]))?;
    }
    info!("wrote {} and {}", a.out_left.display(), a.out_right.display());
    Ok(())
}

/// Row-major `u32 H, u32 W, u32 W` header then `f32` values, little-endian.
fn write_mask(path: &Path, m: &DisparityMask<f32>) -> Result<()> {
    let v = m.values();
    let mut buf = Vec::with_capacity(12 + 4 * v.len());
    for &e in v.shape() {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for x in v.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

/// Argmax offsets as a grayscale image centred on mid-gray.
fn offset_image(m: &DisparityMask<f32>) -> Tensor<f32> {
    let offs = m.argmax_offset();
    let (h, w) = (m.height(), m.width());
    let span = (w.max(2) - 1) as f32;
    Tensor::from_fn([1, h, w], |i| 0.5 + offs[i / w][i % w] as f32 / (2.0 * span))
}

fn dump_masks(a: DumpMasksArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let left = load_image(&a.left)?;
    let right = load_image(&a.right)?;
    let (lr, rl) = model.lr_masks(&left, &right)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_mask(&a.out.join("mask_left_to_right.bin"), &lr)?;
    write_mask(&a.out.join("mask_right_to_left.bin"), &rl)?;
    save_image(a.out.join("offset_right_to_left.pgm"), &offset_image(&rl))?;
    save_image(a.out.join("offset_left_to_right.pgm"), &offset_image(&lr))?;
    let offs: Vec<isize> = rl.argmax_offset().into_iter().flatten().collect();
    let mean = offs.iter().sum::<isize>() as f64 / offs.len() as f64;
    println!(
        "masks {}x{}x{}; max row-sum error {:.2e}; mean right-to-left offset {:.3} px",
        rl.height(),
        rl.width(),
        rl.width(),
        rl.max_row_error().max(lr.max_row_error()),
        mean
    );
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs, exec: Execution) -> Result<bool> {
    let cfg = GradcheckConfig {
        channels: a.channels,
        scale: a.scale,
        patch: a.patch,
        alpha: a.alpha,
        eps: a.eps,
        seed: a.seed,
        ..GradcheckConfig::default()
    };
    let r = gradcheck(&cfg, exec)?;
    println!("checked {} parameters, loss {:.6}", r.checked, r.loss);
    let show = |label: &str, w: &Worst| {
        println!(
            "{label}: max relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e}, step {:.0e})",
            w.rel_error, w.param, w.index, w.analytic, w.numeric, w.eps
        )
    };
    show("kink-free at full step", &r.smooth);
    if r.refined_count > 0 {
        println!("{} scalars straddled a kink at full step", r.refined_count);
        show("kink-straddling, smaller step", &r.refined);
    }
    if r.unresolved > 0 {
        println!("{} scalars found no kink-free step", r.unresolved);
    }
    println!("max relative error {:.3e}", r.max_rel_error());
    Ok(r.passes(a.tolerance))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a, exec).map(|_| true),
        Command::Train(a) => train(a, exec).map(|_| true),
        Command::Eval(a) => eval(a, exec).map(|_| true),
        Command::Sr(a) => sr(a).map(|_| true),
        Command::DumpMasks(a) => dump_masks(a).map(|_| true),
        Command::Gradcheck(a) => run_gradcheck(a, exec),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
