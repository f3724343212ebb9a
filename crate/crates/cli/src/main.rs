//! `bsnet`: prepare datasets, train, evaluate, infer, benchmark and run
//! ablation grids. Every command writes its resolved configuration to the
//! output directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bsnet::ablation::{self, GRIDS};
use bsnet::config::RunConfig;
use bsnet::data::{self, synthetic, DatasetManifest, SampleRecord, SourceDir, Split};
use bsnet::grid::BinaryMask;
use bsnet::imageio;
use bsnet::metrics::{evaluate_dataset, MetricReport};
use bsnet::render;
use bsnet::train::{self, bench_fps, validate, ModelSegmenter, Segmenter, TrainOptions};
use bsnet::BsNet;
use candle_core::DType;
use clap::{Args, Parser, Subcommand};

/// Environment variable that overrides `train.device`.
const DEVICE_ENV: &str = "BSNET_DEVICE";

#[derive(Parser, Debug)]
#[command(name = "bsnet", version, about = "Boundary-guided lung infection segmentation")]
#[command(after_help = "Environment:\n  BSNET_DEVICE   compute device (overrides train.device; `cpu`)\n  RUST_LOG       log level (info by default)")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file (dotted keys or tables).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, `key=value`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Shorthand for `--set train.seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shorthand for `--set train.deterministic=true`; run logs omit
    /// wall-clock times so artifacts are reproducible bit for bit.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest raw image/mask directories into the split layout.
    Prepare {
        /// Raw source, `id=path` or `path`, containing images/ and masks/.
        /// Adds to `data.sources`.
        #[arg(long = "source")]
        sources: Vec<String>,
        /// Generate N synthetic slices as the only source instead.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Side of synthetic slices.
        #[arg(long, default_value_t = 128)]
        synthetic_size: usize,
    },
    /// Train on the train split of `data.root`.
    Train {
        /// Continue from the newest epoch checkpoint in the output dir.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on a split, or a prediction directory against a
    /// mask directory.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Evaluate existing prediction maps instead of running a model.
        #[arg(long, requires = "gt_dir")]
        pred_dir: Option<PathBuf>,
        #[arg(long, requires = "pred_dir")]
        gt_dir: Option<PathBuf>,
    },
    /// Write binary masks (and probability maps) for images.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image file or directory of images.
        #[arg(long)]
        input: PathBuf,
    },
    /// Measure single-image throughput.
    BenchFps {
        /// Checkpoint to time; without one, a freshly initialized model of
        /// the configured architecture is used.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every cell of an ablation grid.
    Ablate {
        /// modules, branches, guidance, stages, or all.
        #[arg(long, default_value = "modules")]
        grid: String,
    },
}

/// The `--set` list preceded by the shorthand flags and the device
/// variable, so explicit `--set` values win.
fn all_overrides(common: &Common) -> Vec<String> {
    let mut v = Vec::new();
    if let Some(seed) = common.seed {
        v.push(format!("train.seed={seed}"));
    }
    if common.deterministic {
        v.push("train.deterministic=true".into());
    }
    if let Ok(dev) = std::env::var(DEVICE_ENV) {
        v.push(format!("train.device=\"{dev}\""));
    }
    v.extend(common.overrides.iter().cloned());
    v
}

fn resolve(common: &Common) -> Result<RunConfig> {
    Ok(RunConfig::resolve(common.config.as_deref(), &all_overrides(common))?)
}

fn load_dataset(cfg: &RunConfig) -> Result<(PathBuf, DatasetManifest)> {
    let root = PathBuf::from(&cfg.data.root);
    let manifest = DatasetManifest::load(&root)
        .with_context(|| format!("loading dataset at `{}` (run `bsnet prepare` first)", root.display()))?;
    Ok((root, manifest))
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<BsNet> {
    let device = train::parse_device(&cfg.train.device)?;
    let (model, _) = BsNet::load(checkpoint, DType::F32, &device)?;
    Ok(model)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn prepare(cfg: &RunConfig, common: &Common, sources: &[String], synth: Option<usize>, size: usize) -> Result<()> {
    let out = &common.out;
    let mut srcs: Vec<SourceDir> = cfg.data.sources.iter().chain(sources).map(|s| SourceDir::parse(s)).collect();
    if let Some(n) = synth {
        let raw = out.join("raw_synthetic");
        synthetic::write_raw_dir(&raw, n, size, cfg.data.split_seed)?;
        srcs = vec![SourceDir {
            id: "synthetic".into(),
            path: raw,
        }];
    }
    if srcs.is_empty() {
        bail!("no sources: pass --source, --synthetic, or set data.sources");
    }
    let manifest = data::ingest(&srcs, out, &cfg.data.split_spec())?;
    println!(
        "prepared {} train / {} test samples ({} excluded) in {}",
        manifest.count(Split::Train),
        manifest.count(Split::Test),
        manifest.excluded.len(),
        out.display()
    );
    println!("manifest hash {}", manifest.content_hash);
    Ok(())
}

fn run_train(cfg: &RunConfig, common: &Common, resume: bool) -> Result<()> {
    let (root, manifest) = load_dataset(cfg)?;
    let train_set = data::load_split(&root, &manifest, Split::Train)?;
    let val_set = data::load_split(&root, &manifest, Split::Test)?;
    let outcome = train::train(
        cfg,
        &train_set,
        &val_set,
        &common.out,
        &TrainOptions {
            resume,
            skip_epoch_checkpoints: false,
        },
    )?;
    let curve = render::loss_curve(&outcome.log.losses(), 800, 400, 20);
    render::save_rgb(&curve, &common.out.join("loss_curve.png"))?;
    println!("final checkpoint {}", outcome.final_checkpoint.display());
    if let Some(best) = &outcome.best_checkpoint {
        println!("best-validation checkpoint (not the reported model) {}", best.display());
    }
    if let Some(report) = &outcome.last_validation {
        print_means(report);
    }
    Ok(())
}

fn print_means(report: &MetricReport) {
    let m = &report.means;
    println!(
        "n={} dsc={:.4} sen={:.4} prec={:.4} s_alpha={:.4} e_phi={:.4} mae={:.4} hd={:.3}",
        report.count, m.dsc, m.sen, m.prec, m.s_alpha, m.e_phi, m.mae, m.hd
    );
}

fn write_report(report: &MetricReport, out: &Path) -> Result<()> {
    report.write_csv(&out.join("metrics.csv"))?;
    report.write_json(&out.join("metrics.json"))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print_means(report);
    Ok(())
}

fn run_eval(
    cfg: &RunConfig,
    common: &Common,
    checkpoint: Option<&Path>,
    split: &str,
    dirs: Option<(&Path, &Path)>,
) -> Result<()> {
    let protocol = cfg.eval.protocol()?;
    if let Some((pred_dir, gt_dir)) = dirs {
        let report = evaluate_dataset(pred_dir, gt_dir, &protocol)?;
        return write_report(&report, &common.out);
    }
    let Some(checkpoint) = checkpoint else {
        bail!("eval needs --checkpoint, or --pred-dir with --gt-dir");
    };
    let split: Split = split.parse().map_err(anyhow::Error::msg)?;
    let (root, manifest) = load_dataset(cfg)?;
    let samples: Vec<SampleRecord> = data::load_split(&root, &manifest, split)?;
    let model = load_model(cfg, checkpoint)?;
    let seg = ModelSegmenter {
        model: &model,
        image_size: cfg.train.image_size,
        norm: cfg.norm,
    };
    let report = validate(&seg, &samples, &protocol)?;
    write_report(&report, &common.out)?;
    if cfg.eval.overlays {
        for s in &samples {
            let prob = seg.predict(&s.image)?;
            let pred = BinaryMask::binarize(&prob, protocol.threshold);
            imageio::write_mask(&pred, &common.out.join("predictions").join(format!("{}.png", s.name)))?;
            let img = render::overlay(&s.image, &pred, &s.mask)?;
            render::save_rgb(&img, &common.out.join("overlays").join(format!("{}.png", s.name)))?;
        }
    }
    Ok(())
}

fn run_infer(cfg: &RunConfig, common: &Common, checkpoint: &Path, input: &Path) -> Result<()> {
    let model = load_model(cfg, checkpoint)?;
    let seg = ModelSegmenter {
        model: &model,
        image_size: cfg.train.image_size,
        norm: cfg.norm,
    };
    let mut files = Vec::new();
    if input.is_dir() {
        for e in std::fs::read_dir(input).with_context(|| format!("reading {}", input.display()))? {
            let p = e?.path();
            let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg" | "tif" | "tiff" | "bmp")) {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(input.to_path_buf());
    }
    if files.is_empty() {
        bail!("no images found at {}", input.display());
    }
    for f in &files {
        let image = imageio::read_gray(f)?;
        let prob = seg.predict(&image)?;
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        imageio::write_mask(
            &BinaryMask::binarize(&prob, cfg.eval.threshold),
            &common.out.join("masks").join(format!("{stem}.png")),
        )?;
        imageio::write_gray(&prob, &common.out.join("probabilities").join(format!("{stem}.png")))?;
    }
    println!("wrote {} masks to {}", files.len(), common.out.join("masks").display());
    Ok(())
}

fn run_bench(cfg: &RunConfig, common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let model = match checkpoint {
        Some(c) => load_model(cfg, c)?,
        None => train::build_model(cfg, &train::parse_device(&cfg.train.device)?)?,
    };
    let report = bench_fps(&model, cfg.train.image_size, cfg.bench.images, cfg.bench.warmup)?;
    write_json(&common.out.join("fps.json"), &report)?;
    println!(
        "{:.2} images/s ({:.2} ms/image, {}, {}x{}) on {}",
        report.fps, report.mean_latency_ms, report.backbone, report.image_size, report.image_size, report.device
    );
    Ok(())
}

fn run_ablate(cfg: &RunConfig, common: &Common, grid: &str) -> Result<()> {
    let (root, manifest) = load_dataset(cfg)?;
    let train_set = data::load_split(&root, &manifest, Split::Train)?;
    let test_set = data::load_split(&root, &manifest, Split::Test)?;
    let names: Vec<&str> = if grid == "all" { GRIDS.to_vec() } else { vec![grid] };
    let overrides = all_overrides(common);
    for name in names {
        let cells = ablation::grid(name)?;
        let table = ablation::run_grid(
            name,
            &cells,
            common.config.as_deref(),
            &overrides,
            &train_set,
            &test_set,
            &common.out.join(name),
        )?;
        println!("{name}:\n{}", table.to_markdown());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.common)?;
    let common = &cli.common;
    std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    cfg.write_resolved(&common.out)?;
    match &cli.command {
        Command::Prepare {
            sources,
            synthetic,
            synthetic_size,
        } => prepare(&cfg, common, sources, *synthetic, *synthetic_size),
        Command::Train { resume } => run_train(&cfg, common, *resume),
        Command::Eval {
            checkpoint,
            split,
            pred_dir,
            gt_dir,
        } => run_eval(
            &cfg,
            common,
            checkpoint.as_deref(),
            split,
            pred_dir.as_deref().zip(gt_dir.as_deref()),
        ),
        Command::Infer { checkpoint, input } => run_infer(&cfg, common, checkpoint, input),
        Command::BenchFps { checkpoint } => run_bench(&cfg, common, checkpoint.as_deref()),
        Command::Ablate { grid } => run_ablate(&cfg, common, grid),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
