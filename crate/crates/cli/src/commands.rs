use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use cycnn::conv::{ConvAlgorithm, PadMode};
use cycnn::dataset::{rotated_test_set, AugmentMode};
use cycnn::network::{
    convert_to_cycnn, evaluate, load_checkpoint, metrics_csv, mini_vgg, save_checkpoint,
    train_with_progress, Checkpoint, MiniVggConfig, Model, TrainConfig,
};
use cycnn::pnm::{read_pnm, write_pnm};
use cycnn::polar::{to_polar, PolarConfig, PolarMode};
use cycnn::receptive::{boundary_coverage, format_rf_csv, format_rf_table, RfLayerSpec};
use cycnn_bench::{bench_conv, BenchAlgorithm, Geometry};

use crate::config::ConfigFile;
use crate::data::{self, DataRequest, Split};
use crate::{BenchArgs, EvalArgs, PolarArgs, RfArgs, TrainArgs};

fn parse_polar_mode(s: &str) -> Result<PolarMode> {
    match s {
        "polar" => Ok(PolarMode::Polar),
        "logpolar" | "log-polar" => Ok(PolarMode::LogPolar),
        other => bail!("unknown polar mode '{other}' (polar|logpolar)"),
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once('x')
        .ok_or_else(|| anyhow!("size '{s}' is not of the form HxW"))?;
    Ok((h.trim().parse()?, w.trim().parse()?))
}

pub fn polar(a: PolarArgs) -> Result<()> {
    let img = read_pnm(&a.input)?;
    let mode = parse_polar_mode(&a.mode)?;
    let mut cfg = PolarConfig::for_image(mode, img.height(), img.width());
    if let Some(size) = &a.size {
        (cfg.out_height, cfg.out_width) = parse_size(size)?;
    }
    if let Some(r) = a.rho_max {
        cfg.rho_max = r;
    }
    let out = to_polar(&img, &cfg)?;
    write_pnm(&a.out, &out)?;
    Ok(())
}

/// How a variant name maps onto preprocessing and padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub polar: Option<PolarMode>,
    pub cylindrical: bool,
}

pub fn parse_variant(s: &str) -> Result<Variant> {
    let (cylindrical, rest) = match s.strip_prefix("cy") {
        Some(rest) => (true, rest.trim_start_matches('-')),
        None => (false, s),
    };
    let polar = match rest {
        "base" | "" => None,
        "p" => Some(PolarMode::Polar),
        "lp" => Some(PolarMode::LogPolar),
        _ => bail!("unknown variant '{s}' (base|p|lp|cy-p|cy-lp)"),
    };
    if cylindrical && polar.is_none() {
        bail!("variant '{s}': cylindrical convolution needs polar input, use cy-p or cy-lp");
    }
    Ok(Variant { polar, cylindrical })
}

fn parse_algorithm(s: &str) -> Result<ConvAlgorithm> {
    match s {
        "direct" => Ok(ConvAlgorithm::Direct),
        "winograd" => Ok(ConvAlgorithm::Winograd),
        other => bail!("unknown algorithm '{other}' (direct|winograd)"),
    }
}

const TRAIN_KEYS: &[&str] = &[
    "dataset",
    "data-dir",
    "arch",
    "variant",
    "augment",
    "seed",
    "out",
    "metrics",
    "epochs",
    "batch-size",
    "lr0",
    "width",
    "hidden",
    "algorithm",
    "train-limit",
    "synth-count",
    "synth-classes",
];

pub fn train(a: TrainArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    file.check_keys(TRAIN_KEYS)?;
    let dataset: String = file.resolve("dataset", a.dataset, "synth".into())?;
    let data_dir: Option<PathBuf> = file.resolve_opt("data-dir", a.data_dir)?;
    let arch: String = file.resolve("arch", a.arch, "minivgg".into())?;
    let variant = parse_variant(&file.resolve("variant", a.variant, "base".to_string())?)?;
    let augment: AugmentMode = file
        .resolve("augment", a.augment, "none".to_string())?
        .parse()
        .map_err(|e: String| anyhow!(e))?;
    let seed: u64 = file.resolve("seed", a.seed, 0)?;
    let out: PathBuf = file
        .resolve_opt("out", a.out)?
        .ok_or_else(|| anyhow!("--out is required (flag or config key)"))?;
    let metrics: Option<PathBuf> = file.resolve_opt("metrics", a.metrics)?;
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        max_epochs: file.resolve("epochs", a.epochs, defaults.max_epochs)?,
        batch_size: file.resolve("batch-size", a.batch_size, defaults.batch_size)?,
        lr0: file.resolve("lr0", a.lr0, defaults.lr0)?,
        seed,
        augment,
        ..defaults
    };
    let algorithm =
        parse_algorithm(&file.resolve("algorithm", a.algorithm, "direct".to_string())?)?;
    let width: usize = file.resolve("width", a.width, 32)?;
    let hidden: usize = file.resolve("hidden", a.hidden, 256)?;
    let train_limit: Option<usize> = file.resolve_opt("train-limit", a.train_limit)?;
    let synth_count: Option<usize> = file.resolve_opt("synth-count", a.synth_count)?;
    let synth_classes: Option<usize> = file.resolve_opt("synth-classes", a.synth_classes)?;
    if arch != "minivgg" {
        bail!("unknown arch '{arch}' (minivgg)");
    }

    let mut ds = data::load(&DataRequest {
        dataset: &dataset,
        data_dir: data_dir.as_deref(),
        split: Split::Train,
        synth_count,
        synth_classes,
    })?;
    if let Some(n) = train_limit {
        ds = ds.take(n);
    }
    let (c, h, w) = ds.dims().ok_or_else(|| anyhow!("training set is empty"))?;
    let mut mc = MiniVggConfig::new(c, h, w, ds.class_count);
    mc.base_width = width;
    mc.hidden = hidden;
    let mut model: Model<f32> = mini_vgg(&mc, seed)?;
    if variant.cylindrical {
        model = convert_to_cycnn(&model)?;
    }
    model = model.with_conv_algorithm(algorithm)?;
    let polar = variant.polar.map(|m| PolarConfig::for_image(m, h, w));

    let quiet = a.quiet;
    let outcome = train_with_progress(model, &ds, polar, &tc, |m| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}  lr {}",
                m.epoch, m.train_loss, m.val_loss, m.val_acc, m.lr
            );
        }
    })?;
    save_checkpoint(
        &Checkpoint {
            model: outcome.model,
            preprocess: outcome.preprocess,
        },
        &out,
    )?;
    let metrics = metrics.unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".csv");
        PathBuf::from(p)
    });
    fs::write(&metrics, metrics_csv(&outcome.log))
        .with_context(|| format!("writing {}", metrics.display()))?;
    println!(
        "best epoch {} of {}; checkpoint {}; metrics {}",
        outcome.best_epoch,
        outcome.log.len(),
        out.display(),
        metrics.display()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ckpt: Checkpoint<f32> = load_checkpoint(&a.ckpt)?;
    let split: Split = a.split.parse().map_err(|e: String| anyhow!(e))?;
    let mut ds = data::load(&DataRequest {
        dataset: &a.dataset,
        data_dir: a.data_dir.as_deref(),
        split,
        synth_count: a.synth_count,
        synth_classes: a.synth_classes,
    })?;
    if let Some(n) = a.limit {
        ds = ds.take(n);
    }
    let dims = ds
        .dims()
        .ok_or_else(|| anyhow!("evaluation set is empty"))?;
    if dims != ckpt.model.input {
        bail!(
            "checkpoint expects {:?} inputs but the dataset has {:?}",
            ckpt.model.input,
            dims
        );
    }
    if ds.class_count > ckpt.model.classes() {
        bail!(
            "checkpoint has {} outputs but the dataset has {} classes",
            ckpt.model.classes(),
            ds.class_count
        );
    }
    if a.rotate_test {
        ds = rotated_test_set(&ds, a.seed);
    }
    let report = evaluate(&ckpt.model, &ckpt.preprocess, &ds, 100)?;
    println!(
        "accuracy {:.4} ({}/{})",
        report.accuracy(),
        report.correct,
        report.total
    );
    let mut csv = String::from("class,correct,total,accuracy\n");
    for (class, (correct, total)) in report.per_class.iter().enumerate() {
        let acc = if *total == 0 {
            0.0
        } else {
            *correct as f64 / *total as f64
        };
        writeln!(csv, "{class},{correct},{total},{acc:.4}").unwrap();
    }
    match &a.per_class {
        Some(p) => fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn parse_rf_layers(s: &str) -> Result<Vec<RfLayerSpec>> {
    s.split(',')
        .map(|entry| {
            let entry = entry.trim();
            let (k, st) = entry.split_once('/').unwrap_or((entry, "1x1"));
            let (kw, kh) = parse_size(k).with_context(|| format!("layer '{entry}'"))?;
            let (sw, sh) = parse_size(st).with_context(|| format!("layer '{entry}'"))?;
            Ok(RfLayerSpec::new(kw, kh, sw, sh)?)
        })
        .collect()
}

pub fn rf(a: RfArgs) -> Result<()> {
    let stack = match (&a.layers, a.arch.as_deref()) {
        (Some(layers), _) => parse_rf_layers(layers)?,
        (None, Some("minivgg")) => {
            mini_vgg::<f32>(&MiniVggConfig::new(1, 32, 32, 10), 0)?.rf_stack()
        }
        (None, Some(other)) => bail!("unknown arch '{other}' (minivgg)"),
        (None, None) => bail!("pass --layers or --arch"),
    };
    if stack.is_empty() {
        bail!("empty layer stack");
    }
    let region = parse_size(&a.region)?;
    if region.0 == 0 || region.1 == 0 {
        bail!("region must be at least 1x1");
    }
    if a.csv {
        print!("{}", format_rf_csv(&stack, region));
    } else {
        print!("{}", format_rf_table(&stack, region));
    }
    if let Some(h) = a.coverage_height {
        for mode in [PadMode::Zero, PadMode::Cylindrical] {
            let report = boundary_coverage(&stack, h, mode)?;
            let name = match mode {
                PadMode::Zero => "zero",
                PadMode::Cylindrical => "cylindrical",
            };
            let rows: Vec<String> = report.rows.iter().map(|r| r.to_string()).collect();
            println!("coverage {name}: {}", rows.join(" "));
        }
    }
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let geometries: Vec<Geometry> = if a.geometries.is_empty() {
        vec![
            Geometry::new(1, 64, 32, 32, 64),
            Geometry::new(8, 64, 32, 32, 64),
        ]
    } else {
        a.geometries
            .iter()
            .map(|g| g.parse().map_err(|e: String| anyhow!(e)))
            .collect::<Result<_>>()?
    };
    let algorithms: Vec<BenchAlgorithm> = if a.algorithms.is_empty() {
        BenchAlgorithm::ALL.to_vec()
    } else {
        a.algorithms
            .iter()
            .map(|s| s.parse().map_err(|e: String| anyhow!(e)))
            .collect::<Result<_>>()?
    };
    let report =
        bench_conv(&geometries, &algorithms, a.repeats, a.warmup).map_err(|e| match e {
            e @ cycnn_bench::BenchError::Mismatch { .. } => {
                anyhow::Error::new(crate::CheckFailed(e.to_string()))
            }
            e => anyhow::Error::new(e),
        })?;
    let csv = report.to_csv();
    match &a.out {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    eprintln!(
        "analytic multiply reduction per 2x2 tile: {}/{} = {:.2}x",
        cycnn::winograd::DIRECT_MULS_PER_TILE,
        cycnn::winograd::WINOGRAD_MULS_PER_TILE,
        cycnn_bench::multiply_reduction()
    );
    for g in &geometries {
        for (slow, fast) in [
            (BenchAlgorithm::DirectZero, BenchAlgorithm::WinogradZero),
            (
                BenchAlgorithm::DirectCylindrical,
                BenchAlgorithm::WinogradCylindrical,
            ),
            (
                BenchAlgorithm::DirectCylindrical,
                BenchAlgorithm::DirectZero,
            ),
        ] {
            if let Some(r) = report.time_ratio(g, slow, fast) {
                eprintln!("{g}: {slow} / {fast} time ratio {r:.2}");
            }
        }
    }
    Ok(())
}
