use std::fs;
use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chladni_core::audio::{render_tone, write_wav, ToneSpec};
use chladni_core::model::{
    benchmark_latency, evaluate, load_checkpoint, run_ablation, save_checkpoint, train_split, validation_split,
    Checkpoint, Model, ModelConfig, Samples, TrainConfig, Variant,
};
use chladni_core::physics::{NodalSettings, PlateSpec};
use chladni_core::service::{full_link_latency, serve, ServiceConfig, ServiceError};
use chladni_core::synth::{build_dataset, render_mode, DatasetConfig, DatasetManifest, SandImage, Split};
use chladni_core::{map_mode_to_frequency, ModeRegistry};
use serde_json::json;

use crate::config::{overlay, FileConfig};
use crate::{Cli, Command, SplitArg, Usage};

const DATASET_CONFIG_FILE: &str = "dataset_config.json";
const HISTORY_FILE: &str = "history.json";

/// Reference single-image latency of the full-size model on a laptop CPU.
const REFERENCE_INFERENCE_MS: f64 = 7.03;

struct Invocation {
    seed: Option<u64>,
    file: FileConfig,
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Invocation { seed: cli.seed, file: FileConfig::load(cli.config.as_deref())? };
    match cli.command {
        Command::GenDataset { out, modes, base_per_mode, augment_factor, image_size, split_ratio } => {
            let mut config = overlay(DatasetConfig::new(100, 3, 224, 0.8, 0), ctx.file.dataset.as_ref(), "dataset")?;
            if let Some(seed) = ctx.seed {
                config.seed = seed;
            }
            config.base_per_mode = base_per_mode.unwrap_or(config.base_per_mode);
            config.augment_factor = augment_factor.unwrap_or(config.augment_factor);
            config.image_size = image_size.unwrap_or(config.image_size);
            config.split_ratio = split_ratio.unwrap_or(config.split_ratio);
            config.validate().map_err(|e| Usage(e.to_string()))?;
            gen_dataset(&registry(modes.as_deref())?, &config, &out)
        }
        Command::Train { dataset, variant, image_size, out, modes } => {
            let registry = registry(modes.as_deref())?;
            let mc = model_config(&ctx, variant.into(), image_size, &dataset, &registry)?;
            let tc = train_config(&ctx)?;
            train(&dataset, &mc, &tc, &out)
        }
        Command::Eval { ckpt, dataset, split } => {
            let ckpt = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let samples = load_split(&dataset, split, ckpt.model.config())?;
            let report = evaluate(&ckpt.model, &samples)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Ablate { dataset, image_size, out, modes } => {
            let registry = registry(modes.as_deref())?;
            let mc = model_config(&ctx, Variant::Cbam5, image_size, &dataset, &registry)?;
            let tc = train_config(&ctx)?;
            ablate(&dataset, &mc, &tc, out.as_deref())
        }
        Command::Serve { ckpt, listen_port, reply_port, bridge_port, bind, modes } => {
            let mut config = overlay(ServiceConfig::default(), ctx.file.service.as_ref(), "service")?;
            config.listen_port = listen_port.unwrap_or(config.listen_port);
            config.reply_port = reply_port.unwrap_or(config.reply_port);
            config.bridge_port = bridge_port.unwrap_or(config.bridge_port);
            config.bind_addr = bind.unwrap_or(config.bind_addr);
            config.validate().map_err(|e| Usage(e.to_string()))?;
            let registry = registry(modes.as_deref())?;
            let ckpt = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let handle = serve(&config, ckpt.model, registry).map_err(|e| match e {
                ServiceError::Config(m) => anyhow::Error::new(Usage(m)),
                other => other.into(),
            })?;
            println!(
                "{}",
                json!({"listening": handle.udp_addr().to_string(), "bridge": handle.bridge_addr().to_string(), "reply_port": config.reply_port})
            );
            handle.wait();
            Ok(())
        }
        Command::BenchLink { frames, ckpt, image_size, timeout_ms } => {
            if frames == 0 {
                bail!(Usage("--frames must be at least 1".into()));
            }
            bench_link(&ctx, frames, ckpt.as_deref(), image_size, Duration::from_millis(timeout_ms))
        }
        Command::BenchInfer { ckpt, runs } => {
            if runs == 0 {
                bail!(Usage("--runs must be at least 1".into()));
            }
            let ckpt = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let stats = benchmark_latency(&ckpt.model, runs, ctx.seed.unwrap_or(0))?;
            let out = json!({
                "runs": stats.runs,
                "image_size": ckpt.model.config().image_size,
                "variant": ckpt.model.config().variant,
                "mean_ms": stats.mean_ms,
                "p99_ms": stats.p99_ms,
                "max_ms": stats.max_ms,
                "reference_mean_ms": REFERENCE_INFERENCE_MS,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        Command::Sonify { image, ckpt, out, duration, amplitude, modes } => {
            sonify(&image, &ckpt, &out, duration, amplitude, &registry(modes.as_deref())?)
        }
    }
}

fn registry(path: Option<&Path>) -> Result<ModeRegistry> {
    match path {
        None => Ok(ModeRegistry::shipped()),
        Some(p) => ModeRegistry::load(p, &PlateSpec::default()).with_context(|| format!("loading modes from {}", p.display())),
    }
}

fn dataset_image_size(dir: &Path) -> Option<usize> {
    let text = fs::read_to_string(dir.join(DATASET_CONFIG_FILE)).ok()?;
    DatasetConfig::from_json(&text).ok().map(|c| c.image_size)
}

fn model_config(
    ctx: &Invocation,
    variant: Variant,
    image_size: Option<usize>,
    dataset: &Path,
    registry: &ModeRegistry,
) -> Result<ModelConfig> {
    let mut mc = overlay(ModelConfig::default(), ctx.file.model.as_ref(), "model")?;
    mc.variant = variant;
    mc.num_classes = registry.len();
    if let Some(size) = image_size.or_else(|| dataset_image_size(dataset)) {
        mc.image_size = size;
    }
    mc.validate().map_err(|e| Usage(e.to_string()))?;
    Ok(mc)
}

fn train_config(ctx: &Invocation) -> Result<TrainConfig> {
    let mut tc = overlay(TrainConfig::default(), ctx.file.train.as_ref(), "train")?;
    if let Some(seed) = ctx.seed {
        tc.seed = seed;
    }
    tc.validate().map_err(|e| Usage(e.to_string()))?;
    Ok(tc)
}

fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(DatasetManifest::FILE_NAME);
    DatasetManifest::load(&path).with_context(|| format!("reading dataset manifest {}", path.display()))
}

fn load_split(dir: &Path, split: Split, mc: &ModelConfig) -> Result<Samples> {
    let manifest = load_manifest(dir)?;
    let samples = Samples::from_manifest(dir, &manifest, split, mc.image_size, mc.num_classes)?;
    if samples.is_empty() {
        bail!("{} has no {} images", dir.display(), split.dir_name());
    }
    Ok(samples)
}

fn gen_dataset(registry: &ModeRegistry, config: &DatasetConfig, out: &Path) -> Result<()> {
    let manifest = build_dataset(registry, config, out)?;
    let counts = manifest.per_class_counts();
    println!("{:>4} {:>3} {:>3} {:>6} {:>6}", "mode", "n", "m", "train", "test");
    for e in registry.entries() {
        let (train, test) = counts.get(&e.mode_id).copied().unwrap_or((0, 0));
        println!("{:>4} {:>3} {:>3} {:>6} {:>6}", e.mode_id, e.order.n(), e.order.m(), train, test);
    }
    println!(
        "{} images ({} train, {} test) in {}",
        manifest.entries.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Test),
        out.display()
    );
    Ok(())
}

fn print_epoch(label: &str, r: &chladni_core::model::EpochRecord) {
    eprintln!(
        "{label}epoch {:>2}: train loss {:.4}, val loss {:.4}, val accuracy {:.4}",
        r.epoch, r.train_loss, r.val_loss, r.val_accuracy
    );
}

fn write_history(dir: &Path, ckpt: &Checkpoint) -> Result<PathBuf> {
    let path = dir.join(HISTORY_FILE);
    let body = json!({"best_epoch": ckpt.best_epoch, "epochs": ckpt.history});
    fs::write(&path, serde_json::to_string_pretty(&body)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn train(dataset: &Path, mc: &ModelConfig, tc: &TrainConfig, out: &Path) -> Result<()> {
    let samples = load_split(dataset, Split::Train, mc)?;
    let (fit, val) = validation_split(&samples, tc);
    let ckpt = train_split(&fit, &val, mc, tc, |r| print_epoch("", r))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_checkpoint(&ckpt, out).with_context(|| format!("writing {}", out.display()))?;
    let history = write_history(out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new(".")), &ckpt)?;
    let last = ckpt.history.last().expect("at least one epoch");
    let best = &ckpt.history[ckpt.best_epoch];
    let summary = json!({
        "checkpoint": out.display().to_string(),
        "history": history.display().to_string(),
        "variant": mc.variant,
        "parameters": mc.parameter_count(),
        "epochs_run": ckpt.history.len(),
        "best_epoch": ckpt.best_epoch,
        "best_val_accuracy": best.val_accuracy,
        "final_val_accuracy": last.val_accuracy,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn ablate(dataset: &Path, mc: &ModelConfig, tc: &TrainConfig, out: Option<&Path>) -> Result<()> {
    let samples = load_split(dataset, Split::Train, mc)?;
    let test = load_split(dataset, Split::Test, mc)?;
    let (fit, val) = validation_split(&samples, tc);
    let order = [Variant::Basic, Variant::Cbam7, Variant::Cbam5];
    let rows = run_ablation(&fit, &val, &test, mc, tc, &order, |v, r| print_epoch(&format!("[{v}] "), r))?;

    let describe = |v: Variant| match v {
        Variant::Basic => "Basic CNN (no CBAM)",
        Variant::Cbam7 => "CNN + CBAM, 7x7 spatial kernel",
        Variant::Cbam5 => "CNN + CBAM, 5x5 spatial kernel",
    };
    println!(
        "{:<4} {:<32} {:>10} {:>12} {:>9} {:>36}",
        "No.", "Model configuration", "Parameters", "Accuracy(%)", "Macro F1", "Single image inference latency (ms)"
    );
    for (i, row) in rows.iter().enumerate() {
        println!(
            "{:<4} {:<32} {:>10} {:>12.2} {:>9.4} {:>36.2}",
            i + 1,
            describe(row.variant),
            row.parameters,
            row.report.top1_accuracy * 100.0,
            row.report.macro_f1,
            row.report.mean_latency_ms
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for row in &rows {
            let path = dir.join(format!("{}.ckpt", row.variant));
            save_checkpoint(&row.checkpoint, &path).with_context(|| format!("writing {}", path.display()))?;
        }
        let path = dir.join("ablation.json");
        fs::write(&path, serde_json::to_string_pretty(&rows)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn bench_link(ctx: &Invocation, frames: usize, ckpt: Option<&Path>, image_size: usize, timeout: Duration) -> Result<()> {
    let registry = ModeRegistry::shipped();
    let seed = ctx.seed.unwrap_or(0);
    let model = match ckpt {
        Some(p) => load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?.model,
        None => Model::init(ModelConfig { num_classes: registry.len(), ..ModelConfig::desk(Variant::Cbam5) }, seed)?,
    };
    let client = UdpSocket::bind("127.0.0.1:0")?;
    let mut config = overlay(ServiceConfig::default(), ctx.file.service.as_ref(), "service")?;
    config.listen_port = 0;
    config.bridge_port = 0;
    config.reply_port = client.local_addr()?.port();
    let service = serve(&config, model, registry.clone())?;
    let settings = NodalSettings::for_plate(registry.plate());
    let images = registry
        .entries()
        .iter()
        .map(|e| render_mode(e.order, image_size, seed ^ e.mode_id as u64, &settings))
        .collect::<Result<Vec<SandImage>, _>>()?;
    let stats = full_link_latency(&client, service.udp_addr(), &images, frames, timeout)?;
    service.shutdown();
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn sonify(image: &Path, ckpt: &Path, out: &Path, duration: f64, amplitude: f64, registry: &ModeRegistry) -> Result<()> {
    let img = SandImage::load_png(image).context("reading image")?;
    let ckpt = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let prediction = ckpt.model.classify(&img)?;
    let mapping = map_mode_to_frequency(prediction.mode_id, registry)?;
    let spec = ToneSpec { amplitude, ..ToneSpec::new(mapping.frequency_hz, duration) };
    spec.validate().map_err(|e| Usage(e.to_string()))?;
    let samples = render_tone(&spec)?;
    write_wav(&samples, spec.sample_rate, out).with_context(|| format!("writing {}", out.display()))?;
    let report = json!({
        "mode_id": prediction.mode_id,
        "n": mapping.order.n(),
        "m": mapping.order.m(),
        "frequency_hz": mapping.frequency_hz,
        "confidence": prediction.confidence,
        "nodal_lines": mapping.nodal_lines,
        "wav": out.display().to_string(),
        "samples": samples.len(),
        "sample_rate": spec.sample_rate,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
