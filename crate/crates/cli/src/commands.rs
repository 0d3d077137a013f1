use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::SeedableRng;
use toml::Table;

use turboae::blocks::SimRng;
use turboae::evaluate::{monte_carlo, snr_at_target_ber, CrcConfig, IterativeCodec, StopRule};
use turboae::models::{AnyModel, Architecture, ParallelModel, SerialModel, TurboAutoencoder};
use turboae::training::{
    assemble_iterative, checkpoint_path, finetune_length, pretrain_gaussian, train_alternating, write_metrics_csv,
    Checkpoint, MetricsRow, TrainSchedule,
};

use crate::config::{apply_overrides, config_error, merge, read_table, RunConfig, RESOLVED_CONFIG};

/// Generator streams derived from the global seed.
const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const PRETRAIN_STREAM: u64 = 10;

fn rng(seed: u64, stream: u64) -> SimRng {
    let mut r = SimRng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Config file plus overrides, with model settings taken from `adopt` when given.
pub fn load_config(file: Option<&Path>, overrides: &[String], adopt: Option<&AnyModel>) -> anyhow::Result<RunConfig> {
    let mut table = match adopt {
        Some(model) => RunConfig::describing(model),
        None => Table::new(),
    };
    if let Some(path) = file {
        let mut from_file = read_table(path)?;
        if adopt.is_some() {
            for key in ["architecture", "features", "coded_features", "iterations", "weight_sharing", "binarize_symbols", "binarize_coded", "interleaver_seed", "interleaver_mode", "net"] {
                if from_file.remove(key).is_some() {
                    eprintln!("note: `{key}` comes from the checkpoint; the config value is ignored");
                }
            }
        }
        merge(&mut table, from_file);
    }
    apply_overrides(&mut table, overrides)?;
    let cfg = RunConfig::from_table(table)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn write_provenance(cfg: &RunConfig, schedule: &TrainSchedule, dir: &Path) -> anyhow::Result<()> {
    let resolved = cfg.resolved(schedule, dir)?;
    write_file(&dir.join(RESOLVED_CONFIG), resolved.to_toml()?)?;
    write_file(&dir.join("seed"), format!("{}\n", cfg.seed))
}

fn write_metrics(rows: &[MetricsRow], path: &Path) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    write_metrics_csv(rows, &mut buf)?;
    write_file(path, buf)
}

fn finish(ckpt: &Checkpoint, dir: &Path) -> anyhow::Result<()> {
    ckpt.save(checkpoint_path(dir))?;
    write_metrics(&ckpt.metrics, &dir.join("metrics.csv"))?;
    eprintln!(
        "best epoch {:?}, eval BER {:?}; outputs in {}",
        ckpt.state.best_epoch,
        ckpt.state.best_eval_ber,
        dir.display()
    );
    Ok(())
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub from_checkpoint: Option<PathBuf>,
}

/// Trains from scratch, or continues from a checkpoint; a checkpoint at another
/// block length is fine-tuned to the configured `k`.
pub fn train(args: &TrainArgs) -> anyhow::Result<()> {
    let start = match &args.from_checkpoint {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    if start.is_none() && args.config.is_none() {
        return Err(config_error("train needs --config or --from-checkpoint"));
    }
    let cfg = load_config(args.config.as_deref(), &args.overrides, start.as_ref().map(|c| &c.model))?;
    let schedule = cfg.schedule(TrainSchedule::default())?;
    let dir = cfg.output_dir(if start.is_some() { "finetune" } else { "train" });
    prepare_dir(&dir)?;
    write_provenance(&cfg, &schedule, &dir)?;
    let mut rng = rng(cfg.seed, TRAIN_STREAM);
    let ckpt = match start {
        Some(ckpt) if ckpt.model.k() != cfg.k => {
            eprintln!("fine-tuning from k = {} to k = {}", ckpt.model.k(), cfg.k);
            finetune_length(&ckpt, cfg.k, &schedule, &mut rng)?
        }
        Some(ckpt) => train_alternating(ckpt.model, &schedule, &mut rng)?,
        None => {
            let mut init = rng_for_init(cfg.seed);
            let model: AnyModel = match cfg.architecture {
                Architecture::Parallel => ParallelModel::new(cfg.parallel(), &mut init)?.into(),
                Architecture::Serial => SerialModel::new(cfg.serial(), &mut init)?.into(),
            };
            train_alternating(model, &schedule, &mut rng)?
        }
    };
    finish(&ckpt, &dir)
}

fn rng_for_init(seed: u64) -> SimRng {
    rng(seed, INIT_STREAM)
}

pub fn finetune(args: &TrainArgs) -> anyhow::Result<()> {
    if args.from_checkpoint.is_none() {
        return Err(config_error("finetune needs --from-checkpoint"));
    }
    train(args)
}

/// Gaussian pre-training of one or both components; both together are also
/// assembled into the iterative model.
pub fn pretrain(args: &TrainArgs, component: Option<usize>) -> anyhow::Result<()> {
    let cfg = load_config(args.config.as_deref(), &args.overrides, None)?;
    if cfg.architecture != Architecture::Parallel || cfg.features != 1 || !cfg.weight_sharing {
        return Err(config_error(
            "pre-training needs architecture = \"parallel\", features = 1 and weight_sharing = true",
        ));
    }
    let components = match component {
        Some(c @ (1 | 2)) => vec![c],
        Some(c) => return Err(config_error(format!("component must be 1 or 2, got {c}"))),
        None => vec![1, 2],
    };
    let schedule = cfg.schedule(TrainSchedule::pretraining())?;
    let dir = cfg.output_dir("pretrain");
    prepare_dir(&dir)?;
    write_provenance(&cfg, &schedule, &dir)?;
    let mut parts = Vec::new();
    let mut metrics = Vec::new();
    for c in components {
        let model = ParallelModel::new(cfg.parallel(), &mut rng_for_init(cfg.seed))?;
        let ckpt = pretrain_gaussian(c, model, &schedule, &mut rng(cfg.seed, PRETRAIN_STREAM + c as u64))?;
        ckpt.save(dir.join(format!("pretrain_{c}.bin")))?;
        metrics.extend(ckpt.metrics.iter().cloned());
        parts.push(ckpt);
    }
    write_metrics(&metrics, &dir.join("metrics.csv"))?;
    if let [c1, c2] = &parts[..] {
        let model = assemble_iterative(c1, c2, cfg.iterations)?;
        let mut ckpt = Checkpoint::new(model);
        ckpt.state.kind = "assembled".into();
        ckpt.metrics = metrics;
        ckpt.save(checkpoint_path(&dir))?;
    }
    eprintln!("outputs in {}", dir.display());
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub snr_db: Option<Vec<f64>>,
    pub min_block_errors: Option<u64>,
    pub max_blocks: Option<u64>,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub crc7: bool,
    pub reference: bool,
    pub output: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let cfg = load_config(args.config.as_deref(), &args.overrides, Some(&ckpt.model))?;
    let snr = args.snr_db.clone().unwrap_or_else(|| cfg.eval.snr_db.clone());
    let mut stop = cfg.eval.stop();
    stop.min_block_errors = args.min_block_errors.unwrap_or(stop.min_block_errors);
    stop.max_blocks = args.max_blocks.unwrap_or(stop.max_blocks);
    let seed = args.seed.unwrap_or(cfg.eval.seed);
    let model = &ckpt.model;
    if model.calibration().is_none() && !model.binarize_symbols() {
        bail!("checkpoint {} has no normalization statistics", args.checkpoint.display());
    }
    let crc = if args.crc7 {
        Some(CrcConfig::for_block_length(model.k()).map_err(|e| config_error(e.to_string()))?)
    } else {
        None
    };
    let codec = match args.iterations {
        Some(i) => IterativeCodec::with_iterations(model, i),
        None => IterativeCodec::new(model),
    };
    let report = monte_carlo(&codec, &snr, stop, crc.as_ref(), seed)?;
    let info_bits = crc.as_ref().map_or(model.k(), |c| c.info_len);
    let reference = args.reference.then_some((info_bits, model.n()));
    let out = args
        .output
        .clone()
        .unwrap_or_else(|| args.checkpoint.parent().unwrap_or(Path::new(".")).join("eval.csv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    write_file(&out, report.to_csv(reference)?)?;
    write_file(&out.with_extension("json"), serde_json::to_string_pretty(&report)?)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

pub struct SweepArgs {
    pub checkpoints: Vec<PathBuf>,
    pub target_ber: f64,
    pub bracket: (f64, f64),
    pub tolerance_db: f64,
    pub stop: StopRule,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

/// SNR at the target BER for every checkpoint, sorted by `k`. Failed checkpoints
/// leave an empty cell and turn the exit status into a failure.
pub fn sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let mut rows: Vec<(usize, String, Option<f64>)> = Vec::new();
    let mut failed = 0;
    for path in &args.checkpoints {
        let result = load_checkpoint(path).and_then(|ckpt| {
            let snr = snr_at_target_ber(
                &IterativeCodec::new(&ckpt.model),
                args.target_ber,
                args.bracket,
                args.tolerance_db,
                args.stop,
                args.seed,
            )
            .with_context(|| format!("{}", path.display()))?;
            Ok((ckpt.model.k(), ckpt.model.architecture().to_string(), snr))
        });
        match result {
            Ok((k, arch, snr)) => rows.push((k, arch, Some(snr))),
            Err(e) => {
                eprintln!("error: {e:#}");
                failed += 1;
                if let Ok(ckpt) = load_checkpoint(path) {
                    rows.push((ckpt.model.k(), ckpt.model.architecture().to_string(), None));
                }
            }
        }
    }
    rows.sort_by_key(|r| r.0);
    let mut csv = String::from("k,architecture,snr_at_target_db\n");
    for (k, arch, snr) in &rows {
        csv.push_str(&format!("{k},{arch},{}\n", snr.map(|s| s.to_string()).unwrap_or_default()));
    }
    match &args.output {
        Some(path) => write_file(path, csv)?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    if failed > 0 {
        bail!("{failed} of {} checkpoints failed", args.checkpoints.len());
    }
    Ok(())
}
