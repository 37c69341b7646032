//! The `colorenh` command line.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

pub use config::{DataConfig, RunConfig, OUTPUT_ROOT_ENV};

use crate::error::{Error, Result};
use crate::imaging::{load_image, save_image};
use crate::trainer::checkpoint::{Checkpoint, ModelKind};
use crate::trainer::synthetic::{generate_pairs, write_pairs, SyntheticKind};
use crate::trainer::table::{ablation_table, eval_table, format_text, write_csv};
use crate::trainer::train::{checkpoint_file_name, write_loss_log};
use crate::trainer::{
    evaluate, ingest_dataset, load_samples, run_ablation, train_cenet, train_prnet,
    DatasetManifest, Pipeline, RunOptions, Split, SplitSpec, Variant,
};
use crate::verify::{run_scope, Scope};

#[derive(Debug, Parser)]
#[command(
    name = "colorenh",
    version,
    about = "Coarse-to-fine automatic photo color enhancement"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    pub config: PathBuf,
    /// Override one config key, e.g. `--set train.batch_size=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the networks of a variant (CENet first, then PRNet).
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Overrides the config's variant.
        #[arg(long)]
        variant: Option<Variant>,
        /// Run directory whose checkpoints training continues from.
        #[arg(long, value_name = "DIR")]
        resume: Option<PathBuf>,
    },
    /// Enhance images with trained checkpoints.
    Enhance {
        #[arg(long, value_name = "DIR")]
        checkpoint_dir: PathBuf,
        #[arg(long, default_value = "CE_PRNL")]
        variant: Variant,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Score trained checkpoints on a manifest split.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "DIR")]
        checkpoint_dir: PathBuf,
        /// Overrides the config's variant.
        #[arg(long)]
        variant: Option<Variant>,
        /// Which split to score.
        #[arg(long, default_value = "val", value_parser = parse_split)]
        split: Split,
    },
    /// Train and score several variants under one seed and budget.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated variants; all five by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value = "op", value_parser = parse_scope)]
        scope: Scope,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pair raw and target directories by file stem into a manifest.
    Ingest {
        #[arg(long, value_name = "DIR")]
        raw: PathBuf,
        #[arg(long, value_name = "DIR")]
        target: PathBuf,
        /// Manifest file to write.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        longer_edge: usize,
        #[arg(long, default_value_t = 500)]
        pad_size: usize,
        /// Number of pairs drawn (seeded) for validation.
        #[arg(long, conflicts_with = "val_list")]
        val_count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// File with one validation stem per line.
        #[arg(long, value_name = "FILE")]
        val_list: Option<PathBuf>,
    },
    /// Write a seeded synthetic paired dataset as PNG files.
    Synth {
        #[arg(long, value_parser = parse_kind)]
        kind: SyntheticKind,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Receives `raw/` and `target/` subdirectories.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        _ => Err(format!("unknown split {s:?} (expected train or val)")),
    }
}

fn parse_scope(s: &str) -> std::result::Result<Scope, String> {
    s.parse()
}

fn parse_kind(s: &str) -> std::result::Result<SyntheticKind, String> {
    match s {
        "identity" => Ok(SyntheticKind::Identity),
        "affine" => Ok(SyntheticKind::Affine),
        "affine_field" => Ok(SyntheticKind::AffineField),
        _ => Err(format!(
            "unknown kind {s:?} (expected identity, affine or affine_field)"
        )),
    }
}

/// Creates `<root>/<config hash>-<unix seconds>`, adding a counter if that
/// directory already exists.
pub fn create_run_dir(config: &RunConfig) -> Result<PathBuf> {
    let root = config.output_root();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let base = format!("{}-{secs}", config.hash());
    for i in 0.. {
        let name = if i == 0 {
            base.clone()
        } else {
            format!("{base}-{i}")
        };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => {
                fs::write(dir.join("config.toml"), config.to_toml())
                    .map_err(|e| Error::io(&dir, e))?;
                return Ok(dir);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("unbounded counter")
}

/// The final checkpoint of `kind` in `dir`, or failing that the latest
/// intermediate one.
pub fn find_checkpoint(dir: &Path, kind: ModelKind) -> Result<Option<PathBuf>> {
    let final_path = dir.join(checkpoint_file_name(kind));
    if final_path.exists() {
        return Ok(Some(final_path));
    }
    let prefix = match kind {
        ModelKind::Cenet => "cenet-step",
        ModelKind::Prnet => "prnet-step",
    };
    let mut best: Option<PathBuf> = None;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if name.starts_with(prefix)
            && name.ends_with(".ckpt")
            && best.as_ref().is_none_or(|b| path > *b)
        {
            best = Some(path);
        }
    }
    Ok(best)
}

fn load_split(
    config: &RunConfig,
    split: Split,
) -> Result<(DatasetManifest, Vec<crate::trainer::Sample>)> {
    let path = config.manifest_path()?;
    if !path.exists() {
        return Err(Error::Data(format!(
            "manifest {} does not exist",
            path.display()
        )));
    }
    let manifest = DatasetManifest::load(path)?;
    if (manifest.pad_size, manifest.longer_edge)
        != (config.train.pad_size, config.train.longer_edge)
    {
        return Err(Error::Config(format!(
            "manifest {} was built with pad_size {} and longer_edge {} but the config has {} and {}",
            path.display(),
            manifest.pad_size,
            manifest.longer_edge,
            config.train.pad_size,
            config.train.longer_edge
        )));
    }
    let samples = load_samples(&manifest, split)?;
    Ok((manifest, samples))
}

fn cmd_train(config: &RunConfig, variant: Variant, resume: Option<&Path>) -> Result<PathBuf> {
    let (_, samples) = load_split(config, Split::Train)?;
    let run_dir = create_run_dir(config)?;
    let resume_ck = |kind| -> Result<Option<Checkpoint>> {
        match resume {
            Some(dir) => find_checkpoint(dir, kind)?
                .map(|p| Checkpoint::load(&p))
                .transpose(),
            None => Ok(None),
        }
    };
    let mut cenet = None;
    if variant.uses_cenet() {
        let ck = resume_ck(ModelKind::Cenet)?;
        let opts = RunOptions {
            checkpoint_dir: Some(&run_dir),
            resume: ck.as_ref(),
        };
        let trained = train_cenet(&samples, &config.train, &config.cenet, opts)?;
        write_loss_log(&run_dir.join("loss_cenet.csv"), &trained.losses)?;
        println!(
            "cenet: {} steps, final loss {}",
            trained.checkpoint.step,
            trained.losses.last().map_or(f64::NAN, |r| r.loss)
        );
        cenet = Some(trained.model);
    }
    if let Some(prnet_config) = variant.prnet_config(&config.prnet) {
        let ck = resume_ck(ModelKind::Prnet)?;
        let opts = RunOptions {
            checkpoint_dir: Some(&run_dir),
            resume: ck.as_ref(),
        };
        let trained = train_prnet(&samples, &config.train, &prnet_config, cenet.as_ref(), opts)?;
        write_loss_log(&run_dir.join("loss_prnet.csv"), &trained.losses)?;
        println!(
            "prnet: {} steps, final loss {}",
            trained.checkpoint.step,
            trained.losses.last().map_or(f64::NAN, |r| r.loss)
        );
    }
    println!("run directory: {}", run_dir.display());
    Ok(run_dir)
}

/// Output file for `input`: `<out_dir>/<stem>_enhanced.png`.
pub fn enhanced_path(out_dir: &Path, input: &Path) -> PathBuf {
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    out_dir.join(format!("{stem}_enhanced.png"))
}

fn cmd_enhance(
    checkpoint_dir: &Path,
    variant: Variant,
    out_dir: &Path,
    inputs: &[PathBuf],
) -> Result<()> {
    let pipeline = Pipeline::from_dir(checkpoint_dir, variant)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for input in inputs {
        let image = load_image(input)?;
        let out = pipeline.enhance_image(&image)?;
        let path = enhanced_path(out_dir, input);
        save_image(&out, &path)?;
        println!("{} -> {}", input.display(), path.display());
    }
    Ok(())
}

fn cmd_evaluate(
    config: &RunConfig,
    checkpoint_dir: &Path,
    variant: Variant,
    split: Split,
) -> Result<PathBuf> {
    let (_, samples) = load_split(config, split)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("the manifest has no {split:?} pairs")));
    }
    let pipeline = Pipeline::from_dir(checkpoint_dir, variant)?;
    let report = evaluate(&pipeline, &samples)?;
    let run_dir = create_run_dir(config)?;
    let rows = eval_table(&report);
    write_csv(&run_dir.join("eval.csv"), &rows)?;
    print!("{}", format_text(&rows));
    println!("run directory: {}", run_dir.display());
    Ok(run_dir)
}

fn cmd_ablate(config: &RunConfig, variants: &[Variant]) -> Result<PathBuf> {
    let variants = if variants.is_empty() {
        &Variant::ALL[..]
    } else {
        variants
    };
    let (_, train) = load_split(config, Split::Train)?;
    let (_, val) = load_split(config, Split::Val)?;
    let report = run_ablation(
        &train,
        &val,
        &config.train,
        &config.cenet,
        &config.prnet,
        variants,
    )?;
    let run_dir = create_run_dir(config)?;
    let rows = ablation_table(&report);
    write_csv(&run_dir.join("ablation.csv"), &rows)?;
    print!("{}", format_text(&rows));
    println!("run directory: {}", run_dir.display());
    Ok(run_dir)
}

fn cmd_gradcheck(scope: Scope, seed: u64) -> Result<()> {
    let outcomes = run_scope(scope, seed)?;
    let mut failed = Vec::new();
    for o in &outcomes {
        let status = if o.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<18} max_rel_error={:.3e} tolerance={:.0e} samples={}",
            o.name,
            o.max_rel_error(),
            o.tolerance,
            o.report.entries.len()
        );
        for (name, err) in o.report.per_parameter() {
            println!("    {name:<48} {err:.3e}");
        }
        if !o.passed() {
            failed.push(o.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheck(failed.join(", ")))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_ingest(
    raw: &Path,
    target: &Path,
    out: &Path,
    longer_edge: usize,
    pad_size: usize,
    val_count: Option<usize>,
    split_seed: u64,
    val_list: Option<&Path>,
) -> Result<()> {
    let split = match (val_count, val_list) {
        (Some(count), _) => SplitSpec::RandomVal {
            count,
            seed: split_seed,
        },
        (None, Some(list)) => {
            let text = fs::read_to_string(list).map_err(|e| Error::io(list, e))?;
            SplitSpec::ValStems(
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect(),
            )
        }
        (None, None) => SplitSpec::AllTrain,
    };
    let manifest = ingest_dataset(raw, target, longer_edge, pad_size, &split)?;
    manifest.save(out)?;
    println!(
        "{} pairs ({} train, {} val) -> {}",
        manifest.entries.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        out.display()
    );
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            variant,
            resume,
        } => {
            let cfg = RunConfig::load(&config.config, &config.overrides)?;
            cmd_train(&cfg, variant.unwrap_or(cfg.variant), resume.as_deref()).map(drop)
        }
        Command::Enhance {
            checkpoint_dir,
            variant,
            out_dir,
            inputs,
        } => cmd_enhance(&checkpoint_dir, variant, &out_dir, &inputs),
        Command::Evaluate {
            config,
            checkpoint_dir,
            variant,
            split,
        } => {
            let cfg = RunConfig::load(&config.config, &config.overrides)?;
            cmd_evaluate(&cfg, &checkpoint_dir, variant.unwrap_or(cfg.variant), split).map(drop)
        }
        Command::Ablate { config, variants } => {
            let cfg = RunConfig::load(&config.config, &config.overrides)?;
            cmd_ablate(&cfg, &variants).map(drop)
        }
        Command::Gradcheck { scope, seed } => cmd_gradcheck(scope, seed),
        Command::Ingest {
            raw,
            target,
            out,
            longer_edge,
            pad_size,
            val_count,
            split_seed,
            val_list,
        } => cmd_ingest(
            &raw,
            &target,
            &out,
            longer_edge,
            pad_size,
            val_count,
            split_seed,
            val_list.as_deref(),
        ),
        Command::Synth {
            kind,
            count,
            width,
            height,
            seed,
            out,
        } => {
            let pairs = generate_pairs(kind, count, width, height, seed);
            write_pairs(&out, &pairs)?;
            println!("{count} pairs -> {}", out.display());
            Ok(())
        }
    }
}
