//! Command-line front end. Exit codes: 0 success, 1 domain/runtime error, 2 usage error.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_config, parse_kv_text, ResolvedConfig};
use crate::data::{generate_proxy_dataset, Dataset, DatasetManifest, PROXY_ATTRIBUTE};
use crate::edit::{edit_png, GeneratorSnapshot};
use crate::error::{Error, Result};
use crate::metrics::evaluate_dataset;
use crate::service::{serve, AppState, DEFAULT_MAX_EDGE, DEFAULT_PORT};
use crate::stu::AttributeValue;
use crate::trainer::{load_checkpoint, train, RunDir, TrainState};

pub const SEED_ENV: &str = "ATTRIFORGE_SEED";

#[derive(Debug, Parser)]
#[command(name = "attriforge", version, about = "Attribute-conditioned material appearance editor")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the procedural proxy dataset (images, masks, manifest.jsonl)
    GenerateData(GenerateArgs),
    /// Train a generator/discriminator pair
    Train(TrainArgs),
    /// Reconstruction metrics of a checkpoint over a manifest
    Eval(EvalArgs),
    /// Edit one image
    Edit(EditArgs),
    /// Serve edits over HTTP
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of samples
    #[arg(long, default_value_t = 256)]
    pub count: usize,
    /// Image edge in pixels
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Generator seed (ATTRIFORGE_SEED overrides)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest (JSON lines)
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory for checkpoints and the loss log
    #[arg(long)]
    pub out: PathBuf,
    /// Config file, key=value or JSON
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override, repeatable (e.g. --set learning_rate=1e-3)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Attribute column of the manifest to edit
    #[arg(long, default_value = PROXY_ATTRIBUTE)]
    pub attribute_name: String,
    /// Continue from a checkpoint (only total_steps, checkpoint_every and keep_checkpoints may change)
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print a loss line every N steps
    #[arg(long, default_value_t = 10)]
    pub log_every: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// CSV report path
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input PNG
    #[arg(long)]
    pub input: PathBuf,
    /// Mask PNG (defaults to the input's alpha channel)
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Target attribute in [0, 1]
    #[arg(long, value_parser = parse_attribute)]
    pub attribute: f64,
    /// Output PNG
    #[arg(long)]
    pub output: PathBuf,
    /// Largest accepted image edge
    #[arg(long, default_value_t = DEFAULT_MAX_EDGE)]
    pub max_edge: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Largest accepted image edge
    #[arg(long, default_value_t = DEFAULT_MAX_EDGE)]
    pub max_edge: usize,
}

fn parse_attribute(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("attribute must be in [0, 1], got {v}"))
    }
}

/// Failures that count as usage errors (exit 2).
struct Usage(Error);

fn echo(title: &str, text: &str) {
    println!("# {title}");
    print!("{text}");
}

fn env_seed() -> std::result::Result<Option<u64>, Usage> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Usage(Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))),
        Err(_) => Ok(None),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} {} does not exist", path.display())))
    }
}

fn load_dataset(manifest: &Path, attribute: &str, size: usize) -> Result<Dataset> {
    require_file(manifest, "manifest")?;
    let m = DatasetManifest::load(manifest, attribute)?;
    Dataset::load(&m, manifest.parent().unwrap_or(Path::new(".")), size)
}

fn cmd_generate(a: &GenerateArgs) -> std::result::Result<(), Usage> {
    let seed = env_seed()?.unwrap_or(a.seed);
    echo("resolved", &format!("out={}\ncount={}\nsize={}\nseed={seed}\n", a.out.display(), a.count, a.size));
    let m = generate_proxy_dataset(a.count, a.size, &a.out, seed).map_err(Usage)?;
    println!("wrote {} samples to {}", m.records.len(), a.out.display());
    Ok(())
}

const RESUMABLE_KEYS: &[&str] = &["total_steps", "checkpoint_every", "keep_checkpoints"];

fn cmd_train(a: &TrainArgs) -> std::result::Result<(), Usage> {
    let mut overrides = Vec::new();
    if let Some(seed) = env_seed()? {
        overrides.push(format!("seed={seed}"));
    }
    overrides.extend(a.overrides.iter().cloned());
    let mut state = match &a.resume {
        Some(path) => {
            if a.config.is_some() {
                return Err(Usage(Error::Config("--config cannot be combined with --resume".into())));
            }
            let mut state = load_checkpoint(path).map_err(|e| Usage(Error::Domain(e.to_string())))?;
            let mut pairs = parse_kv_text(
                &ResolvedConfig { training: state.config.clone(), augmentation: state.augmentation.clone() }.to_kv(),
            )
            .map_err(Usage)?;
            for o in &a.overrides {
                let kv = parse_kv_text(o).map_err(Usage)?;
                if let Some((k, _)) = kv.iter().find(|(k, _)| !RESUMABLE_KEYS.contains(&k.as_str())) {
                    return Err(Usage(Error::Config(format!("`{k}` cannot change when resuming"))));
                }
                pairs.extend(kv);
            }
            let resolved = ResolvedConfig::from_pairs(&pairs).map_err(Usage)?;
            state.config = resolved.training;
            state
        }
        None => {
            let resolved = parse_config(a.config.as_deref(), &overrides).map_err(Usage)?;
            TrainState::new(resolved.training, resolved.augmentation, &a.attribute_name).map_err(Usage)?
        }
    };
    echo(
        "resolved",
        &ResolvedConfig { training: state.config.clone(), augmentation: state.augmentation.clone() }.to_kv(),
    );
    let mut run = || -> Result<()> {
        let size = state.generator.config().image_size;
        let ds = load_dataset(&a.manifest, &state.attribute.clone(), size)?;
        let rd = RunDir(a.out.clone());
        let every = a.log_every.max(1);
        train(&mut state, &ds, Some(&rd), |r| {
            if r.step % every == 0 {
                println!("{}", r.csv_row());
            }
        })?;
        println!("final checkpoint {}", rd.final_checkpoint().display());
        Ok(())
    };
    run().map_err(|e| Usage(Error::Domain(e.to_string())))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    let state = load_checkpoint(&a.checkpoint)?;
    echo(
        "resolved",
        &ResolvedConfig { training: state.config.clone(), augmentation: state.augmentation.clone() }.to_kv(),
    );
    require_file(&a.manifest, "manifest")?;
    let m = DatasetManifest::load(&a.manifest, &state.attribute)?;
    let ds = Dataset::load(&m, a.manifest.parent().unwrap_or(Path::new(".")), state.generator.config().image_size)?;
    let ids: Vec<String> = m.records.iter().map(|r| r.image.clone()).collect();
    let report = evaluate_dataset(&state.generator, &ds.samples, &ids)?;
    report.write_csv(&a.out)?;
    let r = report.mean;
    println!("MEAN psnr={} ssim={} mse={} mae={} ({} samples)", r.psnr, r.ssim, r.mse, r.mae, report.rows.len());
    Ok(())
}

fn cmd_edit(a: &EditArgs) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    let snap = GeneratorSnapshot::load(&a.checkpoint)?;
    echo(
        "resolved",
        &format!(
            "checkpoint={}\ncheckpoint_id={}\nattribute_name={}\nattribute={}\nmax_edge={}\n",
            a.checkpoint.display(),
            snap.checkpoint_id,
            snap.attribute,
            a.attribute,
            a.max_edge
        ),
    );
    let image = std::fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let mask = a.mask.as_ref().map(|p| std::fs::read(p).map_err(|e| Error::io(p, e))).transpose()?;
    let g = snap.build()?;
    let out = edit_png(&g, &image, mask.as_deref(), AttributeValue::new(a.attribute)?, a.max_edge)?;
    std::fs::write(&a.output, &out.png).map_err(|e| Error::io(&a.output, e))?;
    println!("wrote {}x{} image to {}", out.width, out.height, a.output.display());
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> std::result::Result<(), Usage> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|_| Usage(Error::Config(format!("bad listen address {}:{}", a.host, a.port))))?;
    let run = || -> Result<()> {
        require_file(&a.checkpoint, "checkpoint")?;
        let snap = GeneratorSnapshot::load(&a.checkpoint)?;
        echo(
            "resolved",
            &format!(
                "checkpoint={}\ncheckpoint_id={}\nattribute_name={}\nlisten={addr}\nmax_edge={}\n",
                a.checkpoint.display(),
                snap.checkpoint_id,
                snap.attribute,
                a.max_edge
            ),
        );
        serve(addr, AppState::with_model(snap, a.max_edge))
    };
    run().map_err(|e| Usage(Error::Domain(e.to_string())))
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    // Configuration problems detected before any work starts are usage errors.
    let outcome: std::result::Result<(), (i32, Error)> = match &cli.command {
        Command::GenerateData(a) => cmd_generate(a).map_err(|Usage(e)| (usage_code(&e), e)),
        Command::Train(a) => cmd_train(a).map_err(|Usage(e)| (usage_code(&e), e)),
        Command::Eval(a) => cmd_eval(a).map_err(|e| (1, e)),
        Command::Edit(a) => cmd_edit(a).map_err(|e| (1, e)),
        Command::Serve(a) => cmd_serve(a).map_err(|Usage(e)| (usage_code(&e), e)),
    };
    match outcome {
        Ok(()) => 0,
        Err((code, e)) => {
            eprintln!("error: {e}");
            code
        }
    }
}

fn usage_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}
