//! Command-line front end. Progress goes to stdout as `key=value` lines,
//! errors to stderr; exit code 0 on success, 1 on a configuration problem,
//! 2 when something fails while running.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use vflkit_core::attacks::{pmc, AttackKind};

use crate::checkpoint;
use crate::config::{self, ExperimentConfig, ENV_OUTPUT_ROOT, ENV_SEED};
use crate::error::{AppError, AppResult, Context};
use crate::harness::{self, RunOptions};
use crate::report;
use crate::selftest;
use crate::tabular;

#[derive(Debug, Parser)]
#[command(name = "vflkit", version, about = "Vertical federated learning experiments: party-wise dropout, DIMIP, completion attacks")]
pub struct Cli {
    /// Experiment config (TOML). Defaults apply to every key not given.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `dotted.path=value`, applied after the config file; repeatable.
    #[arg(long = "override", short = 'o', global = true, value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Run this single seed instead of the config's seed list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; every file the command writes goes under it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the fully resolved config and exit without computing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Concurrent runs (seeds or sweep points).
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the dataset of each seed as CSV under <out>/data.
    GenData,
    /// Train, evaluate and attack once per seed.
    Train,
    /// Re-run the configured passive completion attacks on a saved run.
    Attack {
        /// A run directory (runs/<run_id>) or its checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One run per value of a scalar config field, per seed.
    Sweep {
        /// Dotted path of the swept field, e.g. dimip.lambda.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; empty for none.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
    /// Summarize result records into tables and curve data.
    Report {
        /// Output root or records directory (default: the output root).
        dir: Option<PathBuf>,
    },
    /// Finite-difference, vCLUB-S identity and protocol conservation checks.
    Selftest,
}

fn say(line: &str) {
    println!("{line}");
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with(args: impl IntoIterator<Item = String>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn env_seed() -> AppResult<Option<u64>> {
    match std::env::var(ENV_SEED) {
        Ok(s) if !s.trim().is_empty() => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| AppError::Config(format!("{ENV_SEED}=`{s}` is not an unsigned integer"))),
        _ => Ok(None),
    }
}

/// Resolves config and output root; `fallback` is used when no `--config`
/// is given.
fn resolve(cli: &Cli, fallback: Option<&Path>) -> AppResult<(ExperimentConfig, PathBuf)> {
    let seed = match cli.seed {
        Some(s) => Some(s),
        None => env_seed()?,
    };
    let path = cli.config.as_deref().or(fallback);
    let mut cfg = config::load(path, &cli.overrides, seed)?;
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(ENV_OUTPUT_ROOT).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    cfg.output_dir = out.display().to_string();
    Ok((cfg, out))
}

fn dispatch(cli: &Cli) -> AppResult<u8> {
    if cli.jobs == 0 {
        return Err(AppError::Config("--jobs must be at least 1".into()));
    }
    let checkpoint_dir = match &cli.command {
        Command::Attack { checkpoint } => Some(run_dir(checkpoint)),
        _ => None,
    };
    let saved_config = checkpoint_dir.as_ref().map(|d| d.join("config.toml")).filter(|p| p.exists());
    let (cfg, out) = resolve(cli, saved_config.as_deref())?;
    // `--values ""` arrives as one empty item
    let sweep_values: Vec<String> = match &cli.command {
        Command::Sweep { values, .. } => values.iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect(),
        _ => Vec::new(),
    };
    if let Command::Sweep { axis, .. } = &cli.command {
        harness::sweep_configs(&cfg, axis, &sweep_values)?;
    }
    if cli.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(0);
    }
    let progress: &(dyn Fn(&str) + Sync) = &say;
    match &cli.command {
        Command::GenData => {
            let dir = out.join("data");
            std::fs::create_dir_all(&dir).map_err(AppError::io(&dir))?;
            for &seed in &cfg.seeds {
                let ds = harness::load_dataset(&cfg, seed)?;
                let path = dir.join(format!("{}-s{seed}.csv", cfg.name));
                tabular::write_csv(&path, &ds)?;
                say(&format!(
                    "event=data seed={seed} rows={} classes={} dims={:?} digest={} path={}",
                    ds.rows(),
                    ds.classes(),
                    ds.party_dims(),
                    harness::data_digest(&ds),
                    path.display()
                ));
            }
            Ok(0)
        }
        Command::Train => {
            let opts = RunOptions {
                out: Some(out.clone()),
                sweep_point: None,
            };
            let results = harness::run_seeds(&cfg, &opts, cli.jobs, progress)?;
            let mut failed = None;
            for r in results {
                if let Err(e) = r {
                    eprintln!("error: {e}");
                    failed = Some(e.exit_code());
                }
            }
            Ok(failed.unwrap_or(0))
        }
        Command::Attack { .. } => attack(&cfg, &out, checkpoint_dir.as_deref().expect("attack has a checkpoint")),
        Command::Sweep { axis, .. } => {
            let opts = RunOptions {
                out: Some(out.clone()),
                sweep_point: None,
            };
            let table = harness::sweep(&cfg, axis, &sweep_values, &opts, cli.jobs, progress)?;
            say(&format!(
                "event=sweep_done axis={axis} runs={} failures={} table={}",
                table.rows.len(),
                table.failures(),
                out.join("sweeps").join(format!("{}-{axis}.tsv", cfg.name)).display()
            ));
            Ok(if table.failures() > 0 { 2 } else { 0 })
        }
        Command::Report { dir } => {
            let dir = dir.clone().unwrap_or(out);
            let rep = report::report(&dir)?;
            for (f, why) in &rep.corrupt {
                say(&format!("event=corrupt_record file={f} reason=\"{why}\""));
            }
            print!("{}", rep.summary);
            say(&format!("event=report runs={} corrupt={} dir={}", rep.runs, rep.corrupt.len(), dir.join("report").display()));
            Ok(0)
        }
        Command::Selftest => {
            let mut ok = true;
            for s in selftest::run_all() {
                ok &= s.passed;
                say(&format!("suite={} status={} {}", s.name, if s.passed { "pass" } else { "fail" }, s.detail));
            }
            Ok(if ok { 0 } else { 2 })
        }
    }
}

fn run_dir(p: &Path) -> PathBuf {
    if p.is_file() {
        p.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        p.to_path_buf()
    }
}

fn attack(cfg: &ExperimentConfig, out: &Path, dir: &Path) -> AppResult<u8> {
    let ckpt = checkpoint::load(&dir.join("checkpoint.txt"))?;
    let extractor = ckpt
        .get(&checkpoint::passive_name(1))
        .ok_or_else(|| AppError::Runtime(format!("{}: no party 2 extractor in checkpoint", dir.display())))?;
    let manifest_path = dir.join("manifest.toml");
    let manifest: Option<toml::Table> = std::fs::read_to_string(&manifest_path)
        .ok()
        .map(|t| toml::from_str(&t).map_err(|e| AppError::Parse {
            path: manifest_path.display().to_string(),
            line: 0,
            detail: e.message().to_string(),
        }))
        .transpose()?;
    let run_id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into());
    let attacks_dir = out.join("attacks");
    std::fs::create_dir_all(&attacks_dir).map_err(AppError::io(&attacks_dir))?;
    for &seed in &cfg.seeds {
        let ds = harness::load_dataset(cfg, seed)?;
        let digest = harness::data_digest(&ds);
        if let Some(expected) = manifest.as_ref().and_then(|m| m.get("data_digest")).and_then(|v| v.as_str()) {
            if expected != digest {
                return Err(AppError::Config(format!(
                    "seed {seed} regenerates data {} but the checkpoint was trained on {}",
                    &digest[..12],
                    &expected[..12.min(expected.len())]
                )));
            }
        }
        let mut table = String::from("attack\tkind\tlabeled\taccuracy\n");
        for (i, a) in cfg.attacks.iter().enumerate() {
            let acfg = cfg.attack_config(i, seed)?;
            if acfg.kind == AttackKind::Amc {
                say(&format!("event=attack_skipped attack={} reason=amc_needs_training", a.name));
                continue;
            }
            let r = pmc(extractor, &ds, 1, &acfg).context(&format!("attacks.{i} ({})", a.name))?;
            say(&format!("event=attack run_id={run_id} seed={seed} attack={} accuracy={:.4} labeled={}", a.name, r.accuracy, r.labeled));
            table.push_str(&format!("{}\tpmc\t{}\t{}\n", a.name, r.labeled, r.accuracy));
        }
        let path = attacks_dir.join(format!("{run_id}-s{seed}.tsv"));
        std::fs::write(&path, table).map_err(AppError::io(&path))?;
    }
    Ok(0)
}
