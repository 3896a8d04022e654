//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 when a run or check fails, 2 on usage errors.
//! Every file a command writes lands inside its `--out` directory.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_config_with_mode, to_text};
use crate::error::{Error, Result};
use crate::report::{self, Manifest};
use crate::train::{benchmark_dataset, run_study, Mode, StudyResult, TrainConfig, Variant};
use crate::verify;

#[derive(Debug, Parser)]
#[command(name = "steam", version, about = "Domain generalization with per-domain style queues and a semantic jury queue")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Leave-one-domain-out training of one variant over every seed and target.
    Train(RunArgs),
    /// vanilla, vanilla-style, vanilla-semantic and steam on a shared seed set.
    Ablation(StudyArgs),
    /// steam against the domain-classifier, l2-matching and contrastive variants.
    DesignStudy(StudyArgs),
    /// Multi-source adaptation with an unlabelled target domain.
    Msda(RunArgs),
    /// Writes the synthetic benchmark as CSV.
    GenData(StudyArgs),
    /// Runs the reference-oracle and invariant checks.
    Verify,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configured base seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: StudyArgs,
    /// Overrides the configured variant.
    #[arg(long)]
    pub variant: Option<Variant>,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let command_line = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    match dispatch(cli.command, &command_line) {
        Ok(code) => code,
        Err(e @ (Error::Config(_) | Error::Parse { .. } | Error::UnknownDomain { .. })) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command, command_line: &str) -> Result<i32> {
    match command {
        Command::Train(a) => {
            let cfg = resolve(&a.common, a.variant, Mode::Dg)?;
            study(&cfg, &[cfg.variant], &a.common.out, "train", command_line, true)
        }
        Command::Msda(a) => {
            let cfg = resolve(&a.common, a.variant, Mode::Msda)?;
            if cfg.mode != Mode::Msda {
                return Err(Error::Config("mode: the msda command needs mode = msda".into()));
            }
            study(&cfg, &[cfg.variant], &a.common.out, "msda", command_line, false)
        }
        Command::Ablation(a) => {
            let cfg = resolve(&a, None, Mode::Dg)?;
            study(&cfg, &Variant::ABLATION, &a.out, "ablation", command_line, false)
        }
        Command::DesignStudy(a) => {
            let cfg = resolve(&a, None, Mode::Dg)?;
            study(&cfg, &Variant::DESIGN, &a.out, "design-study", command_line, false)
        }
        Command::GenData(a) => {
            let cfg = resolve(&a, None, Mode::Dg)?;
            let data = benchmark_dataset(&cfg)?;
            let mut buf = Vec::new();
            data.write_csv(&mut buf)?;
            report::write_file(&a.out, "dataset.csv", &String::from_utf8_lossy(&buf))?;
            write_provenance(&cfg, &a.out, command_line, &[])?;
            eprintln!("wrote {} samples to {}", data.len(), a.out.join("dataset.csv").display());
            Ok(0)
        }
        Command::Verify => {
            let checks = verify::run_suite();
            print!("{}", verify::format_report(&checks));
            Ok(if checks.iter().all(|c| c.passed) { 0 } else { 1 })
        }
    }
}

fn resolve(a: &StudyArgs, variant: Option<Variant>, default_mode: Mode) -> Result<TrainConfig> {
    let text = match &a.config {
        Some(p) => fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut cfg = parse_config_with_mode(&text, default_mode)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(v) = variant {
        cfg.variant = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_provenance(cfg: &TrainConfig, out: &Path, command_line: &str, variants: &[Variant]) -> Result<()> {
    report::write_file(out, "config.txt", &to_text(cfg))?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        command: command_line,
        seed: cfg.seed,
        seeds: cfg.seeds,
        variants: variants.iter().map(|v| v.name().to_string()).collect(),
        targets: cfg.target_list(),
    };
    report::write_file(out, "manifest.json", &report::manifest_json(&manifest))
}

fn study(
    cfg: &TrainConfig,
    variants: &[Variant],
    out: &Path,
    command: &str,
    command_line: &str,
    checkpoints: bool,
) -> Result<i32> {
    write_provenance(cfg, out, command_line, variants)?;
    eprintln!(
        "{command}: {} variant(s) x {} seed(s) x {} target(s)",
        variants.len(),
        cfg.seeds,
        cfg.target_list().len()
    );
    let result: StudyResult = run_study(cfg, variants)?;
    report::write_file(out, "epochs.csv", &report::epoch_csv(&result.runs))?;
    report::write_file(out, "runs.csv", &report::runs_csv(&result.runs))?;
    report::write_file(out, "summary.csv", &report::summary_csv(&result))?;
    report::write_file(out, "timing.csv", &report::timing_csv(&result.runs))?;
    if checkpoints {
        let dir = out.join("checkpoints");
        fs::create_dir_all(&dir)?;
        for r in &result.runs {
            let name = format!("{}-target{}-seed{}.ckpt", r.variant, r.target_domain, r.seed);
            Checkpoint::from_model(&r.encoder, Some(&r.memory)).save(&dir.join(name))?;
        }
    }
    print!("{}", report::summary_csv(&result));
    Ok(0)
}
