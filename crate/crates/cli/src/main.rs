//! Command-line driver for the rule bootstrapping pipeline.
//!
//! Exit codes: 0 on success, 1 when the invocation or config is invalid,
//! 2 when a run fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ruleboot::config::RunConfig;
use ruleboot::oracle::SeedMode;
use ruleboot::pipeline;

#[derive(Parser)]
#[command(name = "ruleboot", version, about = "Induce logical entity-tagging rules by bootstrapping from prompt-oracle seeds")]
struct Cli {
    /// Run configuration (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages; defaults to all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides `rng_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    ZeroShot,
    Finetuned,
}

#[derive(Subcommand)]
enum Command {
    /// Mine candidate atom and compound rules.
    Mine,
    /// Label seed rules with the oracle.
    Seed {
        #[arg(long, value_enum, default_value = "zero-shot")]
        mode: Mode,
        /// Confidence threshold; defaults to the mode's own.
        #[arg(long)]
        p_t: Option<f64>,
        /// Support threshold; defaults to the mode's own.
        #[arg(long)]
        r_t: Option<usize>,
    },
    /// Grow the instance and rule pools from the seeds.
    Bootstrap {
        /// Continue from the latest snapshot in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score the trained tagger against the gold corpus.
    Eval,
    /// Write the rule pool as a tab-separated table.
    ExportRules {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus, mock lexicon and config to a directory.
    Synth {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 100)]
        heldout: usize,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<ruleboot::Error> for Failure {
    fn from(e: ruleboot::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Validation("--config is required for this subcommand".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Validation("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    match &cli.command {
        Command::Synth { dir, train, heldout } => {
            let path = pipeline::write_synthetic_workspace(dir, *train, *heldout, cli.seed.unwrap_or(0))?;
            println!("wrote {}", path.display());
        }
        Command::Mine => {
            let cfg = load_config(cli)?;
            let s = pipeline::cmd_mine(&cfg)?;
            println!(
                "{} sentences, {} chunks: {} atom rules, {} compound rules, {} total",
                s.sentences, s.chunks, s.atom_rules, s.compound_rules, s.total_rules
            );
        }
        Command::Seed { mode, p_t, r_t } => {
            let mut cfg = load_config(cli)?;
            cfg.seed.p_t = p_t.or(cfg.seed.p_t);
            cfg.seed.r_t = r_t.or(cfg.seed.r_t);
            cfg.validate()?;
            let mode = match mode {
                Mode::ZeroShot => SeedMode::ZeroShot,
                Mode::Finetuned => SeedMode::Finetuned,
            };
            let s = pipeline::cmd_seed(&cfg, mode)?;
            println!(
                "{} seed rules over {} occurrences (p_t = {}, r_t = {}), {} negatives",
                s.seed_rules, s.seeded_occurrences, s.thresholds.p_t, s.thresholds.r_t, s.negatives
            );
            if let Some(p) = s.precision_vs_gold {
                println!("seed precision against gold: {p:.4}");
            }
        }
        Command::Bootstrap { resume } => {
            let cfg = load_config(cli)?;
            let s = pipeline::cmd_bootstrap(&cfg, *resume)?;
            println!(
                "{} iterations ({}): |PL_S| = {}, |PL_R| = {}",
                s.iterations,
                if s.converged { "converged" } else { "iteration cap" },
                s.pool_s,
                s.pool_r
            );
            if let Some(f1) = s.final_dev_f1 {
                println!("dev micro-F1: {f1:.4}");
            }
        }
        Command::Eval => {
            let cfg = load_config(cli)?;
            print!("{}", pipeline::cmd_eval(&cfg)?.to_table());
        }
        Command::ExportRules { out } => {
            let cfg = load_config(cli)?;
            let (path, n) = pipeline::cmd_export_rules(&cfg, out.as_deref().map(Path::new))?;
            println!("{n} rules written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            log::error!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            log::error!("{m}");
            ExitCode::from(2)
        }
    }
}
