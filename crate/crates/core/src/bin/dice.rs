use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use dice_core::cli::{
    analysis_threads, gen_demos, parse_config, run_analyze, run_evaluate, run_finetune, run_pipeline, run_pretrain,
    run_report, seed_dir, PolicyChoice, RunConfig,
};
use dice_core::Error;

#[derive(Parser)]
#[command(name = "dice", about = "Residual actor-critic finetuning of flow-matching chunk policies on GateWorld")]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides experiment.out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Per-key override, e.g. `--set finetune.k=4`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Run seeds concurrently; every seed writes to its own directory.
    #[arg(long, global = true)]
    parallel: bool,
    /// Suppress per-evaluation progress lines during finetuning.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Prior,
    Finetuned,
    Expert,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted-expert demonstrations.
    GenDemos,
    /// Pretrain the flow-matching prior on the demonstrations.
    Pretrain,
    /// Finetune a residual actor and critic ensemble on top of the prior.
    Finetune,
    /// Report held-out success rate with its binomial standard error.
    Evaluate {
        #[arg(long, value_enum, default_value = "finetuned")]
        policy: PolicyArg,
    },
    /// Finetunability, sharpening, contraction and robustness metrics.
    Analyze,
    /// Render SVG charts from the CSVs of each seed.
    Report,
    /// Every stage in order.
    Pipeline,
    /// Print the fully resolved config.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.resolve()
}

fn run_seed(cfg: &RunConfig, command: &Command, seed: u64, verbose: bool) -> Result<(), Error> {
    let dir = seed_dir(&cfg.out_dir, seed);
    match command {
        Command::GenDemos => {
            let set = gen_demos(cfg, seed, &dir)?;
            println!(
                "seed {seed}: {} demos from {} attempts",
                set.trajectories.len(),
                set.attempts
            );
        }
        Command::Pretrain => {
            let run = run_pretrain(cfg, seed, &dir)?;
            let last = run.last();
            println!("seed {seed}: epoch {} val_loss {:.5}", last.epoch, last.val_loss);
        }
        Command::Finetune => {
            let run = run_finetune(cfg, seed, &dir, verbose)?;
            println!("seed {seed}: final success {:.3} after {} env steps", run.final_success(), run.env_steps);
        }
        Command::Evaluate { policy } => {
            let choice = match policy {
                PolicyArg::Prior => PolicyChoice::Prior,
                PolicyArg::Finetuned => PolicyChoice::Finetuned,
                PolicyArg::Expert => PolicyChoice::Expert,
            };
            let r = run_evaluate(cfg, seed, &dir, choice)?;
            println!(
                "seed {seed}: {} success {:.3} ± {:.3} over {} episodes",
                choice.name(),
                r.success_rate,
                r.std_error,
                r.episodes
            );
        }
        Command::Analyze => {
            let a = run_analyze(cfg, seed, &dir, analysis_threads())?;
            println!(
                "seed {seed}: good_cov {:.3} -> {:.3}, sharpening r {:?}, contraction pairs {}",
                a.prior_report.good_cov, a.finetuned_report.good_cov, a.sharpening_pearson, a.contraction.pairs
            );
        }
        Command::Report => {
            for p in run_report(&dir)? {
                println!("{}", p.display());
            }
        }
        Command::Pipeline => {
            let d = run_pipeline(cfg, seed, &cfg.out_dir)?;
            println!("seed {seed}: outputs in {}", d.display());
        }
        Command::ShowConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_text());
        return ExitCode::SUCCESS;
    }
    let results: Vec<(u64, Result<(), Error>)> = if cli.parallel {
        cfg.seeds.par_iter().map(|&s| (s, run_seed(&cfg, &cli.command, s, !cli.quiet))).collect()
    } else {
        cfg.seeds.iter().map(|&s| (s, run_seed(&cfg, &cli.command, s, !cli.quiet))).collect()
    };
    let mut failed = false;
    for (s, r) in results {
        if let Err(e) = r {
            eprintln!("seed {s}: error: {e}");
            failed = true;
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
