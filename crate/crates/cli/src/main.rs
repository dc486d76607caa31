//! `grasp-lab`: staged backdoor experiments from the command line.
//!
//! Every pipeline subcommand recomputes deterministically from scratch up to
//! its stage, so a run directory can always be regenerated from its config.
//! Exit codes: 0 on success, 2 when inputs fail validation, 1 on runtime
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grasp_core::Result;

use grasp_cli::config::{load_config, ExperimentConfig};
use grasp_cli::pipeline::{run_pipeline, Stage};
use grasp_cli::report::{build_report, render_text};
use grasp_cli::theory_suite::{run_theory_suite, write_theory_artifacts, TheoryConfig};
use grasp_cli::zoo::{score_zoo, write_zoo_csv, ZooEntry};

#[derive(Parser)]
#[command(
    name = "grasp-lab",
    version,
    about = "Backdoor attack, trigger inversion, and robustness experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline through model training.
    Train(RunArgs),
    /// Run the pipeline through dataset poisoning.
    Poison(RunArgs),
    /// Run the pipeline through trigger inversion.
    Invert(RunArgs),
    /// Run the pipeline through the robustness report.
    Robustness(RunArgs),
    /// Run the full pipeline and compute defense metrics.
    Metrics(RunArgs),
    /// Run the analytical check suite.
    Theory {
        /// Suite seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for theory.json and the CSV tables.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score a zoo of finished runs and report the separation AUC.
    ZooAuc {
        /// Run directory of a backdoored model (repeatable).
        #[arg(long = "backdoored", required = true)]
        backdoored: Vec<PathBuf>,
        /// Run directory of a clean model (repeatable).
        #[arg(long = "clean", required = true)]
        clean: Vec<PathBuf>,
        /// Where the score table is written.
        #[arg(long, default_value = "zoo_auc.csv")]
        out: PathBuf,
    },
    /// Assemble and print the consolidated report of a run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

/// Config resolution shared by the pipeline subcommands: start from
/// `--config` or the built-in preset, then let individual flags override
/// single fields. `--seed` rewires every stage seed before field overrides
/// apply.
#[derive(Args)]
struct RunArgs {
    /// Full experiment configuration as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Master seed; derives all stage seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of training samples that get a trigger-stamped copy.
    #[arg(long)]
    alpha: Option<f64>,
    /// Fraction of poisoned samples that also get a noisy copy.
    #[arg(long)]
    beta: Option<f64>,
    /// Scale of the trigger noise (the attack's c parameter).
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Attack target class.
    #[arg(long)]
    target: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Mask sparsity weight for inversion.
    #[arg(long)]
    lambda: Option<f64>,
    /// Inversion optimizer steps.
    #[arg(long)]
    inversion_steps: Option<usize>,
    /// Largest perturbation radius the robustness search tries.
    #[arg(long)]
    r_max: Option<f64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_master_seed(seed);
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Some(v) = self.alpha {
            cfg.poison.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.poison.beta = v;
        }
        if let Some(v) = self.noise_scale {
            cfg.poison.noise_scale = v;
        }
        if let Some(v) = self.target {
            cfg.poison.target = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.lambda {
            cfg.inversion.lambda = v;
        }
        if let Some(v) = self.inversion_steps {
            cfg.inversion.steps = v;
        }
        if let Some(v) = self.r_max {
            cfg.robustness.r_max = v;
        }
        Ok(cfg)
    }
}

fn run_to_stage(args: &RunArgs, target: Stage) -> Result<()> {
    let cfg = args.resolve()?;
    let manifest = run_pipeline(&cfg, target)?;
    println!(
        "run {} -> {} ({} stages)",
        manifest.config_hash,
        cfg.out_dir.display(),
        manifest.stages.len()
    );
    for record in &manifest.stages {
        println!(
            "  {}: {} [{} ms]",
            record.stage.name(),
            record.artifacts.join(", "),
            record.wall_ms
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => run_to_stage(&args, Stage::Train),
        Command::Poison(args) => run_to_stage(&args, Stage::Poison),
        Command::Invert(args) => run_to_stage(&args, Stage::Inversion),
        Command::Robustness(args) => run_to_stage(&args, Stage::Robustness),
        Command::Metrics(args) => run_to_stage(&args, Stage::Metrics),
        Command::Theory { seed, out_dir } => {
            let summary = run_theory_suite(&TheoryConfig { seed, ..TheoryConfig::default() })?;
            if let Some(dir) = &out_dir {
                write_theory_artifacts(&summary, dir)?;
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::ZooAuc { backdoored, clean, out } => {
            let entries: Vec<ZooEntry> = backdoored
                .into_iter()
                .map(|run_dir| ZooEntry { run_dir, backdoored: true })
                .chain(clean.into_iter().map(|run_dir| ZooEntry { run_dir, backdoored: false }))
                .collect();
            let table = score_zoo(&entries)?;
            write_zoo_csv(&table, &out)?;
            println!(
                "auc {:.6} over {} backdoored vs {} clean -> {}",
                table.auc,
                table.n_backdoored,
                table.n_clean,
                out.display()
            );
            Ok(())
        }
        Command::Report { run_dir } => {
            let report = build_report(&run_dir)?;
            print!("{}", render_text(&report));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
