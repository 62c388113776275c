use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twr_harness::{
    run_ablation, run_experiment, run_llr_trace, run_multi_change, run_sweep, Execution, ExperimentConfig, HarnessError,
};

#[derive(Parser)]
#[command(name = "twr", version, about = "Quickest change detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Threshold sweep of every configured detector.
    Run(Common),
    /// TWR with annealing and penalization switched on and off.
    Ablate(Common),
    /// Sequential detection of several changes.
    Multi(Common),
    /// Trial-averaged log-likelihood-ratio traces.
    Trace(Common),
    /// Threshold sweep plus a fit of delay against log-threshold.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to every available core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Number of trials (overrides the config).
    #[arg(long)]
    trials: Option<usize>,
    /// Skip SVG output.
    #[arg(long)]
    no_plots: bool,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if self.no_plots {
            cfg.emit_plots = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run(c) => {
            let cfg = c.resolve()?;
            let s = run_experiment(&cfg, Execution { workers: c.workers })?;
            eprintln!(
                "{} records, {} cells, {} trials resumed -> {}",
                s.records.len(),
                s.aggregates.len(),
                s.resumed_trials,
                cfg.output_dir.display()
            );
        }
        Command::Sweep(c) => {
            let cfg = c.resolve()?;
            let (_, fits) = run_sweep(&cfg, Execution { workers: c.workers })?;
            for (name, fit) in fits {
                match fit {
                    Some(f) => eprintln!("{name}: ADD = {:.3} * level + {:.3} (R² {:.3})", f.slope, f.intercept, f.r2),
                    None => eprintln!("{name}: not enough detections to fit"),
                }
            }
        }
        Command::Ablate(c) => {
            let cfg = c.resolve()?;
            let s = run_ablation(&cfg, Execution { workers: c.workers })?;
            eprintln!("{} ablation cells -> {}", s.aggregates.len(), cfg.output_dir.display());
        }
        Command::Multi(c) => {
            let cfg = c.resolve()?;
            let s = run_multi_change(&cfg, c.workers)?;
            eprintln!(
                "gap {} at B={}: every change detected in {:.0}% of trials",
                s.gap,
                s.threshold,
                100.0 * s.success_rate()
            );
        }
        Command::Trace(c) => {
            let mut cfg = c.resolve()?;
            cfg.emit_traces = true;
            let t = run_llr_trace(&cfg, c.workers)?;
            eprintln!("{} rows averaged over {} trials", t.len(), t.trials);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
