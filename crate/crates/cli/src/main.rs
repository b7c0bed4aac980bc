use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use crossbar_harness::{run, ExperimentConfig, Scenario, EXIT_UNCONVERGED};
use crossbar_core::GridSpec;

/// Run a crossbar estimation experiment and write its tables and heatmaps.
#[derive(Debug, Parser)]
#[command(name = "crossbar", version)]
struct Args {
    /// JSON experiment config; its keys override the scenario defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    scenario: Option<Scenario>,
    /// Grid size as ROWSxCOLS.
    #[arg(long)]
    grid: Option<GridSpec>,
    #[arg(long)]
    seed: Option<u64>,
    /// Readout noise standard deviation (V).
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Stage-one and stage-two discrepancy weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Stage-one and stage-two cross-state weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Stage-two wire penalty weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

fn resolve(args: &Args) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_json(&text, args.scenario).with_context(|| format!("loading {}", path.display()))?
        }
        None => ExperimentConfig::defaults(args.scenario.unwrap_or(Scenario::WireSweep)),
    };
    if let Some(g) = args.grid {
        cfg.grid = g;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.noise_std {
        cfg.noise_std = n;
    }
    if let Some(d) = &args.out_dir {
        cfg.out_dir = d.clone();
    }
    for w in [&mut cfg.weights_lsq, &mut cfg.weights_reg] {
        w.alpha = args.alpha.unwrap_or(w.alpha);
        w.beta = args.beta.unwrap_or(w.beta);
    }
    if let Some(l) = args.lambda {
        cfg.weights_reg.lambda = l;
    }
    cfg.check()?;
    Ok(cfg)
}

fn main() -> anyhow::Result<ExitCode> {
    let args = Args::parse();
    let cfg = resolve(&args)?;
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(ExitCode::SUCCESS);
    }
    let out = run(&cfg)?;
    let written = out.write(&cfg.out_dir)?;
    print!("{}", out.summary);
    println!("wrote {} files to {}", written.len(), cfg.out_dir.display());
    if out.failures > 0 {
        eprintln!("{} point(s) failed to converge", out.failures);
        return Ok(ExitCode::from(EXIT_UNCONVERGED as u8));
    }
    Ok(ExitCode::SUCCESS)
}
