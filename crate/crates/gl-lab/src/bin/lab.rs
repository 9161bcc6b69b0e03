//! Thin CLI over the experiment pipelines:
//!
//!   lab <experiment> --config FILE [--seed N] [--replicas K] [--out DIR]
//!       [--n LIST] [--threads W]
//!
//! Exit codes: 0 all verdicts pass, 2 any verdict fails, 1 usage or
//! runtime error. Thread count: --threads, or the LAB_THREADS env var.

use std::process::ExitCode;

use clap::Parser;

use gl_lab::harness::config::{ExperimentConfig, ExperimentTag};
use gl_lab::harness::experiments;

#[derive(Parser, Debug)]
#[command(
    name = "lab",
    about = "Numerical experiments on a conservative lattice model and its fluctuation-field scaling limit"
)]
struct Cli {
    /// Experiment tag: thermo | ensembles | dynamics | scaling | bg | sbe | compare
    experiment: String,
    /// TOML configuration file.
    #[arg(long)]
    config: String,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the replica count from the config.
    #[arg(long)]
    replicas: Option<usize>,
    /// Override the output directory from the config.
    #[arg(long)]
    out: Option<String>,
    /// Override the n list, comma-separated (e.g. 16,32,64).
    #[arg(long)]
    n: Option<String>,
    /// Worker thread count (default: all cores, or LAB_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    let threads = cli.threads.or_else(|| {
        std::env::var("LAB_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(w) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()?;
    }
    let tag = ExperimentTag::parse(&cli.experiment)?;
    let text = std::fs::read_to_string(&cli.config)?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if cfg.experiment != tag {
        return Err(format!(
            "config is for experiment '{}', but '{}' was requested",
            cfg.experiment.name(),
            tag.name()
        )
        .into());
    }
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(r) = cli.replicas {
        cfg.replicas = r;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    if let Some(list) = cli.n {
        let parsed: Result<Vec<usize>, _> = list.split(',').map(|p| p.trim().parse()).collect();
        cfg.n = parsed.map_err(|e| format!("bad --n list: {e}"))?;
    }
    cfg.validate()?;
    let artifact = experiments::run(&cfg)?;
    for (check, ok) in &artifact.verdicts {
        println!("{} {}", if *ok { "PASS" } else { "FAIL" }, check);
    }
    println!(
        "wrote {} ({} tables, {:.1}s)",
        artifact.out_dir.display(),
        artifact.tables.len(),
        artifact.wall_secs
    );
    Ok(artifact.all_pass())
}
