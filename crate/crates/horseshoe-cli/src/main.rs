use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use horseshoe_cli::output::{summary_json, write_outcome};
use horseshoe_cli::{run, Command, Context, ExperimentConfig};

const THREADS_ENV: &str = "HORSESHOE_LAB_THREADS";

/// Numerical experiments on a planar horseshoe with a cubic tangency.
#[derive(Parser, Debug)]
#[command(name = "horseshoe-lab", version)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; falls back to the config, then to HORSESHOE_LAB_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Cylinder depth for pressure and equilibrium.
    #[arg(long, global = true)]
    depth: Option<usize>,
    /// zero, row-rate, geometric or height.
    #[arg(long, global = true)]
    potential: Option<String>,
    /// Symbol word such as `7777.4816`.
    #[arg(long, global = true)]
    word: Option<String>,
    /// Point as `x,y`.
    #[arg(long, global = true)]
    point: Option<String>,
    /// Perturbation in units of beta_max^2.
    #[arg(long, global = true)]
    theta: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

fn configure(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    if cfg.threads.is_none() {
        if let Ok(v) = std::env::var(THREADS_ENV) {
            cfg.set("threads", &v).map_err(|e| format!("{THREADS_ENV}: {e}"))?;
        }
    }
    let flags: [(&str, Option<String>); 9] = [
        ("seed", cli.seed.map(|v| v.to_string())),
        ("threads", cli.threads.map(|v| v.to_string())),
        ("out", cli.out.as_ref().map(|v| v.display().to_string())),
        ("samples", cli.samples.map(|v| v.to_string())),
        ("depth", cli.depth.map(|v| v.to_string())),
        ("potential", cli.potential.clone()),
        ("word", cli.word.clone()),
        ("point", cli.point.clone()),
        ("theta", cli.theta.map(|v| format!("{v:?}"))),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v).map_err(|e| e.to_string())?;
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match configure(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: thread pool already set: {e}");
        }
    }
    let out = cfg.out.clone();
    let config_text = cfg.to_key_value();
    let started = std::time::Instant::now();
    let result = Context::new(cfg).and_then(|ctx| run(cli.command, &ctx));
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_usage() { 2 } else { 1 });
        }
    };
    eprintln!("{} finished in {:.2?}", cli.command.name(), started.elapsed());
    if let Err(e) = write_outcome(&out, &outcome, &config_text) {
        eprintln!("error: writing {}: {e}", out.display());
        return ExitCode::from(1);
    }
    println!("{}", summary_json(&outcome));
    if outcome.pass {
        ExitCode::SUCCESS
    } else {
        eprintln!(
            "certificate failed: {}",
            outcome.witness.as_deref().unwrap_or("no witness recorded")
        );
        ExitCode::from(1)
    }
}
