use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use gbesq_cli::{ConfigError, ExperimentConfig};

/// Run one experiment described by a TOML (or JSON) config.
///
/// Exit status is 0 when every assertion passes, 1 when any fails and 2
/// when the config cannot be read or is invalid.
#[derive(Debug, Parser)]
#[command(name = "gbesq", version)]
struct Args {
    /// Experiment config file.
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Master seed; overrides `rng.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "GBESQ_WORKERS")]
    workers: Option<usize>,
    /// Cap every path count at this value.
    #[arg(long)]
    max_paths: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("gbesq: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Some(seed) = args.seed {
        cfg.rng.master_seed = seed;
    }
    if let Some(n) = args.max_paths {
        cfg.cap_paths(n);
    }
    let out = match gbesq_cli::run(&cfg) {
        Ok(o) => o,
        Err(e) => return config_error(e),
    };
    let dir = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.check.id()));
    if let Err(e) = out.write(&dir) {
        eprintln!("gbesq: cannot write {}: {e}", dir.display());
        return ExitCode::from(2);
    }
    for a in &out.report.assertions {
        let mark = if a.passed { "ok  " } else { "FAIL" };
        println!("{mark} {:<40} value={:.6} reference={:.6} tol={:.3e}", a.name, a.value, a.reference, a.tolerance);
    }
    println!("{} -> {}", out.report.check_id, dir.display());
    if out.report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn config_error(e: ConfigError) -> ExitCode {
    eprintln!("gbesq: {e}");
    ExitCode::from(2)
}
