use std::path::PathBuf;
use std::process;

use clap::{Parser, Subcommand};
use dissipakit::cli::{
    cmd_learn, cmd_simulate, cmd_sweep, cmd_verify, parse_grid, CommandError, CommandResult, ExitCode, Overrides,
    RunConfig, SEED_ENV,
};
use dissipakit::Mode;

#[derive(Parser)]
#[command(name = "dissipakit", version, about = "Learn dissipativity certificates from trajectory data")]
struct Cli {
    /// JSON run configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset seed, overriding the config and DISSIPAKIT_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trade-off weight on the gain multiplier.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// parametric or rkhs.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and write a dataset directory.
    Simulate {
        /// Output directory (default: dataset.out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn a certificate from a dataset's training split.
    Learn {
        /// Dataset directory (default: dataset.out_dir).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Certificate path (default: <data>/certificate.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a certificate on a dataset's test split.
    Verify {
        #[arg(long)]
        cert: PathBuf,
        /// Dataset directory (default: dataset.out_dir).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report directory (default: the dataset directory).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Largest passing violation rate (default: verify.threshold).
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Learn over a grid of lambda values.
    Sweep {
        /// Dataset directory (default: dataset.out_dir).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report directory (default: the dataset directory).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Comma-separated grid (default: sweep.lambdas).
        #[arg(long)]
        lambdas: Option<String>,
    },
}

fn validation(e: impl std::fmt::Display) -> CommandError {
    CommandError { code: ExitCode::Validation, message: e.to_string() }
}

fn run(cli: Cli) -> CommandResult {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(validation)?,
        None => RunConfig::default(),
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let flags = Overrides { seed: cli.seed, lambda: cli.lambda, mode: cli.mode };
    let cfg = cfg.with_overrides(env_seed.as_deref(), &flags).map_err(validation)?;

    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(validation("--threads must be ≥ 1"));
        }
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(validation)?;
    }

    let default_dir = cfg.dataset.out_dir.clone();
    match cli.command {
        Command::Simulate { out } => cmd_simulate(&cfg, out.as_deref()),
        Command::Learn { data, out } => {
            let data = data.unwrap_or(default_dir);
            let out = out.unwrap_or_else(|| data.join("certificate.json"));
            cmd_learn(&cfg, &data, &out)
        }
        Command::Verify { cert, data, out_dir, threshold } => {
            let data = data.unwrap_or(default_dir);
            let out_dir = out_dir.unwrap_or_else(|| data.clone());
            cmd_verify(&cert, &data, &out_dir, threshold.unwrap_or(cfg.verify.threshold))
        }
        Command::Sweep { data, out_dir, lambdas } => {
            let data = data.unwrap_or(default_dir);
            let out_dir = out_dir.unwrap_or_else(|| data.clone());
            let grid = match lambdas {
                Some(text) => parse_grid(&text).map_err(validation)?,
                None => cfg.sweep.lambdas.clone(),
            };
            cmd_sweep(&cfg, &data, &out_dir, &grid)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::Validation as i32 } else { 0 };
            let _ = e.print();
            process::exit(code);
        }
    };
    match run(cli) {
        Ok(msg) => println!("{msg}"),
        Err(e) => {
            // A failed learn still reports its one-line summary on stdout.
            let (first, rest) = match e.message.split_once('\n') {
                Some((a, b)) if a.starts_with("mode=") => (Some(a), b),
                _ => (None, e.message.as_str()),
            };
            if let Some(line) = first {
                println!("{line}");
            }
            if e.code == ExitCode::Verification {
                println!("{rest}");
            } else {
                eprintln!("error: {rest}");
            }
            process::exit(e.code as i32);
        }
    }
}
