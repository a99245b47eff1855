use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

/// Run space-time wave experiments described in a configuration file.
#[derive(Debug, Parser)]
#[command(name = "stwave", version)]
struct Args {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the CSV files.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads for assembly and solves.
    #[arg(long, env = "STWAVE_THREADS")]
    threads: Option<usize>,
    /// Seed for experiments that do not set one.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = stwave_cli::load(&args.config, args.seed).and_then(|cfgs| stwave_cli::run_all(&cfgs, &args.out));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
