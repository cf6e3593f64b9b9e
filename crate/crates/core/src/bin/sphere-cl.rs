use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sphere_cl::cli::{run_path, Overrides};

/// Run a contrastive-geometry experiment described by a JSON config.
#[derive(Parser)]
#[command(name = "sphere-cl", version)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's `output_path`.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let overrides = Overrides {
        seed: args.seed,
        output: args.output,
    };
    let code = run_path(&args.config, &overrides);
    ExitCode::from(code as u8)
}
