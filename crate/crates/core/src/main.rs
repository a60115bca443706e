use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cmma_core::bench::{self, BenchSpec, Mode};

/// Operation-count benchmarks, consistency checks and simulation sweeps.
#[derive(Debug, Parser)]
#[command(name = "cmma-bench", version)]
struct Cli {
    /// JSON run specification. Defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the spec seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the spec mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut spec = match &cli.spec {
        Some(p) => match BenchSpec::load(p) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => BenchSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let Some(mode) = cli.mode.or(spec.mode) else {
        eprintln!("error: no mode given (use --mode or set \"mode\" in the spec)");
        return ExitCode::from(2);
    };
    let out = cli.out.or_else(|| spec.output.clone()).unwrap_or_else(|| PathBuf::from("bench-out"));
    match bench::run(&spec, mode, &out) {
        Ok(o) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", o.summary);
            for f in &o.files {
                let _ = writeln!(stdout, "wrote {}", f.display());
            }
            if o.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("FAILED");
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
