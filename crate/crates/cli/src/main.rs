use caloric_cli::config::ExperimentConfig;
use caloric_cli::{report, runner, suite};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lab", version, about = "Caloric-measure experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments of a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for parallel sweeps.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write plot data and a summary table for a finished run.
    Report { manifest: PathBuf },
    /// Run a predefined matrix: smoke, acceptance or full.
    Suite {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

const SCHEMA: u8 = 2;

fn threads(n: Option<usize>) {
    if let Some(n) = n {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn execute(config: ExperimentConfig, out: Option<PathBuf>, default_out: &str) -> ExitCode {
    let out = out.or_else(|| config.out_dir.clone()).unwrap_or_else(|| PathBuf::from(default_out));
    match runner::run(&config, &out, true) {
        Ok((manifest, path)) => {
            eprintln!("manifest: {}", path.display());
            ExitCode::from(manifest.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: cannot write outputs to {}: {e}", out.display());
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { SCHEMA } else { 0 });
        }
    };
    match cli.command {
        Command::Run { config, out, threads: t } => {
            threads(t);
            match ExperimentConfig::load(&config) {
                Ok(c) => execute(c, out, "lab-out"),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(SCHEMA)
                }
            }
        }
        Command::Suite { name, out, threads: t } => {
            threads(t);
            match suite::config(&name) {
                Some(Ok(c)) => execute(c, out, &format!("lab-{name}")),
                Some(Err(e)) => {
                    eprintln!("error: suite {name}: {e}");
                    ExitCode::from(SCHEMA)
                }
                None => {
                    eprintln!("error: unknown suite {name:?}; expected one of {}", suite::NAMES.join(", "));
                    ExitCode::from(SCHEMA)
                }
            }
        }
        Command::Report { manifest } => match report::report(&manifest) {
            Ok((table, files)) => {
                print!("{table}");
                for f in files {
                    eprintln!("wrote {}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
