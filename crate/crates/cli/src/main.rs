use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use markov_quant::model::zoo;
use markov_quant_cli::{run_file, Overrides};

#[derive(Parser)]
#[command(
    name = "mquant",
    version,
    about = "Quantize, solve and certify continuous-space Markov games"
)]
struct Cli {
    /// override the solver seed of the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// write artifacts here instead of the config's output.dir
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config
    Run { config: PathBuf },
    /// List the model zoo with parameter docs
    ListModels,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match cli.command {
        Command::ListModels => {
            print!("{}", zoo::list_models());
            ExitCode::SUCCESS
        }
        Command::Run { config } => {
            let overrides = Overrides {
                seed: cli.seed,
                out_dir: cli.out_dir,
            };
            match run_file(&config, &overrides) {
                Ok(result) => {
                    for r in &result.rungs {
                        let eps: Vec<String> = r
                            .certificate
                            .eps
                            .iter()
                            .map(|e| format!("{e:.3e}"))
                            .collect();
                        println!(
                            "delta {:<8} k {:<6} eps [{}]",
                            r.delta,
                            r.k_states,
                            eps.join(", ")
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
