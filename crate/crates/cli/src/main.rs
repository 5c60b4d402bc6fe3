use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use tstbench_cli::commands::format_null_summary;
use tstbench_cli::report::DEFAULT_BINS;
use tstbench_cli::{cmd_null, cmd_report, cmd_scan, prepare, CliError, RunOptions};

/// Benchmark harness for non-parametric two-sample tests.
#[derive(Parser, Debug)]
#[command(name = "tstbench", version)]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build (or reuse) the null distributions of a config.
    Null { config: PathBuf },
    /// Locate ε at every confidence level for every row of a config.
    Scan {
        config: PathBuf,
        /// Skip rows already completed in the output manifest.
        #[arg(long)]
        resume: bool,
    },
    /// Write histogram and eCDF series for the cached nulls of a results directory.
    Report {
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let opts = |resume| RunOptions { output: cli.output.clone(), seed: cli.seed, resume };
    match &cli.command {
        Command::Null { config } => {
            let exp = prepare(config, &opts(false))?;
            let rows = cmd_null(&exp)?;
            print!("{}", format_null_summary(&rows));
            Ok(0)
        }
        Command::Scan { config, resume } => {
            let exp = prepare(config, &opts(*resume))?;
            let report = cmd_scan(&exp, *resume)?;
            let failed = report.failures();
            println!(
                "{} rows ({} resumed, {} failed) written to {}",
                report.rows.len(),
                report.resumed,
                failed,
                report.output.display()
            );
            Ok(if failed > 0 { 2 } else { 0 })
        }
        Command::Report { dir, bins } => {
            let dir = cli.output.as_ref().unwrap_or(dir);
            for path in cmd_report(dir, *bins)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            error!("cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
