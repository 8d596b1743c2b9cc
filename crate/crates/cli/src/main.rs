use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};
use tar2_cli::{
    cmd_compare, cmd_plot, cmd_run, cmd_verify, CliError, CliResult, EXIT_OK, EXIT_VIOLATION,
};

#[derive(Parser)]
#[command(name = "tar2", version, about = "Agent-temporal reward redistribution laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics, manifest, model and policy.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run property suites; prints a JSON report.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Run several arms over seeds 0..N and write summary.csv.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        arms: String,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "compare-out")]
        out: PathBuf,
    },
    /// Plot smoothed return curves from metrics files as SVG.
    Plot {
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("TAR2_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(anyhow!("TAR2_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(CliError::runtime)
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    configure_threads()?;
    match cli.command {
        Command::Run { config, seed, out } => {
            let m = cmd_run(&config, seed, &out)?;
            eprintln!(
                "done: {} episodes, trailing success {:.3}, outputs in {}",
                m.summary.episodes,
                m.summary.final_success,
                out.display()
            );
            Ok(EXIT_OK)
        }
        Command::Verify {
            suite,
            seed,
            inject_fault,
        } => {
            let report = cmd_verify(&suite, seed, inject_fault)?;
            let json = serde_json::to_string_pretty(&report).map_err(CliError::runtime)?;
            println!("{json}");
            Ok(if report.passed { EXIT_OK } else { EXIT_VIOLATION })
        }
        Command::Compare {
            config,
            arms,
            seeds,
            out,
        } => {
            let rows = cmd_compare(&config, &arms, seeds, &out)?;
            for r in &rows {
                eprintln!(
                    "{:<9} seed {:<3} {:<6} final {:>6} to-0.9 {}",
                    r.arm,
                    r.seed,
                    r.status,
                    r.final_success.map_or("-".into(), |v| format!("{v:.3}")),
                    r.episodes_to_0_9.map_or("-".into(), |v| v.to_string())
                );
            }
            Ok(if rows.iter().all(|r| r.status == "ok") {
                EXIT_OK
            } else {
                tar2_cli::EXIT_RUNTIME
            })
        }
        Command::Plot { metrics, out } => {
            cmd_plot(&metrics, &out)?;
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
