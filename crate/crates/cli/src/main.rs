use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use decoy_cli::{commands, write_csv, RunConfig};

/// Finite-key decoy-state BB84 rate calculator.
#[derive(Parser, Debug)]
#[command(name = "decoyqkd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// key = value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output path (CSV, or JSONL run records for `simulate`).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Seed for the optimizer and the first simulation run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Evaluate in the infinite-key limit.
    #[arg(long, global = true)]
    asymptotic: bool,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Evaluate the configured point.
    Keyrate,
    /// Optimized rates over the distance and block-size grid.
    Sweep,
    /// Optimize the free parameters at the configured point.
    Optimize,
    /// Monte Carlo runs with a bound-coverage report.
    Simulate,
}

const USAGE_ERROR: u8 = 1;
const COVERAGE_FAILURE: u8 = 2;

fn load(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text, &path.display().to_string())?;
    }
    for (i, entry) in cli.set.iter().enumerate() {
        cfg.apply_override(i, entry)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if cli.asymptotic {
        cfg.asymptotic = true;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sink(cfg: &RunConfig) -> anyhow::Result<Box<dyn Write>> {
    Ok(match &cfg.out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let cfg = load(cli)?;
    if cli.dump_config {
        print!("{}", cfg.dump());
        return Ok(0);
    }
    match cli.command {
        Command::Keyrate | Command::Optimize => {
            let report = match cli.command {
                Command::Keyrate => commands::keyrate(&cfg)?,
                _ => commands::optimize(&cfg)?,
            };
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{}", report.labeled())?;
            write_csv(&mut stdout, std::slice::from_ref(&report.row))?;
            if cfg.out.is_some() {
                write_csv(sink(&cfg)?, std::slice::from_ref(&report.row))?;
            }
        }
        Command::Sweep => {
            let rows = commands::sweep(&cfg)?;
            write_csv(sink(&cfg)?, &rows)?;
        }
        Command::Simulate => {
            if cfg.asymptotic {
                anyhow::bail!("simulate has no infinite-key mode");
            }
            let coverage = commands::simulate(&cfg)?;
            if cfg.out.is_some() {
                let mut w = sink(&cfg)?;
                for r in &coverage.records {
                    serde_json::to_writer(&mut w, r)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
            print!("{}", coverage.report());
            if !coverage.passed() {
                return Ok(COVERAGE_FAILURE);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE_ERROR } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(USAGE_ERROR)
        }
    }
}
