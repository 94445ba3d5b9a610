//! `sramyield`: fit devices, characterize read/write distributions, run
//! Monte Carlo and write yield curves as CSV/JSON.
//!
//! Exit codes: 0 success, 2 input parse, 3 fit failure, 4 degenerate
//! statistics, 5 domain or range violation.

mod commands;
mod exit;
mod manifest;

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sramyield", version, about = "SRAM timing-yield workbench")]
struct Cli {
    #[command(flatten)]
    global: commands::Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit drain-current constants to an I-V CSV.
    Fit(commands::FitArgs),
    /// Estimate read or write distributions from a small Monte Carlo run.
    Characterize(commands::CharacterizeArgs),
    /// Evaluate failure probability or invert for a constraint from a characterization.
    Yield(commands::YieldArgs),
    /// Analytical vs Monte Carlo failure probability per constraint.
    Compare(commands::CompareArgs),
    /// Constraint at a target failure probability across vdd, vwl or temperature.
    Sweep(commands::SweepArgs),
    /// Q-Q data of samples against the fitted distribution.
    Qq(commands::QqArgs),
    /// Plain Monte Carlo failure count at one constraint.
    Mc(commands::McArgs),
}

fn init_logging(json: bool) {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if json {
        builder.format(|buf, record| {
            let line = serde_json::json!({
                "ts": chrono::Utc::now().to_rfc3339(),
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    builder.init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.json_logs);
    let result = commands::with_pool(cli.global.threads, |threads| {
        let g = &cli.global;
        match &cli.command {
            Command::Fit(a) => commands::fit(g, threads, a),
            Command::Characterize(a) => commands::characterize(g, threads, a),
            Command::Yield(a) => commands::yield_curve(g, threads, a),
            Command::Compare(a) => commands::compare(g, threads, a),
            Command::Sweep(a) => commands::sweep(g, threads, a),
            Command::Qq(a) => commands::qq(g, threads, a),
            Command::Mc(a) => commands::mc(g, threads, a),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = exit::classify(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(kind.code() as u8)
        }
    }
}
