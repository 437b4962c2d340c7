use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use edm_core::cli::{self, CliError};
use edm_core::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "edm", version, about = "Streaming botnet detection toolkit")]
struct Args {
    /// Flat dotted-key TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides scenario.seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; falls back to io.out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input trace; falls back to io.trace.
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Input verdict log; falls back to io.verdicts.
    #[arg(long, global = true)]
    verdicts: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled flow trace (JSON Lines).
    Simulate,
    /// Replay a trace through the detection pipeline and write the verdict log.
    Detect,
    /// Score a verdict log against trace ground truth.
    Evaluate,
    /// Print a scripted walk through the admission gate.
    DemoGate,
    /// Print the effective configuration in dotted-key form.
    ShowConfig,
}

fn run(args: Args) -> Result<(), CliError> {
    let config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    }
    .with_seed(args.seed);
    let pick = |flag: &Option<PathBuf>, file: &Option<PathBuf>, name: &'static str| {
        flag.clone()
            .or_else(|| file.clone())
            .ok_or(CliError::MissingPath(name))
    };

    match args.command {
        Command::Simulate => {
            let out = pick(&args.out, &config.io.out, "out")?;
            let summary = cli::cmd_simulate(&config, &out)?;
            println!("{summary}");
        }
        Command::Detect => {
            let trace = pick(&args.trace, &config.io.trace, "trace")?;
            let out = pick(&args.out, &config.io.out, "out")?;
            let summary = cli::cmd_detect(&config, &trace, &out)?;
            println!("{summary}");
        }
        Command::Evaluate => {
            let trace = pick(&args.trace, &config.io.trace, "trace")?;
            let verdicts = pick(&args.verdicts, &config.io.verdicts, "verdicts")?;
            let out = pick(&args.out, &config.io.out, "out")?;
            let report = cli::cmd_evaluate(&config, &trace, &verdicts, &out)?;
            let fmt = |r: Option<f64>| r.map_or("undefined".to_string(), |v| format!("{v:.6}"));
            println!(
                "detection_rate={} false_positive_rate={} tp={} fp={} tn={} fn={}",
                fmt(report.detection_rate),
                fmt(report.false_positive_rate),
                report.tp,
                report.fp,
                report.tn,
                report.fn_
            );
        }
        Command::DemoGate => {
            for line in cli::cmd_demo_gate(&config)? {
                println!("{line}");
            }
        }
        Command::ShowConfig => print!("{}", config.to_dotted()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("edm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
