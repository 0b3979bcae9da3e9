//! `chs`: run, study and verify the viscous Cahn–Hilliard tumor model.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chs_core::config::{Command, StudyConfig};
use chs_core::study::{run_single, run_study};
use chs_core::verify::{run_verify, VerifyOptions};
use chs_core::Error;
use clap::{Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "chs", version, about = "Viscous Cahn–Hilliard tumor growth solver and rate-study harness")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one configuration and write trajectory.csv
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Viscous-versus-limit sweep with rate fit
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: available cores)
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Scheme verification suites
    Verify {
        /// Config for the preset-based suites (defaults apply without one)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run only these suites (repeatable)
        #[arg(long)]
        suite: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::SolverFailure { .. } | Error::StepFailure { .. } | Error::Domain { .. } | Error::Fit(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    if let Error::Config(list) = e {
        for item in list {
            eprintln!("  - {item}");
        }
    }
    ExitCode::from(exit_code(e))
}

fn load(path: Option<&Path>, command: Command) -> Result<StudyConfig, Error> {
    match path {
        Some(p) => StudyConfig::load(p, Some(command)).map_err(|e| match e {
            Error::Io(io) => Error::InvalidInput(format!("cannot read {}: {io}", p.display())),
            other => other,
        }),
        None => StudyConfig::parse_as("", Some(command)),
    }
}

fn run(config: &Path, out: Option<PathBuf>) -> ExitCode {
    let cfg = match load(Some(config), Command::Run) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let out = out.unwrap_or_else(|| cfg.out.clone());
    match run_single(&cfg, &out) {
        Ok(sum) => {
            println!(
                "{} steps, t = {}, max mass drift {:e}, bound ratio {:.4}",
                sum.steps, sum.final_state.t, sum.max_mass_drift, sum.monitors.ratio
            );
            println!("wrote {}", out.join("trajectory.csv").display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn study(config: &Path, out: Option<PathBuf>, jobs: Option<usize>) -> ExitCode {
    let mut cfg = match load(Some(config), Command::Study) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if jobs == Some(0) {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(EXIT_USAGE);
    }
    if jobs.is_some() {
        cfg.jobs = jobs;
    }
    let out = out.unwrap_or_else(|| cfg.out.clone());
    let outcome = match run_study(&cfg, &out) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    println!("{:>12} {:>12} {:>12} {:>9}", "alpha", "beta", "total", "status");
    for p in &outcome.points {
        let (total, status) = match &p.result {
            Ok((e, _)) => (format!("{:.4e}", e.total), if p.excluded { "excluded" } else { "fitted" }),
            Err(_) => ("-".to_string(), "failed"),
        };
        println!("{:>12.4e} {:>12.4e} {:>12} {:>9}", p.alpha, p.beta, total, status);
    }
    match &outcome.floor {
        Ok(f) => println!("floor {f:.4e}"),
        Err(e) => println!("floor unavailable: {e}"),
    }
    match &outcome.fit {
        Ok(f) => println!("slope {:.4}  logC {:.4}  r2 {:.5}", f.fitted_slope, f.fitted_log_c, f.r_squared),
        Err(e) => println!("fit refused: {e}"),
    }
    for p in outcome.points.iter().filter(|p| p.result.is_err()) {
        if let Err(e) = &p.result {
            eprintln!("point alpha={:e} beta={:e} failed: {e}", p.alpha, p.beta);
        }
    }
    println!("wrote {}", out.display());
    if outcome.failed_points() > 0 {
        ExitCode::from(EXIT_NUMERICAL)
    } else {
        ExitCode::SUCCESS
    }
}

fn verify(config: Option<&Path>, suites: Vec<String>, out: Option<PathBuf>) -> ExitCode {
    let cfg = match load(config, Command::Verify) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let opts = VerifyOptions {
        suites: (!suites.is_empty()).then_some(suites),
        ..VerifyOptions::default()
    };
    let results = match run_verify(&cfg, &opts) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let mut table = String::from("suite,status,metrics\n");
    for r in &results {
        let metrics: Vec<String> = r.metrics.iter().map(|(k, v)| format!("{k}={v:.4e}")).collect();
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{:<14} {status}  {}", r.name, metrics.join(" "));
        if !r.passed {
            println!("{:<14}       {}", "", r.detail);
        }
        table.push_str(&format!("{},{status},{}\n", r.name, metrics.join(" ")));
    }
    if let Some(dir) = out {
        let written = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join("verify.csv"), table));
        if let Err(e) = written {
            return fail(&Error::Io(e));
        }
    }
    if results.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VERIFY)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Cmd::Run { config, out } => run(&config, out),
        Cmd::Study { config, out, jobs } => study(&config, out, jobs),
        Cmd::Verify { config, suite, out } => verify(config.as_deref(), suite, out),
    }
}
