use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use qtrack::experiment::{self, ReplayStatus, SweepGrid};
use qtrack::scenario::ScenarioConfig;
use qtrack::sim::Verdict;

#[derive(Parser)]
#[command(name = "qtrack", version, about = "Quantized leader-follower tracking under DoS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for artifacts.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Skip the SVG plot.
    #[arg(long)]
    no_plots: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its artifacts.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a parameter grid and write sweep.csv.
    Sweep {
        config: PathBuf,
        grid: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Re-simulate a run directory and compare it bit for bit.
    Replay { dir: PathBuf },
    /// Print the design report only.
    Certify {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// `println!` that ignores a closed stdout.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const EXIT_ERROR: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_OVERFLOW: u8 = 3;
const EXIT_MISMATCH: u8 = 4;

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Converged => 0,
        Verdict::Diverged => EXIT_DIVERGED,
        Verdict::Overflow => EXIT_OVERFLOW,
    }
}

fn run(config: &Path, common: &Common) -> Result<u8> {
    let sc = experiment::load_scenario(config, common.seed)?;
    let outcome = experiment::run(&sc)?;
    experiment::write_artifacts(&common.out_dir, &sc, &outcome, !common.no_plots)
        .with_context(|| format!("writing artifacts to {}", common.out_dir.display()))?;
    for w in &sc.warnings {
        eprintln!("warning: {w}");
    }
    let t = &outcome.trace;
    out!(
        "{}: {} (final error {:.3e}, initial {:.3e}, saturations {}, dos sum {:.4})",
        sc.config.name,
        t.verdict.as_str(),
        t.final_error,
        t.initial_error,
        t.saturation_count(),
        sc.dos.averaged_budget().sum
    );
    out!("artifacts in {}", common.out_dir.display());
    Ok(verdict_code(t.verdict))
}

fn sweep(config: &Path, grid: &Path, common: &Common) -> Result<u8> {
    let mut cfg = ScenarioConfig::load(config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let text = std::fs::read_to_string(grid).with_context(|| format!("reading {}", grid.display()))?;
    let grid = SweepGrid::from_toml(&text)?;
    let rows = experiment::sweep(&cfg, &grid, config.parent());
    std::fs::create_dir_all(&common.out_dir)?;
    let path = common.out_dir.join("sweep.csv");
    std::fs::write(&path, experiment::sweep_csv(&rows))?;
    out!("{} cells written to {}", rows.len(), path.display());
    Ok(0)
}

fn replay(dir: &Path) -> Result<u8> {
    match experiment::replay(dir)? {
        ReplayStatus::Ok { case_residual } => {
            match case_residual {
                Some(r) => out!("ok (case check residual {r:.3e})"),
                None => out!("ok"),
            }
            Ok(0)
        }
        ReplayStatus::Mismatch { artifact, step } => {
            out!("mismatch in {artifact} at step {step}");
            Ok(EXIT_MISMATCH)
        }
    }
}

fn certify(config: &Path, seed: Option<u64>) -> Result<u8> {
    let sc = experiment::load_scenario(config, seed)?;
    out!("{}", sc.report.to_text().trim_end());
    for w in &sc.warnings {
        out!("warning: {w}");
    }
    Ok(if sc.report.certified() { 0 } else { EXIT_DIVERGED })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, common } => run(config, common),
        Command::Sweep { config, grid, common } => sweep(config, grid, common),
        Command::Replay { dir } => replay(dir),
        Command::Certify { config, seed } => certify(config, *seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
