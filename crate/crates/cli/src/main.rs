//! `adsm` — generate synthetic benchmarks, train the noise-conditioned score
//! transformer, score and evaluate videos, and render the analytic
//! demonstrators. Every command writes a manifest; `--manifest <path>`
//! replays one and verifies that inputs and outputs still checksum-match.

mod commands;
mod config;
mod manifest;
mod svg;

use adsm_core::{Error, Result};
use clap::{Parser, Subcommand};
use manifest::ReplayManifest;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "adsm", version, about = "Score-based video anomaly detection workbench")]
struct Cli {
    /// Replay a recorded run and verify its checksums.
    #[arg(long, global = true, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Cap the worker-thread count (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the synthetic multi-scene video benchmark.
    Generate(commands::GenerateArgs),
    /// Train a score model on an anomaly-free split.
    Train(commands::TrainArgs),
    /// Run the denoising ladder over a test split.
    Score(commands::ScoreArgs),
    /// Compute micro/macro ROC-AUC from scores and labels.
    Eval(commands::EvalArgs),
    /// Dump the analytic mixture score field and its heat-map.
    DemoModes(commands::DemoModesArgs),
    /// Render per-video indicator curves with ground-truth shading.
    Plot(commands::PlotArgs),
}

/// 0 success, 1 usage, 2 data/format, 3 numeric.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Contract(_) => 1,
        Error::Numeric { .. } => 3,
        _ => 2,
    }
}

fn replay(path: &PathBuf) -> Result<()> {
    let m = ReplayManifest::read(path)?;
    m.verify_checksums("input")?;
    match m.get("command")? {
        "generate" => commands::replay_generate(&m)?,
        "train" => commands::replay_train(&m)?,
        "score" => commands::replay_score(&m)?,
        "eval" => commands::replay_eval(&m)?,
        "plot" => commands::replay_plot(&m)?,
        "demo-modes" => commands::replay_demo_modes(&m)?,
        other => {
            return Err(Error::Data(format!(
                "{}: unknown command `{other}`",
                path.display()
            )))
        }
    }
    m.verify_checksums("output")?;
    println!("replay ok: outputs match the recorded checksums");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match (cli.manifest, cli.command) {
        (Some(m), None) => replay(&m),
        (None, Some(cmd)) => match cmd {
            Cmd::Generate(a) => commands::cmd_generate(&a),
            Cmd::Train(a) => commands::cmd_train(&a),
            Cmd::Score(a) => commands::cmd_score(&a),
            Cmd::Eval(a) => commands::cmd_eval(&a),
            Cmd::DemoModes(a) => commands::cmd_demo_modes(&a),
            Cmd::Plot(a) => commands::cmd_plot(&a),
        },
        (Some(_), Some(_)) => Err(Error::Contract(
            "--manifest replays a recorded run; do not also name a command".into(),
        )),
        (None, None) => Err(Error::Contract(
            "missing command; see `adsm --help`".into(),
        )),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            std::process::exit(1);
        }
        // ignore the error if a pool already exists (tests call in-process)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
