//! `risres`: runs the adaptation and scaling experiments and checks their manifests.
//!
//! Exit codes: 0 success, 1 runtime or verification failure, 2 configuration
//! error, 3 numerical failure in more than half of the runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ris_resilience::experiment::{
    parse_seeds, replay_manifest, run_experiment, verify_manifest, ExperimentKind, ExperimentOutput, ExperimentSpec,
};
use ris_resilience::sca::Method;
use ris_resilience::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "risres", version, about = "Resilience experiments for RIS-aided cell-free MIMO downlinks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Consecutive strongest-first blockages: rates over time and per-event resilience.
    Adapt(RunArgs),
    /// Resilience after a fixed blockage across RIS sizes.
    Scale(RunArgs),
    /// Check every file listed in a manifest against its checksum.
    Verify { manifest: PathBuf },
    /// Re-run a manifest's experiment into a new directory and compare bytes.
    Replay {
        manifest: PathBuf,
        #[arg(long, env = "RISRES_OUT")]
        out: PathBuf,
    },
    /// Print the default experiment configuration as TOML.
    DefaultConfig,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec, TOML (or JSON with a .json extension). Defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds: `N` for 0..N, `a..b`, or `a,b,c`. Overrides the config.
    #[arg(long, env = "RISRES_SEEDS")]
    seeds: Option<String>,
    /// Output directory.
    #[arg(long, env = "RISRES_OUT", default_value = "out")]
    out: PathBuf,
    /// Restrict to these methods (repeatable or comma separated). Overrides the config.
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Weights(_) | Error::Toml(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_spec(args: &RunArgs) -> Result<ExperimentSpec, Failure> {
    let mut spec = match &args.config {
        Some(path) => ExperimentSpec::load(path)
            .map_err(|e| Failure::Config(format!("cannot load config {}: {e}", path.display())))?,
        None => ExperimentSpec::default(),
    };
    if let Some(seeds) = &args.seeds {
        spec.seeds = parse_seeds(seeds)?;
    }
    if !args.method.is_empty() {
        spec.methods = args
            .method
            .iter()
            .map(|m| {
                Method::parse(m.trim()).ok_or_else(|| {
                    Failure::Config(format!("unknown method {m:?}; expected proposed, baseline or robustness-only"))
                })
            })
            .collect::<Result<_, _>>()?;
    }
    spec.validate()?;
    Ok(spec)
}

fn report(output: &ExperimentOutput, out_dir: &Path) {
    println!("wrote {} files to {}", output.files.len() + 1, out_dir.display());
    println!("manifest: {}", output.manifest_path.display());
    println!("runs: {}, numerically failed: {}", output.runs.len(), output.failed_runs());
}

fn run(kind: ExperimentKind, args: &RunArgs) -> Result<ExitCode, Failure> {
    let spec = load_spec(args)?;
    let output = run_experiment(kind, &spec, &args.out)?;
    report(&output, &args.out);
    if output.mostly_failed() {
        eprintln!("error: numerical failure in more than half of the runs");
        return Ok(ExitCode::from(EXIT_NUMERICAL));
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Adapt(args) => run(ExperimentKind::Adapt, &args),
        Command::Scale(args) => run(ExperimentKind::Scale, &args),
        Command::Verify { manifest } => {
            let m = verify_manifest(&manifest)?;
            println!("ok: {} files match {}", m.files.len(), manifest.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { manifest, out } => {
            let rep = replay_manifest(&manifest, &out)?;
            if rep.identical() {
                println!("identical: replay in {} matches {}", out.display(), manifest.display());
                return Ok(ExitCode::SUCCESS);
            }
            for m in &rep.mismatches {
                eprintln!("mismatch: {m}");
            }
            if !rep.manifest_identical {
                eprintln!("mismatch: manifest differs");
            }
            Ok(ExitCode::from(EXIT_FAILURE))
        }
        Command::DefaultConfig => {
            let text = toml::to_string(&ExperimentSpec::default()).map_err(|e| Failure::Runtime(e.to_string()))?;
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
