use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use rdmd_harness::{execute, replay, Command, Kind, RunManifest, Spec};

/// Simulator and experiment harness for the SSEP + Glauber moderate-deviation toolkit.
#[derive(Parser)]
#[command(name = "rdmd", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate replicas of the (optionally tilted) dynamics and record probe series.
    Simulate(Common),
    /// Solve the linear macroscopic equation for the configured `initial` and `control`.
    Pde(Common),
    /// Evaluate the rate functional of a density path.
    Rate {
        #[command(flatten)]
        common: Common,
        /// Density path field file (JSON header); overrides the spec.
        #[arg(long)]
        path: Option<PathBuf>,
    },
    /// Run a named experiment.
    Experiment {
        kind: Kind,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run a manifest and check that every statistic is reproduced exactly.
    Replay { manifest: PathBuf },
}

#[derive(Args)]
struct Common {
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Output directory for the manifest and series.
    #[arg(long, default_value = "rdmd-out")]
    out: PathBuf,
}

impl Common {
    fn spec(&self, kind: Option<Kind>) -> Result<Spec> {
        let mut spec = match &self.config {
            Some(path) => Spec::load(path, kind)?,
            None => match kind {
                Some(k) => Spec::for_kind(k),
                None => Spec::default(),
            },
        };
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(r) = self.replicas {
            spec.replicas = r;
        }
        spec.validate()?;
        for f in spec.field_files() {
            rdmd_harness::io::read_field(&f)?;
        }
        Ok(spec)
    }
}

fn run(cli: Cli) -> Result<i32> {
    let (command, spec, out) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c.spec(None)?, c.out),
        Cmd::Pde(c) => (Command::Pde, c.spec(None)?, c.out),
        Cmd::Rate { common, path } => {
            let mut spec = common.spec(None)?;
            if path.is_some() {
                spec.path = path;
            }
            (Command::Rate, spec, common.out)
        }
        Cmd::Experiment { kind, common } => (Command::Experiment(kind), common.spec(Some(kind))?, common.out),
        Cmd::Replay { manifest } => {
            let m = RunManifest::load(&manifest)?;
            let same = replay(&m)?;
            println!("{}: {}", m.command, if same { "reproduced" } else { "NOT reproduced" });
            return Ok(if same { 0 } else { 2 });
        }
    };
    let manifest = execute(&command, &spec, Some(&out))?;
    let verdict = manifest.report.verdict;
    println!("{}: {verdict}", command.name());
    for w in &manifest.report.warnings {
        eprintln!("warning: {w}");
    }
    if !manifest.lambda_condition.admissible {
        eprintln!(
            "warning: advisory lambda condition C0·κ·A = {:.3} is not below 1",
            manifest.lambda_condition.value
        );
    }
    println!("{}", serde_json::to_string_pretty(&manifest.report.statistics)?);
    println!("manifest: {}", out.join("manifest.json").display());
    Ok(verdict.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
