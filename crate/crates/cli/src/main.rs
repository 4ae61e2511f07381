use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ris_outmin::SchemeId;
use ris_outmin_cli::{run, RunConfig, RunPlan, SweepArg};

#[derive(Parser)]
#[command(name = "ris-outmin", version = ris_outmin_cli::VERSION, about = "Outage-minimizing RIS beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, evaluate and write trace.csv, report.json and sweep.csv.
    Run(RunArgs),
    /// Print the default config.
    Config,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<SchemeId>,
    /// Comma-separated schemes to compare.
    #[arg(long, value_delimiter = ',')]
    schemes: Vec<SchemeId>,
    /// AXIS=lo:hi:steps with AXIS one of p_block, M, N, K.
    #[arg(long)]
    sweep: Option<SweepArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = args.scheme {
        config.scheme = s;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.to_string_lossy().into_owned();
    }
    if let Some(n) = args.mc {
        anyhow::ensure!(n > 0, "--mc must be positive");
        config.mc_samples = n;
    }
    if let Some(n) = args.max_iter {
        anyhow::ensure!(n > 0, "--max-iter must be positive");
        config.max_iter = n;
    }
    Ok(config)
}

fn threads() -> Result<()> {
    if let Ok(v) = std::env::var("RIS_OUTMIN_THREADS") {
        let n: usize = v.parse().with_context(|| format!("RIS_OUTMIN_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Config => {
            print!("{}", RunConfig::default().render());
            Ok(())
        }
        Command::Run(args) => threads().and_then(|_| load(&args)).and_then(|config| {
            let plan = RunPlan {
                sweep: args.sweep.clone(),
                schemes: args.schemes.clone(),
            };
            let out = run(&config, &plan)?;
            for c in &out.cells {
                let at = c.axis_value.map(|v| format!(" at {v}")).unwrap_or_default();
                println!(
                    "{}{at}: max outage {:.4} (± {:.4}), min effective rate {:.4}",
                    c.scheme, c.report.max_outage, c.report.std_err, c.report.min_eff_rate
                );
            }
            println!("wrote {}", out.dir.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
