use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scd_core::cli::{self, RunOptions};
use scd_core::Error;

#[derive(Parser)]
#[command(
    name = "scd",
    version,
    about = "Personalized federated learning with spectral co-distillation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (flat TOML). `-` reads standard input.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides SPFL_OUT_DIR and the config's out_dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Replaces the data, init and sampling seeds with K, K+1, K+2.
    #[arg(long, value_name = "K")]
    seed_override: Option<u64>,
    /// Worker threads for client updates. Outputs do not depend on it.
    #[arg(long, value_name = "K")]
    threads: Option<usize>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            out_dir: self.out.clone(),
            seed_override: self.seed_override,
            threads: self.threads,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write rounds.csv, summary.json and generic.ckpt.
    Run(Common),
    /// Train once per value of one parameter and write sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// lambda_p, lambda_g, tau, alpha, strategy or ablation.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Print the spectrum of a checkpoint as index,magnitude CSV.
    InspectSpectrum {
        checkpoint: PathBuf,
        /// Keep only the first ceil(tau * d) entries.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Print per-client label histograms of the configured split.
    Partition(Common),
}

fn load(common: &Common) -> scd_core::Result<scd_core::config::ExperimentConfig> {
    let mut cfg = cli::parse_config(&common.config)?;
    cli::apply_seed_override(&mut cfg, common.seed_override);
    Ok(cfg)
}

fn run(command: Command) -> scd_core::Result<()> {
    match command {
        Command::Run(common) => {
            let cfg = load(&common)?;
            let opts = common.options();
            let out = cli::resolve_out_dir(&cfg, opts.out_dir.as_deref());
            let s = cli::cmd_run(&cfg, &out, opts.threads)?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{}: final gm_acc {:.4}, pm_acc {:.4}; wrote {}",
                s.strategy,
                s.final_gm_acc,
                s.final_pm_acc,
                out.display()
            );
            if let Some(sp) = s.speedup.and_then(|r| r.speedup) {
                println!("wait-free speedup to target: {sp:.3}x");
            }
        }
        Command::Sweep {
            common,
            param,
            values,
        } => {
            let cfg = load(&common)?;
            let out = cli::resolve_out_dir(&cfg, common.out.as_deref());
            let rows = cli::cmd_sweep(&cfg, &param, &values, &out, common.threads)?;
            for (v, s) in values.iter().zip(&rows) {
                println!(
                    "{param}={v}: gm_acc {:.4}, pm_acc {:.4}",
                    s.final_gm_acc, s.final_pm_acc
                );
            }
            println!("wrote {}", out.join("sweep.csv").display());
        }
        Command::InspectSpectrum { checkpoint, tau } => {
            cli::cmd_inspect_spectrum(&checkpoint, tau, std::io::stdout().lock())?;
        }
        Command::Partition(common) => {
            let cfg = load(&common)?;
            let tv = cli::cmd_partition(&cfg, std::io::stdout().lock())?;
            eprintln!("mean client-to-global TV distance: {tv:.4}");
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::ConfigParse(_) | Error::InvalidArgument(_) => 2,
        Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
