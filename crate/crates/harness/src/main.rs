use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stable_cir_harness::check::CheckOptions;
use stable_cir_harness::commands;
use stable_cir_harness::config::{parse_list, ExperimentConfig, Mode};
use stable_cir_harness::HarnessError;

#[derive(Parser)]
#[command(
    name = "stable-cir",
    version,
    about = "Stable CIR simulation and estimation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate paths and write path_<seed>_<n>.csv files.
    Simulate(Common),
    /// Estimate every path_*.csv found in the output directory.
    Estimate(Common),
    /// Monte Carlo replications with per-replication CSV and summary.csv.
    Mc(Common),
    /// Increment-moment and inverse-moment diagnostics.
    Diagnose(Common),
    /// Invariant check suite; writes check.json.
    Check(Common),
    /// Dump x,phi,h,k,f for one stability index.
    DensityTable {
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 0.25)]
        step: f64,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Line-based key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated observation counts.
    #[arg(long)]
    n: Option<String>,
}

impl Common {
    fn load(&self, mode: Mode) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = cfg.mode {
            if m != mode {
                return Err(HarnessError::Config(format!(
                    "config file sets mode={m} but the command is {mode}"
                )));
            }
        }
        cfg.mode = Some(mode);
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(r) = self.reps {
            cfg.reps = r;
        }
        if let Some(n) = &self.n {
            cfg.n_grid = parse_list("n", n)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn configure_threads() -> Result<(), HarnessError> {
    let Ok(value) = std::env::var("STABLE_CIR_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.parse().ok().filter(|&t| t > 0).ok_or_else(|| {
        HarnessError::Config(format!(
            "STABLE_CIR_THREADS='{value}' is not a positive integer"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| HarnessError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(c) => {
            let files = commands::cmd_simulate(&c.load(Mode::Simulate)?)?;
            eprintln!("wrote {} path files", files.len());
        }
        Command::Estimate(c) => {
            let (ok, failed) = commands::cmd_estimate(&c.load(Mode::Estimate)?)?;
            eprintln!("estimated {} paths, {} failed", ok.len(), failed.len());
        }
        Command::Mc(c) => {
            let out = commands::cmd_mc(&c.load(Mode::Mc)?)?;
            eprintln!(
                "{} replications, {} failed",
                out.records.len(),
                out.failures.len()
            );
        }
        Command::Diagnose(c) => {
            let rep = commands::cmd_diagnose(&c.load(Mode::Diagnose)?)?;
            for s in &rep.slopes {
                eprintln!(
                    "p={} exponent {:.4} target {:.4}",
                    s.p, s.exponent, s.target
                );
            }
        }
        Command::Check(c) => {
            let rep = commands::cmd_check(&c.load(Mode::Check)?, &CheckOptions::default())?;
            eprintln!("{} checks passed", rep.checks.len());
        }
        Command::DensityTable {
            alpha,
            from,
            to,
            step,
            out,
        } => match out {
            Some(p) => {
                let mut f = std::fs::File::create(&p).map_err(|e| HarnessError::io(&p, e))?;
                commands::density_table(alpha, from, to, step, &mut f)?;
            }
            None => commands::density_table(alpha, from, to, step, &mut std::io::stdout().lock())?,
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
