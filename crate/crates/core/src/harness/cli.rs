use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::output::{write_atomic, write_run, write_summary};
use super::{compare, load_config, run_all, verify_theory, ExperimentConfig};
use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_BOUND_VIOLATED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cobo", version, about = "Collaborative learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured algorithms and write per-round metrics.
    Run(CommonArgs),
    /// Run every algorithm on one task instance and write a summary table.
    Compare(CommonArgs),
    /// Run CoBo with bound-compliant settings and check the convergence bounds.
    VerifyTheory(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Config file (JSON)
    #[arg(value_name = "CONFIG", conflicts_with = "config")]
    config_file: Option<PathBuf>,
    /// Config file (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed; overrides `train.seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Only print errors
    #[arg(long, short)]
    quiet: bool,
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let path = self
            .config_file
            .as_ref()
            .or(self.config.as_ref())
            .ok_or_else(|| Error::config("config", "no config file given"))?;
        let mut cfg = load_config(path)?;
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(out) = &self.output {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let (tasks, runs) = run_all(&cfg)?;
            for traj in &runs {
                let files = write_run(&cfg.output_dir, traj, &tasks.layout, cfg.emit_snapshots)?;
                if !args.quiet {
                    let last = traj.last();
                    println!(
                        "{}: final mean loss {:.6}{} -> {}",
                        traj.algorithm,
                        last.mean_loss(),
                        last.recovery_error
                            .map(|e| format!(", recovery error {e:.4}"))
                            .unwrap_or_default(),
                        files[0].display()
                    );
                }
            }
            Ok(EXIT_OK)
        }
        Command::Compare(args) => {
            let cfg = args.load()?;
            let rows = compare(&cfg)?;
            write_summary(&cfg.output_dir, &rows)?;
            if !args.quiet {
                println!("{:<16} {:>14} {:>9} {:>6} {:>9}", "algorithm", "final_loss", "accuracy", "imp", "recovery");
                for r in &rows {
                    println!(
                        "{:<16} {:>14.6} {:>9} {:>6.2} {:>9}",
                        r.algorithm,
                        r.final_loss,
                        r.final_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
                        r.improved_fraction,
                        r.recovery_error.map(|e| format!("{e:.4}")).unwrap_or_else(|| "-".into()),
                    );
                }
            }
            Ok(EXIT_OK)
        }
        Command::VerifyTheory(args) => {
            let cfg = args.load()?;
            let (report, _) = verify_theory(&cfg)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path: &Path = &cfg.output_dir.join("theory_report.json");
            write_atomic(path, &serde_json::to_vec_pretty(&report)?)?;
            if !args.quiet {
                for c in &report.conditions {
                    let tag = if c.satisfied { "ok" } else if c.gating { "FAIL" } else { "warn" };
                    println!("[{tag}] {}: {}", c.name, c.detail);
                }
                if let Some(m) = &report.measured_lhs {
                    println!(
                        "consensus {:.3e} <= {:.3e}; pair gradnorm {:.3e} <= {:.3e}; client gradnorm {:.3e} <= {:.3e}",
                        m.consensus_lhs,
                        report.consensus_bound_rhs,
                        m.gradnorm_lhs,
                        report.gradnorm_bound_rhs,
                        m.corollary_lhs,
                        report.corollary_rhs
                    );
                }
                let verdict = match (report.applicable, report.bounds_hold) {
                    (false, _) => "bounds not applicable (conditions not met)",
                    (true, Some(true)) => "bounds hold",
                    _ => "bounds VIOLATED",
                };
                println!("{verdict}; report -> {}", path.display());
            }
            Ok(if report.violated() { EXIT_BOUND_VIOLATED } else { EXIT_OK })
        }
    }
}
