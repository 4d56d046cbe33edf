use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use egb::metrics;
use egb::runner::{execute, RunConfig};
use egb::synthgen::{corpus_violations, generate, GenConfig};

#[derive(Parser)]
#[command(name = "egb", version, about = "Plan-guided tool-use benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (or a sweep) from a config file into a directory.
    Run {
        /// JSON run config; see RunConfig for the schema.
        #[arg(long)]
        config: PathBuf,
        /// Output run directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Override the config's worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Skip (case, seed) pairs that already have rows.
        #[arg(long)]
        resume: bool,
    },
    /// Generate a case corpus and its oracle behavior sidecar.
    Generate {
        /// JSON generator config; see GenConfig for the schema.
        #[arg(long)]
        config: PathBuf,
        /// Directory receiving cases.json and oracle_spec.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit a case file; exits nonzero if any violation is found.
    Validate {
        /// JSON file holding a list of cases.
        #[arg(long)]
        cases: PathBuf,
    },
    /// Recompute report.json and the CSV tables from a run directory's rows.
    Aggregate {
        /// Run directory containing rows*.jsonl files.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { config, out, workers, resume } => {
            let mut run_config = RunConfig::load(&config)?;
            if let Some(workers) = workers {
                run_config.workers = workers;
            }
            let report = execute(&run_config, &out, resume)?;
            for g in &report.groups {
                println!(
                    "{} [{}]: success {:.3} ± {:.3} over {} rows ({} cases × {} seeds), \
                     {:.2} branches/case",
                    g.strategy.name(),
                    format!("{:?}", g.mode).to_lowercase(),
                    g.success.mean,
                    g.success.stdev,
                    g.rows,
                    g.cases,
                    g.seeds,
                    g.mean_branches,
                );
            }
            println!("artifacts in {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate { config, out } => {
            let body = std::fs::read_to_string(&config)?;
            let gen_config: GenConfig = serde_json::from_str(&body)?;
            let (cases, spec) = generate(&gen_config)?;
            let violations = corpus_violations(&cases);
            anyhow::ensure!(
                violations.is_empty(),
                "generated corpus failed its own audit: {violations:?}"
            );
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("cases.json"), serde_json::to_string_pretty(&cases)?)?;
            std::fs::write(out.join("oracle_spec.json"), serde_json::to_string_pretty(&spec)?)?;
            println!("wrote {} cases to {}", cases.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { cases } => {
            let body = std::fs::read_to_string(&cases)?;
            let cases: Vec<egb::dataset::Case> = serde_json::from_str(&body)?;
            let violations = corpus_violations(&cases);
            if violations.is_empty() {
                println!("{} cases, no violations", cases.len());
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &violations {
                    println!("{}: {} ({})", v.case_id, v.message, v.path);
                }
                println!("{} violations in {} cases", violations.len(), cases.len());
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Aggregate { dir } => {
            let report = metrics::aggregate(&dir)?;
            println!(
                "aggregated {} groups, {} rows",
                report.groups.len(),
                report.groups.iter().map(|g| g.rows).sum::<usize>()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
