use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cmdf_cli::infer::{infer_example_topology, write_candidates_csv, EXAMPLE1_TOL};
use cmdf_cli::{run_scenario, CliError, RunOptions, Scenario};

#[derive(Parser)]
#[command(
    name = "cmdf",
    version,
    about = "Consensus-on-measurement filtering experiments under mismatched noise covariances"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every analysis listed in a scenario file.
    Run {
        scenario: PathBuf,
        /// Output directory; defaults to the scenario's output_dir, then out/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the Monte-Carlo seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Rank the candidate 3-sensor networks against the reference example values.
    InferTopology {
        /// Also write the ranked candidates to DIR/infer_topology.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            scenario,
            out,
            seed,
            threads,
        } => {
            if let Some(t) = threads {
                rayon::ThreadPoolBuilder::new().num_threads(t).build_global().ok();
            }
            let summary = run_scenario(&scenario, &RunOptions { out, seed })?;
            for f in &summary.manifest.outputs {
                println!("{}", summary.out_dir.join(&f.file).display());
            }
            println!("{}", summary.out_dir.join("manifest.json").display());
            if summary.manifest.monte_carlo_pass == Some(false) {
                eprintln!("warning: Monte-Carlo check outside tolerance");
            }
            Ok(())
        }
        Command::InferTopology { out } => {
            let cands = infer_example_topology()?;
            println!(
                "{:<5} {:<12} {:<13} {:>14}  consensus",
                "rank", "graph", "convention", "max_deviation"
            );
            for (r, c) in cands.iter().enumerate() {
                println!(
                    "{:<5} {:<12} {:<13} {:>14.3e}  {}",
                    r + 1,
                    c.label,
                    format!("{:?}", c.convention),
                    c.max_deviation,
                    if c.valid_consensus { "valid" } else { "zero diagonal" }
                );
            }
            let best = &cands[0];
            println!(
                "best: {} ({:?}), deviation {:.3e} ({})",
                best.label,
                best.convention,
                best.max_deviation,
                if best.max_deviation < EXAMPLE1_TOL { "match" } else { "no match" }
            );
            if let Some(dir) = out {
                let p = dir.join("infer_topology.csv");
                let io = |source| CliError::Io {
                    path: p.display().to_string(),
                    source,
                };
                std::fs::create_dir_all(&dir).map_err(io)?;
                let file = std::fs::File::create(&p).map_err(io)?;
                write_candidates_csv(&cands, file).map_err(|e| CliError::Io {
                    path: p.display().to_string(),
                    source: e.into(),
                })?;
            }
            Ok(())
        }
        Command::Validate { scenario } => {
            let (s, _) = Scenario::load(&scenario)?;
            println!(
                "{}: ok ({} sensors, state dimension {}, analyses {:?})",
                scenario.display(),
                s.model.n_sensors(),
                s.model.n(),
                s.file.sweep.analyses
            );
            Ok(())
        }
    }
}
