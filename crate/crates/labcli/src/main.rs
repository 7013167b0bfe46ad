//! `mvlab`: run smoothed particle studies from a TOML scenario, or rebuild
//! the diagnostic tables from previously exported raw paths.
//!
//! Exit codes: 0 all cells succeeded, 1 config or I/O error, 2 every cell
//! failed, 3 some cells failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvlab_cli::config::ScenarioConfig;
use mvlab_cli::emit::{emit_outputs, load_raw_flows};
use mvlab_cli::study::{rebuild_from_flows, run_two_step_study, StudyReport};

#[derive(Parser)]
#[command(name = "mvlab", version, about = "Smoothed particle-system study driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the whole (n, delta) grid and write tables, plots, and raw paths.
    Run {
        /// Scenario TOML file.
        config: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread count (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file and print its cell grid without simulating.
    Validate {
        /// Scenario TOML file.
        config: PathBuf,
    },
    /// Recompute all tables from the raw path CSVs of an earlier run.
    Report {
        /// Scenario TOML file (must match the original run).
        config: PathBuf,
        /// Worker thread count (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Directory holding the raw CSVs; tables are rewritten there.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, seed, jobs, out } => cmd_run(&config, seed, jobs, out),
        Command::Validate { config } => cmd_validate(&config),
        Command::Report { config, jobs, out } => cmd_report(&config, jobs, out),
    };
    ExitCode::from(code)
}

fn load_config(path: &PathBuf) -> Result<ScenarioConfig, u8> {
    ScenarioConfig::from_path(path).map_err(|err| {
        eprintln!("mvlab: {err}");
        1
    })
}

fn set_jobs(jobs: Option<usize>) -> Result<(), u8> {
    let Some(threads) = jobs else { return Ok(()) };
    if threads == 0 {
        eprintln!("mvlab: --jobs must be at least 1");
        return Err(1);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|err| {
            eprintln!("mvlab: could not size the worker pool: {err}");
            1
        })
}

fn out_dir(cfg: &ScenarioConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(&cfg.output.directory))
}

fn finish(report: &StudyReport, files: &[String], dir: &PathBuf) -> u8 {
    let ok = report.succeeded_cells();
    let failed = report.failed_cells();
    println!(
        "{}: {} of {} cells ok, {} file(s) in {}",
        report.scenario,
        ok,
        ok + failed,
        files.len(),
        dir.display()
    );
    for failure in &report.failures {
        println!(
            "  failed n={} k={} [{}]: {}",
            failure.n, failure.k, failure.stage, failure.message
        );
    }
    if ok == 0 {
        2
    } else if failed > 0 || !report.failures.is_empty() {
        3
    } else {
        0
    }
}

fn cmd_run(config: &PathBuf, seed: Option<u64>, jobs: Option<usize>, out: Option<PathBuf>) -> u8 {
    let mut cfg = match load_config(config) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Err(code) = set_jobs(jobs) {
        return code;
    }
    let dir = out_dir(&cfg, out);
    let report = run_two_step_study(&cfg);
    match emit_outputs(&report, &dir, true) {
        Ok(files) => finish(&report, &files, &dir),
        Err(err) => {
            eprintln!("mvlab: {err}");
            1
        }
    }
}

fn cmd_validate(config: &PathBuf) -> u8 {
    match load_config(config) {
        Ok(cfg) => {
            println!(
                "{}: valid, {} x {} cells, {} replication(s), hash {}",
                cfg.name,
                cfg.n_ladder.len(),
                cfg.delta_ladder.len(),
                cfg.replications,
                cfg.content_hash()
            );
            0
        }
        Err(code) => code,
    }
}

fn cmd_report(config: &PathBuf, jobs: Option<usize>, out: Option<PathBuf>) -> u8 {
    let cfg = match load_config(config) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };
    if let Err(code) = set_jobs(jobs) {
        return code;
    }
    let dir = out_dir(&cfg, out);
    let loaded = load_raw_flows(&cfg.name, &cfg.n_ladder, cfg.delta_ladder.len(), &dir);
    for (path, flows) in &loaded {
        if flows.is_none() {
            eprintln!("mvlab: missing or unreadable raw file {}", path.display());
        }
    }
    let stored = loaded.into_iter().map(|(_, flows)| flows).collect();
    let report = rebuild_from_flows(&cfg, stored);
    match emit_outputs(&report, &dir, false) {
        Ok(files) => finish(&report, &files, &dir),
        Err(err) => {
            eprintln!("mvlab: {err}");
            1
        }
    }
}
