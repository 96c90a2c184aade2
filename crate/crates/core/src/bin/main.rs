//! Command-line experiment runner: single runs, method comparisons,
//! parameter sweeps, and report aggregation over result directories.

use banel_lab::config::load_config;
use banel_lab::error::Error;
use banel_lab::harness::{
    compare, emit_plot_data, run_experiment, scaling_sweep, write_comparison_csv,
    write_sweep_csv, ExperimentSpec, Method, ALL_METHODS,
};
use banel_lab::tasks::{make_task, write_manifest};
use clap::{Parser, Subcommand};
use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_BUDGET: u8 = 3;

#[derive(Parser)]
#[command(name = "banel-lab", about = "Sparse-reward post-training laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more methods on a task under a shared oracle budget.
    Run {
        #[arg(long)]
        task: String,
        /// Method name, or "all" for every method.
        #[arg(long, default_value = "banel")]
        method: String,
        /// Optional flat `key = value` config file of overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        budget: u64,
        /// Comma-separated seed list.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// Output directory for CSVs and manifests.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one learner parameter across values at a fixed budget.
    Sweep {
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "epochs_phi")]
        param: String,
        /// Comma-separated integer values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        budget: u64,
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize every comparison CSV found under a directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Error> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed {t:?}")))
        })
        .collect()
}

fn parse_values(s: &str) -> Result<Vec<usize>, Error> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad value {t:?}")))
        })
        .collect()
}

fn load_overrides(path: &Option<PathBuf>) -> Result<HashMap<String, String>, Error> {
    match path {
        Some(p) => load_config(p),
        None => Ok(HashMap::new()),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn cmd_run(
    task: &str,
    method: &str,
    config: &Option<PathBuf>,
    budget: u64,
    seeds: &str,
    out: &Option<PathBuf>,
) -> Result<(), Error> {
    let seeds = parse_seeds(seeds)?;
    let overrides = load_overrides(config)?;
    let methods: Vec<Method> = if method == "all" {
        ALL_METHODS.to_vec()
    } else {
        vec![Method::parse(method)?]
    };

    let report = if methods.len() == 1 && seeds.len() == 1 {
        let mut spec = ExperimentSpec::new(task, methods[0], seeds[0], budget);
        spec.overrides = overrides.clone();
        let run = run_experiment(&spec)?;
        banel_lab::harness::ComparisonReport {
            task: task.to_string(),
            budget,
            runs: vec![run],
        }
    } else {
        compare(task, &methods, &seeds, budget, &overrides)?
    };

    for run in &report.runs {
        let prior = run
            .prior_success
            .as_ref()
            .map(|s| s.estimate)
            .unwrap_or(f64::NAN);
        println!(
            "{task} {} seed={} prior={prior:.3e} best={:.3e} spent={}/{} first_hit={}",
            run.method,
            run.seed,
            run.best_success_rate(),
            run.nre_spent,
            budget,
            run.first_success_nre
                .map(|n| n.to_string())
                .unwrap_or_else(|| "-".into()),
        );
    }

    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_comparison_csv(File::create(dir.join("rounds.csv"))?, &report.runs)?;
        emit_plot_data(File::create(dir.join("plot.csv"))?, &report.runs)?;
        let t = make_task(task, seeds[0])?;
        write_manifest(
            File::create(dir.join("manifest.txt"))?,
            t.as_ref(),
            seeds[0],
            &[("budget", budget.to_string())],
        )?;
    }
    Ok(())
}

fn cmd_sweep(
    task: &str,
    param: &str,
    values: &str,
    budget: u64,
    seeds: &str,
    config: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<(), Error> {
    let seeds = parse_seeds(seeds)?;
    let values = parse_values(values)?;
    let overrides = load_overrides(config)?;
    let points = scaling_sweep(task, param, &values, &seeds, budget, &overrides)?;
    for p in &points {
        println!(
            "{param}={} seed={} best={:.3e} improvement={}",
            p.value,
            p.seed,
            p.best_success_rate,
            p.improvement_factor
                .map(|x| format!("{x:.2}x"))
                .unwrap_or_else(|| "-".into()),
        );
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_sweep_csv(File::create(dir.join("sweep.csv"))?, param, &points)?;
    }
    Ok(())
}

fn cmd_report(dir: &Path) -> Result<(), Error> {
    let mut found = 0usize;
    for entry in walk(dir)? {
        if entry.file_name().and_then(|n| n.to_str()) != Some("rounds.csv") {
            continue;
        }
        found += 1;
        let text = std::fs::read_to_string(&entry)?;
        // method -> (final cum_best, last nre)
        let mut summary: HashMap<String, (f64, u64)> = HashMap::new();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < 9 {
                continue;
            }
            let key = format!("{} seed {}", cols[0], cols[1]);
            let nre: u64 = cols[3].parse().unwrap_or(0);
            let best: f64 = cols[7].parse().unwrap_or(f64::NAN);
            summary.insert(key, (best, nre));
        }
        println!("{}:", entry.display());
        let mut keys: Vec<&String> = summary.keys().collect();
        keys.sort();
        for k in keys {
            let (best, nre) = summary[k];
            println!("  {k}: best={best:.3e} nre={nre}");
        }
    }
    if found == 0 {
        return Err(Error::Config(format!(
            "no rounds.csv found under {}",
            dir.display()
        )));
    }
    Ok(())
}

fn walk(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            task,
            method,
            config,
            budget,
            seeds,
            out,
        } => cmd_run(task, method, config, *budget, seeds, out),
        Command::Sweep {
            task,
            param,
            values,
            budget,
            seeds,
            config,
            out,
        } => cmd_sweep(task, param, values, *budget, seeds, config, out),
        Command::Report { dir } => cmd_report(dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e @ (Error::Budget { .. } | Error::BudgetDuringEstimate { .. })) => {
            eprintln!("budget violation: {e}");
            ExitCode::from(EXIT_BUDGET)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
