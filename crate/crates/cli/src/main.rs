use std::path::PathBuf;
use std::process::ExitCode;

use cfran::harness::{companion_path, run_monte_carlo, write_links, write_meta, write_results, RunOptions};
use cfran::orchestrator::SchemeId;
use cfran::scenario::ExperimentConfig;
use clap::Parser;

/// Monte Carlo comparison of association and power-control schemes for
/// UAVs served by a cell-free massive MIMO uplink.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// TOML experiment configuration; unspecified keys keep their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long, value_name = "U64")]
    seed: Option<u64>,

    #[arg(long, value_name = "N")]
    trials: Option<usize>,

    /// UAV counts to sweep, e.g. "5,10,20".
    #[arg(long, value_name = "LIST")]
    uavs: Option<String>,

    /// Schemes to run, e.g. "BA+FP,PA+PP" (default: all six).
    #[arg(long, value_name = "LIST")]
    schemes: Option<String>,

    /// Records CSV; the summary and metadata files are written next to it.
    #[arg(long, value_name = "PATH", default_value = "results.csv")]
    out: PathBuf,

    /// 25 O-RUs with 2 antennas, 5 pilots, 50 trials, K in {5, 10, 20}.
    #[arg(long)]
    desk_scale: bool,

    /// Also write per-link draws to a .links.csv file next to the records.
    #[arg(long)]
    dump_links: bool,

    /// Worker threads (0 = all cores).
    #[arg(long, value_name = "N", default_value_t = 0)]
    threads: usize,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    text.split([',', ' '])
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|_| format!("bad {what} '{s}'")))
        .collect()
}

fn run(cli: Cli) -> Result<String, String> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    if cli.desk_scale {
        config = config.with_desk_scale();
    }
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(trials) = cli.trials {
        config.trials = trials;
    }
    let mut options = RunOptions::new(&config);
    if cli.desk_scale {
        options.uavs = ExperimentConfig::DESK_UAVS.to_vec();
    }
    if let Some(list) = &cli.uavs {
        options.uavs = parse_list(list, "UAV count")?;
    }
    if let Some(list) = &cli.schemes {
        options.schemes = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.parse::<SchemeId>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
    }
    options.threads = cli.threads;
    options.keep_links = cli.dump_links;

    let report = run_monte_carlo(&config, &options).map_err(|e| e.to_string())?;
    write_results(&report.records, &cli.out).map_err(|e| e.to_string())?;
    write_meta(&report, &config, &options, &companion_path(&cli.out, "meta.json")).map_err(|e| e.to_string())?;
    if cli.dump_links {
        write_links(&report.links, &companion_path(&cli.out, "links.csv")).map_err(|e| e.to_string())?;
    }
    Ok(format!(
        "wrote {} records to {} ({} failures)",
        report.records.len(),
        cli.out.display(),
        report.failures.len()
    ))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
