//! `ddoco`: generate data, run closed-loop experiments, sweep grids of runs
//! and check the closed-loop invariants.
//!
//! Results go to `--out` (default `out/`); a one-line JSON summary goes to
//! stdout. Failures print one JSON line `{"error": {...}}` to stderr and exit
//! with status 1 (run failure) or 2 (bad usage or configuration).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddoco::harness::{
    check_invariants, prepare, run_experiment, write_trajectory_csv, ExperimentConfig, NoiseCase, RunSummary,
};
use rayon::prelude::*;
use serde_json::{json, Value};

const DEFAULT_HORIZON: usize = 300;
const DEFAULT_SWEEP_SEEDS: u64 = 10;

#[derive(Parser)]
#[command(name = "ddoco", version, about = "Data-driven online convex optimization control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML experiment configuration; the reference setup when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// 1: noiseless, 2: noisy data, 3: noisy data and measurements.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    noise_case: Option<u8>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Record the offline data trajectory as CSV.
    GenerateData(Common),
    /// One closed-loop experiment: per-step CSV plus a JSON summary.
    Run(Common),
    /// Grid of experiments over seeds, horizons and noise cases.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds; ten consecutive seeds from --seed when absent.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Comma-separated horizons; --horizon when absent.
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
        /// Comma-separated noise cases; --noise-case, else all three, when absent.
        #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=3))]
        noise_cases: Vec<u8>,
    },
    /// Run one experiment and evaluate the closed-loop invariants.
    Check(Common),
}

struct Failure {
    kind: String,
    message: String,
    step: Option<usize>,
    partial: Option<PathBuf>,
    code: u8,
}

impl Failure {
    fn usage(kind: &str, message: impl Into<String>) -> Self {
        Failure {
            kind: kind.into(),
            message: message.into(),
            step: None,
            partial: None,
            code: 2,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure {
            kind: "io".into(),
            message: format!("{}: {e}", path.display()),
            step: None,
            partial: None,
            code: 1,
        }
    }

    fn to_json(&self) -> Value {
        let mut body = json!({ "kind": self.kind, "message": self.message });
        if let Some(step) = self.step {
            body["step"] = json!(step);
        }
        if let Some(p) = &self.partial {
            body["partial"] = json!(p.display().to_string());
        }
        json!({ "error": body })
    }
}

impl From<ddoco::Error> for Failure {
    fn from(e: ddoco::Error) -> Self {
        let step = match &e {
            ddoco::Error::Step { step, .. } => Some(*step),
            _ => None,
        };
        let code = if matches!(e, ddoco::Error::Config(_)) { 2 } else { 1 };
        Failure {
            kind: e.kind().into(),
            message: e.to_string(),
            step,
            partial: None,
            code,
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure {
                code: 2,
                ..Failure::io(path, e)
            })?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::reference(0, DEFAULT_HORIZON),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(h) = common.horizon {
        cfg.horizon = h;
    }
    if let Some(case) = common.noise_case {
        cfg.noise = NoiseCase::from_case_number(case)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

fn generate(common: &Common) -> CliResult<Value> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg)?;
    let (_, data, _, ctrl) = prepare(&cfg)?;
    let path = dir.join("data.csv");
    let mut buf = Vec::new();
    write_trajectory_csv(&data, &mut buf).map_err(|e| Failure::io(&path, e))?;
    write_file(&path, &buf)?;
    Ok(json!({
        "command": "generate-data",
        "seed": cfg.seed,
        "noise_case": cfg.noise.case_number(),
        "samples": data.len(),
        "pe_order": ctrl.pe_order(),
        "data": path.display().to_string(),
    }))
}

fn run(common: &Common) -> CliResult<Value> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg)?;
    let config_path = dir.join("config.toml");
    write_file(&config_path, cfg.to_toml()?.as_bytes())?;
    let exp = match run_experiment(&cfg) {
        Ok(exp) => exp,
        Err(failure) => {
            let mut err = Failure::from(failure.error);
            if let Some(partial) = failure.partial {
                let path = dir.join("run.partial.csv");
                let mut buf = Vec::new();
                partial.write_csv(&mut buf).map_err(|e| Failure::io(&path, e))?;
                write_file(&path, &buf)?;
                err.partial = Some(path);
            }
            return Err(err);
        }
    };
    let record_path = dir.join("run.csv");
    let mut buf = Vec::new();
    exp.record.write_csv(&mut buf).map_err(|e| Failure::io(&record_path, e))?;
    write_file(&record_path, &buf)?;
    let summary = exp.summary(&cfg);
    let summary_path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&summary_path, text.as_bytes())?;
    Ok(json!({
        "command": "run",
        "summary": summary,
        "record": record_path.display().to_string(),
        "config": config_path.display().to_string(),
    }))
}

/// Per-`(horizon, noise case)` statistics over seeds.
fn aggregate(rows: &[RunSummary]) -> Vec<Value> {
    let mut keys: Vec<(usize, u8)> = rows.iter().map(|r| (r.horizon, r.noise_case)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .map(|(horizon, case)| {
            let group: Vec<&RunSummary> = rows.iter().filter(|r| r.horizon == horizon && r.noise_case == case).collect();
            let count = group.len() as f64;
            let mean = |f: fn(&RunSummary) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / count;
            let max = |f: fn(&RunSummary) -> f64| group.iter().map(|r| f(r)).fold(f64::NEG_INFINITY, f64::max);
            json!({
                "horizon": horizon,
                "noise_case": case,
                "runs": group.len(),
                "mean_total_regret": mean(|r| r.total_regret),
                "max_total_regret": max(|r| r.total_regret),
                "mean_tracking_error": mean(|r| r.mean_tracking_error),
                "max_output_norm": max(|r| r.max_output_norm),
            })
        })
        .collect()
}

fn sweep(common: &Common, seeds: &[u64], horizons: &[usize], cases: &[u8]) -> CliResult<Value> {
    let base = load_config(common)?;
    let dir = out_dir(common, &base)?;
    let seeds: Vec<u64> = if seeds.is_empty() {
        (base.seed..base.seed + DEFAULT_SWEEP_SEEDS).collect()
    } else {
        seeds.to_vec()
    };
    let horizons = if horizons.is_empty() { vec![base.horizon] } else { horizons.to_vec() };
    let cases = match (cases.is_empty(), common.noise_case) {
        (false, _) => cases.to_vec(),
        (true, Some(c)) => vec![c],
        (true, None) => vec![1, 2, 3],
    };
    let mut grid = Vec::new();
    for &seed in &seeds {
        for &horizon in &horizons {
            for &case in &cases {
                let mut cfg = base.clone();
                cfg.seed = seed;
                cfg.horizon = horizon;
                cfg.noise = NoiseCase::from_case_number(case)?;
                grid.push(cfg);
            }
        }
    }
    let results: Vec<Result<RunSummary, (ExperimentConfig, ddoco::Error)>> = grid
        .par_iter()
        .map(|cfg| run_experiment(cfg).map(|e| e.summary(cfg)).map_err(|f| (cfg.clone(), f.error)))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => rows.push(s),
            Err((cfg, e)) => failures.push(json!({
                "seed": cfg.seed,
                "horizon": cfg.horizon,
                "noise_case": cfg.noise.case_number(),
                "kind": e.kind(),
                "message": e.to_string(),
            })),
        }
    }

    let table = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&table).map_err(|e| Failure::io(&table, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Failure::io(&table, e))?;
    }
    w.flush().map_err(|e| Failure::io(&table, e))?;
    let groups = aggregate(&rows);
    let agg_path = dir.join("sweep_aggregate.json");
    write_file(&agg_path, serde_json::to_string_pretty(&groups).expect("json").as_bytes())?;

    if !failures.is_empty() {
        return Err(Failure {
            kind: "sweep-failed".into(),
            message: format!("{} of {} runs failed: {}", failures.len(), grid.len(), Value::Array(failures)),
            step: None,
            partial: Some(table),
            code: 1,
        });
    }
    Ok(json!({
        "command": "sweep",
        "runs": rows.len(),
        "table": table.display().to_string(),
        "aggregate": groups,
    }))
}

fn check(common: &Common) -> CliResult<Value> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg)?;
    // Fail early on data problems before the closed loop.
    prepare(&cfg)?;
    let exp = run_experiment(&cfg).map_err(|f| Failure::from(f.error))?;
    let checks = check_invariants(&exp)?;
    let enforced = cfg.noise.is_noiseless();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    let report = json!({
        "command": "check",
        "seed": cfg.seed,
        "horizon": cfg.horizon,
        "noise_case": cfg.noise.case_number(),
        "enforced": enforced,
        "checks": checks,
    });
    let path = dir.join("check.json");
    write_file(&path, serde_json::to_string_pretty(&report).expect("json").as_bytes())?;
    if enforced && !failed.is_empty() {
        return Err(Failure {
            kind: "check-failed".into(),
            message: format!("invariants violated: {}", failed.join(", ")),
            step: None,
            partial: Some(path),
            code: 1,
        });
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", Failure::usage("usage", first).to_json());
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::GenerateData(c) => generate(c),
        Command::Run(c) => run(c),
        Command::Sweep {
            common,
            seeds,
            horizons,
            noise_cases,
        } => sweep(common, seeds, horizons, noise_cases),
        Command::Check(c) => check(c),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.code)
        }
    }
}
