use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use stg_core::baseline::plan_baseline;
use stg_core::batch::{run_batch, score, traffic_jobs, PlannerKind};
use stg_core::config::Config;
use stg_core::metrics::{batch_report, report_to_csv, report_to_table, runs_to_csv, RunMetrics};
use stg_core::planner::Trajectory;
use stg_core::scenario::{builtin_exit, builtin_merging, Density, Scenario};

#[derive(Parser)]
#[command(name = "stg", version, about = "Spatial-temporal graph trajectory planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one scenario and write the trajectory, metrics, attention log
    /// and a manifest.
    Run(RunArgs),
    /// Plan generated traffic with one or both planners and summarise.
    Bench(BenchArgs),
    /// Print the default configuration as TOML.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Merging,
    Exit,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum PlannerArg {
    Stg,
    Baseline,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum DensityArg {
    Low,
    Medium,
    High,
    All,
}

#[derive(Args)]
struct Common {
    /// TOML file overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warm_start: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    builtin: Option<Builtin>,
    #[arg(long, value_enum, default_value = "stg")]
    planner: PlannerArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "medium")]
    density: DensityArg,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, value_enum, default_value = "both")]
    planner: PlannerArg,
    #[command(flatten)]
    common: Common,
}

fn main() {
    if let Err(e) = real_main() {
        let mut msg = e.to_string();
        for cause in e.chain().skip(1) {
            let c = cause.to_string();
            if !msg.contains(&c) {
                msg = format!("{msg}: {c}");
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("STG_THREADS") {
        let n: usize = n.parse().with_context(|| format!("STG_THREADS must be a thread count, got {n:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Run(args) => run(args),
        Command::Bench(args) => bench(args),
        Command::Config => {
            print!("{}", Config::default().to_toml()?);
            Ok(())
        }
    }
}

fn load_config(c: &Common) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(path) => Config::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => Config::default(),
    };
    if let Some(iters) = c.iters {
        cfg.plan.iters = iters;
    }
    if c.warm_start {
        cfg.plan.warm_start = true;
    }
    if let Some(seed) = c.seed {
        cfg.plan.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes every file under a temporary name first, then renames them, so
/// nothing is left behind when a write fails.
fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut staged = Vec::new();
    for (name, body) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = fs::write(&tmp, body) {
            for (t, _) in &staged {
                let _ = fs::remove_file(t);
            }
            return Err(e).with_context(|| format!("writing {}", tmp.display()));
        }
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, dst) in staged {
        fs::rename(&tmp, &dst).with_context(|| format!("writing {}", dst.display()))?;
    }
    Ok(())
}

fn attention_json(traj: &Trajectory) -> serde_json::Value {
    let steps: Vec<_> = traj
        .attention
        .iter()
        .enumerate()
        .map(|(k, alphas)| {
            let by_actor: serde_json::Map<_, _> = alphas.iter().map(|(id, a)| (id.to_string(), json!(a))).collect();
            json!({ "step": k + 1, "t": traj.t0 + (k + 1) as f64 * traj.t_s, "alpha": by_actor })
        })
        .collect();
    json!({ "steps": steps })
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let scenario = match (&args.scenario, args.builtin) {
        (Some(path), _) => Scenario::load(path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(Builtin::Merging)) => builtin_merging(),
        (None, Some(Builtin::Exit)) => builtin_exit(),
        (None, None) => bail!("give --scenario or --builtin"),
    };
    scenario.validate().context("invalid scenario")?;
    let kind = match args.planner {
        PlannerArg::Stg => PlannerKind::Stg,
        PlannerArg::Baseline => PlannerKind::Baseline,
        PlannerArg::Both => bail!("run takes a single planner"),
    };

    let traj = match kind {
        PlannerKind::Stg => cfg.planner()?.plan(&scenario)?.trajectory,
        PlannerKind::Baseline => {
            plan_baseline(&scenario, &cfg.baseline, &cfg.potential, cfg.plan.t_s, cfg.plan.horizon)?.trajectory
        }
    };
    let feasible = traj.violations(&scenario, 1e-9).is_empty();
    let (discomfort, risk, distance) = score(&scenario, &traj, &cfg).map_err(anyhow::Error::msg)?;
    let metrics = RunMetrics {
        scenario_id: scenario.name.clone(),
        traffic: scenario.name.clone(),
        planner: kind.name().to_string(),
        feasible,
        discomfort,
        risk,
        distance,
    };
    let metrics_csv = runs_to_csv(std::slice::from_ref(&metrics));

    let config_toml = cfg.to_toml()?;
    let scenario_json = scenario.to_json()?;
    let manifest = json!({
        "command": "run",
        "planner": kind.name(),
        "scenario": scenario.name,
        "seed": cfg.plan.seed,
        "config_sha256": sha256_hex(&config_toml),
        "scenario_sha256": sha256_hex(&scenario_json),
        "trajectory_sha256": sha256_hex(&traj.to_csv()),
        "versions": { "stg": env!("CARGO_PKG_VERSION") },
        "reproduce": "stg run --scenario scenario.json --config config.toml --planner <planner> --out-dir <dir>",
    });

    let mut files = vec![
        ("trajectory.csv", traj.to_csv()),
        ("metrics.csv", metrics_csv.clone()),
        ("config.toml", config_toml),
        ("scenario.json", scenario_json),
        ("manifest.json", serde_json::to_string_pretty(&manifest)? + "\n"),
    ];
    if kind == PlannerKind::Stg {
        files.push(("attention.json", serde_json::to_string_pretty(&attention_json(&traj))? + "\n"));
    }
    write_all(&args.common.out_dir, &files)?;
    print!("{}", metrics_csv.lines().nth(1).unwrap_or_default());
    println!();
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    if args.count == 0 {
        bail!("--count must be at least 1");
    }
    let cfg = load_config(&args.common)?;
    let densities = match args.density {
        DensityArg::Low => vec![Density::Low],
        DensityArg::Medium => vec![Density::Medium],
        DensityArg::High => vec![Density::High],
        DensityArg::All => vec![Density::Low, Density::Medium, Density::High],
    };
    let kinds = match args.planner {
        PlannerArg::Stg => vec![PlannerKind::Stg],
        PlannerArg::Baseline => vec![PlannerKind::Baseline],
        PlannerArg::Both => vec![PlannerKind::Stg, PlannerKind::Baseline],
    };
    let mut runs = Vec::new();
    for density in densities {
        let jobs = traffic_jobs(density, args.count, cfg.plan.seed, &cfg)?;
        for out in run_batch(&jobs, &kinds, &cfg) {
            if let Some(e) = &out.error {
                eprintln!("{} {}: {e}", out.metrics.scenario_id, out.metrics.planner);
            }
            runs.push(out.metrics);
        }
    }
    let rows = batch_report(&runs);
    let config_toml = cfg.to_toml()?;
    let manifest = json!({
        "command": "bench",
        "count": args.count,
        "seed": cfg.plan.seed,
        "config_sha256": sha256_hex(&config_toml),
        "versions": { "stg": env!("CARGO_PKG_VERSION") },
    });
    write_all(
        &args.common.out_dir,
        &[
            ("runs.csv", runs_to_csv(&runs)),
            ("report.csv", report_to_csv(&rows)),
            ("config.toml", config_toml),
            ("manifest.json", serde_json::to_string_pretty(&manifest)? + "\n"),
        ],
    )?;
    print!("{}", report_to_table(&rows));
    Ok(())
}
