//! Command-line entry point: solve single problems, run closed-loop
//! simulations and benchmarks, precompute reachability caches, and validate
//! map files.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::json;

use zonomip::bnb::{self, MiqpStatus, SolverSettings};
use zonomip::map_ingest::Map;
use zonomip::reach::{ReachConfig, ReachTables};
use zonomip::sim::{
    self, bench_to_csv, build_problem, default_benchmark_config, default_d_max, BenchScenario,
    Formulation, SimConfig, SimMode,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_TIMEOUT: u8 = 4;

#[derive(Parser)]
#[command(name = "zonomip", about = "Mixed-integer MPC motion planning over hybrid zonotopes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single planning problem on a map and write the result JSON.
    Solve(SolveArgs),
    /// Run a closed-loop simulation; writes a CSV trajectory and JSON stats.
    Simulate(SimulateArgs),
    /// Run the benchmark grid over a directory of maps.
    Bench(BenchArgs),
    /// Build the pairwise reachability tables for a map and cache them.
    PrecomputeReach(PrecomputeArgs),
    /// Validate a map file: schema, region geometry, set conversion.
    VerifyMap(VerifyArgs),
}

#[derive(Args)]
struct CommonOverrides {
    /// Worker threads for the branch-and-bound solver.
    #[arg(long)]
    threads: Option<usize>,
    /// Absolute convergence tolerance.
    #[arg(long)]
    eps_a: Option<f64>,
    /// Relative convergence tolerance.
    #[arg(long)]
    eps_r: Option<f64>,
    /// Per-solve wall-clock limit in seconds.
    #[arg(long)]
    t_max: Option<f64>,
    /// Free-space encoding: hz or bigm.
    #[arg(long)]
    formulation: Option<String>,
    /// Enable or disable warm starting.
    #[arg(long)]
    warm: Option<bool>,
    /// Per-step travel bound for reachability pruning.
    #[arg(long)]
    d_max: Option<f64>,
    /// Single-threaded mode for bit-reproducible output.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: CommonOverrides,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    map: PathBuf,
    /// Trajectory CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// JSON stats sidecar path.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[command(flatten)]
    overrides: CommonOverrides,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of map JSON files.
    #[arg(long)]
    suite: PathBuf,
    /// Comma-separated list: hz,bigm.
    #[arg(long, default_value = "hz,bigm")]
    formulations: String,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON output path.
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    overrides: CommonOverrides,
}

#[derive(Args)]
struct PrecomputeArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    d_max: Option<f64>,
    #[arg(long, default_value_t = 15)]
    horizon: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    map: PathBuf,
    /// Also run the support-function identity suite on the converted set.
    #[arg(long)]
    verify_sets: bool,
}

/// Config-file schema shared by solve and simulate.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    horizon: Option<usize>,
    x0: Option<Vec<f64>>,
    x_ref: Option<Vec<f64>>,
    steps: Option<usize>,
    formulation: Option<String>,
    /// Real-time per-step budget; converge-each-step when absent.
    t_max_s: Option<f64>,
    d_max: Option<f64>,
    settings: Option<SolverSettings>,
}

/// Effective configuration echoed into every result JSON.
#[derive(Debug, Clone, Serialize)]
struct EchoedConfig {
    map: String,
    horizon: usize,
    x0: Vec<f64>,
    x_ref: Vec<f64>,
    steps: usize,
    formulation: String,
    t_max_s: Option<f64>,
    d_max: f64,
    settings: SolverSettings,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn parse_formulation(s: &str) -> Result<Formulation, String> {
    match s {
        "hz" => Ok(Formulation::HybZono),
        "bigm" => Ok(Formulation::BigM),
        other => Err(format!("unknown formulation '{other}' (expected hz or bigm)")),
    }
}

fn formulation_name(f: Formulation) -> &'static str {
    match f {
        Formulation::HybZono => "hz",
        Formulation::BigM => "bigm",
    }
}

fn env_threads() -> Option<usize> {
    std::env::var("ZONOMIP_THREADS").ok().and_then(|v| v.parse().ok())
}

/// Resolve the effective run setup. Precedence: flags > config file >
/// ZONOMIP_THREADS env (threads only) > defaults.
fn resolve(
    map_path: &Path,
    config_path: Option<&Path>,
    steps_flag: Option<usize>,
    ov: &CommonOverrides,
) -> Result<(Map, SimConfig, EchoedConfig), String> {
    let map = Map::load(map_path).map_err(|e| format!("map {}: {e}", map_path.display()))?;
    let fc: FileConfig = match config_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("config {}: {e}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", p.display()))?
        }
        None => FileConfig::default(),
    };

    let dim = map.dim();
    let mut mpc = default_benchmark_config(dim);
    if let Some(h) = fc.horizon {
        if h == 0 {
            return Err("horizon must be >= 1".into());
        }
        mpc.horizon = h;
    }
    let n = 2 * dim;
    let state_vec = |v: &Option<Vec<f64>>, name: &str, fallback: DVector<f64>| {
        match v {
            Some(v) if v.len() == n => Ok(DVector::from_vec(v.clone())),
            Some(v) => Err(format!("{name} has {} entries, expected {n}", v.len())),
            None => Ok(fallback),
        }
    };
    // Default start/reference: opposite corners of the map bounding box, at rest.
    let (lo, hi) = map.bounding_box();
    let corner = |p: &DVector<f64>| {
        DVector::from_fn(n, |i, _| if i % 2 == 0 { p[i / 2] } else { 0.0 })
    };
    let x0 = state_vec(&fc.x0, "x0", corner(&lo))?;
    mpc.x_ref = state_vec(&fc.x_ref, "x_ref", corner(&hi))?;

    let mut settings = fc.settings.clone().unwrap_or_default();
    if fc.settings.is_none() {
        if let Some(t) = env_threads() {
            settings.threads = t;
        }
    }
    if let Some(t) = ov.threads {
        settings.threads = t;
    }
    if let Some(e) = ov.eps_a {
        settings.eps_a = e;
    }
    if let Some(e) = ov.eps_r {
        settings.eps_r = e;
    }
    if let Some(w) = ov.warm {
        settings.warm_start = w;
    }
    let t_max_s = ov.t_max.or(fc.t_max_s);
    if ov.deterministic {
        settings.threads = 1;
    }
    if settings.threads == 0 {
        return Err("threads must be >= 1".into());
    }

    let formulation = parse_formulation(
        ov.formulation.as_deref().or(fc.formulation.as_deref()).unwrap_or("hz"),
    )?;
    let steps = steps_flag.or(fc.steps).unwrap_or(30);
    let d_max = ov.d_max.or(fc.d_max);

    let echoed = EchoedConfig {
        map: map_path.display().to_string(),
        horizon: mpc.horizon,
        x0: x0.iter().copied().collect(),
        x_ref: mpc.x_ref.iter().copied().collect(),
        steps,
        formulation: formulation_name(formulation).into(),
        t_max_s,
        d_max: d_max.unwrap_or_else(|| default_d_max(dim, mpc.dt)),
        settings: settings.clone(),
    };
    let mode = match t_max_s {
        Some(t) => SimMode::RealTimeBudget { t_max_s: t },
        None => SimMode::ConvergeEachStep,
    };
    let cfg = SimConfig { map: map.clone(), mpc, steps, mode, formulation, settings, d_max, x0 };
    Ok((map, cfg, echoed))
}

fn run_solve(args: &SolveArgs) -> ExitCode {
    let (map, cfg, echoed) =
        match resolve(&args.map, args.config.as_deref(), None, &args.overrides) {
            Ok(v) => v,
            Err(e) => return fail(EXIT_CONFIG, e),
        };
    let mut settings = cfg.settings.clone();
    if let Some(t) = echoed.t_max_s {
        settings.max_time_s = t;
    }
    let mut problem = match build_problem(&map, &cfg.mpc, cfg.formulation) {
        Ok(p) => p,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Err(e) = problem.miqp.update_initial_state(&cfg.x0, None) {
        return fail(EXIT_CONFIG, e);
    }
    let d_max = cfg.d_max.unwrap_or(echoed.d_max);
    let mut tables =
        match ReachTables::build(&map, &ReachConfig { d_max, horizon: cfg.mpc.horizon }) {
            Ok(t) => t,
            Err(e) => return fail(EXIT_CONFIG, e),
        };
    let y0 = &cfg.mpc.h * &cfg.x0;
    if let Err(e) = tables.build_point_table(&map, &y0) {
        return fail(EXIT_CONFIG, e);
    }
    let res = match bnb::solve_miqp(&problem, &tables, &settings, None) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let out = json!({
        "status": res.status,
        "objective": res.objective,
        "lower_bound": res.lower_bound,
        "gap": res.gap,
        "iterations": res.iterations,
        "counters": res.counters,
        "regions": res.regions,
        "config": echoed,
    });
    if let Err(e) = write_atomic(&args.out, &serde_json::to_string_pretty(&out).unwrap()) {
        return fail(EXIT_CONFIG, e);
    }
    match res.status {
        MiqpStatus::Infeasible => fail(EXIT_INFEASIBLE, "no feasible region sequence"),
        MiqpStatus::TimeLimit | MiqpStatus::IterLimit if res.z.is_none() => {
            fail(EXIT_TIMEOUT, "limit reached before any incumbent was found")
        }
        _ => ExitCode::SUCCESS,
    }
}

fn run_simulate(args: &SimulateArgs) -> ExitCode {
    let (_, cfg, echoed) =
        match resolve(&args.map, args.config.as_deref(), args.steps, &args.overrides) {
            Ok(v) => v,
            Err(e) => return fail(EXIT_CONFIG, e),
        };
    let rec = match sim::run_closed_loop(&cfg) {
        Ok(r) => r,
        Err(sim::SimError::InfeasibleAtStep(k)) => {
            return fail(EXIT_INFEASIBLE, format!("solver infeasible at step {k}"))
        }
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Err(e) = write_atomic(&args.out, &rec.to_csv()) {
        return fail(EXIT_CONFIG, e);
    }
    if let Some(stats_path) = &args.stats {
        let steps: Vec<_> = rec
            .steps
            .iter()
            .map(|s| {
                json!({
                    "step": s.step,
                    "status": s.status,
                    "solve_time_s": s.solve_time_s,
                    "bnb_iterations": s.bnb_iterations,
                    "gap": s.gap,
                    "objective": s.objective,
                    "stage_cost": s.stage_cost,
                    "free_space_violation": s.free_space_violation,
                    "slack_max": s.slack_max,
                })
            })
            .collect();
        let stats = json!({
            "j_st": rec.j_st,
            "final_x": rec.final_x.iter().copied().collect::<Vec<f64>>(),
            "steps": steps,
            "config": echoed,
        });
        if let Err(e) = write_atomic(stats_path, &serde_json::to_string_pretty(&stats).unwrap()) {
            return fail(EXIT_CONFIG, e);
        }
    }
    ExitCode::SUCCESS
}

fn run_bench(args: &BenchArgs) -> ExitCode {
    let mut formulations = Vec::new();
    for part in args.formulations.split(',') {
        match parse_formulation(part.trim()) {
            Ok(f) => formulations.push(f),
            Err(e) => return fail(EXIT_CONFIG, e),
        }
    }
    let mut scenarios = Vec::new();
    let entries = match std::fs::read_dir(&args.suite) {
        Ok(e) => e,
        Err(e) => return fail(EXIT_CONFIG, format!("suite {}: {e}", args.suite.display())),
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let map = match Map::load(&p) {
            Ok(m) => m,
            Err(e) => return fail(EXIT_CONFIG, format!("map {}: {e}", p.display())),
        };
        let dim = map.dim();
        let (lo, hi) = map.bounding_box();
        let corner = |p: &DVector<f64>| {
            DVector::from_fn(2 * dim, |i, _| if i % 2 == 0 { p[i / 2] } else { 0.0 })
        };
        scenarios.push(BenchScenario {
            name: p.file_stem().unwrap().to_string_lossy().into_owned(),
            x0: corner(&lo),
            x_ref: corner(&hi),
            map,
        });
    }
    if scenarios.is_empty() {
        return fail(EXIT_CONFIG, "suite directory contains no .json maps");
    }
    let mut settings = SolverSettings::default();
    if let Some(t) = env_threads() {
        settings.threads = t;
    }
    if let Some(t) = args.overrides.threads {
        settings.threads = t;
    }
    if args.overrides.deterministic {
        settings.threads = 1;
    }
    if let Some(e) = args.overrides.eps_a {
        settings.eps_a = e;
    }
    if let Some(e) = args.overrides.eps_r {
        settings.eps_r = e;
    }
    let warm_flags: &[bool] = match args.overrides.warm {
        Some(w) => if w { &[true] } else { &[false] },
        None => &[true, false],
    };
    let cells =
        sim::run_bench(&scenarios, &formulations, warm_flags, args.trials, args.steps, &settings);
    if let Err(e) = write_atomic(&args.out, &bench_to_csv(&cells)) {
        return fail(EXIT_CONFIG, e);
    }
    if let Some(json_path) = &args.json {
        let out = json!({ "cells": cells, "trials": args.trials, "steps": args.steps });
        if let Err(e) = write_atomic(json_path, &serde_json::to_string_pretty(&out).unwrap()) {
            return fail(EXIT_CONFIG, e);
        }
    }
    ExitCode::SUCCESS
}

fn run_precompute(args: &PrecomputeArgs) -> ExitCode {
    let map = match Map::load(&args.map) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_CONFIG, format!("map {}: {e}", args.map.display())),
    };
    let d_max = args.d_max.unwrap_or_else(|| default_d_max(map.dim(), 1.0));
    let tables = match ReachTables::build(&map, &ReachConfig { d_max, horizon: args.horizon }) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    match tables.save(&args.out) {
        Ok(()) => {
            println!(
                "wrote reachability tables for {} regions (d_max {d_max}) to {}",
                tables.n_regions(),
                args.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_CONFIG, e),
    }
}

fn run_verify(args: &VerifyArgs) -> ExitCode {
    let map = match Map::load(&args.map) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_CONFIG, format!("map {}: {e}", args.map.display())),
    };
    if let Err(e) = map.region_hreps() {
        return fail(EXIT_CONFIG, format!("map {}: {e}", args.map.display()));
    }
    if let Err(e) = map.to_hybrid_zonotope() {
        return fail(EXIT_CONFIG, format!("map {}: {e}", args.map.display()));
    }
    if args.verify_sets {
        if let Err(e) = map.verify_support_identity(64) {
            return fail(EXIT_CONFIG, format!("map {}: {e}", args.map.display()));
        }
    }
    println!(
        "map {} ok: dim {}, {} regions",
        args.map.display(),
        map.dim(),
        map.n_regions()
    );
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Solve(a) => run_solve(&a),
        Command::Simulate(a) => run_simulate(&a),
        Command::Bench(a) => run_bench(&a),
        Command::PrecomputeReach(a) => run_precompute(&a),
        Command::VerifyMap(a) => run_verify(&a),
    }
}
