//! Subcommand implementations. Each writes machine-readable artifacts under an
//! output directory and returns a short human-readable report.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use colrel::analysis::{summarize, theorem_bound, theorem_constants, SlopeWindow, Summary};
use colrel::objectives::make_quadratic_ensemble;
use colrel::protocol::run_simulation;
use colrel::weights::{check_unbiasedness, optimize_weights};
use colrel::{
    AlgorithmVariant, ConnectivityGraph, EnsembleSpec, ObjectiveEnsemble, OptimizationResult, OptimizeOptions,
    RoundTrace, SimulationConfig, StepSchedule, TheoremConstants,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EtaSpec, Hold, RunConfig, VariantName};
use crate::error::CliError;

pub const TOOL: &str = "colrel";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Multiples of `r0` reported by `bound` when no rounds are configured.
const DEFAULT_BOUND_MULTIPLES: [usize; 6] = [1, 2, 5, 10, 100, 1000];

pub fn build_graph(cfg: &RunConfig) -> Result<ConnectivityGraph, CliError> {
    let edges = cfg.graph.topology.edges(cfg.graph.n)?;
    Ok(ConnectivityGraph::new(cfg.graph.n, &edges, cfg.probabilities())?)
}

pub fn build_ensemble(cfg: &RunConfig) -> Result<ObjectiveEnsemble, CliError> {
    let o = &cfg.objective;
    Ok(make_quadratic_ensemble(&EnsembleSpec {
        n: cfg.graph.n,
        d: o.d,
        mu: o.mu,
        l_smooth: o.l_smooth,
        heterogeneity: o.heterogeneity,
        sigma: o.sigma,
        seed: o.seed,
    })?)
}

fn optimizer_options(cfg: &RunConfig) -> OptimizeOptions {
    let o = &cfg.optimizer;
    OptimizeOptions { max_sweeps: o.max_sweeps, bisect_tol: o.bisect_tol, stall_tol: o.stall_tol }
}

pub fn optimized(cfg: &RunConfig, g: &ConnectivityGraph) -> Result<OptimizationResult, CliError> {
    Ok(optimize_weights(g, &optimizer_options(cfg))?)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

#[derive(Serialize)]
struct WeightsDocument<'a> {
    tool: &'static str,
    tool_version: &'static str,
    config: String,
    metadata: WeightsMetadata,
    history: &'a [f64],
    weights: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct WeightsMetadata {
    n: usize,
    sweeps: usize,
    stalled: bool,
    initial_objective: f64,
    final_objective: f64,
    feasibility_tol: f64,
    max_residual: f64,
    residuals: Vec<f64>,
}

pub fn optimize_weights_cmd(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let g = build_graph(cfg)?;
    let res = optimized(cfg, &g)?;
    let tol = 10.0 * cfg.optimizer.bisect_tol;
    let report = check_unbiasedness(&g, &res.weights, tol)?;
    let doc = WeightsDocument {
        tool: TOOL,
        tool_version: TOOL_VERSION,
        config: cfg.canonical(),
        metadata: WeightsMetadata {
            n: g.n(),
            sweeps: res.sweeps,
            stalled: res.stalled,
            initial_objective: res.initial_objective,
            final_objective: res.final_objective(),
            feasibility_tol: tol,
            max_residual: report.max_residual(),
            residuals: report.residuals(),
        },
        history: &res.history,
        weights: res.weights.rows(),
    };
    ensure_dir(out)?;
    let path = out.join("weights.json");
    let mut text = serde_json::to_string_pretty(&doc).expect("plain data serializes");
    text.push('\n');
    write_file(&path, &text)?;
    Ok(format!(
        "n={} sweeps={} S: {} -> {} max_residual={:.3e} wrote {}\n",
        g.n(),
        res.sweeps,
        res.initial_objective,
        res.final_objective(),
        report.max_residual(),
        path.display()
    ))
}

/// First line of every trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub tool: String,
    pub tool_version: String,
    pub variant: String,
    pub seeds: Vec<u64>,
    pub schedule: StepSchedule,
    pub config: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: TraceHeader,
}

/// Step schedule for a run; `hold = "r0"` uses the theorem's `r0` for the
/// optimized relay weights on this graph.
pub fn resolve_schedule(cfg: &RunConfig, g: &ConnectivityGraph, ens: &ObjectiveEnsemble) -> Result<StepSchedule, CliError> {
    let mu = cfg.objective.mu;
    Ok(match cfg.protocol.eta {
        EtaSpec::Constant { value } => StepSchedule::Constant { value },
        EtaSpec::Theorem { hold: Hold::Round(hold) } => StepSchedule::Theorem { mu, hold },
        EtaSpec::Theorem { hold: Hold::R0 } => {
            let res = optimized(cfg, g).map_err(|e| {
                CliError::config("protocol.eta.hold", format!("r0 needs feasible relay weights ({e}); set hold explicitly"))
            })?;
            let c = theorem_constants(ens, g, &res.weights, cfg.protocol.local_steps)?;
            StepSchedule::Theorem { mu, hold: c.r0 }
        }
    })
}

/// Every trace of one run configuration, grouped by variant in config order.
pub struct RunOutput {
    pub schedule: StepSchedule,
    pub variants: Vec<(String, Vec<RoundTrace>)>,
}

pub fn run_all(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let g = build_graph(cfg)?;
    let ens = build_ensemble(cfg)?;
    let schedule = resolve_schedule(cfg, &g, &ens)?;
    let mut variants = Vec::new();
    for name in &cfg.protocol.variants {
        variants.push(match name {
            VariantName::Colrel => AlgorithmVariant::ColRel(optimized(cfg, &g)?.weights),
            VariantName::FedavgNoDropout => AlgorithmVariant::FedAvgNoDropout,
            VariantName::FedavgBlindDropout => AlgorithmVariant::FedAvgBlindDropout,
            VariantName::FedavgNonblindDropout => AlgorithmVariant::FedAvgNonBlindDropout,
        });
    }
    let seeds = cfg.experiment.seeds.list();
    let jobs: Vec<(usize, u64)> = (0..variants.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    // rayon's collect keeps input order, so output does not depend on scheduling
    let runs: Vec<Result<Vec<RoundTrace>, CliError>> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let mut sim = SimulationConfig::new(
                variants[v].clone(),
                cfg.protocol.local_steps,
                cfg.protocol.rounds,
                schedule,
                seed,
            );
            sim.momentum = cfg.protocol.momentum;
            sim.record_models = cfg.experiment.record_models;
            Ok(run_simulation(&ens, &g, &sim)?)
        })
        .collect();
    let mut grouped: Vec<(String, Vec<RoundTrace>)> =
        variants.iter().map(|v| (v.name().to_string(), Vec::new())).collect();
    for ((v, _), run) in jobs.iter().zip(runs) {
        grouped[*v].1.extend(run?);
    }
    Ok(RunOutput { schedule, variants: grouped })
}

fn write_traces(cfg: &RunConfig, run: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(dir)?;
    let config = cfg.canonical();
    let mut paths = Vec::new();
    for (variant, traces) in &run.variants {
        let path = dir.join(format!("{variant}.jsonl"));
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        let header = HeaderLine {
            header: TraceHeader {
                tool: TOOL.into(),
                tool_version: TOOL_VERSION.into(),
                variant: variant.clone(),
                seeds: cfg.experiment.seeds.list(),
                schedule: run.schedule,
                config: config.clone(),
            },
        };
        let io = |e| CliError::io(&path, e);
        writeln!(w, "{}", to_json(&header)).map_err(io)?;
        for rec in traces {
            writeln!(w, "{}", to_json(rec)).map_err(io)?;
        }
        w.flush().map_err(io)?;
        paths.push(path);
    }
    Ok(paths)
}

fn final_table(summary: &Summary, order: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<26} {:>8} {:>14} {:>12}", "variant", "round", "mean_subopt", "stderr");
    for variant in order {
        if let Some(row) = summary.final_row(variant) {
            let _ = writeln!(s, "{:<26} {:>8} {:>14.6e} {:>12.3e}", variant, row.r, row.mean, row.stderr);
        }
    }
    s
}

pub fn simulate_cmd(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let run = run_all(cfg)?;
    let paths = write_traces(cfg, &run, out)?;
    let all: Vec<RoundTrace> = run.variants.iter().flat_map(|(_, t)| t.iter().cloned()).collect();
    let summary = summarize(&all, SlopeWindow::FinalDecade)?;
    let order: Vec<String> = run.variants.iter().map(|(v, _)| v.clone()).collect();
    let mut report = final_table(&summary, &order);
    for p in paths {
        let _ = writeln!(report, "wrote {}", p.display());
    }
    Ok(report)
}

#[derive(Serialize)]
struct BoundDocument {
    tool: &'static str,
    tool_version: &'static str,
    config: String,
    constants: TheoremConstants,
    init_gap: f64,
    rows: Vec<BoundRow>,
}

#[derive(Serialize)]
struct BoundRow {
    r: usize,
    bound: f64,
}

pub fn bound_cmd(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let g = build_graph(cfg)?;
    let ens = build_ensemble(cfg)?;
    let weights = optimized(cfg, &g)?.weights;
    let c = theorem_constants(&ens, &g, &weights, cfg.protocol.local_steps)?;
    let init_gap = match cfg.bound.init_gap {
        Some(gap) => gap,
        None => ens.suboptimality(&vec![0.0; ens.d()]),
    };
    let rounds = match &cfg.bound.rounds {
        Some(r) => r.clone(),
        None => DEFAULT_BOUND_MULTIPLES.iter().map(|m| m * c.first_round().max(1)).collect(),
    };
    let rows = rounds
        .iter()
        .map(|&r| Ok(BoundRow { r, bound: theorem_bound(&c, init_gap, r)? }))
        .collect::<Result<Vec<_>, CliError>>()?;

    let doc = BoundDocument { tool: TOOL, tool_version: TOOL_VERSION, config: cfg.canonical(), constants: c, init_gap, rows };
    ensure_dir(out)?;
    let path = out.join("bound.json");
    let mut text = serde_json::to_string_pretty(&doc).expect("plain data serializes");
    text.push('\n');
    write_file(&path, &text)?;

    let mut s = String::new();
    let _ = writeln!(s, "S  = {}", c.s);
    let _ = writeln!(s, "B  = {}", c.b);
    let _ = writeln!(s, "C1 = {}", c.c1);
    let _ = writeln!(s, "C2 = {}", c.c2);
    let _ = writeln!(s, "C3 = {}", c.c3);
    let _ = writeln!(s, "r0 = {}", c.r0);
    let _ = writeln!(s, "init_gap = {init_gap}");
    let _ = writeln!(s, "{:>10} {:>16}", "r", "bound");
    for row in &doc.rows {
        let _ = writeln!(s, "{:>10} {:>16.6e}", row.r, row.bound);
    }
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}

pub fn sweep_cmd(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::config("sweep", "sweep needs a [sweep] section"))?;
    let axis = sweep.axis();
    let mut csv = String::from("point,axis,value,variant,round,seeds,mean,stderr\n");
    let mut report = String::new();
    for k in 0..sweep.len() {
        let (point_cfg, label) = sweep.point(cfg, k)?;
        let run = run_all(&point_cfg)?;
        let dir = out.join(format!("{k:03}_{axis}={label}"));
        write_traces(&point_cfg, &run, &dir)?;
        let all: Vec<RoundTrace> = run.variants.iter().flat_map(|(_, t)| t.iter().cloned()).collect();
        let summary = summarize(&all, SlopeWindow::FinalDecade)?;
        for (variant, _) in &run.variants {
            if let Some(row) = summary.final_row(variant) {
                let _ = writeln!(csv, "{k},{axis},{label},{variant},{},{},{},{}", row.r, row.seeds, row.mean, row.stderr);
                let _ = writeln!(report, "{axis}={label:<16} {variant:<26} {:>14.6e} ± {:.3e}", row.mean, row.stderr);
            }
        }
    }
    ensure_dir(out)?;
    let path = out.join("sweep.csv");
    write_file(&path, &csv)?;
    let _ = writeln!(report, "wrote {}", path.display());
    Ok(report)
}

/// Reads every `*.jsonl` trace file in `dir`, in file-name order.
pub fn read_traces(dir: &Path) -> Result<Vec<RoundTrace>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Trace(format!("no .jsonl trace files in {}", dir.display())));
    }
    let mut traces = Vec::new();
    for path in files {
        let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
        for (k, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CliError::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            if k == 0 && serde_json::from_str::<HeaderLine>(&line).is_ok() {
                continue;
            }
            let rec: RoundTrace = serde_json::from_str(&line)
                .map_err(|e| CliError::Trace(format!("{}:{}: {e}", path.display(), k + 1)))?;
            traces.push(rec);
        }
    }
    Ok(traces)
}

pub fn parse_window(text: &str) -> Result<SlopeWindow, CliError> {
    let bad = || CliError::Usage(format!("--window expects FROM:TO rounds, got {text:?}"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let from = a.trim().parse().map_err(|_| bad())?;
    let to = b.trim().parse().map_err(|_| bad())?;
    if from > to {
        return Err(bad());
    }
    Ok(SlopeWindow::Rounds { from, to })
}

pub fn summarize_cmd(dir: &Path, window: SlopeWindow) -> Result<String, CliError> {
    let traces = read_traces(dir)?;
    let summary = summarize(&traces, window)?;

    let mut rows = String::from("variant,r,seeds,mean,stderr,ci_low,ci_high\n");
    for r in &summary.rows {
        let _ = writeln!(rows, "{},{},{},{},{},{},{}", r.variant, r.r, r.seeds, r.mean, r.stderr, r.ci_low, r.ci_high);
    }
    let mut slopes = String::from("variant,r_from,r_to,slope,intercept\n");
    for s in &summary.slopes {
        let _ = writeln!(slopes, "{},{},{},{},{}", s.variant, s.r_from, s.r_to, s.slope, s.intercept);
    }
    let summary_path = dir.join("summary.csv");
    let slopes_path = dir.join("slopes.csv");
    write_file(&summary_path, &rows)?;
    write_file(&slopes_path, &slopes)?;

    let mut variants: Vec<String> = summary.rows.iter().map(|r| r.variant.clone()).collect();
    variants.dedup();
    let mut report = final_table(&summary, &variants);
    for s in &summary.slopes {
        let _ = writeln!(report, "{:<26} slope {:.4} over rounds {}..={}", s.variant, s.slope, s.r_from, s.r_to);
    }
    let _ = writeln!(report, "wrote {} and {}", summary_path.display(), slopes_path.display());
    Ok(report)
}
