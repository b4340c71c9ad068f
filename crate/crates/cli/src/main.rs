//! Command-line pipeline for MoE expert placement: generate or ingest a
//! routing trace, cluster experts per layer, assign clusters to GPUs, and
//! score the result against the contiguous baseline. Every stage is also
//! runnable on its own with JSON file handoffs, and all outputs are
//! deterministic for a fixed configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use moe_placer::cluster::{self, Clustering};
use moe_placer::cost::{self, CostParams, CostReport};
use moe_placer::place::{self, Placement};
use moe_placer::topology::Topology;
use moe_placer::trace::{generate, HotOverride, RoutingStats, TraceGenSpec};

/// Default solver tolerance: the placement search stops once it cannot
/// improve the incumbent by more than 2.5%. Pass --gap 0 for certified
/// optima (slow beyond a dozen layers).
const DEFAULT_GAP: f64 = 0.025;

#[derive(Parser)]
#[command(
    name = "moe-placer",
    version,
    about = "Optimize expert-to-GPU placement for MoE serving from token-routing statistics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a routing trace with controllable skew and dependency.
    GenerateTrace(GenerateTraceArgs),
    /// Partition each layer's experts into load-balanced clusters.
    Cluster(ClusterArgs),
    /// Assign clusters to GPUs, minimizing the worst link time.
    Place(PlaceArgs),
    /// Score a placement with the analytical cost model.
    Evaluate(EvaluateArgs),
    /// Run the full chain and compare against the contiguous baseline.
    Pipeline(PipelineArgs),
    /// Compare two cost reports (baseline vs optimized).
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenerateTraceArgs {
    #[arg(long)]
    layers: usize,
    #[arg(long)]
    experts: usize,
    #[arg(long, default_value_t = 2)]
    top_k: usize,
    #[arg(long)]
    tokens: u64,
    /// Zipf exponent for per-layer expert popularity (0 = uniform).
    #[arg(long, default_value_t = 1.0)]
    skew: f64,
    /// Fraction of routing mass following preferred successors, in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    dependency: f64,
    /// Force a token share onto an expert set: LAYER:E1+E2+..:FRACTION
    /// (e.g. 14:0+1:0.64). May be given multiple times.
    #[arg(long = "hot-override", value_name = "SPEC")]
    hot_overrides: Vec<HotOverrideArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output trace file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone)]
struct HotOverrideArg(HotOverride);

impl FromStr for HotOverrideArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected LAYER:E1+E2+..:FRACTION, got {:?}", s));
        }
        let layer = parts[0]
            .parse::<usize>()
            .map_err(|e| format!("bad layer: {}", e))?;
        let experts = parts[1]
            .split('+')
            .map(|e| {
                e.parse::<usize>()
                    .map_err(|err| format!("bad expert {:?}: {}", e, err))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mass_fraction = parts[2]
            .parse::<f64>()
            .map_err(|e| format!("bad fraction: {}", e))?;
        Ok(HotOverrideArg(HotOverride {
            layer,
            experts,
            mass_fraction,
        }))
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SolverMode {
    /// Exact enumeration / branch-and-bound.
    Exact,
    /// Greedy + local search clustering (placement stays branch-and-bound).
    Heuristic,
    /// Brute-force placement enumeration; only viable for tiny instances.
    ExhaustiveOracle,
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SolverMode::Exact => "exact",
            SolverMode::Heuristic => "heuristic",
            SolverMode::ExhaustiveOracle => "exhaustive-oracle",
        };
        f.write_str(name)
    }
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    gpus: usize,
    #[arg(long, value_enum, default_value_t = SolverMode::Exact)]
    mode: SolverMode,
    /// Early-stop tolerance for the heuristic mode (fraction of layer load).
    #[arg(long, default_value_t = DEFAULT_GAP)]
    gap: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlaceArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    clustering: PathBuf,
    #[arg(long)]
    topology: PathBuf,
    /// Allowed deviation from E*L/G experts per GPU (0 = exact balance).
    #[arg(long, default_value_t = 0)]
    slack: u64,
    #[arg(long, value_enum, default_value_t = SolverMode::Exact)]
    mode: SolverMode,
    /// Relative optimality tolerance for the search (0 = certified optimum).
    #[arg(long, default_value_t = DEFAULT_GAP)]
    gap: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CostArgs {
    /// Seconds of expert compute per routed token.
    #[arg(long, default_value_t = 1e-7)]
    compute_per_token: f64,
    /// Dispatch payload per token in bytes.
    #[arg(long, default_value_t = 8192.0)]
    bytes_per_token: f64,
    /// Constant non-expert time per layer in seconds.
    #[arg(long, default_value_t = 0.0)]
    layer_overhead: f64,
}

impl CostArgs {
    fn params(&self) -> CostParams {
        CostParams {
            compute_time_per_token: self.compute_per_token,
            bytes_per_token: self.bytes_per_token,
            fixed_overhead_per_layer: self.layer_overhead,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    placement: PathBuf,
    #[arg(long)]
    topology: PathBuf,
    /// Optional clustering for full placement consistency checking.
    #[arg(long)]
    clustering: Option<PathBuf>,
    #[command(flatten)]
    cost: CostArgs,
    /// Output report (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Optional flat CSV rendering of the report.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    topology: PathBuf,
    /// GPU count; must match the topology when both are given.
    #[arg(long)]
    gpus: Option<usize>,
    #[arg(long, default_value_t = 0)]
    slack: u64,
    #[arg(long, value_enum, default_value_t = SolverMode::Exact)]
    mode: SolverMode,
    #[arg(long, default_value_t = DEFAULT_GAP)]
    gap: f64,
    #[command(flatten)]
    cost: CostArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    optimized: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateTrace(args) => cmd_generate_trace(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Place(args) => cmd_place(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Pipeline(args) => cmd_pipeline(args),
        Command::Compare(args) => cmd_compare(args),
    };
    if let Err(err) = result {
        eprintln!("error: {:#}", err);
        std::process::exit(1);
    }
}

fn log_debug(msg: &str) {
    if std::env::var("MOE_PLACER_LOG")
        .map(|v| v == "debug")
        .unwrap_or(false)
    {
        eprintln!("[moe-placer] {}", msg);
    }
}

fn cmd_generate_trace(args: GenerateTraceArgs) -> Result<()> {
    let spec = TraceGenSpec {
        num_layers: args.layers,
        num_experts: args.experts,
        top_k: args.top_k,
        tokens: args.tokens,
        marginal_skew: args.skew,
        dependency_strength: args.dependency,
        hot_overrides: args.hot_overrides.into_iter().map(|h| h.0).collect(),
        seed: args.seed,
    };
    let stats = generate(&spec)
        .map_err(|e| anyhow!("{}", e))
        .context("trace generation")?;
    let violations = stats.validate();
    if !violations.is_empty() {
        bail!(
            "generated trace failed validation: {} violations",
            violations.len()
        );
    }
    stats
        .write_json_file(&args.out)
        .map_err(|e| anyhow!("{}", e))
        .context("writing trace")?;
    println!(
        "trace: layers={} experts={} top_k={} tokens={}",
        stats.num_layers, stats.num_experts, stats.top_k, stats.tokens_total
    );
    println!(
        "conservation: load sum {} per layer, transition sum {} per step: ok",
        stats.layer_total(),
        (stats.top_k as u64).pow(2) * stats.tokens_total
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn load_trace(path: &Path) -> Result<RoutingStats> {
    RoutingStats::read_json_file(path)
        .map_err(|e| anyhow!("{}", e))
        .with_context(|| format!("loading trace {}", path.display()))
}

fn load_topology(path: &Path) -> Result<Topology> {
    Topology::read_json_file(path)
        .map_err(|e| anyhow!("{}", e))
        .with_context(|| format!("loading topology {}", path.display()))
}

fn solve_clustering(
    stats: &RoutingStats,
    gpus: usize,
    mode: SolverMode,
    gap: f64,
) -> Result<Clustering> {
    match mode {
        SolverMode::Exact | SolverMode::ExhaustiveOracle => cluster::solve_exact(stats, gpus),
        SolverMode::Heuristic => cluster::solve_heuristic_with_gap(stats, gpus, gap),
    }
    .map_err(|e| anyhow!("{}", e))
}

fn solve_placement(
    tensor: &place::CommCostTensor,
    clustering: &Clustering,
    topology: &Topology,
    slack: u64,
    mode: SolverMode,
    gap: f64,
) -> Result<Placement> {
    match mode {
        SolverMode::Exact | SolverMode::Heuristic => {
            place::solve_with_gap(tensor, clustering, topology, slack, gap)
        }
        SolverMode::ExhaustiveOracle => {
            place::solve_exhaustive(tensor, clustering, topology, slack)
        }
    }
    .map_err(|e| anyhow!("{}", e))
}

fn cmd_cluster(args: ClusterArgs) -> Result<()> {
    let stats = load_trace(&args.trace)?;
    let clustering = solve_clustering(&stats, args.gpus, args.mode, args.gap)?;
    clustering
        .write_json_file(&args.out)
        .map_err(|e| anyhow!("{}", e))?;
    println!(
        "clustering: layers={} experts={} clusters={} objective={}",
        clustering.num_layers,
        clustering.num_experts,
        clustering.num_clusters,
        clustering.objective
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_place(args: PlaceArgs) -> Result<()> {
    let stats = load_trace(&args.trace)?;
    let clustering = Clustering::read_json_file(&args.clustering).map_err(|e| anyhow!("{}", e))?;
    let topology = load_topology(&args.topology)?;
    check_dims(&stats, Some(&clustering), &topology, None)?;
    let tensor = place::comm_costs(&stats, &clustering).map_err(|e| anyhow!("{}", e))?;
    let placement = solve_placement(
        &tensor,
        &clustering,
        &topology,
        args.slack,
        args.mode,
        args.gap,
    )?;
    placement
        .write_json_file(&args.out)
        .map_err(|e| anyhow!("{}", e))?;
    println!(
        "placement: objective={:e} balance_slack={}",
        placement.objective, args.slack
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn check_dims(
    stats: &RoutingStats,
    clustering: Option<&Clustering>,
    topology: &Topology,
    gpus_flag: Option<usize>,
) -> Result<()> {
    if let Some(g) = gpus_flag {
        if g != topology.num_gpus {
            bail!(
                "--gpus {} disagrees with the topology's num_gpus {}",
                g,
                topology.num_gpus
            );
        }
    }
    if topology.num_gpus > stats.num_experts {
        bail!(
            "topology has {} GPUs but the trace has only {} experts per layer",
            topology.num_gpus,
            stats.num_experts
        );
    }
    if let Some(c) = clustering {
        if c.num_layers != stats.num_layers || c.num_experts != stats.num_experts {
            bail!(
                "clustering is {} layers x {} experts but trace is {} x {}",
                c.num_layers,
                c.num_experts,
                stats.num_layers,
                stats.num_experts
            );
        }
        if c.num_clusters != topology.num_gpus {
            bail!(
                "clustering has {} clusters but topology has {} GPUs",
                c.num_clusters,
                topology.num_gpus
            );
        }
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let stats = load_trace(&args.trace)?;
    let topology = load_topology(&args.topology)?;
    let placement = Placement::read_json_file(&args.placement).map_err(|e| anyhow!("{}", e))?;
    check_dims(&stats, None, &topology, None)?;
    let params = args.cost.params();
    let report = match &args.clustering {
        Some(path) => {
            let clustering = Clustering::read_json_file(path).map_err(|e| anyhow!("{}", e))?;
            check_dims(&stats, Some(&clustering), &topology, None)?;
            cost::evaluate(&stats, &clustering, &placement, &topology, &params)
        }
        None => cost::evaluate_mapping(&stats, &placement.expert_to_gpu, &topology, &params),
    }
    .map_err(|e| anyhow!("{}", e))?;
    report
        .write_json_file(&args.out)
        .map_err(|e| anyhow!("{}", e))?;
    if let Some(csv) = &args.csv {
        report.write_csv_file(csv).map_err(|e| anyhow!("{}", e))?;
    }
    println!("end_to_end: {:e} s", report.end_to_end);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_pipeline(args: PipelineArgs) -> Result<()> {
    let stats = load_trace(&args.trace)?;
    let topology = load_topology(&args.topology)?;
    check_dims(&stats, None, &topology, args.gpus)?;
    let gpus = topology.num_gpus;
    let params = args.cost.params();
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let out = |name: &str| args.out_dir.join(name);

    log_debug("clustering");
    let clustering = solve_clustering(&stats, gpus, args.mode, args.gap)?;
    log_debug("precomputing inter-cluster volumes");
    let tensor = place::comm_costs(&stats, &clustering).map_err(|e| anyhow!("{}", e))?;
    log_debug("placing clusters");
    let placement = solve_placement(
        &tensor,
        &clustering,
        &topology,
        args.slack,
        args.mode,
        args.gap,
    )?;

    log_debug("building contiguous baseline");
    let (mut base_clustering, mut base_placement) =
        place::baseline_contiguous(stats.num_experts, stats.num_layers, gpus)
            .map_err(|e| anyhow!("{}", e))?;
    base_clustering.objective =
        cluster::objective_o1(&stats, &base_clustering).map_err(|e| anyhow!("{}", e))?;
    let base_tensor = place::comm_costs(&stats, &base_clustering).map_err(|e| anyhow!("{}", e))?;
    base_placement.objective = place::objective_o2(&base_tensor, &base_placement, &topology)
        .map_err(|e| anyhow!("{}", e))?;

    log_debug("scoring both placements");
    let optimized_report = cost::evaluate(&stats, &clustering, &placement, &topology, &params)
        .map_err(|e| anyhow!("{}", e))?;
    let baseline_report = cost::evaluate(
        &stats,
        &base_clustering,
        &base_placement,
        &topology,
        &params,
    )
    .map_err(|e| anyhow!("{}", e))?;
    let comparison = cost::compare(&baseline_report, &optimized_report);

    clustering
        .write_json_file(out("clustering.json"))
        .map_err(|e| anyhow!("{}", e))?;
    placement
        .write_json_file(out("placement.json"))
        .map_err(|e| anyhow!("{}", e))?;
    base_clustering
        .write_json_file(out("baseline_clustering.json"))
        .map_err(|e| anyhow!("{}", e))?;
    base_placement
        .write_json_file(out("baseline_placement.json"))
        .map_err(|e| anyhow!("{}", e))?;
    optimized_report
        .write_json_file(out("report_optimized.json"))
        .map_err(|e| anyhow!("{}", e))?;
    optimized_report
        .write_csv_file(out("report_optimized.csv"))
        .map_err(|e| anyhow!("{}", e))?;
    baseline_report
        .write_json_file(out("report_baseline.json"))
        .map_err(|e| anyhow!("{}", e))?;
    baseline_report
        .write_csv_file(out("report_baseline.csv"))
        .map_err(|e| anyhow!("{}", e))?;
    comparison
        .write_json_file(out("comparison.json"))
        .map_err(|e| anyhow!("{}", e))?;

    println!(
        "clustering objective: {} (baseline {})",
        clustering.objective, base_clustering.objective
    );
    println!(
        "placement objective:  {:e} (baseline {:e})",
        placement.objective, base_placement.objective
    );
    println!(
        "end_to_end: optimized {:e} s, baseline {:e} s",
        optimized_report.end_to_end, baseline_report.end_to_end
    );
    println!("speedup vs contiguous baseline: {:.4}", comparison.speedup);
    println!("artifacts in {}", args.out_dir.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let baseline = CostReport::read_json_file(&args.baseline).map_err(|e| anyhow!("{}", e))?;
    let optimized = CostReport::read_json_file(&args.optimized).map_err(|e| anyhow!("{}", e))?;
    let summary = cost::compare(&baseline, &optimized);
    summary
        .write_json_file(&args.out)
        .map_err(|e| anyhow!("{}", e))?;
    println!("speedup: {:.4}", summary.speedup);
    println!(
        "end_to_end reduction: {:.2}%  comm tail max reduction: {:.2}%",
        summary.end_to_end.reduction_pct, summary.comm_tail_max.reduction_pct
    );
    println!("wrote {}", args.out.display());
    Ok(())
}
