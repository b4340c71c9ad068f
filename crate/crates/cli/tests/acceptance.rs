//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (visible with `--nocapture`). Oracles here are written
//! independently of the library's solver internals: cluster optimality is
//! checked against a labeled surjective-assignment enumerator, placement
//! against full sequence enumeration, and the cost model against
//! straight-line recomputation.
//!
//! Run with: cargo test -p moe-placer-cli --test acceptance -- --nocapture

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use moe_placer::cluster::{self, Clustering};
use moe_placer::cost::{self, CostParams};
use moe_placer::place::{self, CommCostTensor, PlaceError};
use moe_placer::topology::Topology;
use moe_placer::trace::{self, HotOverride, RoutingStats, TraceGenSpec};

/// Modeled end-to-end speedup of the flagship fixture, frozen after its
/// first computation; criterion 7 guards it as a regression value.
const PINNED_FIXTURE_SPEEDUP: f64 = 1.4901452987023158;

/// Small deterministic PRNG for test instances (splitmix64).
struct Rng(u64);

impl Rng {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }
}

/// The flagship scenario: paper-scale shape (32 layers, 8 experts, top-2),
/// heavy skew at layers 14 and 23, strong inter-layer dependency.
fn fixture_spec(seed: u64) -> TraceGenSpec {
    TraceGenSpec {
        num_layers: 32,
        num_experts: 8,
        top_k: 2,
        tokens: 50_000,
        marginal_skew: 1.1,
        dependency_strength: 0.6,
        hot_overrides: vec![
            HotOverride {
                layer: 14,
                experts: vec![0, 1],
                mass_fraction: 0.64,
            },
            HotOverride {
                layer: 23,
                experts: vec![6, 7],
                mass_fraction: 0.69,
            },
        ],
        seed,
    }
}

fn fixture_trace() -> &'static RoutingStats {
    static TRACE: OnceLock<RoutingStats> = OnceLock::new();
    TRACE.get_or_init(|| trace::generate(&fixture_spec(42)).unwrap())
}

fn fixture_topology() -> Topology {
    // Two H100-class nodes of two GPUs: 900 GB/s NVLink inside a node,
    // 50 GB/s (400 Gb/s) InfiniBand between nodes.
    Topology::hierarchical(2, 2, 900e9, 50e9).unwrap()
}

fn fixture_params() -> CostParams {
    CostParams {
        compute_time_per_token: 1e-7,
        bytes_per_token: 8192.0,
        fixed_overhead_per_layer: 0.0,
    }
}

/// Independent oracle for one layer: minimum G-scaled deviation over all
/// G^E labeled assignments that use every cluster, together with the
/// canonically relabeled lexicographically-smallest argmin.
fn oracle_layer_optimum(loads: &[u64], g: usize) -> (u128, Vec<usize>) {
    let e = loads.len();
    let total: u128 = loads.iter().map(|&v| v as u128).sum();
    let mut best_dev = u128::MAX;
    let mut best_row: Vec<usize> = Vec::new();
    for code in 0..(g as u128).pow(e as u32) {
        let mut c = code;
        let mut row = vec![0usize; e];
        let mut seen = vec![false; g];
        for slot in row.iter_mut() {
            *slot = (c % g as u128) as usize;
            seen[*slot] = true;
            c /= g as u128;
        }
        if !seen.iter().all(|&s| s) {
            continue;
        }
        let mut sums = vec![0u128; g];
        for (ex, &cl) in row.iter().enumerate() {
            sums[cl] += loads[ex] as u128;
        }
        let dev: u128 = sums.iter().map(|&t| (g as u128 * t).abs_diff(total)).sum();
        // Canonical labels: first appearance order.
        let mut map = vec![usize::MAX; g];
        let mut next = 0;
        let canon: Vec<usize> = row
            .iter()
            .map(|&cl| {
                if map[cl] == usize::MAX {
                    map[cl] = next;
                    next += 1;
                }
                map[cl]
            })
            .collect();
        if dev < best_dev || (dev == best_dev && canon < best_row) {
            best_dev = dev;
            best_row = canon;
        }
    }
    (best_dev, best_row)
}

fn scaled_layer_deviation(loads: &[u64], row: &[usize], g: usize) -> u128 {
    let total: u128 = loads.iter().map(|&v| v as u128).sum();
    let mut sums = vec![0u128; g];
    for (ex, &cl) in row.iter().enumerate() {
        sums[cl] += loads[ex] as u128;
    }
    sums.iter().map(|&t| (g as u128 * t).abs_diff(total)).sum()
}

fn random_trace(rng: &mut Rng, experts: usize, layers: usize) -> RoutingStats {
    let spec = TraceGenSpec {
        num_layers: layers,
        num_experts: experts,
        top_k: 1 + rng.below(2) as usize,
        tokens: 300 + rng.below(900),
        marginal_skew: 0.4 + rng.below(5) as f64 * 0.4,
        dependency_strength: rng.below(10) as f64 / 10.0,
        hot_overrides: vec![],
        seed: rng.next(),
    };
    trace::generate(&spec).unwrap()
}

#[test]
fn criterion_01_cluster_solver_is_exact_on_random_instances() {
    let start = Instant::now();
    let mut rng = Rng(0xACCE_0001);
    for case in 0..200 {
        let experts = 4 + (case % 5);
        let g = 2 + (case % 3).min(experts - 1);
        let layers = 1 + (case % 2);
        let stats = random_trace(&mut rng, experts, layers);
        let clustering = cluster::solve_exact(&stats, g).unwrap();
        let solved = cluster::scaled_deviation_total(&stats, &clustering).unwrap();
        let oracle: u128 = (0..layers)
            .map(|l| oracle_layer_optimum(&stats.load[l], g).0)
            .sum();
        assert_eq!(
            solved, oracle,
            "case {} (E={}, G={}, L={})",
            case, experts, g, layers
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {:?}", elapsed);
    println!(
        "ACCEPTANCE 01 (cluster solver exact on 200 random instances, {:?}): PASS",
        elapsed
    );
}

#[test]
fn criterion_02_cluster_optimum_dominates_contiguous_baseline() {
    let mut rng = Rng(0xACCE_0002);
    for case in 0..60 {
        // E divisible by G so the contiguous blocking exists.
        let (experts, g) = [(4, 2), (6, 2), (6, 3), (8, 2), (8, 4)][case % 5];
        let layers = 1 + (case % 3);
        let stats = random_trace(&mut rng, experts, layers);
        let exact = cluster::solve_exact(&stats, g).unwrap();
        let (baseline, _) = place::baseline_contiguous(experts, layers, g).unwrap();
        for l in 0..layers {
            let opt = scaled_layer_deviation(&stats.load[l], &exact.assign[l], g);
            let base = scaled_layer_deviation(&stats.load[l], &baseline.assign[l], g);
            assert!(opt <= base, "case {} layer {}: {} > {}", case, l, opt, base);
        }
    }
    // Strict improvement on the skewed fixture's hot layer.
    let stats = fixture_trace();
    let exact = cluster::solve_exact(stats, 4).unwrap();
    let (baseline, _) = place::baseline_contiguous(8, 32, 4).unwrap();
    let opt = scaled_layer_deviation(&stats.load[14], &exact.assign[14], 4);
    let base = scaled_layer_deviation(&stats.load[14], &baseline.assign[14], 4);
    assert!(
        opt < base,
        "fixture layer 14: expected strict improvement, {} vs {}",
        opt,
        base
    );
    println!("ACCEPTANCE 02 (cluster optimum dominates contiguous baseline): PASS");
}

/// Random placement instance: clustering with surjective rows, uniform
/// random transition volumes, and a mixed topology family.
fn random_placement_instance(
    rng: &mut Rng,
    g: usize,
    layers: usize,
) -> (Clustering, CommCostTensor, Topology) {
    let experts = 2 * g;
    let mut assign = Vec::with_capacity(layers);
    for _ in 0..layers {
        let mut row: Vec<usize> = (0..experts).map(|e| if e < g { e } else { 0 }).collect();
        for slot in row.iter_mut().skip(g) {
            *slot = rng.below(g as u64) as usize;
        }
        assign.push(row);
    }
    let clustering = Clustering {
        num_layers: layers,
        num_experts: experts,
        num_clusters: g,
        assign,
        objective: 0.0,
    };
    let costs: Vec<Vec<Vec<u64>>> = (0..layers - 1)
        .map(|_| {
            (0..g)
                .map(|_| (0..g).map(|_| rng.below(100)).collect())
                .collect()
        })
        .collect();
    let tensor = CommCostTensor {
        num_transitions: layers - 1,
        num_clusters: g,
        costs,
    };
    let topology = match rng.below(3) {
        0 => Topology::uniform(g, 1.0 + rng.below(9) as f64).unwrap(),
        1 if g % 2 == 0 => Topology::hierarchical(2, g / 2, 18.0, 2.0).unwrap(),
        _ => {
            let mut matrix = vec![vec![0.0; g]; g];
            for a in 0..g {
                for b in (a + 1)..g {
                    let bw = 1.0 + rng.below(9) as f64;
                    matrix[a][b] = bw;
                    matrix[b][a] = bw;
                }
            }
            Topology::from_matrix(matrix, None).unwrap()
        }
    };
    (clustering, tensor, topology)
}

#[test]
fn criterion_03_placement_solver_matches_exhaustive_oracle() {
    let start = Instant::now();
    let mut rng = Rng(0xACCE_0003);
    let mut infeasible_cases = 0;
    for case in 0..200 {
        let g = 2 + (case % 2);
        let layers = 2 + (case % 3);
        let slack = (case % 2) as u64;
        let (clustering, tensor, topology) = random_placement_instance(&mut rng, g, layers);
        let solved = place::solve(&tensor, &clustering, &topology, slack);
        let oracle = place::solve_exhaustive(&tensor, &clustering, &topology, slack);
        match (solved, oracle) {
            (Ok(a), Ok(b)) => {
                assert_eq!(a.objective, b.objective, "case {} objective mismatch", case);
                assert_eq!(
                    a.gpu_of_cluster, b.gpu_of_cluster,
                    "case {} tie-break mismatch",
                    case
                );
            }
            (
                Err(PlaceError::BalanceInfeasible { minimum: m1, .. }),
                Err(PlaceError::BalanceInfeasible { minimum: m2, .. }),
            ) => {
                assert_eq!(m1, m2, "case {} minimum-slack mismatch", case);
                infeasible_cases += 1;
            }
            (a, b) => panic!(
                "case {}: solver and oracle disagree: {:?} vs {:?}",
                case,
                a.map(|p| p.objective),
                b.map(|p| p.objective)
            ),
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {:?}", elapsed);
    println!(
        "ACCEPTANCE 03 (placement matches exhaustive oracle on 200 instances, \
         {} infeasible handled identically, {:?}): PASS",
        infeasible_cases, elapsed
    );
}

#[test]
fn criterion_04_slack_zero_balances_exactly_and_never_relaxes_silently() {
    let mut rng = Rng(0xACCE_0004);
    let mut balanced_placements = 0;
    for case in 0..60 {
        let g = 2 + (case % 2);
        let layers = 2 + (case % 3);
        let (clustering, tensor, topology) = random_placement_instance(&mut rng, g, layers);
        match place::solve(&tensor, &clustering, &topology, 0) {
            Ok(placement) => {
                let mut counts = vec![0u64; g];
                for row in &placement.expert_to_gpu {
                    for &gpu in row {
                        counts[gpu] += 1;
                    }
                }
                let target = (clustering.num_experts * layers / g) as u64;
                assert!(
                    counts.iter().all(|&c| c == target),
                    "case {}: counts {:?} != {}",
                    case,
                    counts,
                    target
                );
                balanced_placements += 1;
            }
            Err(PlaceError::BalanceInfeasible { .. }) => {}
            Err(e) => panic!("case {}: unexpected error {}", case, e),
        }
    }
    assert!(
        balanced_placements > 10,
        "too few feasible cases: {}",
        balanced_placements
    );

    // The fixture placement balances exactly: 8 * 32 / 4 = 64 per GPU.
    let stats = fixture_trace();
    let clustering = cluster::solve_exact(stats, 4).unwrap();
    let tensor = place::comm_costs(stats, &clustering).unwrap();
    let placement =
        place::solve_with_gap(&tensor, &clustering, &fixture_topology(), 0, 0.025).unwrap();
    let shares = cost::gpu_memory_share(&clustering, &placement).unwrap();
    assert_eq!(shares, vec![64, 64, 64, 64]);

    // Indivisible E*L/G fails loudly instead of rounding.
    let bad = Clustering {
        num_layers: 1,
        num_experts: 4,
        num_clusters: 3,
        assign: vec![vec![0, 1, 2, 0]],
        objective: 0.0,
    };
    let tensor3 = CommCostTensor {
        num_transitions: 0,
        num_clusters: 3,
        costs: vec![],
    };
    let topo3 = Topology::uniform(3, 1.0).unwrap();
    assert!(matches!(
        place::solve(&tensor3, &bad, &topo3, 0),
        Err(PlaceError::NotDivisible { .. })
    ));
    assert!(matches!(
        place::baseline_contiguous(6, 2, 4),
        Err(PlaceError::NotDivisible { .. })
    ));
    println!(
        "ACCEPTANCE 04 (slack-0 placements balance exactly, {} checked): PASS",
        balanced_placements
    );
}

#[test]
fn criterion_05_skewed_hot_pair_is_separated_and_share_optimal() {
    let stats = fixture_trace();
    let layer = 14;
    let layer_total: u64 = stats.load[layer].iter().sum();

    // The trace itself carries the engineered 64% share.
    let hot = stats.load[layer][0] + stats.load[layer][1];
    assert_eq!(
        hot,
        (0.64 * (stats.top_k as u64 * stats.tokens_total) as f64).round() as u64
    );

    let clustering = cluster::solve_exact(stats, 4).unwrap();
    assert_ne!(
        clustering.assign[layer][0], clustering.assign[layer][1],
        "experts 0 and 1 must land in different clusters"
    );
    // Solver's layer partition matches the independent enumerator.
    let (oracle_dev, oracle_row) = oracle_layer_optimum(&stats.load[layer], 4);
    assert_eq!(clustering.assign[layer], oracle_row);
    assert_eq!(
        scaled_layer_deviation(&stats.load[layer], &clustering.assign[layer], 4),
        oracle_dev
    );

    // Modeled max GPU share drops from 0.64 to the enumeration optimum.
    let topology = fixture_topology();
    let params = fixture_params();
    let tensor = place::comm_costs(stats, &clustering).unwrap();
    let placement = place::solve_with_gap(&tensor, &clustering, &topology, 0, 0.025).unwrap();
    let report = cost::evaluate(stats, &clustering, &placement, &topology, &params).unwrap();
    let (base_clustering, base_placement) = place::baseline_contiguous(8, 32, 4).unwrap();
    let base_report =
        cost::evaluate(stats, &base_clustering, &base_placement, &topology, &params).unwrap();

    let max_share = |report: &cost::CostReport| {
        report.gpu_token_share[layer]
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    };
    let baseline_share = max_share(&base_report);
    let optimized_share = max_share(&report);
    assert_eq!(baseline_share, hot as f64 / layer_total as f64);

    let mut oracle_sums = vec![0u64; 4];
    for (e, &c) in oracle_row.iter().enumerate() {
        oracle_sums[c] += stats.load[layer][e];
    }
    let oracle_share = *oracle_sums.iter().max().unwrap() as f64 / layer_total as f64;
    assert_eq!(optimized_share, oracle_share);
    assert!(
        optimized_share < 0.64,
        "share {} should drop below 0.64",
        optimized_share
    );
    println!(
        "ACCEPTANCE 05 (hot pair separated; max layer-14 share {:.4} -> {:.4}): PASS",
        baseline_share, optimized_share
    );
}

#[test]
fn criterion_06_placement_objective_agrees_with_cost_model() {
    let params = fixture_params();
    let mut worst_rel = 0.0f64;
    let mut check = |stats: &RoutingStats, g: usize, topology: &Topology| {
        let clustering = cluster::solve_exact(stats, g).unwrap();
        let tensor = place::comm_costs(stats, &clustering).unwrap();
        let placement = match place::solve_with_gap(&tensor, &clustering, topology, 0, 0.025) {
            Ok(p) => p,
            Err(PlaceError::BalanceInfeasible { minimum, .. }) => {
                place::solve_with_gap(&tensor, &clustering, topology, minimum, 0.025).unwrap()
            }
            Err(e) => panic!("{}", e),
        };
        let report = cost::evaluate(stats, &clustering, &placement, topology, &params).unwrap();
        let mut comm_sum = 0.0f64;
        for t in (0..report.per_transition_comm.len()).rev() {
            comm_sum = report.per_transition_comm[t].tail + comm_sum;
        }
        let via_objective =
            place::objective_o2(&tensor, &placement, topology).unwrap() * params.bytes_per_token;
        let rel = if via_objective == 0.0 {
            comm_sum.abs()
        } else {
            (comm_sum - via_objective).abs() / via_objective
        };
        worst_rel = worst_rel.max(rel);
        assert!(rel <= 1e-12, "relative disagreement {} exceeds 1e-12", rel);
    };

    check(fixture_trace(), 4, &fixture_topology());
    let mut rng = Rng(0xACCE_0006);
    for _ in 0..10 {
        let stats = random_trace(&mut rng, 8, 5);
        check(&stats, 4, &Topology::uniform(4, 5e9).unwrap());
        check(
            &stats,
            2,
            &Topology::hierarchical(2, 1, 900e9, 50e9).unwrap(),
        );
    }
    println!(
        "ACCEPTANCE 06 (objective vs cost model, worst relative error {:.2e}): PASS",
        worst_rel
    );
}

#[test]
fn criterion_07_fixture_speedup_exceeds_one_and_matches_pin() {
    let stats = fixture_trace();
    let topology = fixture_topology();
    let params = fixture_params();

    let clustering = cluster::solve_exact(stats, 4).unwrap();
    let tensor = place::comm_costs(stats, &clustering).unwrap();
    let placement = place::solve_with_gap(&tensor, &clustering, &topology, 0, 0.025).unwrap();
    let optimized = cost::evaluate(stats, &clustering, &placement, &topology, &params).unwrap();

    let (mut base_clustering, mut base_placement) = place::baseline_contiguous(8, 32, 4).unwrap();
    base_clustering.objective = cluster::objective_o1(stats, &base_clustering).unwrap();
    let base_tensor = place::comm_costs(stats, &base_clustering).unwrap();
    base_placement.objective =
        place::objective_o2(&base_tensor, &base_placement, &topology).unwrap();
    let baseline =
        cost::evaluate(stats, &base_clustering, &base_placement, &topology, &params).unwrap();

    let summary = cost::compare(&baseline, &optimized);
    assert!(
        summary.speedup > 1.0,
        "speedup {} must exceed 1.0",
        summary.speedup
    );
    let rel = (summary.speedup - PINNED_FIXTURE_SPEEDUP).abs() / PINNED_FIXTURE_SPEEDUP;
    assert!(
        rel <= 1e-9,
        "speedup {} drifted from pinned {} (rel {})",
        summary.speedup,
        PINNED_FIXTURE_SPEEDUP,
        rel
    );
    // The optimizer also never loses to the identity assignment under its
    // own clustering.
    let identity = place::Placement {
        gpu_of_cluster: vec![(0..4).collect(); 32],
        expert_to_gpu: (0..32)
            .map(|l| (0..8).map(|e| clustering.assign[l][e]).collect())
            .collect(),
        objective: 0.0,
        balance_slack: 0,
    };
    let identity_objective = place::objective_o2(&tensor, &identity, &topology).unwrap();
    assert!(placement.objective <= identity_objective);
    println!(
        "ACCEPTANCE 07 (fixture speedup {:.6} > 1, matches pin {:.6}): PASS",
        summary.speedup, PINNED_FIXTURE_SPEEDUP
    );
}

#[test]
fn criterion_08_routing_statistics_are_seed_invariant() {
    let a = fixture_trace();
    let b = trace::generate(&fixture_spec(4242)).unwrap();
    let tv = trace::total_variation(a, &b).unwrap();
    let max_tv = tv.iter().cloned().fold(0.0, f64::max);
    assert!(
        max_tv < 0.05,
        "max per-layer total variation {} exceeds 0.05",
        max_tv
    );
    println!(
        "ACCEPTANCE 08 (routing invariance across seeds, max TV {:.4}): PASS",
        max_tv
    );
}

#[test]
fn criterion_09_conservation_holds_everywhere() {
    let mut rng = Rng(0xACCE_0009);
    let mut checked = 0;
    let params = fixture_params();
    for case in 0..100 {
        let experts = 3 + (case % 6);
        let layers = 1 + (case % 4);
        let stats = random_trace(&mut rng, experts, layers);
        assert!(
            stats.validate().is_empty(),
            "case {} violates conservation",
            case
        );

        let g = 2.min(experts);
        let clustering = cluster::solve_exact(&stats, g).unwrap();
        let tensor = place::comm_costs(&stats, &clustering).unwrap();
        for (l, slice) in tensor.costs.iter().enumerate() {
            let cluster_mass: u64 = slice.iter().flatten().sum();
            let expert_mass: u64 = stats.transitions[l].iter().flatten().sum();
            assert_eq!(cluster_mass, expert_mass, "case {} transition {}", case, l);
        }

        let topology = Topology::uniform(g, 1e9).unwrap();
        if let Ok(placement) = place::solve(&tensor, &clustering, &topology, 1) {
            // Pair volumes, diagonal included, conserve the transition mass.
            for l in 0..tensor.num_transitions {
                let volumes = place::layer_pair_volumes(&tensor, &placement, l).unwrap();
                let total: u64 = volumes.iter().flatten().sum();
                let expert_mass: u64 = stats.transitions[l].iter().flatten().sum();
                assert_eq!(total, expert_mass);
            }
            // Per-GPU compute times sum to compute_per_token * k * tokens.
            let report =
                cost::evaluate(&stats, &clustering, &placement, &topology, &params).unwrap();
            let expected = params.compute_time_per_token * stats.layer_total() as f64;
            for phase in &report.per_layer_compute {
                let sum = phase.avg * g as f64;
                assert!((sum - expected).abs() <= 1e-12 * expected.max(1e-300));
            }
            checked += 1;
        }
    }
    assert!(stats_fixture_conserves());
    assert!(checked > 50, "only {} full-chain cases", checked);
    println!("ACCEPTANCE 09 (conservation on fixtures and 100 random traces): PASS");
}

fn stats_fixture_conserves() -> bool {
    fixture_trace().validate().is_empty()
}

fn run_cli(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_moe-placer"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn moe-placer")
}

#[test]
fn criterion_10_pipeline_artifacts_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let generate = [
        "generate-trace",
        "--layers",
        "8",
        "--experts",
        "8",
        "--top-k",
        "2",
        "--tokens",
        "4000",
        "--skew",
        "1.2",
        "--dependency",
        "0.5",
        "--hot-override",
        "3:0+1:0.64",
        "--seed",
        "1234",
        "--out",
        "trace.json",
    ];
    assert!(run_cli(dir, &generate).status.success());
    Topology::hierarchical(2, 2, 900e9, 50e9)
        .unwrap()
        .write_json_file(dir.join("topo.json"))
        .unwrap();
    for out_dir in ["run_a", "run_b"] {
        let out = run_cli(
            dir,
            &[
                "pipeline",
                "--trace",
                "trace.json",
                "--topology",
                "topo.json",
                "--out-dir",
                out_dir,
            ],
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let names: Vec<String> = fs::read_dir(dir.join("run_a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 9);
    for name in &names {
        let a = fs::read(dir.join("run_a").join(name)).unwrap();
        let b = fs::read(dir.join("run_b").join(name)).unwrap();
        assert_eq!(a, b, "artifact {} differs between runs", name);
    }
    println!(
        "ACCEPTANCE 10 (two pipeline runs, {} artifacts byte-identical): PASS",
        names.len()
    );
}

#[test]
fn criterion_11_paper_scale_pipeline_under_sixty_seconds() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let start = Instant::now();
    let generate = [
        "generate-trace",
        "--layers",
        "32",
        "--experts",
        "8",
        "--top-k",
        "2",
        "--tokens",
        "50000",
        "--skew",
        "1.1",
        "--dependency",
        "0.6",
        "--hot-override",
        "14:0+1:0.64",
        "--hot-override",
        "23:6+7:0.69",
        "--seed",
        "42",
        "--out",
        "trace.json",
    ];
    let out = run_cli(dir, &generate);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    Topology::hierarchical(2, 2, 900e9, 50e9)
        .unwrap()
        .write_json_file(dir.join("topo.json"))
        .unwrap();
    let out = run_cli(
        dir,
        &[
            "pipeline",
            "--trace",
            "trace.json",
            "--topology",
            "topo.json",
            "--out-dir",
            "out",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 60.0,
        "paper-scale pipeline took {:?}",
        elapsed
    );
    let comparison: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("out/comparison.json")).unwrap()).unwrap();
    assert!(comparison["speedup"].as_f64().unwrap() > 1.0);
    println!(
        "ACCEPTANCE 11 (paper-scale pipeline in {:?}, speedup {:.4}): PASS",
        elapsed,
        comparison["speedup"].as_f64().unwrap()
    );
}
