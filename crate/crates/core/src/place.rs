//! Cluster-to-GPU placement: precompute inter-cluster token volumes, then
//! pick one permutation of clusters onto GPUs per layer minimizing the
//! summed per-transition maximum of bandwidth-normalized pair volumes,
//! subject to a global per-GPU expert-count balance.
//!
//! The solver is exact branch-and-bound over layers: the lower bound is a
//! dynamic program over (layer, permutation) that ignores the balance
//! constraint. Sequence costs are accumulated back-to-front everywhere
//! (solver, oracle, objective), which makes the DP value an exact f64 lower
//! bound of every completion (f64 addition is monotone), so no floating
//! point tolerance is needed anywhere: pruning, optima, and tie-breaks are
//! reproducible bit-for-bit.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::Clustering;
use crate::topology::Topology;
use crate::trace::RoutingStats;

/// Token volumes between clusters of neighboring layers:
/// `costs[l][c1][c2]` counts tokens moving from cluster `c1` at layer `l`
/// to cluster `c2` at layer `l+1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCostTensor {
    pub num_transitions: usize,
    pub num_clusters: usize,
    pub costs: Vec<Vec<Vec<u64>>>,
}

/// Per-layer assignment of clusters to GPUs, with the composed expert map.
///
/// Every row of `gpu_of_cluster` is a permutation of `[0, G)`;
/// `expert_to_gpu[l][e]` is `gpu_of_cluster[l][assign[l][e]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub gpu_of_cluster: Vec<Vec<usize>>,
    pub expert_to_gpu: Vec<Vec<usize>>,
    /// Achieved value of the placement objective.
    pub objective: f64,
    /// Allowed per-GPU deviation from `E*L/G` experts (0 = exact balance).
    pub balance_slack: u64,
}

#[derive(Debug)]
pub enum PlaceError {
    DimMismatch(String),
    /// Exact balance requires `E*L` divisible by `G`.
    NotDivisible {
        experts: usize,
        layers: usize,
        gpus: usize,
    },
    /// No permutation sequence satisfies the balance constraint at the
    /// requested slack; `minimum` is the smallest feasible slack.
    BalanceInfeasible {
        requested: u64,
        minimum: u64,
    },
    TooLarge(String),
    InvalidClustering(String),
    InvalidPlacement(String),
    Io {
        path: String,
        source: std::io::Error,
    },
    Parse {
        path: String,
        detail: String,
    },
}

impl fmt::Display for PlaceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlaceError::DimMismatch(msg) => write!(f, "dimension mismatch: {}", msg),
            PlaceError::NotDivisible {
                experts,
                layers,
                gpus,
            } => write!(
                f,
                "exact balance is impossible: {} experts * {} layers = {} is not divisible \
                 by {} GPUs; allow slack >= 1 or change the GPU count",
                experts,
                layers,
                experts * layers,
                gpus
            ),
            PlaceError::BalanceInfeasible { requested, minimum } => write!(
                f,
                "no cluster-to-GPU assignment satisfies the balance constraint at slack {}; \
                 the minimum achievable slack is {}",
                requested, minimum
            ),
            PlaceError::TooLarge(msg) => write!(f, "instance too large: {}", msg),
            PlaceError::InvalidClustering(msg) => write!(f, "invalid clustering: {}", msg),
            PlaceError::InvalidPlacement(msg) => write!(f, "invalid placement: {}", msg),
            PlaceError::Io { path, source } => write!(f, "io error on {}: {}", path, source),
            PlaceError::Parse { path, detail } => write!(f, "parse error in {}: {}", path, detail),
        }
    }
}

impl std::error::Error for PlaceError {}

impl Placement {
    /// Structural checks that need no clustering: permutation rows and the
    /// recorded balance slack.
    pub fn validate_shape(&self) -> Result<(), PlaceError> {
        let num_layers = self.gpu_of_cluster.len();
        if num_layers == 0 {
            return Err(PlaceError::InvalidPlacement("no layers".into()));
        }
        let g = self.gpu_of_cluster[0].len();
        for (l, row) in self.gpu_of_cluster.iter().enumerate() {
            if row.len() != g {
                return Err(PlaceError::InvalidPlacement(format!(
                    "layer {} maps {} clusters, expected {}",
                    l,
                    row.len(),
                    g
                )));
            }
            let mut seen = vec![false; g];
            for &gpu in row {
                if gpu >= g || seen[gpu] {
                    return Err(PlaceError::InvalidPlacement(format!(
                        "layer {} cluster-to-GPU row {:?} is not a permutation of 0..{}",
                        l, row, g
                    )));
                }
                seen[gpu] = true;
            }
        }
        if self.expert_to_gpu.len() != num_layers {
            return Err(PlaceError::InvalidPlacement(format!(
                "expert map has {} rows for {} layers",
                self.expert_to_gpu.len(),
                num_layers
            )));
        }
        let e = self.expert_to_gpu[0].len();
        for (l, row) in self.expert_to_gpu.iter().enumerate() {
            if row.len() != e {
                return Err(PlaceError::InvalidPlacement(format!(
                    "layer {} expert map has {} entries, expected {}",
                    l,
                    row.len(),
                    e
                )));
            }
            if let Some(&gpu) = row.iter().find(|&&gpu| gpu >= g) {
                return Err(PlaceError::InvalidPlacement(format!(
                    "layer {} routes an expert to GPU {} (num_gpus = {})",
                    l, gpu, g
                )));
            }
        }
        let counts = expert_counts(&self.expert_to_gpu, g);
        let total = (e * num_layers) as i128;
        for (gpu, &count) in counts.iter().enumerate() {
            let scaled_dev = (g as i128 * count as i128 - total).unsigned_abs();
            if scaled_dev > g as u128 * self.balance_slack as u128 {
                return Err(PlaceError::InvalidPlacement(format!(
                    "GPU {} hosts {} experts, violating balance slack {} around {}/{}",
                    gpu, count, self.balance_slack, total, g
                )));
            }
        }
        Ok(())
    }

    /// Full validation: shape plus consistency with the clustering that
    /// produced this placement.
    pub fn validate_against(&self, clustering: &Clustering) -> Result<(), PlaceError> {
        self.validate_shape()?;
        clustering
            .validate()
            .map_err(|e| PlaceError::InvalidClustering(e.to_string()))?;
        if self.gpu_of_cluster.len() != clustering.num_layers
            || self.gpu_of_cluster[0].len() != clustering.num_clusters
            || self.expert_to_gpu[0].len() != clustering.num_experts
        {
            return Err(PlaceError::DimMismatch(format!(
                "placement is {} layers x {} clusters x {} experts but clustering is {}x{}x{}",
                self.gpu_of_cluster.len(),
                self.gpu_of_cluster[0].len(),
                self.expert_to_gpu[0].len(),
                clustering.num_layers,
                clustering.num_clusters,
                clustering.num_experts
            )));
        }
        for l in 0..clustering.num_layers {
            for e in 0..clustering.num_experts {
                let expected = self.gpu_of_cluster[l][clustering.assign[l][e]];
                if self.expert_to_gpu[l][e] != expected {
                    return Err(PlaceError::InvalidPlacement(format!(
                        "layer {} expert {} maps to GPU {} but its cluster sits on GPU {}",
                        l, e, self.expert_to_gpu[l][e], expected
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn read_json_file(path: impl AsRef<Path>) -> Result<Placement, PlaceError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| PlaceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let file: PlacementFile =
            serde_path_to_error::deserialize(de).map_err(|err| PlaceError::Parse {
                path: path.display().to_string(),
                detail: format!("{} (at {})", err.inner(), err.path()),
            })?;
        let placement = Placement {
            gpu_of_cluster: file.gpu_of_cluster,
            expert_to_gpu: file.expert_to_gpu,
            objective: file.objective,
            balance_slack: file.balance_slack,
        };
        placement.validate_shape()?;
        Ok(placement)
    }

    pub fn to_json_string(&self) -> String {
        let file = PlacementFile {
            balance_slack: self.balance_slack,
            objective: self.objective,
            gpu_of_cluster: self.gpu_of_cluster.clone(),
            expert_to_gpu: self.expert_to_gpu.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("placement serialize");
        s.push('\n');
        s
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>) -> Result<(), PlaceError> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|source| PlaceError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PlacementFile {
    balance_slack: u64,
    objective: f64,
    gpu_of_cluster: Vec<Vec<usize>>,
    expert_to_gpu: Vec<Vec<usize>>,
}

fn expert_counts(expert_to_gpu: &[Vec<usize>], num_gpus: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_gpus];
    for row in expert_to_gpu {
        for &gpu in row {
            counts[gpu] += 1;
        }
    }
    counts
}

/// Aggregate expert-level transitions into cluster-level token volumes.
pub fn comm_costs(
    stats: &RoutingStats,
    clustering: &Clustering,
) -> Result<CommCostTensor, PlaceError> {
    if stats.num_layers != clustering.num_layers || stats.num_experts != clustering.num_experts {
        return Err(PlaceError::DimMismatch(format!(
            "trace is {}x{} but clustering is {}x{}",
            stats.num_layers, stats.num_experts, clustering.num_layers, clustering.num_experts
        )));
    }
    clustering
        .validate()
        .map_err(|e| PlaceError::InvalidClustering(e.to_string()))?;
    let g = clustering.num_clusters;
    let transitions = stats.num_layers.saturating_sub(1);
    let mut costs = vec![vec![vec![0u64; g]; g]; transitions];
    for l in 0..transitions {
        for e1 in 0..stats.num_experts {
            let c1 = clustering.assign[l][e1];
            for e2 in 0..stats.num_experts {
                let c2 = clustering.assign[l + 1][e2];
                costs[l][c1][c2] += stats.transitions[l][e1][e2];
            }
        }
    }
    Ok(CommCostTensor {
        num_transitions: transitions,
        num_clusters: g,
        costs,
    })
}

/// GPU-pair token volumes for one transition under fixed permutations.
fn pair_volumes(
    costs_l: &[Vec<u64>],
    perm_from: &[usize],
    perm_to: &[usize],
    num_gpus: usize,
) -> Vec<Vec<u64>> {
    let mut volumes = vec![vec![0u64; num_gpus]; num_gpus];
    for (c1, row) in costs_l.iter().enumerate() {
        let g1 = perm_from[c1];
        for (c2, &v) in row.iter().enumerate() {
            volumes[g1][perm_to[c2]] += v;
        }
    }
    volumes
}

/// GPU-pair token volumes for transition `l` of a placement. The diagonal
/// (same-GPU traffic) is reported but excluded from every cost.
pub fn layer_pair_volumes(
    tensor: &CommCostTensor,
    placement: &Placement,
    l: usize,
) -> Result<Vec<Vec<u64>>, PlaceError> {
    if l >= tensor.num_transitions {
        return Err(PlaceError::DimMismatch(format!(
            "transition {} out of range ({} transitions)",
            l, tensor.num_transitions
        )));
    }
    if placement.gpu_of_cluster.len() != tensor.num_transitions + 1
        || placement.gpu_of_cluster[0].len() != tensor.num_clusters
    {
        return Err(PlaceError::DimMismatch(format!(
            "placement has {} layers x {} clusters but tensor expects {} x {}",
            placement.gpu_of_cluster.len(),
            placement.gpu_of_cluster[0].len(),
            tensor.num_transitions + 1,
            tensor.num_clusters
        )));
    }
    Ok(pair_volumes(
        &tensor.costs[l],
        &placement.gpu_of_cluster[l],
        &placement.gpu_of_cluster[l + 1],
        tensor.num_clusters,
    ))
}

/// The slowest remote link for one transition: max over ordered GPU pairs
/// `g1 != g2` of volume / bandwidth. Shared by the placement objective and
/// the cost model so the two can never drift apart.
pub fn pair_tail_time(volumes: &[Vec<u64>], topology: &Topology) -> f64 {
    let mut max = 0.0f64;
    for (g1, row) in volumes.iter().enumerate() {
        for (g2, &v) in row.iter().enumerate() {
            if g1 == g2 {
                continue;
            }
            let t = v as f64 / topology.bandwidth[g1][g2];
            if t > max {
                max = t;
            }
        }
    }
    max
}

/// Placement objective: per-transition tail times summed back-to-front.
///
/// The back-to-front accumulation matches the solver's bound arithmetic
/// exactly; the value is the plain sum of per-transition tails.
pub fn objective_o2(
    tensor: &CommCostTensor,
    placement: &Placement,
    topology: &Topology,
) -> Result<f64, PlaceError> {
    if topology.num_gpus != tensor.num_clusters {
        return Err(PlaceError::DimMismatch(format!(
            "topology has {} GPUs but tensor has {} clusters",
            topology.num_gpus, tensor.num_clusters
        )));
    }
    let mut acc = 0.0f64;
    for l in (0..tensor.num_transitions).rev() {
        acc = pair_tail_time(&layer_pair_volumes(tensor, placement, l)?, topology) + acc;
    }
    Ok(acc)
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product::<u128>().max(1)
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(factorial(n) as usize);
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        out.push(perm.clone());
        // Next lexicographic permutation.
        let Some(i) = (0..n.saturating_sub(1))
            .rev()
            .find(|&i| perm[i] < perm[i + 1])
        else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| perm[j] > perm[i]).unwrap();
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
    out
}

/// Shared, validated context for the exact and exhaustive solvers.
struct Instance<'a> {
    tensor: &'a CommCostTensor,
    topology: &'a Topology,
    num_layers: usize,
    num_gpus: usize,
    num_experts: usize,
    /// Cluster sizes per layer, indexed `[l][c]`.
    sizes: Vec<Vec<usize>>,
    perms: Vec<Vec<usize>>,
}

impl<'a> Instance<'a> {
    fn new(
        tensor: &'a CommCostTensor,
        clustering: &Clustering,
        topology: &'a Topology,
        balance_slack: u64,
    ) -> Result<Instance<'a>, PlaceError> {
        clustering
            .validate()
            .map_err(|e| PlaceError::InvalidClustering(e.to_string()))?;
        let g = clustering.num_clusters;
        if tensor.num_clusters != g {
            return Err(PlaceError::DimMismatch(format!(
                "clustering has {} clusters but tensor has {}",
                g, tensor.num_clusters
            )));
        }
        if tensor.num_transitions + 1 != clustering.num_layers {
            return Err(PlaceError::DimMismatch(format!(
                "clustering has {} layers but tensor has {} transitions",
                clustering.num_layers, tensor.num_transitions
            )));
        }
        if topology.num_gpus != g {
            return Err(PlaceError::DimMismatch(format!(
                "topology has {} GPUs but clustering has {} clusters",
                topology.num_gpus, g
            )));
        }
        if balance_slack == 0 && (clustering.num_experts * clustering.num_layers) % g != 0 {
            return Err(PlaceError::NotDivisible {
                experts: clustering.num_experts,
                layers: clustering.num_layers,
                gpus: g,
            });
        }
        let sizes: Vec<Vec<usize>> = (0..clustering.num_layers)
            .map(|l| clustering.cluster_sizes(l))
            .collect();
        Ok(Instance {
            tensor,
            topology,
            num_layers: clustering.num_layers,
            num_gpus: g,
            num_experts: clustering.num_experts,
            sizes,
            perms: permutations(g),
        })
    }

    fn transition_cost(&self, l: usize, perm_from: usize, perm_to: usize) -> f64 {
        pair_tail_time(
            &pair_volumes(
                &self.tensor.costs[l],
                &self.perms[perm_from],
                &self.perms[perm_to],
                self.num_gpus,
            ),
            self.topology,
        )
    }

    /// Does a complete count vector satisfy `|G*count - E*L| <= G*slack`?
    fn balanced(&self, counts: &[u64], slack: u64) -> bool {
        let g = self.num_gpus as i128;
        let total = (self.num_experts * self.num_layers) as i128;
        counts
            .iter()
            .all(|&c| (g * c as i128 - total).unsigned_abs() <= g as u128 * slack as u128)
    }

    fn build_placement(
        &self,
        seq: &[usize],
        clustering: &Clustering,
        balance_slack: u64,
    ) -> Placement {
        let gpu_of_cluster: Vec<Vec<usize>> =
            seq.iter().map(|&pi| self.perms[pi].clone()).collect();
        let expert_to_gpu: Vec<Vec<usize>> = (0..self.num_layers)
            .map(|l| {
                (0..self.num_experts)
                    .map(|e| gpu_of_cluster[l][clustering.assign[l][e]])
                    .collect()
            })
            .collect();
        let placement = Placement {
            gpu_of_cluster,
            expert_to_gpu,
            objective: 0.0,
            balance_slack,
        };
        let objective = objective_o2(self.tensor, &placement, self.topology)
            .expect("solver-built placement scores");
        Placement {
            objective,
            ..placement
        }
    }
}

/// Smallest slack for which some permutation sequence balances the given
/// per-layer cluster sizes across GPUs. Memoized search over sorted count
/// vectors (the deviation is symmetric under GPU relabeling).
fn min_achievable_slack(sizes: &[Vec<usize>], num_gpus: usize) -> u64 {
    let num_layers = sizes.len();
    let total = (sizes
        .iter()
        .map(|row| row.iter().sum::<usize>())
        .sum::<usize>()) as i128;
    let g = num_gpus as i128;
    let perms = permutations(num_gpus);

    // Distinct count-deltas per layer: permutations of equal sizes collapse.
    let layer_deltas: Vec<Vec<Vec<u64>>> = sizes
        .iter()
        .map(|row| {
            let mut seen: Vec<Vec<u64>> = Vec::new();
            for perm in &perms {
                let mut delta = vec![0u64; num_gpus];
                for (c, &gpu) in perm.iter().enumerate() {
                    delta[gpu] = row[c] as u64;
                }
                if !seen.contains(&delta) {
                    seen.push(delta);
                }
            }
            seen
        })
        .collect();

    fn rec(
        layer: usize,
        counts: &mut Vec<u64>,
        layer_deltas: &[Vec<Vec<u64>>],
        total: i128,
        g: i128,
        memo: &mut HashMap<(usize, Vec<u64>), u128>,
    ) -> u128 {
        if layer == layer_deltas.len() {
            return counts
                .iter()
                .map(|&c| (g * c as i128 - total).unsigned_abs())
                .max()
                .unwrap();
        }
        let mut key_counts = counts.clone();
        key_counts.sort_unstable();
        let key = (layer, key_counts);
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let mut best = u128::MAX;
        for delta in &layer_deltas[layer] {
            for (c, d) in counts.iter_mut().zip(delta) {
                *c += d;
            }
            best = best.min(rec(layer + 1, counts, layer_deltas, total, g, memo));
            for (c, d) in counts.iter_mut().zip(delta) {
                *c -= d;
            }
        }
        memo.insert(key, best);
        best
    }

    let mut memo = HashMap::new();
    let mut counts = vec![0u64; num_gpus];
    let scaled = rec(0, &mut counts, &layer_deltas, total, g, &mut memo);
    debug_assert!(num_layers == 0 || scaled < u128::MAX);
    // Scaled deviation d needs slack s with d <= G*s.
    scaled.div_ceil(num_gpus as u128) as u64
}

/// Exact placement by branch-and-bound over layers. See [`solve_with_gap`].
pub fn solve(
    tensor: &CommCostTensor,
    clustering: &Clustering,
    topology: &Topology,
    balance_slack: u64,
) -> Result<Placement, PlaceError> {
    solve_with_gap(tensor, clustering, topology, balance_slack, 0.0)
}

/// Branch-and-bound placement with an optional early-stop gap.
///
/// With `gap == 0` the result is the exact optimum, tie-broken toward the
/// lexicographically smallest permutation sequence; this matches
/// [`solve_exhaustive`] bit-for-bit. A positive `gap` prunes subtrees that
/// cannot improve the incumbent by more than the given relative amount,
/// trading the optimality certificate for speed.
pub fn solve_with_gap(
    tensor: &CommCostTensor,
    clustering: &Clustering,
    topology: &Topology,
    balance_slack: u64,
    gap: f64,
) -> Result<Placement, PlaceError> {
    let inst = Instance::new(tensor, clustering, topology, balance_slack)?;
    let nfact = inst.perms.len();
    let layers = inst.num_layers;
    let dp_work = (layers as u128)
        * (nfact as u128)
        * (nfact as u128)
        * (inst.num_gpus as u128)
        * (inst.num_gpus as u128);
    if dp_work > 5_000_000_000 {
        return Err(PlaceError::TooLarge(format!(
            "{} GPUs x {} layers needs {} bound-table operations; \
             this solver handles up to ~6 GPUs per expert-parallel group",
            inst.num_gpus, layers, dp_work
        )));
    }
    if !(0.0..1.0).contains(&gap) {
        return Err(PlaceError::InvalidPlacement(format!(
            "optimality gap {} must lie in [0, 1)",
            gap
        )));
    }

    // Cache transition costs when the table is small enough; otherwise
    // recompute on the fly (only matters for G >= 6).
    let transitions = inst.tensor.num_transitions;
    let cached = transitions as u128 * (nfact as u128).pow(2) <= 8_000_000;
    let cache: Option<Vec<Vec<f64>>> = if cached {
        Some(
            (0..transitions)
                .map(|l| {
                    let mut table = vec![0.0f64; nfact * nfact];
                    for p in 0..nfact {
                        for q in 0..nfact {
                            table[p * nfact + q] = inst.transition_cost(l, p, q);
                        }
                    }
                    table
                })
                .collect(),
        )
    } else {
        None
    };
    let tc = |l: usize, p: usize, q: usize| -> f64 {
        match &cache {
            Some(tables) => tables[l][p * nfact + q],
            None => inst.transition_cost(l, p, q),
        }
    };

    // Exact suffix bound: cheapest completion of transitions l.. given layer
    // l's permutation, ignoring balance. Accumulated back-to-front, like
    // every sequence cost in this module, so for the optimal completion the
    // bound reproduces the leaf value bit-for-bit (f64 addition is
    // monotone). This bound decides exploration and preserves tie-breaks.
    let mut suffix_exact = vec![vec![0.0f64; nfact]; layers];
    for l in (0..transitions).rev() {
        for p in 0..nfact {
            let mut best = f64::INFINITY;
            for q in 0..nfact {
                let v = tc(l, p, q) + suffix_exact[l + 1][q];
                if v < best {
                    best = v;
                }
            }
            suffix_exact[l][p] = best;
        }
    }

    // Balance pruning data: how many experts the remaining layers can still
    // add to one GPU, at least and at most.
    let mut min_rem = vec![0u64; layers + 1];
    let mut max_rem = vec![0u64; layers + 1];
    for l in (0..layers).rev() {
        min_rem[l] = min_rem[l + 1] + *inst.sizes[l].iter().min().unwrap() as u64;
        max_rem[l] = max_rem[l + 1] + *inst.sizes[l].iter().max().unwrap() as u64;
    }
    let total = (inst.num_experts * layers) as i128;
    let g_i = inst.num_gpus as i128;
    let slack_scaled = g_i as u128 * balance_slack as u128;
    // GPU g can still reach balance from `next_layer` onward?
    let balance_alive = |counts: &[u64], next_layer: usize| -> bool {
        counts.iter().all(|&c| {
            let lo = g_i * (c + min_rem[next_layer]) as i128 - total;
            let hi = g_i * (c + max_rem[next_layer]) as i128 - total;
            // The reachable interval [lo, hi] must touch [-G*slack, G*slack].
            lo <= slack_scaled as i128 && hi >= -(slack_scaled as i128)
        })
    };

    // Back-to-front fold of the prefix transition costs onto `init`; for the
    // bound-optimal completion this reproduces the sequence cost exactly.
    let fold_prefix =
        |prefix: &[f64], init: f64| -> f64 { prefix.iter().rev().fold(init, |acc, &t| t + acc) };

    // Greedy bound-first dive to a balance-feasible leaf: a warm start that
    // only speeds up the search. `rank` scores (bound-so-far, child).
    let probe = |rank: &dyn Fn(&[f64], usize, usize) -> f64| -> Option<(f64, Vec<usize>)> {
        let mut seq: Vec<usize> = Vec::with_capacity(layers);
        let mut prefix: Vec<f64> = Vec::new();
        let mut counts = vec![0u64; inst.num_gpus];
        for layer in 0..layers {
            let mut best: Option<(f64, usize)> = None;
            for q in 0..nfact {
                for (c, &gpu) in inst.perms[q].iter().enumerate() {
                    counts[gpu] += inst.sizes[layer][c] as u64;
                }
                if balance_alive(&counts, layer + 1) {
                    let pushed = if layer > 0 {
                        prefix.push(tc(layer - 1, seq[layer - 1], q));
                        true
                    } else {
                        false
                    };
                    let score = rank(&prefix, layer, q);
                    if pushed {
                        prefix.pop();
                    }
                    if best.is_none_or(|(bv, _)| score < bv) {
                        best = Some((score, q));
                    }
                }
                for (c, &gpu) in inst.perms[q].iter().enumerate() {
                    counts[gpu] -= inst.sizes[layer][c] as u64;
                }
            }
            let (_, q) = best?;
            for (c, &gpu) in inst.perms[q].iter().enumerate() {
                counts[gpu] += inst.sizes[layer][c] as u64;
            }
            if layer > 0 {
                prefix.push(tc(layer - 1, seq[layer - 1], q));
            }
            seq.push(q);
        }
        Some((fold_prefix(&prefix, 0.0), seq))
    };

    let probe_exact = probe(&|prefix, layer, q| fold_prefix(prefix, suffix_exact[layer][q]));

    // Lagrangian bound: price the balance constraint with per-GPU
    // multipliers. For any multipliers, DP over (layer, permutation) with
    // penalized node weights lower-bounds every balance-feasible sequence;
    // the subgradient loop just picks good prices. This dominates the plain
    // ignore-balance relaxation, which is far too loose on deep models.
    let upper = probe_exact.as_ref().map_or(f64::INFINITY, |(v, _)| *v);
    let lam = lagrangian_tables(
        &inst,
        &tc,
        &suffix_exact,
        balance_slack,
        upper,
        if cached { 60 } else { 8 },
    );

    let probe_lambda = probe(&|prefix, layer, q| {
        // Rank children by the Lagrangian completion bound; the prefix
        // penalty is common to all children at a level, so it can be
        // dropped from the ranking.
        prefix.iter().sum::<f64>() + lam.suffix[layer][q]
    });

    // The do-nothing placement (cluster c on GPU c at every layer), when it
    // balances: guarantees the result never loses to the identity mapping.
    let identity_seed: Option<(f64, Vec<usize>)> = {
        let mut counts = vec![0u64; inst.num_gpus];
        for layer in 0..layers {
            for (c, &sz) in inst.sizes[layer].iter().enumerate() {
                counts[c] += sz as u64;
            }
        }
        if inst.balanced(&counts, balance_slack) {
            let mut value = 0.0f64;
            for l in (0..transitions).rev() {
                value = tc(l, 0, 0) + value;
            }
            Some((value, vec![0; layers]))
        } else {
            None
        }
    };

    struct Incumbent {
        value: f64,
        seq: Vec<usize>,
        /// True once the incumbent was (re)visited by the lexicographic DFS.
        /// From that point every unvisited equal-valued leaf is
        /// lexicographically greater, so equal bounds may be pruned.
        internal: bool,
    }

    let mut incumbent: Option<Incumbent> = None;
    for candidate in [identity_seed, probe_exact, probe_lambda]
        .into_iter()
        .flatten()
    {
        let better = match &incumbent {
            None => true,
            Some(inc) => {
                candidate.0 < inc.value || (candidate.0 == inc.value && candidate.1 < inc.seq)
            }
        };
        if better {
            incumbent = Some(Incumbent {
                value: candidate.0,
                seq: candidate.1,
                internal: false,
            });
        }
    }

    struct Search<'x> {
        inst: &'x Instance<'x>,
        tc: &'x dyn Fn(usize, usize, usize) -> f64,
        suffix_exact: &'x [Vec<f64>],
        lam: &'x LagrangianBound,
        balance_alive: &'x dyn Fn(&[u64], usize) -> bool,
        fold_prefix: &'x dyn Fn(&[f64], f64) -> f64,
        layers: usize,
        gap: f64,
    }

    struct SearchState {
        seq: Vec<usize>,
        /// Transition costs along the current prefix (one per layer > 0).
        prefix: Vec<f64>,
        /// Lagrangian node weights along the current prefix (one per layer).
        pens: Vec<f64>,
        counts: Vec<u64>,
        incumbent: Option<Incumbent>,
    }

    impl<'x> Search<'x> {
        fn dfs(&self, layer: usize, st: &mut SearchState) {
            if layer == self.layers {
                let value = (self.fold_prefix)(&st.prefix, 0.0);
                // `<=` also re-adopts a warm-start incumbent once the DFS
                // reaches its sequence, flipping it to internal.
                let better = match &st.incumbent {
                    None => true,
                    Some(inc) => {
                        value < inc.value
                            || (value == inc.value && st.seq.as_slice() <= &inc.seq[..])
                    }
                };
                if better {
                    st.incumbent = Some(Incumbent {
                        value,
                        seq: st.seq.clone(),
                        internal: true,
                    });
                }
                return;
            }
            // Exact mode explores children lexicographically, which is what
            // makes the returned optimum the lexicographically smallest one.
            // With a gap that promise is off, so take promising children
            // first to reach a strong incumbent quickly.
            let order: Vec<usize> = if self.gap == 0.0 {
                (0..self.inst.perms.len()).collect()
            } else {
                let plain: f64 = st.prefix.iter().sum();
                let mut scored: Vec<(f64, usize)> = (0..self.inst.perms.len())
                    .map(|q| {
                        let step = if layer > 0 {
                            (self.tc)(layer - 1, st.seq[layer - 1], q)
                        } else {
                            0.0
                        };
                        (plain + step + self.suffix_exact[layer][q], q)
                    })
                    .collect();
                scored.sort_by(|a, b| a.partial_cmp(b).expect("finite bounds"));
                scored.into_iter().map(|(_, q)| q).collect()
            };
            for q in order {
                for (c, &gpu) in self.inst.perms[q].iter().enumerate() {
                    st.counts[gpu] += self.inst.sizes[layer][c] as u64;
                }
                'child: {
                    if !(self.balance_alive)(&st.counts, layer + 1) {
                        break 'child;
                    }
                    let pushed = if layer > 0 {
                        st.prefix.push((self.tc)(layer - 1, st.seq[layer - 1], q));
                        true
                    } else {
                        false
                    };
                    let explore = match &st.incumbent {
                        None => true,
                        Some(inc) => {
                            let threshold = inc.value * (1.0 - self.gap);
                            // The Lagrangian bound prunes only subtrees that
                            // are strictly worse (its margin absorbs f64
                            // noise), so it cannot disturb tie-breaking.
                            let lb_lambda = st.prefix.iter().sum::<f64>()
                                + st.pens.iter().sum::<f64>()
                                + self.lam.suffix[layer][q]
                                - self.lam.constant;
                            let margin = 1e-9 * (lb_lambda.abs() + inc.value.abs()) + 1e-300;
                            if lb_lambda - margin >= threshold {
                                false
                            } else {
                                // The exact bound reproduces the best
                                // completion's value bit-for-bit. While the
                                // incumbent is the warm start, equal-bound
                                // subtrees may hide an equal-valued but
                                // lexicographically smaller leaf, so they
                                // stay open.
                                let bound =
                                    (self.fold_prefix)(&st.prefix, self.suffix_exact[layer][q]);
                                if inc.internal {
                                    bound < threshold
                                } else {
                                    bound <= threshold
                                }
                            }
                        }
                    };
                    if explore {
                        st.seq.push(q);
                        st.pens.push(self.lam.node_weight(
                            layer,
                            &self.inst.perms[q],
                            &self.inst.sizes[layer],
                        ));
                        self.dfs(layer + 1, st);
                        st.pens.pop();
                        st.seq.pop();
                    }
                    if pushed {
                        st.prefix.pop();
                    }
                }
                for (c, &gpu) in self.inst.perms[q].iter().enumerate() {
                    st.counts[gpu] -= self.inst.sizes[layer][c] as u64;
                }
            }
        }
    }

    let search = Search {
        inst: &inst,
        tc: &tc,
        suffix_exact: &suffix_exact,
        lam: &lam,
        balance_alive: &balance_alive,
        fold_prefix: &fold_prefix,
        layers,
        gap,
    };
    let mut state = SearchState {
        seq: Vec::with_capacity(layers),
        prefix: Vec::with_capacity(layers.saturating_sub(1)),
        pens: Vec::with_capacity(layers),
        counts: vec![0u64; inst.num_gpus],
        incumbent,
    };
    search.dfs(0, &mut state);

    match state.incumbent {
        Some(inc) => Ok(inst.build_placement(&inc.seq, clustering, balance_slack)),
        None => Err(PlaceError::BalanceInfeasible {
            requested: balance_slack,
            minimum: min_achievable_slack(&inst.sizes, inst.num_gpus),
        }),
    }
}

/// Suffix tables of the Lagrangian relaxation: for fixed multipliers
/// `lambda`, `suffix[l][p]` is the minimum over completions from layer `l`
/// (whose permutation is `p`) of transition costs plus per-layer penalties
/// `sum_c lambda[gpu(c)] * size(c)`. Subtracting `constant` turns any
/// prefix-cost + prefix-penalty + suffix total into a valid lower bound on
/// every balance-feasible completion's true cost.
struct LagrangianBound {
    suffix: Vec<Vec<f64>>,
    lambda: Vec<f64>,
    constant: f64,
}

impl LagrangianBound {
    fn node_weight(&self, _layer: usize, perm: &[usize], sizes: &[usize]) -> f64 {
        perm.iter()
            .zip(sizes)
            .map(|(&gpu, &sz)| self.lambda[gpu] * sz as f64)
            .sum()
    }
}

/// Subgradient search for balance-constraint multipliers. Any multipliers
/// yield a valid bound; the iterations only improve pruning power. The
/// returned tables correspond to the best dual value seen.
fn lagrangian_tables(
    inst: &Instance<'_>,
    tc: &dyn Fn(usize, usize, usize) -> f64,
    suffix_exact: &[Vec<f64>],
    balance_slack: u64,
    upper_bound: f64,
    iterations: usize,
) -> LagrangianBound {
    let layers = inst.num_layers;
    let nfact = inst.perms.len();
    let g = inst.num_gpus;
    let target = (inst.num_experts * layers) as f64 / g as f64;
    let slack = balance_slack as f64;

    // lambda = 0 reduces to the plain ignore-balance relaxation.
    let mut best = LagrangianBound {
        suffix: suffix_exact.to_vec(),
        lambda: vec![0.0; g],
        constant: 0.0,
    };
    let mut best_value = (0..nfact)
        .map(|p| suffix_exact[0][p])
        .fold(f64::INFINITY, f64::min);
    if !best_value.is_finite() {
        best_value = 0.0;
    }
    let ub = if upper_bound.is_finite() {
        upper_bound
    } else {
        best_value.abs() * 2.0 + 1.0
    };

    let mut lambda = vec![0.0f64; g];
    let mut stalled = 0usize;
    let mut step_scale = 1.0f64;
    for _ in 0..iterations {
        // DP pass under the current multipliers, tracking the argmin path.
        let mut suffix = vec![vec![0.0f64; nfact]; layers];
        let mut next = vec![vec![0usize; nfact]; layers];
        for p in 0..nfact {
            suffix[layers - 1][p] =
                node_weight_of(&lambda, &inst.perms[p], &inst.sizes[layers - 1]);
        }
        for l in (0..layers.saturating_sub(1)).rev() {
            for p in 0..nfact {
                let w = node_weight_of(&lambda, &inst.perms[p], &inst.sizes[l]);
                let mut bv = f64::INFINITY;
                let mut bq = 0;
                for q in 0..nfact {
                    let v = tc(l, p, q) + suffix[l + 1][q];
                    if v < bv {
                        bv = v;
                        bq = q;
                    }
                }
                suffix[l][p] = w + bv;
                next[l][p] = bq;
            }
        }
        let mut root_p = 0;
        for p in 1..nfact {
            if suffix[0][p] < suffix[0][root_p] {
                root_p = p;
            }
        }
        let constant = lambda.iter().map(|l| l * target).sum::<f64>()
            + slack * lambda.iter().map(|l| l.abs()).sum::<f64>();
        let dual = suffix[0][root_p] - constant;
        if dual > best_value {
            best_value = dual;
            best = LagrangianBound {
                suffix: suffix.clone(),
                lambda: lambda.clone(),
                constant,
            };
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 5 {
                step_scale *= 0.5;
                stalled = 0;
            }
        }
        if ub - dual <= 1e-12 * ub.abs() {
            break;
        }

        // Counts of the relaxed argmin sequence drive the subgradient.
        let mut counts = vec![0u64; g];
        let mut p = root_p;
        for l in 0..layers {
            for (c, &gpu) in inst.perms[p].iter().enumerate() {
                counts[gpu] += inst.sizes[l][c] as u64;
            }
            if l + 1 < layers {
                p = next[l][p];
            }
        }
        let grad: Vec<f64> = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - target;
                // Deviations inside the slack band carry no penalty.
                d.signum() * (d.abs() - slack).max(0.0)
            })
            .collect();
        let norm: f64 = grad.iter().map(|v| v * v).sum();
        if norm == 0.0 {
            break;
        }
        let step = step_scale * (ub - dual).max(1e-18 * ub.abs().max(1.0)) / norm;
        for (lg, gg) in lambda.iter_mut().zip(&grad) {
            *lg += step * gg;
        }
    }
    best
}

fn node_weight_of(lambda: &[f64], perm: &[usize], sizes: &[usize]) -> f64 {
    perm.iter()
        .zip(sizes)
        .map(|(&gpu, &sz)| lambda[gpu] * sz as f64)
        .sum()
}

/// Testing oracle: global optimum by enumerating all `(G!)^L` sequences.
/// Shares the tie-break and cost arithmetic with [`solve`].
pub fn solve_exhaustive(
    tensor: &CommCostTensor,
    clustering: &Clustering,
    topology: &Topology,
    balance_slack: u64,
) -> Result<Placement, PlaceError> {
    let inst = Instance::new(tensor, clustering, topology, balance_slack)?;
    let nfact = inst.perms.len() as u128;
    let sequences = nfact.checked_pow(inst.num_layers as u32);
    match sequences {
        Some(n) if n <= 10_000_000 => {}
        _ => {
            return Err(PlaceError::TooLarge(format!(
                "({}!)^{} sequences exceed the exhaustive budget of 10^7",
                inst.num_gpus, inst.num_layers
            )))
        }
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut seq = vec![0usize; inst.num_layers];
    loop {
        let mut counts = vec![0u64; inst.num_gpus];
        for (l, &pi) in seq.iter().enumerate() {
            for (c, &gpu) in inst.perms[pi].iter().enumerate() {
                counts[gpu] += inst.sizes[l][c] as u64;
            }
        }
        if inst.balanced(&counts, balance_slack) {
            let mut value = 0.0f64;
            for l in (0..inst.tensor.num_transitions).rev() {
                value = inst.transition_cost(l, seq[l], seq[l + 1]) + value;
            }
            let better = match &best {
                None => true,
                Some((v, _)) => value < *v,
            };
            if better {
                best = Some((value, seq.clone()));
            }
        }
        // Odometer: advance to the next sequence in lexicographic order.
        let mut pos = inst.num_layers;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            seq[pos] += 1;
            if seq[pos] < inst.perms.len() {
                break;
            }
            seq[pos] = 0;
        }
        if pos == 0 && seq[0] == 0 {
            break;
        }
    }

    match best {
        Some((_, winner)) => Ok(inst.build_placement(&winner, clustering, balance_slack)),
        None => Err(PlaceError::BalanceInfeasible {
            requested: balance_slack,
            minimum: min_achievable_slack(&inst.sizes, inst.num_gpus),
        }),
    }
}

/// The framework-default placement: experts in index-contiguous blocks,
/// identical across layers, cluster c on GPU c. Objective fields are left
/// at zero; score them against a trace with the clustering and cost APIs.
pub fn baseline_contiguous(
    num_experts: usize,
    num_layers: usize,
    num_gpus: usize,
) -> Result<(Clustering, Placement), PlaceError> {
    if num_experts == 0 || num_layers == 0 || num_gpus == 0 {
        return Err(PlaceError::DimMismatch(
            "experts, layers, and GPUs must all be >= 1".into(),
        ));
    }
    if num_experts % num_gpus != 0 {
        return Err(PlaceError::NotDivisible {
            experts: num_experts,
            layers: num_layers,
            gpus: num_gpus,
        });
    }
    let block = num_experts / num_gpus;
    let row: Vec<usize> = (0..num_experts).map(|e| e / block).collect();
    let clustering = Clustering {
        num_layers,
        num_experts,
        num_clusters: num_gpus,
        assign: vec![row.clone(); num_layers],
        objective: 0.0,
    };
    let placement = Placement {
        gpu_of_cluster: vec![(0..num_gpus).collect(); num_layers],
        expert_to_gpu: vec![row; num_layers],
        objective: 0.0,
        balance_slack: 0,
    };
    debug_assert!(placement.validate_against(&clustering).is_ok());
    Ok((clustering, placement))
}
