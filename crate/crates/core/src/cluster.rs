//! Load-balanced expert clustering: partition each layer's experts into G
//! labeled, non-empty clusters minimizing the total absolute deviation of
//! cluster token loads from the layer mean.
//!
//! Layers are independent, so each is optimized on its own. The exact solver
//! enumerates set partitions in canonical (restricted-growth) form; the
//! heuristic seeds with longest-processing-time greedy and refines with
//! single-move/swap local search. All comparisons use exact integer
//! arithmetic on G-scaled deviations, so optima and tie-breaks never depend
//! on floating point.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::trace::RoutingStats;

/// Per-layer partition of experts into `num_clusters` labeled clusters.
///
/// `assign[l][e]` is the cluster id of expert `e` at layer `l`. Every
/// cluster id in `[0, num_clusters)` appears at least once per layer, and
/// labels are canonical: the cluster containing the lowest unassigned expert
/// index gets the lowest free id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub num_layers: usize,
    pub num_experts: usize,
    pub num_clusters: usize,
    pub assign: Vec<Vec<usize>>,
    /// Achieved total deviation (sum over layers and clusters of
    /// |cluster load − layer mean|).
    pub objective: f64,
}

#[derive(Debug)]
pub enum ClusterError {
    /// More clusters than experts: non-empty clusters are impossible.
    TooManyClusters {
        clusters: usize,
        experts: usize,
    },
    /// Per-layer partition count exceeds the exact-enumeration budget.
    EnumerationTooLarge {
        partitions: u128,
        limit: u128,
    },
    DimMismatch(String),
    InvalidClustering(String),
    Io {
        path: String,
        source: std::io::Error,
    },
    Parse {
        path: String,
        detail: String,
    },
}

impl fmt::Display for ClusterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterError::TooManyClusters { clusters, experts } => write!(
                f,
                "cannot form {} non-empty clusters from {} experts",
                clusters, experts
            ),
            ClusterError::EnumerationTooLarge { partitions, limit } => write!(
                f,
                "exact enumeration would visit {} partitions per layer (limit {}); \
                 use the heuristic solver instead",
                partitions, limit
            ),
            ClusterError::DimMismatch(msg) => write!(f, "dimension mismatch: {}", msg),
            ClusterError::InvalidClustering(msg) => write!(f, "invalid clustering: {}", msg),
            ClusterError::Io { path, source } => write!(f, "io error on {}: {}", path, source),
            ClusterError::Parse { path, detail } => {
                write!(f, "parse error in {}: {}", path, detail)
            }
        }
    }
}

impl std::error::Error for ClusterError {}

/// Partition counts per layer above this are refused by [`solve_exact`].
pub const EXACT_ENUMERATION_LIMIT: u128 = 1_000_000;

impl Clustering {
    /// Check the partition invariants: rectangular shape, ids in range,
    /// every cluster non-empty in every layer.
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.num_clusters == 0 {
            return Err(ClusterError::InvalidClustering(
                "num_clusters must be >= 1".into(),
            ));
        }
        if self.assign.len() != self.num_layers {
            return Err(ClusterError::InvalidClustering(format!(
                "assign has {} rows for {} layers",
                self.assign.len(),
                self.num_layers
            )));
        }
        for (l, row) in self.assign.iter().enumerate() {
            if row.len() != self.num_experts {
                return Err(ClusterError::InvalidClustering(format!(
                    "layer {} assigns {} experts, expected {}",
                    l,
                    row.len(),
                    self.num_experts
                )));
            }
            let mut seen = vec![false; self.num_clusters];
            for (e, &c) in row.iter().enumerate() {
                if c >= self.num_clusters {
                    return Err(ClusterError::InvalidClustering(format!(
                        "layer {} expert {} assigned to cluster {} (num_clusters = {})",
                        l, e, c, self.num_clusters
                    )));
                }
                seen[c] = true;
            }
            if let Some(c) = seen.iter().position(|&s| !s) {
                return Err(ClusterError::InvalidClustering(format!(
                    "layer {} leaves cluster {} empty",
                    l, c
                )));
            }
        }
        Ok(())
    }

    /// Number of experts per cluster at one layer.
    pub fn cluster_sizes(&self, layer: usize) -> Vec<usize> {
        let mut sizes = vec![0usize; self.num_clusters];
        for &c in &self.assign[layer] {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn read_json_file(path: impl AsRef<Path>) -> Result<Clustering, ClusterError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ClusterError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let file: ClusteringFile =
            serde_path_to_error::deserialize(de).map_err(|err| ClusterError::Parse {
                path: path.display().to_string(),
                detail: format!("{} (at {})", err.inner(), err.path()),
            })?;
        let num_layers = file.assign.len();
        let num_experts = file.assign.first().map_or(0, Vec::len);
        let clustering = Clustering {
            num_layers,
            num_experts,
            num_clusters: file.num_clusters,
            assign: file.assign,
            objective: file.objective,
        };
        clustering.validate()?;
        Ok(clustering)
    }

    pub fn to_json_string(&self) -> String {
        let file = ClusteringFile {
            num_clusters: self.num_clusters,
            assign: self.assign.clone(),
            objective: self.objective,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("clustering serialize");
        s.push('\n');
        s
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>) -> Result<(), ClusterError> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|source| ClusterError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// On-disk schema; layer/expert counts are recovered from `assign`.
#[derive(Serialize, Deserialize)]
struct ClusteringFile {
    num_clusters: usize,
    assign: Vec<Vec<usize>>,
    objective: f64,
}

fn check_dims(stats: &RoutingStats, clustering: &Clustering) -> Result<(), ClusterError> {
    if stats.num_layers != clustering.num_layers || stats.num_experts != clustering.num_experts {
        return Err(ClusterError::DimMismatch(format!(
            "trace is {}x{} but clustering is {}x{}",
            stats.num_layers, stats.num_experts, clustering.num_layers, clustering.num_experts
        )));
    }
    Ok(())
}

/// Token processing load per cluster per layer: `T[l][c]` sums the loads of
/// the experts assigned to cluster `c` at layer `l`.
pub fn cluster_loads(
    stats: &RoutingStats,
    clustering: &Clustering,
) -> Result<Vec<Vec<u64>>, ClusterError> {
    check_dims(stats, clustering)?;
    let mut out = vec![vec![0u64; clustering.num_clusters]; stats.num_layers];
    for l in 0..stats.num_layers {
        for e in 0..stats.num_experts {
            out[l][clustering.assign[l][e]] += stats.load[l][e];
        }
    }
    Ok(out)
}

/// Average token processing load across clusters at one layer.
pub fn mean_load(stats: &RoutingStats, layer: usize, num_clusters: usize) -> f64 {
    let total: u64 = stats.load[layer].iter().sum();
    total as f64 / num_clusters as f64
}

/// G-scaled deviation of one layer's partition: `sum_c |G*T_c - total|`.
/// Equal to G times the layer's contribution to the objective, but exact.
fn scaled_layer_deviation(loads: &[u64], assign_row: &[usize], num_clusters: usize) -> u128 {
    let mut sums = vec![0u128; num_clusters];
    let mut total: u128 = 0;
    for (e, &c) in assign_row.iter().enumerate() {
        sums[c] += loads[e] as u128;
        total += loads[e] as u128;
    }
    let g = num_clusters as u128;
    sums.iter().map(|&t| (g * t).abs_diff(total)).sum()
}

/// G-scaled total deviation over all layers (exactly `G * objective`).
pub fn scaled_deviation_total(
    stats: &RoutingStats,
    clustering: &Clustering,
) -> Result<u128, ClusterError> {
    check_dims(stats, clustering)?;
    Ok((0..stats.num_layers)
        .map(|l| {
            scaled_layer_deviation(
                &stats.load[l],
                &clustering.assign[l],
                clustering.num_clusters,
            )
        })
        .sum())
}

/// Total absolute deviation of cluster loads from the per-layer mean.
pub fn objective_o1(stats: &RoutingStats, clustering: &Clustering) -> Result<f64, ClusterError> {
    Ok(scaled_deviation_total(stats, clustering)? as f64 / clustering.num_clusters as f64)
}

/// Stirling number of the second kind S(n, k), saturating at u128::MAX.
pub fn stirling2(n: usize, k: usize) -> u128 {
    if k == 0 {
        return if n == 0 { 1 } else { 0 };
    }
    if k > n {
        return 0;
    }
    let mut row = vec![0u128; k + 1];
    row[0] = 1;
    for _ in 1..=n {
        for j in (1..=k).rev() {
            row[j] = (j as u128)
                .saturating_mul(row[j])
                .saturating_add(row[j - 1]);
        }
        row[0] = 0;
    }
    row[k]
}

/// Visit every partition of `num_experts` items into exactly `num_clusters`
/// non-empty blocks, in canonical restricted-growth form, lexicographically.
fn enumerate_partitions(num_experts: usize, num_clusters: usize, visit: &mut impl FnMut(&[usize])) {
    let mut assign = vec![0usize; num_experts];
    fn rec(
        assign: &mut Vec<usize>,
        pos: usize,
        used: usize,
        num_clusters: usize,
        visit: &mut impl FnMut(&[usize]),
    ) {
        let num_experts = assign.len();
        if pos == num_experts {
            if used == num_clusters {
                visit(assign);
            }
            return;
        }
        // Not enough positions left to open the missing clusters.
        if num_clusters - used > num_experts - pos {
            return;
        }
        let max_id = (used + 1).min(num_clusters);
        for c in 0..max_id {
            assign[pos] = c;
            let next_used = if c == used { used + 1 } else { used };
            rec(assign, pos + 1, next_used, num_clusters, visit);
        }
    }
    rec(&mut assign, 0, 0, num_clusters, visit);
}

/// Relabel a cluster row so that ids appear in order of first appearance.
fn canonicalize_row(row: &mut [usize], num_clusters: usize) {
    let mut map = vec![usize::MAX; num_clusters];
    let mut next = 0;
    for c in row.iter_mut() {
        if map[*c] == usize::MAX {
            map[*c] = next;
            next += 1;
        }
        *c = map[*c];
    }
    debug_assert_eq!(next, num_clusters);
}

/// Optimal clustering by per-layer exhaustive partition enumeration.
///
/// Each layer is independent, so the per-layer minima compose into the
/// global optimum. Ties break toward the lexicographically smallest
/// canonical assignment row.
pub fn solve_exact(stats: &RoutingStats, num_clusters: usize) -> Result<Clustering, ClusterError> {
    if num_clusters == 0 || num_clusters > stats.num_experts {
        return Err(ClusterError::TooManyClusters {
            clusters: num_clusters,
            experts: stats.num_experts,
        });
    }
    let partitions = stirling2(stats.num_experts, num_clusters);
    if partitions > EXACT_ENUMERATION_LIMIT {
        return Err(ClusterError::EnumerationTooLarge {
            partitions,
            limit: EXACT_ENUMERATION_LIMIT,
        });
    }

    let mut assign = Vec::with_capacity(stats.num_layers);
    let mut scaled_total: u128 = 0;
    for l in 0..stats.num_layers {
        let loads = &stats.load[l];
        let mut best_dev = u128::MAX;
        let mut best_row: Vec<usize> = Vec::new();
        enumerate_partitions(stats.num_experts, num_clusters, &mut |row| {
            let dev = scaled_layer_deviation(loads, row, num_clusters);
            if dev < best_dev {
                best_dev = dev;
                best_row = row.to_vec();
            }
        });
        scaled_total += best_dev;
        assign.push(best_row);
    }

    let clustering = Clustering {
        num_layers: stats.num_layers,
        num_experts: stats.num_experts,
        num_clusters,
        assign,
        objective: scaled_total as f64 / num_clusters as f64,
    };
    debug_assert!(clustering.validate().is_ok());
    Ok(clustering)
}

/// Greedy + local-search clustering for instances too large to enumerate.
///
/// Equivalent to [`solve_heuristic_with_gap`] at gap 0 (local search runs to
/// a local optimum).
pub fn solve_heuristic(
    stats: &RoutingStats,
    num_clusters: usize,
) -> Result<Clustering, ClusterError> {
    solve_heuristic_with_gap(stats, num_clusters, 0.0)
}

/// Greedy + local-search clustering with an early-stop tolerance.
///
/// Each layer is seeded by longest-processing-time greedy (the G heaviest
/// experts open the G clusters, the rest go to the lightest cluster), then
/// refined by first-improvement single-expert moves and pairwise swaps. A
/// layer stops early once its deviation drops to at most `gap` times the
/// layer's total load.
pub fn solve_heuristic_with_gap(
    stats: &RoutingStats,
    num_clusters: usize,
    gap: f64,
) -> Result<Clustering, ClusterError> {
    if num_clusters == 0 || num_clusters > stats.num_experts {
        return Err(ClusterError::TooManyClusters {
            clusters: num_clusters,
            experts: stats.num_experts,
        });
    }
    let e = stats.num_experts;
    let g = num_clusters;

    let mut assign = Vec::with_capacity(stats.num_layers);
    let mut scaled_total: u128 = 0;
    for l in 0..stats.num_layers {
        let loads = &stats.load[l];
        let total: u128 = loads.iter().map(|&v| v as u128).sum();
        // Deviation <= gap * total  <=>  scaled deviation <= gap * G * total.
        let stop_at = (gap * (g as f64) * (total as f64)).max(0.0);

        let mut order: Vec<usize> = (0..e).collect();
        order.sort_by(|&a, &b| loads[b].cmp(&loads[a]).then(a.cmp(&b)));

        let mut row = vec![0usize; e];
        let mut sums = vec![0u128; g];
        for (rank, &expert) in order.iter().enumerate() {
            let c = if rank < g {
                rank
            } else {
                (0..g).min_by_key(|&c| (sums[c], c)).unwrap()
            };
            row[expert] = c;
            sums[c] += loads[expert] as u128;
        }
        let mut sizes = vec![0usize; g];
        for &c in &row {
            sizes[c] += 1;
        }

        let dev =
            |sums: &[u128]| -> u128 { sums.iter().map(|&t| (g as u128 * t).abs_diff(total)).sum() };
        let mut current = dev(&sums);
        let mut improved = true;
        while improved && (current as f64) > stop_at {
            improved = false;
            // Single-expert moves, keeping every cluster non-empty.
            'moves: for ex in 0..e {
                let from = row[ex];
                if sizes[from] == 1 {
                    continue;
                }
                for to in 0..g {
                    if to == from {
                        continue;
                    }
                    sums[from] -= loads[ex] as u128;
                    sums[to] += loads[ex] as u128;
                    let cand = dev(&sums);
                    if cand < current {
                        row[ex] = to;
                        sizes[from] -= 1;
                        sizes[to] += 1;
                        current = cand;
                        improved = true;
                        break 'moves;
                    }
                    sums[to] -= loads[ex] as u128;
                    sums[from] += loads[ex] as u128;
                }
            }
            if improved {
                continue;
            }
            // Pairwise swaps.
            'swaps: for e1 in 0..e {
                for e2 in (e1 + 1)..e {
                    let (c1, c2) = (row[e1], row[e2]);
                    if c1 == c2 {
                        continue;
                    }
                    sums[c1] = sums[c1] + loads[e2] as u128 - loads[e1] as u128;
                    sums[c2] = sums[c2] + loads[e1] as u128 - loads[e2] as u128;
                    let cand = dev(&sums);
                    if cand < current {
                        row.swap(e1, e2);
                        current = cand;
                        improved = true;
                        break 'swaps;
                    }
                    sums[c1] = sums[c1] + loads[e1] as u128 - loads[e2] as u128;
                    sums[c2] = sums[c2] + loads[e2] as u128 - loads[e1] as u128;
                }
            }
        }

        canonicalize_row(&mut row, g);
        scaled_total += current;
        assign.push(row);
    }

    let clustering = Clustering {
        num_layers: stats.num_layers,
        num_experts: stats.num_experts,
        num_clusters,
        assign,
        objective: scaled_total as f64 / num_clusters as f64,
    };
    debug_assert!(clustering.validate().is_ok());
    Ok(clustering)
}
