//! Analytical cost model: per-layer compute tail/average, per-transition
//! all-to-all tail/average, end-to-end estimate, and baseline comparison.
//!
//! Compute time is linear in tokens (all experts are identical FFNs) and
//! phases compose serially. Communication uses the same pair-max as the
//! placement objective, so the two can never disagree.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::Clustering;
use crate::place::{pair_tail_time, Placement};
use crate::topology::Topology;
use crate::trace::RoutingStats;

/// Linear latency model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Seconds per token per expert visit.
    pub compute_time_per_token: f64,
    /// Dispatch payload per token in bytes.
    pub bytes_per_token: f64,
    /// Constant per-layer time (attention and other non-expert work).
    pub fixed_overhead_per_layer: f64,
}

impl CostParams {
    pub fn validate(&self) -> Result<(), CostError> {
        for (name, v) in [
            ("compute_time_per_token", self.compute_time_per_token),
            ("bytes_per_token", self.bytes_per_token),
            ("fixed_overhead_per_layer", self.fixed_overhead_per_layer),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(CostError::InvalidParams(format!(
                    "{} = {} must be finite and non-negative",
                    name, v
                )));
            }
        }
        Ok(())
    }
}

/// Tail (max over participants) and average of one modeled phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTime {
    pub tail: f64,
    pub avg: f64,
}

/// Max and mean token volume over ordered remote GPU pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeSummary {
    pub max: u64,
    pub mean: f64,
}

/// Full latency breakdown of one placement on one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// Per layer: expert compute time, tail = slowest GPU, avg over GPUs.
    pub per_layer_compute: Vec<PhaseTime>,
    /// Per consecutive-layer transition: all-to-all time over remote pairs.
    pub per_transition_comm: Vec<PhaseTime>,
    /// Serial composition: per-layer overhead + compute tails + comm tails.
    pub end_to_end: f64,
    /// Fraction of each layer's token activations handled per GPU.
    pub gpu_token_share: Vec<Vec<f64>>,
    /// Remote-pair token volumes per transition.
    pub pair_volume_summary: Vec<VolumeSummary>,
}

#[derive(Debug)]
pub enum CostError {
    DimMismatch(String),
    InvalidPlacement(String),
    InvalidParams(String),
    Io {
        path: String,
        source: std::io::Error,
    },
    Parse {
        path: String,
        detail: String,
    },
}

impl fmt::Display for CostError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostError::DimMismatch(msg) => write!(f, "dimension mismatch: {}", msg),
            CostError::InvalidPlacement(msg) => write!(f, "invalid placement: {}", msg),
            CostError::InvalidParams(msg) => write!(f, "invalid cost parameters: {}", msg),
            CostError::Io { path, source } => write!(f, "io error on {}: {}", path, source),
            CostError::Parse { path, detail } => write!(f, "parse error in {}: {}", path, detail),
        }
    }
}

impl std::error::Error for CostError {}

/// Score an expert-to-GPU mapping directly. This is the shared core of
/// [`evaluate`]; it validates only what the mapping itself can express.
pub fn evaluate_mapping(
    stats: &RoutingStats,
    expert_to_gpu: &[Vec<usize>],
    topology: &Topology,
    params: &CostParams,
) -> Result<CostReport, CostError> {
    params.validate()?;
    let l = stats.num_layers;
    let e = stats.num_experts;
    let g = topology.num_gpus;
    if expert_to_gpu.len() != l || expert_to_gpu.iter().any(|row| row.len() != e) {
        return Err(CostError::DimMismatch(format!(
            "expert map is [{}][{}] but trace is [{}][{}]",
            expert_to_gpu.len(),
            expert_to_gpu.first().map_or(0, Vec::len),
            l,
            e
        )));
    }
    if let Some((layer, &gpu)) = expert_to_gpu
        .iter()
        .enumerate()
        .find_map(|(i, row)| row.iter().find(|&&gpu| gpu >= g).map(|gpu| (i, gpu)))
    {
        return Err(CostError::InvalidPlacement(format!(
            "layer {} routes an expert to GPU {} but the topology has {} GPUs",
            layer, gpu, g
        )));
    }

    let layer_total = stats.layer_total();
    let mut per_layer_compute = Vec::with_capacity(l);
    let mut gpu_token_share = Vec::with_capacity(l);
    for layer in 0..l {
        let mut tokens = vec![0u64; g];
        for ex in 0..e {
            tokens[expert_to_gpu[layer][ex]] += stats.load[layer][ex];
        }
        let times: Vec<f64> = tokens
            .iter()
            .map(|&t| params.compute_time_per_token * t as f64)
            .collect();
        let tail = times.iter().cloned().fold(0.0, f64::max);
        let avg = times.iter().sum::<f64>() / g as f64;
        per_layer_compute.push(PhaseTime { tail, avg });
        gpu_token_share.push(
            tokens
                .iter()
                .map(|&t| {
                    if layer_total == 0 {
                        0.0
                    } else {
                        t as f64 / layer_total as f64
                    }
                })
                .collect(),
        );
    }

    let transitions = l.saturating_sub(1);
    let remote_pairs = g * (g - 1);
    let mut per_transition_comm = Vec::with_capacity(transitions);
    let mut pair_volume_summary = Vec::with_capacity(transitions);
    for t in 0..transitions {
        let mut volumes = vec![vec![0u64; g]; g];
        for e1 in 0..e {
            let g1 = expert_to_gpu[t][e1];
            for e2 in 0..e {
                volumes[g1][expert_to_gpu[t + 1][e2]] += stats.transitions[t][e1][e2];
            }
        }
        let tail = pair_tail_time(&volumes, topology) * params.bytes_per_token;
        let mut time_sum = 0.0f64;
        let mut vol_sum: u64 = 0;
        let mut vol_max: u64 = 0;
        for g1 in 0..g {
            for g2 in 0..g {
                if g1 == g2 {
                    continue;
                }
                let v = volumes[g1][g2];
                time_sum += v as f64 * params.bytes_per_token / topology.bandwidth[g1][g2];
                vol_sum += v;
                vol_max = vol_max.max(v);
            }
        }
        let avg = if remote_pairs == 0 {
            0.0
        } else {
            time_sum / remote_pairs as f64
        };
        per_transition_comm.push(PhaseTime { tail, avg });
        pair_volume_summary.push(VolumeSummary {
            max: vol_max,
            mean: if remote_pairs == 0 {
                0.0
            } else {
                vol_sum as f64 / remote_pairs as f64
            },
        });
    }

    // Comm tails summed back-to-front, matching the placement objective's
    // accumulation so the two stay consistent to rounding.
    let mut comm_total = 0.0f64;
    for t in (0..transitions).rev() {
        comm_total = per_transition_comm[t].tail + comm_total;
    }
    let compute_total: f64 = per_layer_compute
        .iter()
        .map(|p| params.fixed_overhead_per_layer + p.tail)
        .sum();
    let end_to_end = compute_total + comm_total;

    Ok(CostReport {
        per_layer_compute,
        per_transition_comm,
        end_to_end,
        gpu_token_share,
        pair_volume_summary,
    })
}

/// Score a placement, first checking its full consistency with the
/// clustering that produced it.
pub fn evaluate(
    stats: &RoutingStats,
    clustering: &Clustering,
    placement: &Placement,
    topology: &Topology,
    params: &CostParams,
) -> Result<CostReport, CostError> {
    placement
        .validate_against(clustering)
        .map_err(|e| CostError::InvalidPlacement(e.to_string()))?;
    if clustering.num_layers != stats.num_layers || clustering.num_experts != stats.num_experts {
        return Err(CostError::DimMismatch(format!(
            "clustering is {}x{} but trace is {}x{}",
            clustering.num_layers, clustering.num_experts, stats.num_layers, stats.num_experts
        )));
    }
    evaluate_mapping(stats, &placement.expert_to_gpu, topology, params)
}

/// Total experts hosted per GPU across all layers (memory balance view).
pub fn gpu_memory_share(
    clustering: &Clustering,
    placement: &Placement,
) -> Result<Vec<u64>, CostError> {
    placement
        .validate_against(clustering)
        .map_err(|e| CostError::InvalidPlacement(e.to_string()))?;
    let g = placement.gpu_of_cluster[0].len();
    let mut counts = vec![0u64; g];
    for row in &placement.expert_to_gpu {
        for &gpu in row {
            counts[gpu] += 1;
        }
    }
    Ok(counts)
}

/// Baseline-vs-optimized contrast for one metric: `ratio` is
/// baseline / optimized, `reduction_pct` is the relative drop in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub baseline: f64,
    pub optimized: f64,
    pub ratio: f64,
    pub reduction_pct: f64,
}

impl MetricComparison {
    fn new(baseline: f64, optimized: f64) -> MetricComparison {
        let ratio = if baseline == optimized {
            1.0
        } else if optimized == 0.0 {
            f64::INFINITY
        } else {
            baseline / optimized
        };
        let reduction_pct = if baseline == 0.0 {
            0.0
        } else {
            (baseline - optimized) / baseline * 100.0
        };
        MetricComparison {
            baseline,
            optimized,
            ratio,
            reduction_pct,
        }
    }
}

/// Headline comparison of two cost reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    /// Baseline end-to-end time divided by optimized end-to-end time.
    pub speedup: f64,
    pub end_to_end: MetricComparison,
    pub compute_tail_mean: MetricComparison,
    pub compute_tail_max: MetricComparison,
    pub comm_tail_mean: MetricComparison,
    pub comm_tail_max: MetricComparison,
}

fn mean_tail(phases: &[PhaseTime]) -> f64 {
    if phases.is_empty() {
        0.0
    } else {
        phases.iter().map(|p| p.tail).sum::<f64>() / phases.len() as f64
    }
}

fn max_tail(phases: &[PhaseTime]) -> f64 {
    phases.iter().map(|p| p.tail).fold(0.0, f64::max)
}

/// Compare a baseline report against an optimized one.
pub fn compare(baseline: &CostReport, optimized: &CostReport) -> ComparisonSummary {
    let end_to_end = MetricComparison::new(baseline.end_to_end, optimized.end_to_end);
    ComparisonSummary {
        speedup: end_to_end.ratio,
        end_to_end,
        compute_tail_mean: MetricComparison::new(
            mean_tail(&baseline.per_layer_compute),
            mean_tail(&optimized.per_layer_compute),
        ),
        compute_tail_max: MetricComparison::new(
            max_tail(&baseline.per_layer_compute),
            max_tail(&optimized.per_layer_compute),
        ),
        comm_tail_mean: MetricComparison::new(
            mean_tail(&baseline.per_transition_comm),
            mean_tail(&optimized.per_transition_comm),
        ),
        comm_tail_max: MetricComparison::new(
            max_tail(&baseline.per_transition_comm),
            max_tail(&optimized.per_transition_comm),
        ),
    }
}

impl CostReport {
    pub fn from_json_str(text: &str) -> Result<CostReport, CostError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|err| CostError::Parse {
            path: "<string>".to_string(),
            detail: format!("{} (at {})", err.inner(), err.path()),
        })
    }

    pub fn read_json_file(path: impl AsRef<Path>) -> Result<CostReport, CostError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CostError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|err| CostError::Parse {
            path: path.display().to_string(),
            detail: format!("{} (at {})", err.inner(), err.path()),
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("cost report serialize");
        s.push('\n');
        s
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>) -> Result<(), CostError> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|source| CostError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Flat table for plotting: one row per layer (compute) and one per
    /// transition (communication).
    pub fn to_csv_string(&self) -> String {
        let mut out =
            String::from("kind,index,tail_seconds,avg_seconds,max_pair_tokens,mean_pair_tokens\n");
        for (i, p) in self.per_layer_compute.iter().enumerate() {
            out.push_str(&format!("compute,{},{},{},,\n", i, p.tail, p.avg));
        }
        for (i, (p, v)) in self
            .per_transition_comm
            .iter()
            .zip(&self.pair_volume_summary)
            .enumerate()
        {
            out.push_str(&format!(
                "comm,{},{},{},{},{}\n",
                i, p.tail, p.avg, v.max, v.mean
            ));
        }
        out
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<(), CostError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|source| CostError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

impl ComparisonSummary {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("comparison serialize");
        s.push('\n');
        s
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>) -> Result<(), CostError> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|source| CostError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
