//! Token-routing statistics: validation, JSON I/O, total-variation distance,
//! and a synthetic trace generator with controllable skew, inter-layer
//! dependency, and exact hot-expert shares.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Aggregated routing statistics for one (model, dataset) pair.
///
/// `load[l][e]` counts tokens routed to expert `e` at layer `l`.
/// `transitions[l][e1][e2]` counts co-activation pairs: expert `e1` active at
/// layer `l` and expert `e2` active at layer `l+1` for the same token. With
/// top-k routing each token contributes `k` load counts per layer and `k*k`
/// transition pairs per consecutive-layer step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingStats {
    pub num_layers: usize,
    pub num_experts: usize,
    pub top_k: usize,
    pub tokens_total: u64,
    pub load: Vec<Vec<u64>>,
    pub transitions: Vec<Vec<Vec<u64>>>,
    pub meta: BTreeMap<String, String>,
}

/// A single violated consistency rule, with the indices that pin it down.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// `load` does not have `num_layers` rows of `num_experts` entries.
    LoadShape { expected: String, actual: String },
    /// `transitions` does not have `num_layers - 1` square `[E][E]` slices.
    TransitionShape { expected: String, actual: String },
    /// Layer load does not sum to `top_k * tokens_total`.
    LoadSum {
        layer: usize,
        expected: u64,
        actual: u64,
    },
    /// Transition slice does not sum to `top_k^2 * tokens_total`.
    TransitionSum {
        transition: usize,
        expected: u64,
        actual: u64,
    },
    /// Row sum of a transition slice disagrees with `top_k * load[l][e1]`.
    TransitionRowSum {
        transition: usize,
        expert: usize,
        expected: u64,
        actual: u64,
    },
    /// Column sum of a transition slice disagrees with `top_k * load[l+1][e2]`.
    TransitionColSum {
        transition: usize,
        expert: usize,
        expected: u64,
        actual: u64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LoadShape { expected, actual } => {
                write!(
                    f,
                    "load shape mismatch: expected {}, got {}",
                    expected, actual
                )
            }
            Violation::TransitionShape { expected, actual } => {
                write!(
                    f,
                    "transitions shape mismatch: expected {}, got {}",
                    expected, actual
                )
            }
            Violation::LoadSum {
                layer,
                expected,
                actual,
            } => write!(
                f,
                "layer {} load sums to {} but top_k * tokens_total = {}",
                layer, actual, expected
            ),
            Violation::TransitionSum {
                transition,
                expected,
                actual,
            } => write!(
                f,
                "transition {} sums to {} but top_k^2 * tokens_total = {}",
                transition, actual, expected
            ),
            Violation::TransitionRowSum {
                transition,
                expert,
                expected,
                actual,
            } => write!(
                f,
                "transition {} row for expert {} sums to {} but top_k * load = {}",
                transition, expert, actual, expected
            ),
            Violation::TransitionColSum {
                transition,
                expert,
                expected,
                actual,
            } => write!(
                f,
                "transition {} column for expert {} sums to {} but top_k * load = {}",
                transition, expert, actual, expected
            ),
        }
    }
}

/// Errors from trace construction, generation, or I/O.
#[derive(Debug)]
pub enum TraceError {
    InvalidSpec(String),
    DimMismatch(String),
    /// The file parsed but the statistics violate conservation rules.
    Inconsistent(Vec<Violation>),
    Io {
        path: String,
        source: std::io::Error,
    },
    Parse {
        path: String,
        detail: String,
    },
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceError::InvalidSpec(msg) => write!(f, "invalid generator spec: {}", msg),
            TraceError::DimMismatch(msg) => write!(f, "dimension mismatch: {}", msg),
            TraceError::Inconsistent(violations) => {
                write!(
                    f,
                    "inconsistent routing statistics ({} violations):",
                    violations.len()
                )?;
                for v in violations {
                    write!(f, "\n  - {}", v)?;
                }
                Ok(())
            }
            TraceError::Io { path, source } => write!(f, "io error on {}: {}", path, source),
            TraceError::Parse { path, detail } => write!(f, "parse error in {}: {}", path, detail),
        }
    }
}

impl std::error::Error for TraceError {}

impl RoutingStats {
    /// Total expert activations per layer: `top_k * tokens_total`.
    pub fn layer_total(&self) -> u64 {
        self.top_k as u64 * self.tokens_total
    }

    /// Check every conservation and shape invariant, returning all violations.
    ///
    /// Violations are data, not failures: an empty list means the statistics
    /// are consistent.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let l = self.num_layers;
        let e = self.num_experts;

        let load_ok = self.load.len() == l && self.load.iter().all(|row| row.len() == e);
        if !load_ok {
            out.push(Violation::LoadShape {
                expected: format!("[{}][{}]", l, e),
                actual: format!(
                    "[{}][{}]",
                    self.load.len(),
                    self.load.first().map_or(0, Vec::len)
                ),
            });
        }
        let trans_layers = l.saturating_sub(1);
        let trans_ok = self.transitions.len() == trans_layers
            && self
                .transitions
                .iter()
                .all(|s| s.len() == e && s.iter().all(|row| row.len() == e));
        if !trans_ok {
            out.push(Violation::TransitionShape {
                expected: format!("[{}][{}][{}]", trans_layers, e, e),
                actual: format!("[{}] slices", self.transitions.len()),
            });
        }
        if !load_ok || !trans_ok {
            return out;
        }

        let per_layer = self.layer_total();
        for (layer, row) in self.load.iter().enumerate() {
            let sum: u64 = row.iter().sum();
            if sum != per_layer {
                out.push(Violation::LoadSum {
                    layer,
                    expected: per_layer,
                    actual: sum,
                });
            }
        }
        let per_transition = (self.top_k as u64).pow(2) * self.tokens_total;
        for (t, slice) in self.transitions.iter().enumerate() {
            let total: u64 = slice.iter().flatten().sum();
            if total != per_transition {
                out.push(Violation::TransitionSum {
                    transition: t,
                    expected: per_transition,
                    actual: total,
                });
            }
            for e1 in 0..e {
                let row_sum: u64 = slice[e1].iter().sum();
                let expected = self.top_k as u64 * self.load[t][e1];
                if row_sum != expected {
                    out.push(Violation::TransitionRowSum {
                        transition: t,
                        expert: e1,
                        expected,
                        actual: row_sum,
                    });
                }
            }
            for e2 in 0..e {
                let col_sum: u64 = slice.iter().map(|row| row[e2]).sum();
                let expected = self.top_k as u64 * self.load[t + 1][e2];
                if col_sum != expected {
                    out.push(Violation::TransitionColSum {
                        transition: t,
                        expert: e2,
                        expected,
                        actual: col_sum,
                    });
                }
            }
        }
        out
    }

    pub fn from_json_str(text: &str) -> Result<RoutingStats, TraceError> {
        parse_validated(text, "<string>")
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("routing stats serialize");
        s.push('\n');
        s
    }

    /// Parse, shape-check, and conservation-check a trace file.
    pub fn read_json_file(path: impl AsRef<Path>) -> Result<RoutingStats, TraceError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse_validated(&text, &path.display().to_string())
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn parse_validated(text: &str, path: &str) -> Result<RoutingStats, TraceError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let stats: RoutingStats =
        serde_path_to_error::deserialize(de).map_err(|err| TraceError::Parse {
            path: path.to_string(),
            detail: format!("{} (at {})", err.inner(), err.path()),
        })?;
    let violations = stats.validate();
    if violations.is_empty() {
        Ok(stats)
    } else {
        Err(TraceError::Inconsistent(violations))
    }
}

/// Forces a share of a layer's activations onto a fixed expert set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotOverride {
    pub layer: usize,
    pub experts: Vec<usize>,
    pub mass_fraction: f64,
}

/// Parameters for the synthetic trace generator.
///
/// The generator simulates `tokens` tokens through an `num_layers`-deep
/// Markov process. Per-layer expert popularity follows a Zipf law with
/// exponent `marginal_skew` over a per-layer shuffled expert order; each
/// expert also has a preferred successor in the next layer, and
/// `dependency_strength` is the probability mass routed to preferred
/// successors instead of the next layer's marginal.
///
/// The shuffled orders and preferred successors depend only on the trace
/// shape (`num_layers`, `num_experts`, `top_k`), not on `seed`, so runs with
/// different seeds sample the same underlying routing pattern — mirroring
/// repeated profiling batches of one workload. `seed` drives only the token
/// sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceGenSpec {
    pub num_layers: usize,
    pub num_experts: usize,
    pub top_k: usize,
    pub tokens: u64,
    pub marginal_skew: f64,
    pub dependency_strength: f64,
    pub hot_overrides: Vec<HotOverride>,
    pub seed: u64,
}

impl TraceGenSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        let err = |msg: String| Err(TraceError::InvalidSpec(msg));
        if self.num_layers == 0 || self.num_experts == 0 || self.top_k == 0 {
            return err("num_layers, num_experts, and top_k must all be >= 1".into());
        }
        if self.top_k > self.num_experts {
            return err(format!(
                "top_k ({}) exceeds num_experts ({})",
                self.top_k, self.num_experts
            ));
        }
        if self.tokens == 0 {
            return err("tokens must be >= 1".into());
        }
        if self.tokens > (1 << 40) {
            return err(format!(
                "tokens ({}) is beyond the supported range",
                self.tokens
            ));
        }
        if !self.marginal_skew.is_finite() || self.marginal_skew < 0.0 {
            return err(format!(
                "marginal_skew ({}) must be finite and >= 0",
                self.marginal_skew
            ));
        }
        if !self.dependency_strength.is_finite() || !(0.0..=1.0).contains(&self.dependency_strength)
        {
            return err(format!(
                "dependency_strength ({}) must lie in [0, 1]",
                self.dependency_strength
            ));
        }
        let mut by_layer: BTreeMap<usize, Vec<&HotOverride>> = BTreeMap::new();
        for ov in &self.hot_overrides {
            if ov.layer >= self.num_layers {
                return err(format!("hot override layer {} out of range", ov.layer));
            }
            if ov.experts.is_empty() {
                return err(format!(
                    "hot override at layer {} has an empty expert set",
                    ov.layer
                ));
            }
            let mut seen = vec![false; self.num_experts];
            for &e in &ov.experts {
                if e >= self.num_experts {
                    return err(format!(
                        "hot override at layer {} names expert {} (num_experts = {})",
                        ov.layer, e, self.num_experts
                    ));
                }
                if seen[e] {
                    return err(format!(
                        "hot override at layer {} repeats expert {}",
                        ov.layer, e
                    ));
                }
                seen[e] = true;
            }
            if !(ov.mass_fraction > 0.0 && ov.mass_fraction <= 1.0) {
                return err(format!(
                    "hot override at layer {} has mass_fraction {} outside (0, 1]",
                    ov.layer, ov.mass_fraction
                ));
            }
            by_layer.entry(ov.layer).or_default().push(ov);
        }
        for (layer, ovs) in &by_layer {
            let mut seen = vec![false; self.num_experts];
            let mut mass = 0.0;
            for ov in ovs {
                for &e in &ov.experts {
                    if seen[e] {
                        return err(format!(
                            "hot overrides at layer {} have overlapping expert sets",
                            layer
                        ));
                    }
                    seen[e] = true;
                }
                mass += ov.mass_fraction;
            }
            if mass > 1.0 + 1e-12 {
                return err(format!(
                    "hot override masses at layer {} sum to {} (> 1)",
                    layer, mass
                ));
            }
            self.layer_quotas(ovs).map_err(TraceError::InvalidSpec)?;
        }
        Ok(())
    }

    /// Per-set activation quotas for one layer's overrides, with a
    /// feasibility check against the per-token draw capacity.
    fn layer_quotas(&self, ovs: &[&HotOverride]) -> Result<Vec<u64>, String> {
        let n = self.tokens;
        let k = self.top_k as u64;
        let total_draws = k * n;
        let quotas: Vec<u64> = ovs
            .iter()
            .map(|ov| (ov.mass_fraction * total_draws as f64).round() as u64)
            .collect();
        let set_sizes: Vec<u64> = ovs.iter().map(|ov| ov.experts.len() as u64).collect();
        let hot_total: u64 = set_sizes.iter().sum();
        let cold = self.num_experts as u64 - hot_total;
        let quota_sum: u64 = quotas.iter().sum();
        for (i, (&q, &sz)) in quotas.iter().zip(&set_sizes).enumerate() {
            let cap = k.min(sz);
            if q > n * cap {
                return Err(format!(
                    "hot override {} at layer {} asks for {} activations but at most {} fit \
                     ({} experts, top_k {})",
                    i,
                    ovs[i].layer,
                    q,
                    n * cap,
                    sz,
                    self.top_k
                ));
            }
        }
        let token_cap = k.min(hot_total);
        if quota_sum > n * token_cap {
            return Err(format!(
                "hot overrides at layer {} ask for {} activations but at most {} fit",
                ovs[0].layer,
                quota_sum,
                n * token_cap
            ));
        }
        let token_floor = k.saturating_sub(cold);
        if quota_sum < n * token_floor {
            return Err(format!(
                "hot overrides at layer {} leave only {} non-override experts, which cannot \
                 absorb the remaining draws; raise the override masses",
                ovs[0].layer, cold
            ));
        }
        Ok(quotas)
    }
}

/// Mix the shape parameters into a seed for structural randomness
/// (per-layer hot-expert orders and preferred successors).
fn structure_seed(spec: &TraceGenSpec) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for v in [
        spec.num_layers as u64,
        spec.num_experts as u64,
        spec.top_k as u64,
    ] {
        h ^= v
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    }
    h
}

fn fisher_yates(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// Draw one index from non-negative weights; falls back to the first
/// still-available index when all weights are zero.
fn weighted_pick(weights: &[f64], available: &[bool], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights
        .iter()
        .zip(available)
        .filter(|(_, &a)| a)
        .map(|(w, _)| w)
        .sum();
    if total > 0.0 {
        let r = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = None;
        for (i, (&w, &a)) in weights.iter().zip(available).enumerate() {
            if !a {
                continue;
            }
            acc += w;
            last = Some(i);
            if r < acc {
                return i;
            }
        }
        if let Some(i) = last {
            return i;
        }
    }
    // Uniform fallback over whatever is still available.
    let count = available.iter().filter(|&&a| a).count();
    let mut pick = rng.random_range(0..count);
    for (i, &a) in available.iter().enumerate() {
        if a {
            if pick == 0 {
                return i;
            }
            pick -= 1;
        }
    }
    unreachable!("no available expert to draw");
}

fn draw_binomial(n: u64, p: f64, rng: &mut ChaCha8Rng) -> u64 {
    let p = p.clamp(0.0, 1.0);
    (0..n).filter(|_| rng.random::<f64>() < p).count() as u64
}

/// Generation state for one layer that carries hot overrides: the expert
/// sets plus the number of activations still owed to each set.
struct QuotaState {
    sets: Vec<Vec<usize>>,
    remaining: Vec<u64>,
    caps: Vec<u64>,
    token_floor: u64,
    token_cap: u64,
}

impl QuotaState {
    /// Split this token's `k` draws across the override sets so that every
    /// quota is met exactly once all tokens are processed. Bounds follow
    /// from what the remaining `tokens_left - 1` tokens can still absorb.
    fn allocate(&mut self, k: u64, tokens_left: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
        let m = self.sets.len();
        let rest = tokens_left - 1;
        let q_sum: u64 = self.remaining.iter().sum();
        let tok_lo = self
            .token_floor
            .max(q_sum.saturating_sub(rest * self.token_cap));
        let tok_hi = self
            .token_cap
            .min(q_sum.saturating_sub(rest * self.token_floor));
        let mut picked = 0u64;
        let mut out = vec![0u64; m];
        for i in 0..m {
            let suffix_min: u64 = (i + 1..m)
                .map(|j| self.remaining[j].saturating_sub(rest * self.caps[j]))
                .sum();
            let suffix_max: u64 = (i + 1..m)
                .map(|j| self.caps[j].min(self.remaining[j]))
                .sum();
            let lo = self.remaining[i]
                .saturating_sub(rest * self.caps[i])
                .max(tok_lo.saturating_sub(picked + suffix_max));
            let hi = self.caps[i]
                .min(self.remaining[i])
                .min(tok_hi.saturating_sub(picked).saturating_sub(suffix_min));
            debug_assert!(lo <= hi, "quota allocation bounds crossed");
            let p = if rest == 0 {
                1.0
            } else {
                self.remaining[i] as f64 / (tokens_left * self.caps[i]) as f64
            };
            let h = draw_binomial(self.caps[i], p, rng).clamp(lo, hi);
            self.remaining[i] -= h;
            picked += h;
            out[i] = h;
        }
        debug_assert!(picked >= tok_lo && picked <= tok_hi.min(k));
        out
    }
}

/// Simulate a routing trace. Deterministic for a fixed spec: the same spec
/// (including seed) always yields byte-identical statistics.
pub fn generate(spec: &TraceGenSpec) -> Result<RoutingStats, TraceError> {
    spec.validate()?;
    let l = spec.num_layers;
    let e = spec.num_experts;
    let k = spec.top_k;

    // Structural randomness: which experts are popular per layer and who
    // prefers whom across layers. Keyed by shape only, so traces generated
    // with different seeds describe the same workload.
    let mut srng = ChaCha8Rng::seed_from_u64(structure_seed(spec));
    let mut marginals: Vec<Vec<f64>> = Vec::with_capacity(l);
    for _ in 0..l {
        let order = fisher_yates(e, &mut srng);
        let mut weights = vec![0.0; e];
        for (rank, &expert) in order.iter().enumerate() {
            weights[expert] = 1.0 / ((rank + 1) as f64).powf(spec.marginal_skew);
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        marginals.push(weights);
    }
    let preferred: Vec<Vec<usize>> = (0..l.saturating_sub(1))
        .map(|_| fisher_yates(e, &mut srng))
        .collect();

    // Override bookkeeping per layer.
    let mut by_layer: BTreeMap<usize, Vec<&HotOverride>> = BTreeMap::new();
    for ov in &spec.hot_overrides {
        by_layer.entry(ov.layer).or_default().push(ov);
    }
    let mut quota_states: BTreeMap<usize, QuotaState> = BTreeMap::new();
    for (&layer, ovs) in &by_layer {
        let quotas = spec.layer_quotas(ovs).map_err(TraceError::InvalidSpec)?;
        let sets: Vec<Vec<usize>> = ovs.iter().map(|ov| ov.experts.clone()).collect();
        let hot_total: usize = sets.iter().map(Vec::len).sum();
        let caps: Vec<u64> = sets
            .iter()
            .map(|s| (k as u64).min(s.len() as u64))
            .collect();
        quota_states.insert(
            layer,
            QuotaState {
                sets,
                remaining: quotas,
                caps,
                token_floor: (k as u64).saturating_sub((e - hot_total) as u64),
                token_cap: (k as u64).min(hot_total as u64),
            },
        );
    }

    let mut load = vec![vec![0u64; e]; l];
    let mut transitions = vec![vec![vec![0u64; e]; e]; l.saturating_sub(1)];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dependency_strength;

    let mut dist = vec![0.0f64; e];
    let mut hot_mask = vec![false; e];
    for t in 0..spec.tokens {
        let mut prev: Vec<usize> = Vec::with_capacity(k);
        for layer in 0..l {
            // Target distribution for this token at this layer: the layer
            // marginal at layer 0, afterwards a mix of the marginal and the
            // previous experts' preferred successors.
            if layer == 0 || d == 0.0 {
                dist.copy_from_slice(&marginals[layer]);
            } else {
                let bump = d / k as f64;
                for (i, w) in dist.iter_mut().enumerate() {
                    *w = (1.0 - d) * marginals[layer][i];
                }
                for &p in &prev {
                    dist[preferred[layer - 1][p]] += bump;
                }
            }

            let mut chosen: Vec<usize> = Vec::with_capacity(k);
            let mut available = vec![true; e];
            if let Some(state) = quota_states.get_mut(&layer) {
                let alloc = state.allocate(k as u64, spec.tokens - t, &mut rng);
                hot_mask.iter_mut().for_each(|m| *m = false);
                for (set, &take) in state.sets.iter().zip(&alloc) {
                    for &ex in set {
                        hot_mask[ex] = true;
                    }
                    for _ in 0..take {
                        let mut side = available.clone();
                        for i in 0..e {
                            side[i] = side[i] && set.contains(&i);
                        }
                        let pick = weighted_pick(&dist, &side, &mut rng);
                        available[pick] = false;
                        chosen.push(pick);
                    }
                }
                while chosen.len() < k {
                    let mut side = available.clone();
                    for i in 0..e {
                        side[i] = side[i] && !hot_mask[i];
                    }
                    let pick = weighted_pick(&dist, &side, &mut rng);
                    available[pick] = false;
                    chosen.push(pick);
                }
            } else {
                for _ in 0..k {
                    let pick = weighted_pick(&dist, &available, &mut rng);
                    available[pick] = false;
                    chosen.push(pick);
                }
            }

            for &ex in &chosen {
                load[layer][ex] += 1;
            }
            if layer > 0 {
                for &a in &prev {
                    for &b in &chosen {
                        transitions[layer - 1][a][b] += 1;
                    }
                }
            }
            prev = chosen;
        }
    }

    let mut meta = BTreeMap::new();
    meta.insert("generator".to_string(), "synthetic-markov".to_string());
    meta.insert("seed".to_string(), spec.seed.to_string());
    meta.insert(
        "marginal_skew".to_string(),
        format!("{}", spec.marginal_skew),
    );
    meta.insert(
        "dependency_strength".to_string(),
        format!("{}", spec.dependency_strength),
    );

    let stats = RoutingStats {
        num_layers: l,
        num_experts: e,
        top_k: k,
        tokens_total: spec.tokens,
        load,
        transitions,
        meta,
    };
    debug_assert!(stats.validate().is_empty());
    Ok(stats)
}

/// Per-layer total-variation distance between the normalized load
/// distributions of two traces. 0 means identical, 1 means disjoint support.
pub fn total_variation(a: &RoutingStats, b: &RoutingStats) -> Result<Vec<f64>, TraceError> {
    if a.num_layers != b.num_layers || a.num_experts != b.num_experts {
        return Err(TraceError::DimMismatch(format!(
            "traces have shapes {}x{} and {}x{}",
            a.num_layers, a.num_experts, b.num_layers, b.num_experts
        )));
    }
    let mut out = Vec::with_capacity(a.num_layers);
    for l in 0..a.num_layers {
        let sum_a: u64 = a.load[l].iter().sum();
        let sum_b: u64 = b.load[l].iter().sum();
        let mut tv = 0.0;
        for e in 0..a.num_experts {
            let pa = if sum_a == 0 {
                0.0
            } else {
                a.load[l][e] as f64 / sum_a as f64
            };
            let pb = if sum_b == 0 {
                0.0
            } else {
                b.load[l][e] as f64 / sum_b as f64
            };
            tv += (pa - pb).abs();
        }
        out.push(tv / 2.0);
    }
    Ok(out)
}
