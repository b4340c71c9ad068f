//! GPU fleet model: pairwise interconnect bandwidths with flat and
//! hierarchical (intra-/inter-node) constructors.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// A GPU fleet with symmetric pairwise bandwidths in bytes/sec.
///
/// `bandwidth[g1][g2]` is the link bandwidth between distinct GPUs; the
/// diagonal is unused and kept at zero. Intra-GPU transfers are free, so
/// every cost computation skips `g1 == g2` terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub num_gpus: usize,
    pub bandwidth: Vec<Vec<f64>>,
    pub labels: Option<Vec<String>>,
}

#[derive(Debug)]
pub enum TopologyError {
    InvalidArg(String),
    Asymmetric {
        g1: usize,
        g2: usize,
        forward: f64,
        backward: f64,
    },
    NonPositive {
        g1: usize,
        g2: usize,
        value: f64,
    },
    Shape(String),
    Io {
        path: String,
        source: std::io::Error,
    },
    Parse {
        path: String,
        detail: String,
    },
}

impl fmt::Display for TopologyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyError::InvalidArg(msg) => write!(f, "invalid topology argument: {}", msg),
            TopologyError::Asymmetric {
                g1,
                g2,
                forward,
                backward,
            } => write!(
                f,
                "bandwidth matrix is asymmetric: B[{}][{}] = {} but B[{}][{}] = {}",
                g1, g2, forward, g2, g1, backward
            ),
            TopologyError::NonPositive { g1, g2, value } => write!(
                f,
                "bandwidth B[{}][{}] = {} must be positive and finite",
                g1, g2, value
            ),
            TopologyError::Shape(msg) => write!(f, "topology shape error: {}", msg),
            TopologyError::Io { path, source } => write!(f, "io error on {}: {}", path, source),
            TopologyError::Parse { path, detail } => {
                write!(f, "parse error in {}: {}", path, detail)
            }
        }
    }
}

impl std::error::Error for TopologyError {}

impl Topology {
    /// All GPU pairs share one bandwidth (single fully connected domain).
    pub fn uniform(num_gpus: usize, bandwidth: f64) -> Result<Topology, TopologyError> {
        if num_gpus == 0 {
            return Err(TopologyError::InvalidArg("num_gpus must be >= 1".into()));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(TopologyError::InvalidArg(format!(
                "bandwidth {} must be positive and finite",
                bandwidth
            )));
        }
        let mut matrix = vec![vec![bandwidth; num_gpus]; num_gpus];
        for (g, row) in matrix.iter_mut().enumerate() {
            row[g] = 0.0;
        }
        Ok(Topology {
            num_gpus,
            bandwidth: matrix,
            labels: None,
        })
    }

    /// Two-level fabric: GPUs inside a node talk at `intra_bw`, GPUs on
    /// different nodes at `inter_bw`. Labels record the node/slot layout.
    pub fn hierarchical(
        nodes: usize,
        gpus_per_node: usize,
        intra_bw: f64,
        inter_bw: f64,
    ) -> Result<Topology, TopologyError> {
        if nodes == 0 || gpus_per_node == 0 {
            return Err(TopologyError::InvalidArg(
                "nodes and gpus_per_node must be >= 1".into(),
            ));
        }
        if !(inter_bw > 0.0) || !inter_bw.is_finite() || !intra_bw.is_finite() {
            return Err(TopologyError::InvalidArg(format!(
                "bandwidths ({}, {}) must be positive and finite",
                intra_bw, inter_bw
            )));
        }
        if intra_bw < inter_bw {
            return Err(TopologyError::InvalidArg(format!(
                "intra-node bandwidth {} must be >= inter-node bandwidth {}",
                intra_bw, inter_bw
            )));
        }
        let num_gpus = nodes * gpus_per_node;
        let mut matrix = vec![vec![0.0; num_gpus]; num_gpus];
        for g1 in 0..num_gpus {
            for g2 in 0..num_gpus {
                if g1 == g2 {
                    continue;
                }
                let same_node = g1 / gpus_per_node == g2 / gpus_per_node;
                matrix[g1][g2] = if same_node { intra_bw } else { inter_bw };
            }
        }
        let labels = (0..num_gpus)
            .map(|g| format!("node{}/gpu{}", g / gpus_per_node, g % gpus_per_node))
            .collect();
        Ok(Topology {
            num_gpus,
            bandwidth: matrix,
            labels: Some(labels),
        })
    }

    /// Build from an explicit matrix, enforcing symmetry and positivity.
    pub fn from_matrix(
        bandwidth: Vec<Vec<f64>>,
        labels: Option<Vec<String>>,
    ) -> Result<Topology, TopologyError> {
        let num_gpus = bandwidth.len();
        if num_gpus == 0 {
            return Err(TopologyError::InvalidArg(
                "bandwidth matrix is empty".into(),
            ));
        }
        if bandwidth.iter().any(|row| row.len() != num_gpus) {
            return Err(TopologyError::Shape(format!(
                "bandwidth matrix must be square ({} rows)",
                num_gpus
            )));
        }
        if let Some(l) = &labels {
            if l.len() != num_gpus {
                return Err(TopologyError::Shape(format!(
                    "{} labels for {} GPUs",
                    l.len(),
                    num_gpus
                )));
            }
        }
        for g1 in 0..num_gpus {
            for g2 in (g1 + 1)..num_gpus {
                let fwd = bandwidth[g1][g2];
                let bwd = bandwidth[g2][g1];
                if fwd != bwd {
                    return Err(TopologyError::Asymmetric {
                        g1,
                        g2,
                        forward: fwd,
                        backward: bwd,
                    });
                }
                if !(fwd > 0.0) || !fwd.is_finite() {
                    return Err(TopologyError::NonPositive { g1, g2, value: fwd });
                }
            }
        }
        let mut topo = Topology {
            num_gpus,
            bandwidth,
            labels,
        };
        for g in 0..num_gpus {
            topo.bandwidth[g][g] = 0.0;
        }
        Ok(topo)
    }

    pub fn read_json_file(path: impl AsRef<Path>) -> Result<Topology, TopologyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TopologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let raw: Topology =
            serde_path_to_error::deserialize(de).map_err(|err| TopologyError::Parse {
                path: path.display().to_string(),
                detail: format!("{} (at {})", err.inner(), err.path()),
            })?;
        if raw.bandwidth.len() != raw.num_gpus {
            return Err(TopologyError::Shape(format!(
                "num_gpus = {} but bandwidth has {} rows",
                raw.num_gpus,
                raw.bandwidth.len()
            )));
        }
        Topology::from_matrix(raw.bandwidth, raw.labels)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("topology serialize");
        s.push('\n');
        s
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>) -> Result<(), TopologyError> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|source| TopologyError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_fills_off_diagonal() {
        let t = Topology::uniform(4, 1.0).unwrap();
        for g1 in 0..4 {
            for g2 in 0..4 {
                let expected = if g1 == g2 { 0.0 } else { 1.0 };
                assert_eq!(t.bandwidth[g1][g2], expected);
            }
        }
    }

    #[test]
    fn single_gpu_topology_is_degenerate() {
        let t = Topology::uniform(1, 5.0).unwrap();
        assert_eq!(t.num_gpus, 1);
        assert_eq!(t.bandwidth, vec![vec![0.0]]);
    }

    #[test]
    fn nvlink_pair() {
        let t = Topology::uniform(2, 900e9).unwrap();
        assert_eq!(t.bandwidth[0][1], 900e9);
        assert_eq!(t.bandwidth[1][0], 900e9);
    }

    #[test]
    fn hierarchical_two_nodes() {
        let t = Topology::hierarchical(2, 2, 900e9, 50e9).unwrap();
        assert_eq!(t.num_gpus, 4);
        assert_eq!(t.bandwidth[0][1], 900e9);
        assert_eq!(t.bandwidth[0][2], 50e9);
        assert_eq!(t.labels.as_ref().unwrap()[3], "node1/gpu1");
    }

    #[test]
    fn single_node_hierarchy_equals_uniform() {
        let h = Topology::hierarchical(1, 3, 7.0, 1.0).unwrap();
        let u = Topology::uniform(3, 7.0).unwrap();
        assert_eq!(h.bandwidth, u.bandwidth);
    }

    #[test]
    fn cross_node_pair_count() {
        let t = Topology::hierarchical(2, 4, 900e9, 100e9).unwrap();
        assert_eq!(t.num_gpus, 8);
        let cross = (0..8)
            .flat_map(|g1| (0..8).map(move |g2| (g1, g2)))
            .filter(|&(g1, g2)| g1 != g2 && t.bandwidth[g1][g2] == 100e9)
            .count();
        // 2 nodes of 4: each of the 8 GPUs sees 4 remote GPUs, ordered pairs.
        assert_eq!(cross, 2 * 4 * 4);
    }

    #[test]
    fn round_trip_preserves_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("topology.json");
        let t = Topology::hierarchical(2, 2, 900e9, 50e9).unwrap();
        t.write_json_file(&path).unwrap();
        let back = Topology::read_json_file(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("topology.json");
        fs::write(
            &path,
            r#"{"num_gpus": 2, "bandwidth": [[0.0, 2.0], [3.0, 0.0]], "labels": null}"#,
        )
        .unwrap();
        assert!(matches!(
            Topology::read_json_file(&path),
            Err(TopologyError::Asymmetric { .. })
        ));
    }

    #[test]
    fn intra_must_dominate_inter() {
        assert!(matches!(
            Topology::hierarchical(2, 2, 10.0, 20.0),
            Err(TopologyError::InvalidArg(_))
        ));
    }
}
