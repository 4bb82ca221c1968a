//! Road graph and the Location-GCN propagation operator.
//!
//! Internally `adjacency[i][j] == 1` means node `j` feeds node `i` (j is
//! upstream of i), so row `i` of every support matrix gathers from its
//! upstream neighbours: `out[i] = Σ_j support[i][j] · h[j]`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Rows whose masked sum falls below this are rejected in dynamic mode.
pub const DEGENERATE_ROW_EPS: f64 = 1e-12;

/// Which degree matrix normalizes the masked support.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    /// Degree taken from the masked matrix `|W_mask| ∘ (A + E)`; rows sum to one.
    #[default]
    Dynamic,
    /// Degree taken from the unmasked `A + E`.
    Static,
}

impl FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" => Ok(Self::Dynamic),
            "static" => Ok(Self::Static),
            other => Err(Error::Validation(format!(
                "unknown normalization `{other}` (expected dynamic|static)"
            ))),
        }
    }
}

impl fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dynamic => "dynamic",
            Self::Static => "static",
        })
    }
}

/// How a file's `(first, second)` node pair maps to influence direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyOrientation {
    /// `first` influences `second` (edge `src -> dst`, or dense `M[i][j]`
    /// meaning i feeds j). Transposed on ingest.
    #[default]
    Out,
    /// `second` influences `first`; already the internal convention.
    In,
}

impl FromStr for AdjacencyOrientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "out" => Ok(Self::Out),
            "in" => Ok(Self::In),
            other => Err(Error::Validation(format!(
                "unknown adjacency orientation `{other}` (expected in|out)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoadGraph {
    node_count: usize,
    /// Row-major 0/1 matrix, zero diagonal.
    adjacency: Vec<u8>,
}

impl RoadGraph {
    /// Builds a graph from a dense matrix in the internal orientation.
    pub fn from_matrix(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Validation("graph needs at least one node".into()));
        }
        let mut adjacency = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Validation(format!(
                    "adjacency row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Validation(format!("adjacency[{i}][{j}] = {v} is not 0/1")));
                }
                if i == j && v != 0 {
                    return Err(Error::Validation(format!("self-loop on node {i}")));
                }
            }
            adjacency.extend_from_slice(row);
        }
        Ok(RoadGraph {
            node_count: n,
            adjacency,
        })
    }

    /// Graph with `upstream -> downstream` influence edges.
    pub fn from_influences(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::Validation("graph needs at least one node".into()));
        }
        let mut adjacency = vec![0u8; node_count * node_count];
        for &(up, down) in edges {
            if up >= node_count || down >= node_count {
                return Err(Error::Validation(format!(
                    "edge {up}->{down} references a node outside 0..{node_count}"
                )));
            }
            if up == down {
                return Err(Error::Validation(format!("self-loop on node {up}")));
            }
            adjacency[down * node_count + up] = 1;
        }
        Ok(RoadGraph {
            node_count,
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Whether `from` directly feeds `to`.
    pub fn feeds(&self, from: usize, to: usize) -> bool {
        self.adjacency[to * self.node_count + from] == 1
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|&v| v as usize).sum()
    }

    /// `A` as an `N×N` tensor.
    pub fn adjacency(&self) -> Tensor {
        let n = self.node_count;
        Tensor::matrix(n, n, self.adjacency.iter().map(|&v| f64::from(v)).collect())
            .expect("square adjacency")
    }

    /// `A + E`.
    pub fn with_self_loops(&self) -> Tensor {
        let n = self.node_count;
        let mut t = self.adjacency();
        for i in 0..n {
            t.set(i, i, 1.0);
        }
        t
    }

    /// Nodes whose value can reach `target` within `hops` steps of `A + E`.
    pub fn upstream_within(&self, target: usize, hops: usize) -> Vec<bool> {
        let n = self.node_count;
        let mut reach = vec![false; n];
        reach[target] = true;
        for _ in 0..hops {
            let mut next = reach.clone();
            for i in 0..n {
                if reach[i] {
                    for j in 0..n {
                        if self.feeds(j, i) {
                            next[j] = true;
                        }
                    }
                }
            }
            reach = next;
        }
        reach
    }

    /// Loads a `src,dst` edge list or a dense 0/1 matrix CSV (detected from
    /// the header line).
    pub fn read_csv(path: &Path, node_count: usize, orientation: AdjacencyOrientation) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string(), node_count, orientation)
    }

    pub fn parse_csv(
        text: &str,
        origin: &str,
        node_count: usize,
        orientation: AdjacencyOrientation,
    ) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Parse {
                path: origin.to_owned(),
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        let Some(first) = records.first() else {
            return Err(Error::Validation(format!("{origin}: empty adjacency file")));
        };
        let is_edge_list = first.len() == 2
            && first.get(0) == Some("src")
            && first.get(1) == Some("dst");

        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_owned(),
            line: line as u64 + 1,
            message,
        };

        if is_edge_list {
            let mut edges = Vec::new();
            for (line, rec) in records.iter().enumerate().skip(1) {
                if rec.len() != 2 {
                    return Err(parse_err(line, format!("expected 2 fields, got {}", rec.len())));
                }
                let a: usize = rec[0]
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad node id `{}`", &rec[0])))?;
                let b: usize = rec[1]
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad node id `{}`", &rec[1])))?;
                if a >= node_count || b >= node_count {
                    return Err(Error::Validation(format!(
                        "{origin}:{}: node id outside the flow data (0..{node_count})",
                        line + 1
                    )));
                }
                if a == b {
                    return Err(Error::Validation(format!(
                        "{origin}:{}: self-loop on node {a}",
                        line + 1
                    )));
                }
                edges.push(match orientation {
                    AdjacencyOrientation::Out => (a, b),
                    AdjacencyOrientation::In => (b, a),
                });
            }
            return Self::from_influences(node_count, &edges);
        }

        // Dense matrix, optional non-numeric header row.
        let skip = usize::from(first.iter().any(|f| f.parse::<f64>().is_err()));
        let mut rows: Vec<Vec<u8>> = Vec::new();
        for (line, rec) in records.iter().enumerate().skip(skip) {
            let row = rec
                .iter()
                .map(|f| match f {
                    "0" | "0.0" => Ok(0u8),
                    "1" | "1.0" => Ok(1u8),
                    other => Err(parse_err(line, format!("adjacency entry `{other}` is not 0/1"))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.len() != node_count {
            return Err(Error::Validation(format!(
                "{origin}: dense adjacency has {} rows but the flow data has {node_count} nodes",
                rows.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.get(i) == Some(&1) {
                return Err(Error::Validation(format!("{origin}: self-loop on node {i}")));
            }
        }
        if orientation == AdjacencyOrientation::Out {
            let n = rows.len();
            let t: Vec<Vec<u8>> = (0..n)
                .map(|i| (0..n).map(|j| rows.get(j).and_then(|r| r.get(i)).copied().unwrap_or(2)).collect())
                .collect();
            rows = t;
        }
        Self::from_matrix(&rows)
    }
}

/// Trainable `N×N` influence weights; only their absolute values are used.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationMask {
    pub weights: Tensor,
}

impl LocationMask {
    pub fn ones(n: usize) -> Self {
        LocationMask {
            weights: Tensor::ones(&[n, n]),
        }
    }

    /// Uniform in `[0.5, 1.5]`, away from the all-zero degenerate start.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        LocationMask {
            weights: Tensor::uniform(&[n, n], 0.5, 1.5, rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayerParams {
    /// `F_in × F_out`.
    pub weight: Tensor,
    pub steps: usize,
}

/// `D⁻¹(A + E)` with `D` the row degree of `A + E`.
pub fn normalized_support(graph: &RoadGraph) -> Tensor {
    let mut s = graph.with_self_loops();
    let n = graph.node_count();
    for i in 0..n {
        let deg: f64 = s.row(i).iter().sum();
        for j in 0..n {
            s.set(i, j, s.get(i, j) / deg);
        }
    }
    s
}

/// `D⁻¹(|W_mask| ∘ (A + E))`.
pub fn location_support(graph: &RoadGraph, mask: &LocationMask, mode: NormalizationMode) -> Result<Tensor> {
    let mut tape = Tape::new();
    let structure = tape.constant(graph.with_self_loops());
    let m = tape.var(mask.weights.clone());
    let s = location_support_on_tape(&mut tape, structure, m, mode)?;
    Ok(tape.value(s).clone())
}

/// Differentiable form of [`location_support`]. `structure` is `A + E`.
pub fn location_support_on_tape(
    tape: &mut Tape,
    structure: Var,
    mask: Var,
    mode: NormalizationMode,
) -> Result<Var> {
    if tape.shape(structure) != tape.shape(mask) {
        return Err(Error::shape("location_support", tape.shape(structure), tape.shape(mask)));
    }
    let abs = tape.abs(mask);
    let masked = tape.mul(abs, structure)?;
    let degree = match mode {
        NormalizationMode::Dynamic => {
            let d = tape.row_sum(masked)?;
            if let Some((node, &sum)) = tape
                .value(d)
                .data()
                .iter()
                .enumerate()
                .find(|(_, &s)| s < DEGENERATE_ROW_EPS)
            {
                return Err(Error::DegenerateRow { node, sum });
            }
            d
        }
        NormalizationMode::Static => {
            let d = tape.row_sum(structure)?;
            let value = tape.value(d).clone();
            tape.constant(value)
        }
    };
    tape.div_rows(masked, degree)
}

/// `H_l = support · H_{l-1} · W` for `l = 1..=steps`, with `H_0 = X`.
pub fn gcn_forward(x: &Tensor, support: &Tensor, params: &GcnLayerParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let sv = tape.constant(support.clone());
    let wv = tape.constant(params.weight.clone());
    let n = x.rows();
    let out = gcn_forward_on_tape(&mut tape, xv, n, sv, wv, params.steps)?;
    Ok(tape.value(out).clone())
}

/// Batched Location-GCN on the tape.
///
/// `x` is `[N·B, F]` laid out node-major (all batch rows of node 0 first), so
/// it reshapes to `[N, B·F]` for the node mixing and back to `[N·B, F]` for
/// the feature transform.
pub fn gcn_forward_on_tape(
    tape: &mut Tape,
    x: Var,
    node_count: usize,
    support: Var,
    weight: Var,
    steps: usize,
) -> Result<Var> {
    if steps == 0 {
        return Err(Error::Contract("gcn steps must be at least 1".into()));
    }
    let w_shape = tape.shape(weight).to_vec();
    if steps > 1 && w_shape[0] != w_shape[1] {
        return Err(Error::shape("gcn_forward (steps > 1 needs square W)", &w_shape, &w_shape));
    }
    let x_shape = tape.shape(x).to_vec();
    if x_shape.len() != 2 || x_shape[0] % node_count != 0 || x_shape[1] != w_shape[0] {
        return Err(Error::shape("gcn_forward", &x_shape, &w_shape));
    }
    let s_shape = tape.shape(support).to_vec();
    if s_shape != [node_count, node_count] {
        return Err(Error::shape("gcn_forward", &s_shape, &[node_count, node_count]));
    }
    let rows = x_shape[0];
    let batch = rows / node_count;
    let mut h = x;
    for _ in 0..steps {
        let width = tape.shape(h)[1];
        let by_node = tape.reshape(h, &[node_count, batch * width])?;
        let mixed = tape.matmul(support, by_node)?;
        let flat = tape.reshape(mixed, &[rows, width])?;
        h = tape.matmul(flat, weight)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    fn figure4_graph() -> RoadGraph {
        RoadGraph::from_influences(4, &[(2, 0), (3, 0)]).unwrap()
    }

    #[test]
    fn single_node_support() {
        let g = RoadGraph::from_matrix(&[vec![0]]).unwrap();
        assert_eq!(normalized_support(&g).data(), &[1.0]);
    }

    #[test]
    fn mutual_edge_support() {
        let g = RoadGraph::from_matrix(&[vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(normalized_support(&g).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn isolated_node_row_is_identity_row() {
        let g = RoadGraph::from_influences(3, &[(0, 1)]).unwrap();
        let s = normalized_support(&g);
        assert_eq!(s.row(2), &[0.0, 0.0, 1.0]);
        assert_eq!(s.row(1), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn rejects_self_loops_and_non_binary() {
        assert!(RoadGraph::from_matrix(&[vec![1]]).is_err());
        assert!(RoadGraph::from_matrix(&[vec![0, 2], vec![0, 0]]).is_err());
        assert!(RoadGraph::from_influences(2, &[(1, 1)]).is_err());
    }

    #[test]
    fn figure4_masked_row() {
        let g = figure4_graph();
        let mut mask = LocationMask::ones(4);
        mask.weights.set(0, 0, 1.0);
        mask.weights.set(0, 2, -2.0);
        mask.weights.set(0, 3, 1.0);
        let s = location_support(&g, &mask, NormalizationMode::Dynamic).unwrap();
        assert_eq!(s.row(0), &[0.25, 0.0, 0.5, 0.25]);
    }

    #[test]
    fn ones_mask_matches_classical_support_in_both_modes() {
        let g = figure4_graph();
        let classical = normalized_support(&g);
        for mode in [NormalizationMode::Dynamic, NormalizationMode::Static] {
            let s = location_support(&g, &LocationMask::ones(4), mode).unwrap();
            assert_eq!(s, classical);
        }
    }

    #[test]
    fn static_mode_uses_unmasked_degree() {
        let g = figure4_graph();
        let mut mask = LocationMask::ones(4);
        mask.weights.set(0, 2, 3.0);
        let s = location_support(&g, &mask, NormalizationMode::Static).unwrap();
        assert_eq!(s.row(0), &[1.0 / 3.0, 0.0, 1.0, 1.0 / 3.0]);
    }

    #[test]
    fn degenerate_row_names_node() {
        let g = figure4_graph();
        let mut mask = LocationMask::ones(4);
        mask.weights.set(1, 1, 0.0);
        match location_support(&g, &mask, NormalizationMode::Dynamic) {
            Err(Error::DegenerateRow { node, .. }) => assert_eq!(node, 1),
            other => panic!("expected degenerate row error, got {other:?}"),
        }
        // Static mode divides by the structural degree and stays defined.
        assert!(location_support(&g, &mask, NormalizationMode::Static).is_ok());
    }

    #[test]
    fn gcn_two_node_example() {
        let support = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let x = Tensor::from_rows(&[vec![2.0], vec![4.0]]).unwrap();
        let params = GcnLayerParams {
            weight: Tensor::from_rows(&[vec![3.0]]).unwrap(),
            steps: 1,
        };
        let out = gcn_forward(&x, &support, &params).unwrap();
        assert_eq!(out.data(), &[9.0, 9.0]);
    }

    #[test]
    fn gcn_identity_case() {
        let mut rng = seeded_rng(1);
        let x = Tensor::uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let params = GcnLayerParams {
            weight: Tensor::identity(3),
            steps: 2,
        };
        assert_eq!(gcn_forward(&x, &Tensor::identity(5), &params).unwrap(), x);
    }

    #[test]
    fn gcn_rejects_zero_steps_and_non_square_multi_step() {
        let x = Tensor::zeros(&[2, 3]);
        let s = Tensor::identity(2);
        let zero = GcnLayerParams {
            weight: Tensor::zeros(&[3, 3]),
            steps: 0,
        };
        assert!(matches!(gcn_forward(&x, &s, &zero), Err(Error::Contract(_))));
        let rect = GcnLayerParams {
            weight: Tensor::zeros(&[3, 4]),
            steps: 2,
        };
        assert!(matches!(gcn_forward(&x, &s, &rect), Err(Error::Shape { .. })));
    }

    #[test]
    fn parses_edge_list_and_dense() {
        let g = RoadGraph::parse_csv("src,dst\n2,0\n3,0\n", "t", 4, AdjacencyOrientation::Out).unwrap();
        assert_eq!(g, figure4_graph());
        let g_in = RoadGraph::parse_csv("src,dst\n0,2\n0,3\n", "t", 4, AdjacencyOrientation::In).unwrap();
        assert_eq!(g_in, figure4_graph());
        let dense = "0,0,0,0\n0,0,0,0\n1,0,0,0\n1,0,0,0\n";
        let g = RoadGraph::parse_csv(dense, "t", 4, AdjacencyOrientation::Out).unwrap();
        assert_eq!(g, figure4_graph());
        let g = RoadGraph::parse_csv("a,b\n0,1\n0,0\n", "t", 2, AdjacencyOrientation::In).unwrap();
        assert!(g.feeds(1, 0));
    }

    #[test]
    fn parse_rejects_self_loop_and_unknown_node() {
        assert!(matches!(
            RoadGraph::parse_csv("src,dst\n1,1\n", "t", 2, AdjacencyOrientation::Out),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            RoadGraph::parse_csv("src,dst\n0,5\n", "t", 2, AdjacencyOrientation::Out),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            RoadGraph::parse_csv("1,0\n0,0\n", "t", 2, AdjacencyOrientation::Out),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            RoadGraph::parse_csv("src,dst\nx,0\n", "t", 2, AdjacencyOrientation::Out),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
