//! Graph data model, adjacency construction, per-pair padding and dataset I/O.
//!
//! Graphs are undirected and simple. Edges are stored once per unordered
//! pair in canonical form (`u < v`, sorted), which makes file round-trips
//! exact and de-duplication trivial.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{CoreError, Result};

/// An undirected simple graph with string identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    id: String,
    num_nodes: usize,
    /// Canonical edge list: each edge once with `u < v`, sorted ascending.
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Build a graph, canonicalizing and validating the edge list.
    ///
    /// Rejects self-loops, duplicate edges and endpoints `>= num_nodes`.
    pub fn new(
        id: impl Into<String>,
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let id = id.into();
        if num_nodes == 0 {
            return Err(CoreError::Validation(format!(
                "graph {id}: num_nodes must be >= 1"
            )));
        }
        let mut canon: Vec<(usize, usize)> = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(CoreError::Validation(format!(
                    "graph {id}: self-loop at node {a}"
                )));
            }
            if a >= num_nodes || b >= num_nodes {
                return Err(CoreError::Validation(format!(
                    "graph {id}: endpoint out of range ({a},{b}) with {num_nodes} nodes"
                )));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        if canon.windows(2).any(|w| w[0] == w[1]) {
            return Err(CoreError::Validation(format!("graph {id}: duplicate edge")));
        }
        Ok(Graph {
            id,
            num_nodes,
            edges: canon,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical edge list (`u < v`, ascending).
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let key = (u.min(v), u.max(v));
        self.edges.binary_search(&key).is_ok()
    }

    /// Neighbor lists indexed by node.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Symmetric 0/1 adjacency matrix padded with isolated nodes up to `n`.
    pub fn adjacency_matrix(&self, n: usize) -> Array2<f64> {
        let mut a = Array2::zeros((n, n));
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        a
    }

    /// Same graph under a node relabeling: node `u` becomes `perm[u]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Graph> {
        assert_eq!(perm.len(), self.num_nodes, "permutation length mismatch");
        Graph::new(
            self.id.clone(),
            self.num_nodes,
            self.edges.iter().map(|&(u, v)| (perm[u], perm[v])),
        )
    }
}

/// A query/corpus pair padded to a common node count `n`.
///
/// Padded nodes are isolated, so the exact MCES/MCCS objectives are
/// unchanged by padding. Exact oracles use the minimal `n`; batched
/// neural scoring pads every pair of a dataset to the dataset-wide
/// maximum so all matrices share one shape.
#[derive(Debug, Clone)]
pub struct PaddedPair {
    pub query: Graph,
    pub corpus: Graph,
    n: usize,
    a_q: Array2<f64>,
    a_c: Array2<f64>,
}

impl PaddedPair {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a_q(&self) -> &Array2<f64> {
        &self.a_q
    }

    pub fn a_c(&self) -> &Array2<f64> {
        &self.a_c
    }
}

/// Pad `query` and `corpus` to a common size `n`.
///
/// Fails when `n` is smaller than either graph.
pub fn build_padded_pair(query: &Graph, corpus: &Graph, n: usize) -> Result<PaddedPair> {
    let need = query.num_nodes().max(corpus.num_nodes());
    if n < need {
        return Err(CoreError::Size(format!(
            "padding size {n} smaller than max node count {need}"
        )));
    }
    Ok(PaddedPair {
        a_q: query.adjacency_matrix(n),
        a_c: corpus.adjacency_matrix(n),
        query: query.clone(),
        corpus: corpus.clone(),
        n,
    })
}

/// Minimal padding: `n = max(|V_q|, |V_c|)`.
pub fn build_minimal_pair(query: &Graph, corpus: &Graph) -> PaddedPair {
    let n = query.num_nodes().max(corpus.num_nodes());
    build_padded_pair(query, corpus, n).expect("minimal padding is always large enough")
}

/// Ground-truth labels for one (query, corpus) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub query_id: String,
    pub corpus_id: String,
    /// MCES value: number of edges of the maximum common edge subgraph.
    pub y_mces: usize,
    /// MCCS value: node count of the maximum common connected subgraph.
    pub y_mccs: usize,
    /// Optional convex combination `a * y_mccs + (1 - a) * y_mces`.
    pub y_combo: Option<f64>,
}

impl LabelRecord {
    /// Label under a given target: MCES, MCCS, or the stored combination.
    pub fn target_value(&self, target: LabelTarget) -> Result<f64> {
        match target {
            LabelTarget::Mces => Ok(self.y_mces as f64),
            LabelTarget::Mccs => Ok(self.y_mccs as f64),
            LabelTarget::Combo => self.y_combo.ok_or_else(|| {
                CoreError::Validation(format!(
                    "pair ({}, {}) has no combo label",
                    self.query_id, self.corpus_id
                ))
            }),
        }
    }
}

/// Which ground-truth column a model regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelTarget {
    Mces,
    Mccs,
    Combo,
}

impl std::str::FromStr for LabelTarget {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mces" => Ok(LabelTarget::Mces),
            "mccs" => Ok(LabelTarget::Mccs),
            "combo" => Ok(LabelTarget::Combo),
            other => Err(CoreError::Config(format!(
                "unknown target '{other}' (expected mces, mccs or combo)"
            ))),
        }
    }
}

fn format_edge_list(edges: &[(usize, usize)]) -> String {
    let mut s = String::new();
    for (i, &(u, v)) in edges.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{u}-{v}");
    }
    s
}

fn parse_edge_list(field: &str, line: usize) -> Result<Vec<(usize, usize)>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    let mut edges = Vec::new();
    for part in field.split(',') {
        let (u, v) = part.split_once('-').ok_or_else(|| CoreError::Parse {
            line,
            msg: format!("bad edge '{part}' (expected u-v)"),
        })?;
        let u: usize = u.parse().map_err(|_| CoreError::Parse {
            line,
            msg: format!("bad endpoint '{u}'"),
        })?;
        let v: usize = v.parse().map_err(|_| CoreError::Parse {
            line,
            msg: format!("bad endpoint '{v}'"),
        })?;
        if u == v {
            return Err(CoreError::Parse {
                line,
                msg: format!("self-loop {u}-{v}"),
            });
        }
        edges.push((u, v));
    }
    Ok(edges)
}

/// Serialize graphs in the line-delimited dataset format:
/// `id<TAB>num_nodes<TAB>u1-v1,u2-v2,...` (third field may be empty).
pub fn dataset_to_string(graphs: &[Graph]) -> String {
    let mut out = String::new();
    for g in graphs {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            g.id(),
            g.num_nodes(),
            format_edge_list(g.edges())
        );
    }
    out
}

/// Parse the dataset format; errors carry 1-based line numbers.
pub fn dataset_from_string(text: &str) -> Result<Vec<Graph>> {
    let mut graphs = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let mut fields = raw.split('\t');
        let id = fields.next().unwrap_or("");
        let nodes = fields.next().ok_or_else(|| CoreError::Parse {
            line,
            msg: "missing num_nodes field".into(),
        })?;
        let edge_field = fields.next().ok_or_else(|| CoreError::Parse {
            line,
            msg: "missing edge list field".into(),
        })?;
        if fields.next().is_some() {
            return Err(CoreError::Parse {
                line,
                msg: "too many fields".into(),
            });
        }
        if id.is_empty() {
            return Err(CoreError::Parse {
                line,
                msg: "empty graph id".into(),
            });
        }
        let num_nodes: usize = nodes.parse().map_err(|_| CoreError::Parse {
            line,
            msg: format!("bad num_nodes '{nodes}'"),
        })?;
        let edges = parse_edge_list(edge_field, line)?;
        if !seen.insert(id.to_string()) {
            return Err(CoreError::Validation(format!(
                "duplicate graph id '{id}' at line {line}"
            )));
        }
        let g = Graph::new(id, num_nodes, edges).map_err(|e| match e {
            CoreError::Validation(msg) => CoreError::Parse { line, msg },
            other => other,
        })?;
        graphs.push(g);
    }
    Ok(graphs)
}

pub fn save_dataset(graphs: &[Graph], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset_to_string(graphs))
        .map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Graph>> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    dataset_from_string(&text)
}

/// Serialize labels: `query_id<TAB>corpus_id<TAB>y_mces<TAB>y_mccs[<TAB>y_combo]`.
pub fn labels_to_string(labels: &[LabelRecord]) -> String {
    let mut out = String::new();
    for l in labels {
        match l.y_combo {
            Some(c) => {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    l.query_id, l.corpus_id, l.y_mces, l.y_mccs, c
                );
            }
            None => {
                let _ = writeln!(out, "{}\t{}\t{}\t{}", l.query_id, l.corpus_id, l.y_mces, l.y_mccs);
            }
        }
    }
    out
}

pub fn labels_from_string(text: &str) -> Result<Vec<LabelRecord>> {
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 && fields.len() != 5 {
            return Err(CoreError::Parse {
                line,
                msg: format!("expected 4 or 5 fields, got {}", fields.len()),
            });
        }
        let y_mces: usize = fields[2].parse().map_err(|_| CoreError::Parse {
            line,
            msg: format!("bad y_mces '{}'", fields[2]),
        })?;
        let y_mccs: usize = fields[3].parse().map_err(|_| CoreError::Parse {
            line,
            msg: format!("bad y_mccs '{}'", fields[3]),
        })?;
        let y_combo = match fields.get(4) {
            Some(f) => Some(f.parse::<f64>().map_err(|_| CoreError::Parse {
                line,
                msg: format!("bad y_combo '{f}'"),
            })?),
            None => None,
        };
        labels.push(LabelRecord {
            query_id: fields[0].to_string(),
            corpus_id: fields[1].to_string(),
            y_mces,
            y_mccs,
            y_combo,
        });
    }
    Ok(labels)
}

pub fn save_labels(labels: &[LabelRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, labels_to_string(labels))
        .map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRecord>> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    labels_from_string(&text)
}

/// Convenience constructors for well-known small graphs, used across tests.
pub mod shapes {
    use super::Graph;

    pub fn path(id: &str, n: usize) -> Graph {
        Graph::new(id, n, (0..n.saturating_sub(1)).map(|i| (i, i + 1))).unwrap()
    }

    pub fn cycle(id: &str, n: usize) -> Graph {
        let edges = (0..n).map(|i| (i, (i + 1) % n));
        Graph::new(id, n, edges).unwrap()
    }

    pub fn complete(id: &str, n: usize) -> Graph {
        let edges = (0..n).flat_map(|u| ((u + 1)..n).map(move |v| (u, v)));
        Graph::new(id, n, edges).unwrap()
    }

    /// Star with `leaves` leaf nodes attached to node 0.
    pub fn star(id: &str, leaves: usize) -> Graph {
        Graph::new(id, leaves + 1, (1..=leaves).map(|v| (0, v))).unwrap()
    }

    pub fn edgeless(id: &str, n: usize) -> Graph {
        Graph::new(id, n, std::iter::empty()).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn padding_adds_isolated_nodes() {
        let tri = shapes::complete("q", 3);
        let edge = Graph::new("c", 2, [(0, 1)]).unwrap();
        let pair = build_padded_pair(&tri, &edge, 3).unwrap();
        assert_eq!(pair.a_c().shape(), &[3, 3]);
        assert_eq!(pair.a_c().sum(), 2.0);
        assert_eq!(pair.a_c().row(2).sum(), 0.0);
        assert_eq!(pair.a_c().column(2).sum(), 0.0);
    }

    #[test]
    fn identity_pair_has_equal_adjacency() {
        let g = shapes::cycle("g", 5);
        let pair = build_padded_pair(&g, &g, 5).unwrap();
        assert_eq!(pair.a_q(), pair.a_c());
    }

    #[test]
    fn p4_star_padded_row_sums() {
        let p4 = shapes::path("q", 4);
        let s3 = shapes::star("c", 3);
        let pair = build_padded_pair(&p4, &s3, 5).unwrap();
        assert_eq!(pair.a_q().shape(), &[5, 5]);
        assert_eq!(pair.a_c().shape(), &[5, 5]);
        let row_sums: Vec<f64> = (0..5).map(|i| pair.a_q().row(i).sum()).collect();
        assert_eq!(row_sums, vec![1.0, 2.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn padding_too_small_is_an_error() {
        let p4 = shapes::path("q", 4);
        let s3 = shapes::star("c", 3);
        let err = build_padded_pair(&p4, &s3, 3).unwrap_err();
        assert!(matches!(err, CoreError::Size(_)));
    }

    #[test]
    fn self_loop_record_is_rejected() {
        let err = dataset_from_string("g\t4\t0-1,3-3").unwrap_err();
        match err {
            CoreError::Parse { line, msg } => {
                assert_eq!(line, 1);
                assert!(msg.contains("self-loop"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_endpoint_is_rejected() {
        let err = dataset_from_string("g\t4\t0-4").unwrap_err();
        match err {
            CoreError::Parse { msg, .. } => assert!(msg.contains("out of range"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let err = dataset_from_string("g\t2\t0-1\ng\t3\t\n").unwrap_err();
        assert!(matches!(err, CoreError::Validation(_)));
    }

    #[test]
    fn empty_edge_list_round_trips() {
        let graphs = vec![shapes::edgeless("lonely", 4)];
        let text = dataset_to_string(&graphs);
        assert_eq!(text, "lonely\t4\t\n");
        assert_eq!(dataset_from_string(&text).unwrap(), graphs);
    }

    #[test]
    fn labels_round_trip_with_and_without_combo() {
        let labels = vec![
            LabelRecord {
                query_id: "q0".into(),
                corpus_id: "c0".into(),
                y_mces: 2,
                y_mccs: 3,
                y_combo: Some(2.3),
            },
            LabelRecord {
                query_id: "q0".into(),
                corpus_id: "c1".into(),
                y_mces: 0,
                y_mccs: 1,
                y_combo: None,
            },
        ];
        let text = labels_to_string(&labels);
        assert_eq!(labels_from_string(&text).unwrap(), labels);
    }

    prop_compose! {
        fn arb_graph(max_n: usize)(n in 1..=max_n)(
            n in Just(n),
            mask in proptest::collection::vec(any::<bool>(), n * (n.saturating_sub(1)) / 2),
        ) -> Graph {
            let mut edges = Vec::new();
            let mut k = 0;
            for u in 0..n {
                for v in (u + 1)..n {
                    if mask[k] {
                        edges.push((u, v));
                    }
                    k += 1;
                }
            }
            Graph::new(format!("g{n}"), n, edges).unwrap()
        }
    }

    proptest! {
        #[test]
        fn dataset_round_trip(graphs in proptest::collection::vec(arb_graph(9), 1..20)) {
            // make ids unique
            let graphs: Vec<Graph> = graphs
                .into_iter()
                .enumerate()
                .map(|(i, g)| Graph::new(format!("g{i}"), g.num_nodes(), g.edges().to_vec()).unwrap())
                .collect();
            let text = dataset_to_string(&graphs);
            prop_assert_eq!(dataset_from_string(&text).unwrap(), graphs);
        }

        #[test]
        fn adjacency_sum_is_twice_edge_count(g in arb_graph(9), extra in 0usize..4) {
            let n = g.num_nodes() + extra;
            let pair = build_padded_pair(&g, &g, n).unwrap();
            prop_assert_eq!(pair.a_q().sum(), 2.0 * g.num_edges() as f64);
            // symmetric, zero diagonal
            for i in 0..n {
                prop_assert_eq!(pair.a_q()[[i, i]], 0.0);
                for j in 0..n {
                    prop_assert_eq!(pair.a_q()[[i, j]], pair.a_q()[[j, i]]);
                }
            }
        }

        #[test]
        fn padding_is_idempotent(g in arb_graph(9)) {
            let n = g.num_nodes() + 3;
            let once = build_padded_pair(&g, &g, n).unwrap();
            let twice = build_padded_pair(&once.query, &once.corpus, n).unwrap();
            prop_assert_eq!(once.a_q(), twice.a_q());
            prop_assert_eq!(once.a_c(), twice.a_c());
        }
    }
}
