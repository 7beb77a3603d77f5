//! Exact combinatorial MCES and MCCS solvers, the gossip component counter,
//! and a connected-component reference. These produce ground-truth labels
//! and double as test oracles for the neural surrogates.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::graph::{build_minimal_pair, Graph, LabelRecord, PaddedPair};

/// Result of an exact maximum-common-subgraph search.
#[derive(Debug, Clone)]
pub struct McsResult {
    /// Edges for MCES, nodes for MCCS.
    pub value: usize,
    /// Injective partial map realizing the optimum: `(corpus_node, query_node)` pairs.
    pub mapping: Vec<(usize, usize)>,
    /// False when the search budget ran out before the search space was exhausted.
    pub proven_optimal: bool,
}

/// Default node-expansion budget for the branch-and-bound solvers.
pub const DEFAULT_BUDGET: u64 = 50_000_000;

// ---------------------------------------------------------------------------
// Exact MCES: branch-and-bound over injective node assignments
// ---------------------------------------------------------------------------

struct McesSearch<'a> {
    query: &'a Graph,
    corpus: &'a Graph,
    q_adj: Vec<Vec<usize>>,
    /// Query nodes in the order they get assigned (degree-descending).
    order: Vec<usize>,
    /// position of each query node in `order`, usize::MAX if unordered
    q_assigned: Vec<usize>, // query node -> corpus node or usize::MAX
    c_used: Vec<bool>,
    /// query edges with both endpoints assigned so far
    q_edges_closed: usize,
    /// corpus edges with both endpoints in the image so far
    c_edges_closed: usize,
    matched: usize,
    best: usize,
    best_map: Vec<(usize, usize)>,
    expansions: u64,
    budget: u64,
    exhausted: bool,
}

impl<'a> McesSearch<'a> {
    fn new(query: &'a Graph, corpus: &'a Graph, budget: u64) -> Self {
        let deg = query.degrees();
        let mut order: Vec<usize> = (0..query.num_nodes()).collect();
        order.sort_by_key(|&u| std::cmp::Reverse(deg[u]));
        McesSearch {
            q_adj: query.adjacency_lists(),
            q_assigned: vec![usize::MAX; query.num_nodes()],
            c_used: vec![false; corpus.num_nodes()],
            order,
            query,
            corpus,
            q_edges_closed: 0,
            c_edges_closed: 0,
            matched: 0,
            best: 0,
            best_map: Vec::new(),
            expansions: 0,
            budget,
            exhausted: false,
        }
    }

    fn record_best(&mut self) {
        if self.matched > self.best {
            self.best = self.matched;
            self.best_map = self
                .q_assigned
                .iter()
                .enumerate()
                .filter(|&(_, &c)| c != usize::MAX)
                .map(|(q, &c)| (c, q))
                .collect();
        }
    }

    fn dfs(&mut self, depth: usize) {
        if self.exhausted {
            return;
        }
        self.expansions += 1;
        if self.expansions > self.budget {
            self.exhausted = true;
            return;
        }
        if depth == self.order.len() {
            self.record_best();
            return;
        }
        // admissible bound: edges matched so far plus whatever could still close
        let q_remaining = self.query.num_edges() - self.q_edges_closed;
        let c_remaining = self.corpus.num_edges() - self.c_edges_closed;
        if self.matched + q_remaining.min(c_remaining) <= self.best {
            return;
        }
        let u = self.order[depth];
        // candidate corpus nodes, plus "unmatched" when the corpus has no free slot
        let mut any_free = false;
        for v in 0..self.corpus.num_nodes() {
            if self.c_used[v] {
                continue;
            }
            any_free = true;
            // gained edges: query edges (u, w) with w already assigned and
            // (v, assigned(w)) a corpus edge
            let mut gained = 0usize;
            let mut closed_q = 0usize;
            for &w in &self.q_adj[u] {
                let cw = self.q_assigned[w];
                if cw != usize::MAX {
                    closed_q += 1;
                    if self.corpus.has_edge(v, cw) {
                        gained += 1;
                    }
                }
            }
            let mut closed_c = 0usize;
            for &(a, b) in self.corpus.edges() {
                if (a == v && self.c_used[b]) || (b == v && self.c_used[a]) {
                    closed_c += 1;
                }
            }
            self.q_assigned[u] = v;
            self.c_used[v] = true;
            self.matched += gained;
            self.q_edges_closed += closed_q;
            self.c_edges_closed += closed_c;
            self.dfs(depth + 1);
            self.q_assigned[u] = usize::MAX;
            self.c_used[v] = false;
            self.matched -= gained;
            self.q_edges_closed -= closed_q;
            self.c_edges_closed -= closed_c;
            if self.exhausted {
                return;
            }
        }
        if !any_free {
            // more query nodes than corpus nodes: leave u unmatched
            let closed_q = self
                .q_adj[u]
                .iter()
                .filter(|&&w| self.q_assigned[w] != usize::MAX)
                .count();
            self.q_edges_closed += closed_q;
            self.dfs(depth + 1);
            self.q_edges_closed -= closed_q;
        }
    }
}

/// Exact MCES via branch-and-bound over injective assignments.
///
/// The value equals `max_P (1/2) sum min(A_q, P A_c P^T)`: the number of
/// edges of the best common edge subgraph.
pub fn exact_mces(pair: &PaddedPair, budget: u64) -> McsResult {
    let mut s = McesSearch::new(&pair.query, &pair.corpus, budget);
    s.dfs(0);
    s.record_best();
    McsResult {
        value: s.best,
        mapping: s.best_map,
        proven_optimal: !s.exhausted,
    }
}

// ---------------------------------------------------------------------------
// Exact MCCS: branch-and-bound growing a connected common region
// ---------------------------------------------------------------------------

struct MccsSearch {
    q_adj: Vec<Vec<usize>>,
    c_adj: Vec<Vec<usize>>,
    q_map: Vec<usize>, // query node -> corpus node or usize::MAX
    c_used: Vec<bool>,
    pairs: Vec<(usize, usize)>, // (query, corpus) in insertion order
    /// Pair assignments already fully explored on the current DFS spine;
    /// skipping them stops the same component from being rebuilt in a
    /// different growth order.
    forbidden: Vec<(usize, usize)>,
    start_q: usize,
    best: usize,
    best_map: Vec<(usize, usize)>,
    expansions: u64,
    budget: u64,
    exhausted: bool,
}

impl MccsSearch {
    /// Count nodes reachable from the current component through unmapped nodes.
    fn reachable_bound(&self) -> usize {
        let reach_q = reachable_unmapped(
            &self.q_adj,
            self.pairs.iter().map(|&(q, _)| q),
            |u| self.q_map[u] != usize::MAX,
        );
        let reach_c = reachable_unmapped(
            &self.c_adj,
            self.pairs.iter().map(|&(_, c)| c),
            |v| self.c_used[v],
        );
        self.pairs.len() + reach_q.min(reach_c)
    }

    /// Expansion candidates: pairs (u, v) where u attaches to a mapped query
    /// node and v attaches to that node's image, so the matched edge keeps
    /// the common subgraph connected.
    fn candidates(&self) -> Vec<(usize, usize)> {
        let mut cands = Vec::new();
        for &(qm, cm) in &self.pairs {
            for &u in &self.q_adj[qm] {
                // symmetry reduction: components are rooted at their minimum query node
                if u <= self.start_q || self.q_map[u] != usize::MAX {
                    continue;
                }
                for &v in &self.c_adj[cm] {
                    if !self.c_used[v] {
                        cands.push((u, v));
                    }
                }
            }
        }
        cands.sort_unstable();
        cands.dedup();
        cands.retain(|p| !self.forbidden.contains(p));
        cands
    }

    fn dfs(&mut self) {
        if self.exhausted {
            return;
        }
        self.expansions += 1;
        if self.expansions > self.budget {
            self.exhausted = true;
            return;
        }
        if self.pairs.len() > self.best {
            self.best = self.pairs.len();
            self.best_map = self.pairs.iter().map(|&(q, c)| (c, q)).collect();
        }
        if self.reachable_bound() <= self.best {
            return;
        }
        let cands = self.candidates();
        let mut pushed = 0;
        for (u, v) in cands {
            self.q_map[u] = v;
            self.c_used[v] = true;
            self.pairs.push((u, v));
            self.dfs();
            self.pairs.pop();
            self.q_map[u] = usize::MAX;
            self.c_used[v] = false;
            if self.exhausted {
                break;
            }
            self.forbidden.push((u, v));
            pushed += 1;
        }
        let keep = self.forbidden.len() - pushed;
        self.forbidden.truncate(keep);
    }
}

fn reachable_unmapped<I>(
    adj: &[Vec<usize>],
    mapped: I,
    is_mapped: impl Fn(usize) -> bool,
) -> usize
where
    I: Iterator<Item = usize>,
{
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut queue: Vec<usize> = Vec::new();
    for m in mapped {
        for &w in &adj[m] {
            if !is_mapped(w) && !seen[w] {
                seen[w] = true;
                queue.push(w);
            }
        }
    }
    let mut count = queue.len();
    while let Some(u) = queue.pop() {
        for &w in &adj[u] {
            if !is_mapped(w) && !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push(w);
            }
        }
    }
    count
}

/// Exact MCCS via branch-and-bound over connected common regions.
///
/// The value equals `max_P lcc(min(A_q, P A_c P^T))`: the node count of the
/// largest connected component of the best common subgraph. Two non-empty
/// graphs always share at least a single node, so the value is at least 1.
pub fn exact_mccs(pair: &PaddedPair, budget: u64) -> McsResult {
    let query = &pair.query;
    let corpus = &pair.corpus;
    // a single common node: any (q, c) pair
    let mut best = McsResult {
        value: 1,
        mapping: vec![(0, 0)],
        proven_optimal: true,
    };
    let mut s = MccsSearch {
        q_adj: query.adjacency_lists(),
        c_adj: corpus.adjacency_lists(),
        q_map: vec![usize::MAX; query.num_nodes()],
        c_used: vec![false; corpus.num_nodes()],
        pairs: Vec::new(),
        forbidden: Vec::new(),
        start_q: 0,
        best: 1,
        best_map: best.mapping.clone(),
        expansions: 0,
        budget,
        exhausted: false,
    };
    for u0 in 0..query.num_nodes() {
        for v0 in 0..corpus.num_nodes() {
            s.start_q = u0;
            s.q_map[u0] = v0;
            s.c_used[v0] = true;
            s.pairs.push((u0, v0));
            s.dfs();
            s.pairs.pop();
            s.q_map[u0] = usize::MAX;
            s.c_used[v0] = false;
            if s.exhausted {
                break;
            }
        }
    }
    best.value = s.best;
    best.mapping = s.best_map;
    best.proven_optimal = !s.exhausted;
    best
}

// ---------------------------------------------------------------------------
// Gossip protocol and connected components
// ---------------------------------------------------------------------------

fn validate_symmetric01(b: &Array2<f64>) -> Result<()> {
    let (r, c) = b.dim();
    if r != c {
        return Err(CoreError::Validation(format!(
            "gossip input must be square, got {r}x{c}"
        )));
    }
    for i in 0..r {
        for j in 0..c {
            let x = b[[i, j]];
            if x != 0.0 && x != 1.0 {
                return Err(CoreError::Validation(format!(
                    "gossip input entry ({i},{j}) = {x} is not 0/1"
                )));
            }
            if b[[i, j]] != b[[j, i]] {
                return Err(CoreError::Validation(format!(
                    "gossip input not symmetric at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

/// Gossip component counter: iterate `X(t+1) = X(t) (B + I)` from `X(0) = I`
/// and return the maximum per-column count of non-zero entries of `X(T)`.
///
/// Entries of the integer iteration grow like `(1 + lambda_max)^T`, so the
/// non-zero pattern is tracked with boolean reachability instead; the
/// patterns coincide because all terms are non-negative.
pub fn exact_gossip(b: &Array2<f64>, t: usize) -> Result<usize> {
    validate_symmetric01(b)?;
    let n = b.nrows();
    if n == 0 {
        return Ok(0);
    }
    // x[i][j] = X(t)[i,j] != 0
    let mut x: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j).collect()).collect();
    for _ in 0..t {
        let mut next = x.clone(); // (B+I) keeps every current non-zero
        for i in 0..n {
            for k in 0..n {
                if x[i][k] {
                    for j in 0..n {
                        if b[[k, j]] == 1.0 {
                            next[i][j] = true;
                        }
                    }
                }
            }
        }
        x = next;
    }
    let max_col = (0..n)
        .map(|u| (0..n).filter(|&i| x[i][u]).count())
        .max()
        .unwrap_or(0);
    Ok(max_col)
}

/// Literal matrix-power form of the gossip iteration with saturating
/// integer entries. Only suitable for small `t`; used to cross-check
/// [`exact_gossip`]'s reachability shortcut.
pub fn gossip_matrix_power(b: &Array2<f64>, t: usize) -> Result<usize> {
    validate_symmetric01(b)?;
    let n = b.nrows();
    let mut x = vec![vec![0u128; n]; n];
    for (i, row) in x.iter_mut().enumerate() {
        row[i] = 1;
    }
    for _ in 0..t {
        let mut next = vec![vec![0u128; n]; n];
        for i in 0..n {
            for k in 0..n {
                let xv = x[i][k];
                if xv == 0 {
                    continue;
                }
                for (j, cell) in next[i].iter_mut().enumerate() {
                    // (B + I)[k, j]
                    let factor = u128::from(b[[k, j]] == 1.0) + u128::from(k == j);
                    if factor > 0 {
                        *cell = cell.saturating_add(xv.saturating_mul(factor));
                    }
                }
            }
        }
        x = next;
    }
    let max_col = (0..n)
        .map(|u| (0..n).filter(|&i| x[i][u] != 0).count())
        .max()
        .unwrap_or(0);
    Ok(max_col)
}

/// Connected components of a symmetric 0/1 adjacency matrix (BFS).
/// Isolated nodes form singleton components.
pub fn connected_components(b: &Array2<f64>) -> Result<Vec<Vec<usize>>> {
    validate_symmetric01(b)?;
    let n = b.nrows();
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if b[[u, v]] == 1.0 && !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    Ok(comps)
}

/// Node count of the largest connected component.
pub fn largest_cc(b: &Array2<f64>) -> Result<usize> {
    Ok(connected_components(b)?
        .iter()
        .map(Vec::len)
        .max()
        .unwrap_or(0))
}

// ---------------------------------------------------------------------------
// Brute-force oracles (exhaustive permutation enumeration)
// ---------------------------------------------------------------------------

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    heap_permutations(&mut items, n, &mut out);
    out
}

fn heap_permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == 1 {
        out.push(items.clone());
        return;
    }
    for i in 0..k {
        heap_permutations(items, k - 1, out);
        if k % 2 == 0 {
            items.swap(i, k - 1);
        } else {
            items.swap(0, k - 1);
        }
    }
}

/// Common-subgraph adjacency `min(A_q, P A_c P^T)` where query slot `i`
/// is aligned with corpus node `perm[i]`.
fn common_adjacency(pair: &PaddedPair, perm: &[usize]) -> Array2<f64> {
    let n = pair.n();
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            m[[i, j]] = pair.a_q()[[i, j]].min(pair.a_c()[[perm[i], perm[j]]]);
        }
    }
    m
}

const BRUTE_FORCE_MAX_N: usize = 7;

fn check_brute_force_size(pair: &PaddedPair) -> Result<()> {
    if pair.n() > BRUTE_FORCE_MAX_N {
        return Err(CoreError::Size(format!(
            "brute force refused: padded size {} exceeds {BRUTE_FORCE_MAX_N}",
            pair.n()
        )));
    }
    Ok(())
}

/// Exhaustive MCES over all `N!` permutations. Refused above 7 nodes.
pub fn brute_force_mces(pair: &PaddedPair) -> Result<McsResult> {
    check_brute_force_size(pair)?;
    let mut best = 0usize;
    let mut best_perm: Vec<usize> = (0..pair.n()).collect();
    for perm in permutations(pair.n()) {
        let m = common_adjacency(pair, &perm);
        let edges = (m.sum() / 2.0).round() as usize;
        if edges > best {
            best = edges;
            best_perm = perm;
        }
    }
    Ok(McsResult {
        value: best,
        mapping: mapping_from_perm(pair, &best_perm),
        proven_optimal: true,
    })
}

/// Exhaustive MCCS over all `N!` permutations. Refused above 7 nodes.
pub fn brute_force_mccs(pair: &PaddedPair) -> Result<McsResult> {
    check_brute_force_size(pair)?;
    let mut best = 0usize;
    let mut best_perm: Vec<usize> = (0..pair.n()).collect();
    for perm in permutations(pair.n()) {
        let m = common_adjacency(pair, &perm);
        let lcc = largest_cc(&m)?;
        if lcc > best {
            best = lcc;
            best_perm = perm;
        }
    }
    Ok(McsResult {
        value: best,
        mapping: mapping_from_perm(pair, &best_perm),
        proven_optimal: true,
    })
}

fn mapping_from_perm(pair: &PaddedPair, perm: &[usize]) -> Vec<(usize, usize)> {
    perm.iter()
        .enumerate()
        .filter(|&(q, &c)| q < pair.query.num_nodes() && c < pair.corpus.num_nodes())
        .map(|(q, &c)| (c, q))
        .collect()
}

// ---------------------------------------------------------------------------
// Re-scoring a mapping (for the "mapping realizes value" invariant)
// ---------------------------------------------------------------------------

/// Count common edges realized by a `(corpus, query)` mapping.
pub fn rescore_mapping_mces(pair: &PaddedPair, mapping: &[(usize, usize)]) -> usize {
    let mut count = 0;
    for (i, &(c1, q1)) in mapping.iter().enumerate() {
        for &(c2, q2) in &mapping[i + 1..] {
            if pair.query.has_edge(q1, q2) && pair.corpus.has_edge(c1, c2) {
                count += 1;
            }
        }
    }
    count
}

/// Largest connected component (node count) of the common subgraph
/// restricted to the mapped pairs. A non-empty mapping realizes at least 1.
pub fn rescore_mapping_mccs(pair: &PaddedPair, mapping: &[(usize, usize)]) -> usize {
    let k = mapping.len();
    if k == 0 {
        return 0;
    }
    let mut adj = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let (c1, q1) = mapping[i];
                let (c2, q2) = mapping[j];
                if pair.query.has_edge(q1, q2) && pair.corpus.has_edge(c1, c2) {
                    adj[[i, j]] = 1.0;
                }
            }
        }
    }
    largest_cc(&adj).expect("constructed matrix is symmetric 0/1")
}

// ---------------------------------------------------------------------------
// Labeling
// ---------------------------------------------------------------------------

/// Label every (query, corpus) pair with exact MCES and MCCS values.
///
/// `combo_a` fills `y_combo = a * y_mccs + (1 - a) * y_mces` when given.
/// Pairs are solved in parallel; output order is queries-major and
/// deterministic.
pub fn label_pairs(
    queries: &[Graph],
    corpus: &[Graph],
    combo_a: Option<f64>,
    budget: u64,
) -> Result<Vec<LabelRecord>> {
    let jobs: Vec<(usize, usize)> = (0..queries.len())
        .flat_map(|q| (0..corpus.len()).map(move |c| (q, c)))
        .collect();
    let records: Vec<Result<LabelRecord>> = jobs
        .par_iter()
        .map(|&(qi, ci)| {
            let pair = build_minimal_pair(&queries[qi], &corpus[ci]);
            let mces = exact_mces(&pair, budget);
            let mccs = exact_mccs(&pair, budget);
            if !mces.proven_optimal || !mccs.proven_optimal {
                return Err(CoreError::Indeterminate(format!(
                    "labeling pair ({}, {}) exceeded budget {budget}",
                    queries[qi].id(),
                    corpus[ci].id()
                )));
            }
            Ok(LabelRecord {
                query_id: queries[qi].id().to_string(),
                corpus_id: corpus[ci].id().to_string(),
                y_mces: mces.value,
                y_mccs: mccs.value,
                y_combo: combo_a.map(|a| a * mccs.value as f64 + (1.0 - a) * mces.value as f64),
            })
        })
        .collect();
    records.into_iter().collect()
}
