//! Corpus and query generation by randomized BFS sampling from source
//! graphs, with a subgraph-isomorphism fraction constraint on query seeds
//! and randomized augmentation of accepted seeds.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::graph::Graph;

/// Dataset generation parameters. Defaults follow the paper-scale profile.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Accepted range for the fraction of corpus graphs a query seed embeds into.
    pub eta_low: f64,
    pub eta_high: f64,
    pub corpus_count: usize,
    pub query_count: usize,
    /// Number of augmentation nodes added to a seed query, drawn uniformly.
    pub augment_nodes_min: usize,
    pub augment_nodes_max: usize,
    /// Probability of each extra edge incident to a new node.
    pub augment_edge_prob: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            min_nodes: 10,
            max_nodes: 15,
            eta_low: 0.1,
            eta_high: 0.4,
            corpus_count: 800,
            query_count: 500,
            augment_nodes_min: 2,
            augment_nodes_max: 5,
            augment_edge_prob: 0.2,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Small profile for quick runs and CI: 100 corpus, 50 queries, 8..12 nodes.
    pub fn desk(seed: u64) -> Self {
        SamplerConfig {
            min_nodes: 8,
            max_nodes: 12,
            corpus_count: 100,
            query_count: 50,
            seed,
            ..SamplerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_nodes < 1 || self.min_nodes > self.max_nodes {
            return Err(CoreError::Config(format!(
                "node range [{}, {}] invalid",
                self.min_nodes, self.max_nodes
            )));
        }
        if !(0.0..=1.0).contains(&self.eta_low)
            || !(0.0..=1.0).contains(&self.eta_high)
            || self.eta_low > self.eta_high
        {
            return Err(CoreError::Config(format!(
                "eta range [{}, {}] invalid",
                self.eta_low, self.eta_high
            )));
        }
        if self.augment_nodes_min > self.augment_nodes_max {
            return Err(CoreError::Config("augment_nodes range invalid".into()));
        }
        if !(0.0..=1.0).contains(&self.augment_edge_prob) {
            return Err(CoreError::Config("augment_edge_prob must be in [0,1]".into()));
        }
        Ok(())
    }
}

fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    // splitmix64 over a combined word; cheap, stable child streams
    let mut z = base ^ tag.rotate_left(17) ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Induced subgraph on `target_size` nodes found by randomized BFS from a
/// uniformly random start node. The result is connected because BFS only
/// visits nodes reachable from the start.
pub fn bfs_sample(source: &Graph, target_size: usize, seed: u64) -> Result<Graph> {
    if target_size < 1 {
        return Err(CoreError::Sampling("target_size must be >= 1".into()));
    }
    if target_size > source.num_nodes() {
        return Err(CoreError::Sampling(format!(
            "target_size {} exceeds source size {}",
            target_size,
            source.num_nodes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adj = source.adjacency_lists();
    let retries = 4 * source.num_nodes();
    for _ in 0..retries {
        let start = rng.random_range(0..source.num_nodes());
        let mut picked = vec![start];
        let mut in_set = vec![false; source.num_nodes()];
        in_set[start] = true;
        let mut frontier: Vec<usize> = adj[start].clone();
        frontier.shuffle(&mut rng);
        while picked.len() < target_size {
            let Some(next) = frontier.pop() else { break };
            if in_set[next] {
                continue;
            }
            in_set[next] = true;
            picked.push(next);
            let mut fresh: Vec<usize> = adj[next].iter().copied().filter(|&w| !in_set[w]).collect();
            fresh.shuffle(&mut rng);
            frontier.extend(fresh);
            frontier.shuffle(&mut rng);
        }
        if picked.len() == target_size {
            picked.sort_unstable();
            let index_of = |x: usize| picked.binary_search(&x).unwrap();
            let edges = source
                .edges()
                .iter()
                .filter(|&&(u, v)| in_set[u] && in_set[v])
                .map(|&(u, v)| (index_of(u), index_of(v)));
            return Graph::new(source.id().to_string(), target_size, edges);
        }
    }
    Err(CoreError::Sampling(format!(
        "no start node reached {} nodes in {} attempts on source {}",
        target_size,
        retries,
        source.id()
    )))
}

/// Non-induced subgraph isomorphism: does an injective node map exist that
/// carries every edge of `small` to an edge of `big`?
///
/// Plain backtracking with degree-based candidate pruning and a node
/// expansion budget; exceeding the budget yields an indeterminate error.
pub fn subgraph_isomorphic(small: &Graph, big: &Graph, budget: u64) -> Result<bool> {
    if small.num_nodes() > big.num_nodes() || small.num_edges() > big.num_edges() {
        return Ok(false);
    }
    let sdeg = small.degrees();
    let bdeg = big.degrees();
    // assign high-degree pattern nodes first
    let mut order: Vec<usize> = (0..small.num_nodes()).collect();
    order.sort_by_key(|&u| std::cmp::Reverse(sdeg[u]));
    let s_adj = small.adjacency_lists();
    let mut mapping = vec![usize::MAX; small.num_nodes()];
    let mut used = vec![false; big.num_nodes()];
    let mut spent = 0u64;
    let found = sgi_dfs(
        small, big, &sdeg, &bdeg, &s_adj, &order, 0, &mut mapping, &mut used, &mut spent, budget,
    )?;
    Ok(found)
}

#[allow(clippy::too_many_arguments)]
fn sgi_dfs(
    small: &Graph,
    big: &Graph,
    sdeg: &[usize],
    bdeg: &[usize],
    s_adj: &[Vec<usize>],
    order: &[usize],
    depth: usize,
    mapping: &mut Vec<usize>,
    used: &mut Vec<bool>,
    spent: &mut u64,
    budget: u64,
) -> Result<bool> {
    *spent += 1;
    if *spent > budget {
        return Err(CoreError::Indeterminate(format!(
            "subgraph isomorphism budget {budget} exhausted"
        )));
    }
    if depth == order.len() {
        return Ok(true);
    }
    let u = order[depth];
    for v in 0..big.num_nodes() {
        if used[v] || bdeg[v] < sdeg[u] {
            continue;
        }
        // every already-mapped neighbor of u must land on a neighbor of v
        let ok = s_adj[u].iter().all(|&w| {
            let mw = mapping[w];
            mw == usize::MAX || big.has_edge(v, mw)
        });
        if !ok {
            continue;
        }
        mapping[u] = v;
        used[v] = true;
        let found = sgi_dfs(
            small, big, sdeg, bdeg, s_adj, order, depth + 1, mapping, used, spent, budget,
        )?;
        mapping[u] = usize::MAX;
        used[v] = false;
        if found {
            return Ok(true);
        }
    }
    Ok(false)
}

pub const DEFAULT_SGI_BUDGET: u64 = 2_000_000;

/// Augment a seed query: add `k` nodes (uniform in the configured range),
/// each wired to at least one uniformly chosen existing node, then add each
/// absent pair touching a new node independently with `augment_edge_prob`.
pub fn augment_query(seed_query: &Graph, config: &SamplerConfig, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n0 = seed_query.num_nodes();
    let k = rng.random_range(config.augment_nodes_min..=config.augment_nodes_max);
    let n = n0 + k;
    let mut edges: Vec<(usize, usize)> = seed_query.edges().to_vec();
    let mut present = std::collections::HashSet::new();
    for &(u, v) in &edges {
        present.insert((u, v));
    }
    fn add(
        u: usize,
        v: usize,
        present: &mut std::collections::HashSet<(usize, usize)>,
        edges: &mut Vec<(usize, usize)>,
    ) {
        let key = (u.min(v), u.max(v));
        if present.insert(key) {
            edges.push(key);
        }
    }
    for new in n0..n {
        let anchor = rng.random_range(0..new); // attaches to any earlier node
        add(new, anchor, &mut present, &mut edges);
    }
    // extra edges restricted to pairs touching new nodes; every such pair
    // has its larger index in the new range, so each is visited once
    for new in n0..n {
        for other in 0..new {
            if present.contains(&(other, new)) {
                continue;
            }
            if rng.random::<f64>() < config.augment_edge_prob {
                add(new, other, &mut present, &mut edges);
            }
        }
    }
    Graph::new(seed_query.id().to_string(), n, edges).expect("augmentation preserves validity")
}

/// How a generation run went; reported inside errors for diagnostics.
#[derive(Debug, Clone, Default)]
pub struct GenerationStats {
    pub corpus_attempts: usize,
    pub query_attempts: usize,
    pub eta_rejections: usize,
}

const QUERY_RETRY_BUDGET: usize = 50;

/// A generated dataset: the corpus, the augmented queries, and the
/// pre-augmentation query seeds (kept so the eta constraint can be
/// re-measured after the fact).
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub corpus: Vec<Graph>,
    pub queries: Vec<Graph>,
    pub query_seeds: Vec<Graph>,
}

/// Generate a corpus and an (augmented) query set from source graphs.
///
/// Each accepted query seed is subgraph-isomorphic to a fraction of the
/// corpus inside `[eta_low, eta_high]`, measured before augmentation.
/// Deterministic given `config.seed`.
pub fn generate_dataset(sources: &[Graph], config: &SamplerConfig) -> Result<DatasetBundle> {
    config.validate()?;
    if sources.is_empty() {
        return Err(CoreError::Generation("no source graphs given".into()));
    }
    let mut stats = GenerationStats::default();
    let mut corpus = Vec::with_capacity(config.corpus_count);
    let mut attempt = 0u64;
    while corpus.len() < config.corpus_count {
        if stats.corpus_attempts > 20 * config.corpus_count + 100 {
            return Err(CoreError::Generation(format!(
                "corpus sampling stalled after {} attempts (sources too small?)",
                stats.corpus_attempts
            )));
        }
        stats.corpus_attempts += 1;
        let s = derive_seed(config.seed, 0xC0, attempt);
        attempt += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let source = &sources[rng.random_range(0..sources.len())];
        let size = rng.random_range(config.min_nodes..=config.max_nodes);
        if size > source.num_nodes() {
            continue;
        }
        match bfs_sample(source, size, derive_seed(s, 0xB5, 0)) {
            Ok(g) => {
                let id = format!("c{:04}", corpus.len());
                corpus.push(Graph::new(id, g.num_nodes(), g.edges().to_vec()).unwrap());
            }
            Err(CoreError::Sampling(_)) => continue,
            Err(e) => return Err(e),
        }
    }

    let mut queries = Vec::with_capacity(config.query_count);
    let mut query_seeds = Vec::with_capacity(config.query_count);
    let mut q_attempt = 0u64;
    while queries.len() < config.query_count {
        let mut accepted = None;
        for _ in 0..QUERY_RETRY_BUDGET {
            stats.query_attempts += 1;
            let s = derive_seed(config.seed, 0x9E, q_attempt);
            q_attempt += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let source = &sources[rng.random_range(0..sources.len())];
            let size = rng.random_range(config.min_nodes..=config.max_nodes);
            if size > source.num_nodes() {
                continue;
            }
            let seed_graph = match bfs_sample(source, size, derive_seed(s, 0xB5, 1)) {
                Ok(g) => g,
                Err(CoreError::Sampling(_)) => continue,
                Err(e) => return Err(e),
            };
            let mut hits = 0usize;
            for c in &corpus {
                match subgraph_isomorphic(&seed_graph, c, DEFAULT_SGI_BUDGET) {
                    Ok(true) => hits += 1,
                    Ok(false) => {}
                    Err(CoreError::Indeterminate(_)) => {} // treat as non-hit, candidate may still pass
                    Err(e) => return Err(e),
                }
            }
            let eta = hits as f64 / corpus.len() as f64;
            if eta < config.eta_low || eta > config.eta_high {
                stats.eta_rejections += 1;
                continue;
            }
            accepted = Some((seed_graph, s));
            break;
        }
        let Some((seed_graph, s)) = accepted else {
            let rate = 1.0
                - stats.eta_rejections as f64 / stats.query_attempts.max(1) as f64;
            return Err(CoreError::Generation(format!(
                "eta constraint [{}, {}] unsatisfied after {} attempts for query {} (acceptance rate {:.3})",
                config.eta_low,
                config.eta_high,
                QUERY_RETRY_BUDGET,
                queries.len(),
                rate
            )));
        };
        let augmented = augment_query(&seed_graph, config, derive_seed(s, 0xA6, 0));
        let id = format!("q{:04}", queries.len());
        query_seeds
            .push(Graph::new(id.clone(), seed_graph.num_nodes(), seed_graph.edges().to_vec()).unwrap());
        queries.push(Graph::new(id, augmented.num_nodes(), augmented.edges().to_vec()).unwrap());
    }
    Ok(DatasetBundle {
        corpus,
        queries,
        query_seeds,
    })
}

/// Synthetic source graphs: connected Erdos-Renyi draws, handy when no
/// real source dataset is at hand.
pub fn synthetic_sources(count: usize, nodes: usize, edge_prob: f64, seed: u64) -> Vec<Graph> {
    let mut out = Vec::with_capacity(count);
    let mut attempt = 0u64;
    while out.len() < count {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x50, attempt));
        attempt += 1;
        let mut edges = Vec::new();
        for u in 0..nodes {
            for v in (u + 1)..nodes {
                if rng.random::<f64>() < edge_prob {
                    edges.push((u, v));
                }
            }
        }
        let g = Graph::new(format!("s{:03}", out.len()), nodes, edges).unwrap();
        let adj = g.adjacency_matrix(nodes);
        if crate::oracle::largest_cc(&adj).unwrap() == nodes {
            out.push(g);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::shapes;

    #[test]
    fn bfs_sample_single_node() {
        let g = shapes::path("g", 6);
        let s = bfs_sample(&g, 1, 42).unwrap();
        assert_eq!(s.num_nodes(), 1);
        assert_eq!(s.num_edges(), 0);
    }

    #[test]
    fn bfs_sample_of_clique_is_clique() {
        let k5 = shapes::complete("g", 5);
        for seed in 0..20 {
            let s = bfs_sample(&k5, 3, seed).unwrap();
            assert_eq!(s.num_nodes(), 3);
            assert_eq!(s.num_edges(), 3, "induced subgraph of K5 on 3 nodes is K3");
        }
    }

    #[test]
    fn bfs_sample_of_path_is_path() {
        // all connected induced 4-node subgraphs of P10 are paths: 4 nodes, 3 edges
        let p10 = shapes::path("g", 10);
        for seed in 0..30 {
            let s = bfs_sample(&p10, 4, seed).unwrap();
            assert_eq!(s.num_nodes(), 4);
            assert_eq!(s.num_edges(), 3, "seed {seed} gave {:?}", s.edges());
        }
    }

    #[test]
    fn bfs_sample_output_is_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sources = synthetic_sources(3, 30, 0.15, 99);
        for t in 0..40 {
            let src = &sources[rng.random_range(0..sources.len())];
            let size = rng.random_range(1..=12);
            let g = bfs_sample(src, size, t).unwrap();
            let adj = g.adjacency_matrix(g.num_nodes());
            assert_eq!(
                crate::oracle::largest_cc(&adj).unwrap(),
                g.num_nodes(),
                "sample not connected"
            );
        }
    }

    #[test]
    fn bfs_sample_too_large_errors() {
        let g = shapes::path("g", 3);
        assert!(matches!(
            bfs_sample(&g, 5, 0),
            Err(CoreError::Sampling(_))
        ));
    }

    #[test]
    fn sgi_path_in_triangle() {
        let p3 = shapes::path("p", 3);
        let k3 = shapes::complete("k", 3);
        assert!(subgraph_isomorphic(&p3, &k3, DEFAULT_SGI_BUDGET).unwrap());
    }

    #[test]
    fn sgi_triangle_not_in_path() {
        let k3 = shapes::complete("k", 3);
        let p4 = shapes::path("p", 4);
        assert!(!subgraph_isomorphic(&k3, &p4, DEFAULT_SGI_BUDGET).unwrap());
    }

    #[test]
    fn sgi_star_in_k4_matches_brute_force() {
        let s3 = shapes::star("s", 3);
        let k4 = shapes::complete("k", 4);
        assert!(subgraph_isomorphic(&s3, &k4, DEFAULT_SGI_BUDGET).unwrap());
        // brute force over all injective maps confirms
        let mut found = false;
        let nodes: Vec<usize> = (0..4).collect();
        for perm in permutations_of(&nodes, 4) {
            let ok = s3
                .edges()
                .iter()
                .all(|&(u, v)| k4.has_edge(perm[u], perm[v]));
            if ok {
                found = true;
                break;
            }
        }
        assert!(found);
    }

    fn permutations_of(items: &[usize], k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for (i, &x) in items.iter().enumerate() {
            let mut rest = items.to_vec();
            rest.remove(i);
            for mut tail in permutations_of(&rest, k - 1) {
                let mut v = vec![x];
                v.append(&mut tail);
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn augment_zero_is_identity() {
        let g = shapes::cycle("g", 5);
        let cfg = SamplerConfig {
            augment_nodes_min: 0,
            augment_nodes_max: 0,
            ..SamplerConfig::default()
        };
        let out = augment_query(&g, &cfg, 7);
        assert_eq!(out, g);
    }

    #[test]
    fn augment_adds_connected_nodes() {
        let g = shapes::path("g", 6);
        let cfg = SamplerConfig::default();
        for seed in 0..20 {
            let out = augment_query(&g, &cfg, seed);
            let k = out.num_nodes() - g.num_nodes();
            assert!((2..=5).contains(&k));
            let deg = out.degrees();
            for new in g.num_nodes()..out.num_nodes() {
                assert!(deg[new] >= 1, "new node {new} is isolated");
            }
            // the seed query stays embedded (it is a literal subgraph)
            assert!(subgraph_isomorphic(&g, &out, DEFAULT_SGI_BUDGET).unwrap());
        }
    }

    #[test]
    fn generation_is_deterministic_and_in_bounds() {
        let sources = synthetic_sources(4, 24, 0.18, 11);
        let cfg = SamplerConfig {
            min_nodes: 5,
            max_nodes: 8,
            corpus_count: 20,
            query_count: 6,
            eta_low: 0.05,
            eta_high: 0.8,
            seed: 123,
            ..SamplerConfig::default()
        };
        let b1 = generate_dataset(&sources, &cfg).unwrap();
        let b2 = generate_dataset(&sources, &cfg).unwrap();
        assert_eq!(b1.corpus, b2.corpus);
        assert_eq!(b1.queries, b2.queries);
        assert_eq!(b1.corpus.len(), 20);
        assert_eq!(b1.queries.len(), 6);
        for g in b1.corpus.iter() {
            assert!((cfg.min_nodes..=cfg.max_nodes).contains(&g.num_nodes()));
        }
        for q in b1.queries.iter() {
            assert!(q.num_nodes() <= cfg.max_nodes + cfg.augment_nodes_max);
        }
        // measured isomorphism fraction of every accepted seed sits in the eta range
        for seed in b1.query_seeds.iter() {
            let hits = b1
                .corpus
                .iter()
                .filter(|c| subgraph_isomorphic(seed, c, DEFAULT_SGI_BUDGET).unwrap_or(false))
                .count();
            let eta = hits as f64 / b1.corpus.len() as f64;
            assert!(
                (cfg.eta_low..=cfg.eta_high).contains(&eta),
                "seed {} eta {eta} outside range",
                seed.id()
            );
        }
    }
}
