//! Soft node alignment between query and corpus graphs: the Sinkhorn
//! normalization operator, the score network in front of it, and Hungarian
//! rounding to a hard injective mapping for explanations.

use ndarray::Array2;
use rand::Rng;

use crate::diffengine::params::{init_linear, Binding, ParameterStore};
use crate::diffengine::tape::Var;
use crate::error::{CoreError, Result};
use crate::graph::PaddedPair;

#[derive(Debug, Clone)]
pub struct SinkhornConfig {
    /// Temperature applied as `exp(U / zeta)`.
    pub zeta: f64,
    /// Rounds of column-then-row normalization.
    pub iterations: usize,
    /// Inject Gumbel(0,1) noise into the scores before tempering. Off by
    /// default; the deterministic operator is the parameterization used
    /// everywhere in this crate.
    pub gumbel_noise: bool,
    pub noise_seed: u64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            zeta: 0.1,
            iterations: 20,
            gumbel_noise: false,
            noise_seed: 0,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if self.zeta <= 0.0 {
            return Err(CoreError::Config(format!("zeta must be > 0, got {}", self.zeta)));
        }
        if self.iterations < 1 {
            return Err(CoreError::Config("sinkhorn iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Differentiable Sinkhorn normalization of a score matrix.
///
/// Starts from `exp(U / zeta)` and alternates column and row divisions for
/// the configured number of rounds, ending on the row division. The global
/// maximum of `U / zeta` is subtracted (as a constant) before
/// exponentiation; the first normalization cancels the shift exactly, so
/// gradients are unaffected while overflow at low temperature is ruled out.
pub fn sinkhorn<'t>(u: Var<'t>, cfg: &SinkhornConfig) -> Var<'t> {
    let scaled = u.scalar_mul(1.0 / cfg.zeta);
    let max = scaled
        .value()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut s = scaled.add_scalar(-max).exp();
    for _ in 0..cfg.iterations {
        s = s.col_normalize().row_normalize();
    }
    s
}

const FF_W1: &str = "ff_w1";
const FF_B1: &str = "ff_b1";
const FF_W2: &str = "ff_w2";
const FF_B2: &str = "ff_b2";

/// Hidden width of the alignment feed-forward network.
pub const GS_HIDDEN: usize = 16;

/// Register the alignment network parameters in group `phi`:
/// linear(d -> 16), ReLU, linear(16 -> d).
pub fn init_align_params(store: &mut ParameterStore, rng: &mut impl Rng, node_dim: usize) {
    store.add("phi", FF_W1, init_linear(rng, node_dim, GS_HIDDEN));
    store.add("phi", FF_B1, Array2::zeros((1, GS_HIDDEN)));
    store.add("phi", FF_W2, init_linear(rng, GS_HIDDEN, node_dim));
    store.add("phi", FF_B2, Array2::zeros((1, node_dim)));
}

/// Alignment parameters bound to one tape.
pub struct AlignBind<'t> {
    w1: Var<'t>,
    b1: Var<'t>,
    w2: Var<'t>,
    b2: Var<'t>,
}

impl<'t> AlignBind<'t> {
    pub fn new(store: &ParameterStore, binding: &Binding<'t>) -> Self {
        AlignBind {
            w1: binding.var(store, "phi", FF_W1),
            b1: binding.var(store, "phi", FF_B1),
            w2: binding.var(store, "phi", FF_W2),
            b2: binding.var(store, "phi", FF_B2),
        }
    }

    fn feed_forward(&self, h: Var<'t>) -> Var<'t> {
        let n = h.dim().0;
        let ones = h.tape().constant(Array2::ones((n, 1)));
        h.matmul(self.w1)
            .add(ones.matmul(self.b1))
            .relu()
            .matmul(self.w2)
            .add(ones.matmul(self.b2))
    }

    /// Soft permutation aligning the rows of `h_q` with the rows of `h_c`:
    /// `sinkhorn(FF(h_q) FF(h_c)^T)`.
    pub fn gs_align(&self, h_q: Var<'t>, h_c: Var<'t>, cfg: &SinkhornConfig) -> Var<'t> {
        let mut u = self.feed_forward(h_q).matmul(self.feed_forward(h_c).transpose());
        if cfg.gumbel_noise {
            let (r, c) = u.dim();
            let mut rng =
                <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.noise_seed);
            let noise = Array2::from_shape_fn((r, c), |_| {
                // inverse-CDF Gumbel(0,1) sample
                let p: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
                -(-p.ln()).ln()
            });
            u = u.add(u.tape().constant(noise));
        }
        sinkhorn(u, cfg)
    }
}

/// A soft alignment plus its optional Hungarian rounding.
#[derive(Debug, Clone)]
pub struct AlignmentPlan {
    pub p_soft: Array2<f64>,
    /// `p_hard[i] = j`: query slot `i` aligned with corpus slot `j`.
    pub p_hard: Option<Vec<usize>>,
}

impl AlignmentPlan {
    pub fn from_soft(p_soft: Array2<f64>) -> Self {
        AlignmentPlan {
            p_soft,
            p_hard: None,
        }
    }

    pub fn round(&mut self) -> &[usize] {
        if self.p_hard.is_none() {
            self.p_hard = Some(hungarian_round(&self.p_soft));
        }
        self.p_hard.as_deref().unwrap()
    }
}

/// Maximum-weight perfect matching on a square weight matrix: returns the
/// permutation maximizing `sum_i p[i, perm[i]]`, via the O(n^3)
/// potential-based Hungarian algorithm. Deterministic on ties.
pub fn hungarian_round(p: &Array2<f64>) -> Vec<usize> {
    let (rows, cols) = p.dim();
    assert_eq!(rows, cols, "hungarian_round needs a square matrix, got {rows}x{cols}");
    let n = rows;
    if n == 0 {
        return Vec::new();
    }
    const NONE: usize = usize::MAX;
    // minimize cost = -p
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned = vec![NONE; n + 1]; // assigned[j]: row matched to column j; index n is virtual
    let mut way = vec![0usize; n + 1];
    for i in 0..n {
        assigned[n] = i;
        let mut j0 = n;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = n;
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let cur = -p[[i0, j]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned[j0] == NONE {
                break;
            }
        }
        // augment along the alternating path
        while j0 != n {
            let j1 = way[j0];
            assigned[j0] = assigned[j1];
            j0 = j1;
        }
    }
    let mut perm = vec![0usize; n];
    for j in 0..n {
        if assigned[j] != NONE {
            perm[assigned[j]] = j;
        }
    }
    perm
}

/// Matched edges of `min(A_q, P A_c P^T)` under a hard alignment: query
/// edges whose images are corpus edges.
pub fn matched_edges(pair: &PaddedPair, perm: &[usize]) -> Vec<(usize, usize)> {
    pair.query
        .edges()
        .iter()
        .copied()
        .filter(|&(qu, qv)| {
            let (cu, cv) = (perm[qu], perm[qv]);
            cu < pair.corpus.num_nodes()
                && cv < pair.corpus.num_nodes()
                && pair.corpus.has_edge(cu, cv)
        })
        .collect()
}

/// One line of the alignment export:
/// `query_id<TAB>corpus_id<TAB>q:c,...<TAB>u-v,...` restricted to real
/// (unpadded) nodes.
pub fn format_alignment(
    pair: &PaddedPair,
    perm: &[usize],
    matched: &[(usize, usize)],
) -> String {
    let mapping: Vec<String> = (0..pair.query.num_nodes())
        .filter(|&q| perm[q] < pair.corpus.num_nodes())
        .map(|q| format!("{q}:{}", perm[q]))
        .collect();
    let edges: Vec<String> = matched.iter().map(|(u, v)| format!("{u}-{v}")).collect();
    format!(
        "{}\t{}\t{}\t{}",
        pair.query.id(),
        pair.corpus.id(),
        mapping.join(","),
        edges.join(",")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffengine::gradcheck::grad_check;
    use crate::diffengine::tape::Tape;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| {
            (0..6).map(|_| rng.random::<f64>()).sum::<f64>() - 3.0
        })
    }

    fn run_sinkhorn(u: &Array2<f64>, cfg: &SinkhornConfig) -> Array2<f64> {
        let tape = Tape::new();
        sinkhorn(tape.constant(u.clone()), cfg).value()
    }

    #[test]
    fn uniform_scores_give_uniform_plan() {
        let cfg = SinkhornConfig::default();
        let p = run_sinkhorn(&Array2::zeros((3, 3)), &cfg);
        for &x in p.iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn strong_diagonal_concentrates() {
        let cfg = SinkhornConfig::default();
        let u = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 10.0 } else { 0.0 });
        let p = run_sinkhorn(&u, &cfg);
        for i in 0..3 {
            assert!(p[[i, i]] >= 0.95, "diagonal entry {} too small", p[[i, i]]);
        }
    }

    #[test]
    fn row_sums_converge_on_random_scores() {
        let cfg = SinkhornConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let n = rng.random_range(2..=12);
            let p = run_sinkhorn(&randn(&mut rng, n, n), &cfg);
            for i in 0..n {
                let s = p.row(i).sum();
                assert!((0.999..=1.001).contains(&s), "row sum {s}");
            }
        }
    }

    #[test]
    fn shift_invariance() {
        // exp normalization is a quotient: adding a constant to all scores
        // cancels. The max subtraction keeps this numerically tight.
        let cfg = SinkhornConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = randn(&mut rng, 5, 5);
        let base = run_sinkhorn(&u, &cfg);
        let shifted = run_sinkhorn(&u.mapv(|x| x + 3.7), &cfg);
        for (a, b) in base.iter().zip(shifted.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn deviation_is_nonincreasing_in_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut violations = 0usize;
        for _ in 0..100 {
            let n = rng.random_range(2..=10);
            let u = randn(&mut rng, n, n);
            let mut prev = f64::INFINITY;
            for iters in 1..=8 {
                let cfg = SinkhornConfig {
                    iterations: iters,
                    ..SinkhornConfig::default()
                };
                let p = run_sinkhorn(&u, &cfg);
                let dev = (0..n)
                    .map(|i| (p.row(i).sum() - 1.0).abs().max((p.column(i).sum() - 1.0).abs()))
                    .fold(0.0f64, f64::max);
                if dev > prev + 1e-12 {
                    violations += 1;
                }
                prev = dev;
            }
        }
        assert_eq!(violations, 0, "deviation increased in {violations} steps");
    }

    #[test]
    fn gs_align_identity_scale_weights_concentrate_on_identity() {
        // identity-like feed-forward weights and well separated rows
        let d = 4;
        let mut store = ParameterStore::new(0);
        let mut w1 = Array2::zeros((d, GS_HIDDEN));
        let mut w2 = Array2::zeros((GS_HIDDEN, d));
        for i in 0..d {
            w1[[i, i]] = 1.0;
            w2[[i, i]] = 1.0;
        }
        store.add("phi", FF_W1, w1);
        store.add("phi", FF_B1, Array2::zeros((1, GS_HIDDEN)));
        store.add("phi", FF_W2, w2);
        store.add("phi", FF_B2, Array2::zeros((1, d)));
        let h = Array2::from_shape_fn((4, d), |(i, j)| if i == j { 10.0 } else { 0.0 });
        let tape = Tape::new();
        let binding = store.bind(&tape);
        let align = AlignBind::new(&store, &binding);
        let hv = tape.constant(h);
        let p = align.gs_align(hv, hv, &SinkhornConfig::default()).value();
        for i in 0..4 {
            assert!(p[[i, i]] > 0.95, "diag {} = {}", i, p[[i, i]]);
        }
    }

    #[test]
    fn gs_align_permuting_corpus_rows_permutes_plan_columns() {
        let d = 4;
        let mut store = ParameterStore::new(0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        init_align_params(&mut store, &mut rng, d);
        let h_q = randn(&mut rng, 5, d);
        let h_c = randn(&mut rng, 5, d);
        let perm = vec![2usize, 0, 4, 1, 3];
        let mut h_c_perm = Array2::zeros((5, d));
        for i in 0..5 {
            for j in 0..d {
                h_c_perm[[perm[i], j]] = h_c[[i, j]];
            }
        }
        let cfg = SinkhornConfig::default();
        let tape = Tape::new();
        let binding = store.bind(&tape);
        let align = AlignBind::new(&store, &binding);
        let p1 = align
            .gs_align(tape.constant(h_q.clone()), tape.constant(h_c), &cfg)
            .value();
        let p2 = align
            .gs_align(tape.constant(h_q), tape.constant(h_c_perm), &cfg)
            .value();
        for i in 0..5 {
            for j in 0..5 {
                assert!((p1[[i, j]] - p2[[i, perm[j]]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gs_align_gradient_matches_finite_differences() {
        let d = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h_q = randn(&mut rng, 4, d);
        let h_c = randn(&mut rng, 4, d);
        let w1 = init_linear(&mut rng, d, GS_HIDDEN);
        let w2 = init_linear(&mut rng, GS_HIDDEN, d);
        let b1 = Array2::zeros((1, GS_HIDDEN));
        let b2 = Array2::zeros((1, d));
        let cfg = SinkhornConfig::default();
        let err = grad_check(
            &[w1, b1, w2, b2],
            |tape, vars| {
                let align = AlignBind {
                    w1: vars[0],
                    b1: vars[1],
                    w2: vars[2],
                    b2: vars[3],
                };
                let hq = tape.constant(h_q.clone());
                let hc = tape.constant(h_c.clone());
                let p = align.gs_align(hq, hc, &cfg);
                hq.emin(p.matmul(hc)).sum_all()
            },
            1e-5,
        );
        assert!(err < 1e-4, "gs_align grad error {err}");
    }

    #[test]
    fn hungarian_small_cases() {
        let p = array![[0.9, 0.1], [0.1, 0.9]];
        assert_eq!(hungarian_round(&p), vec![0, 1]);
        // an exact permutation matrix maps to itself
        let p = array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        assert_eq!(hungarian_round(&p), vec![1, 2, 0]);
        // uniform: every permutation is optimal; result must be a bijection
        let p = Array2::from_elem((4, 4), 0.25);
        let perm = hungarian_round(&p);
        let mut seen = vec![false; 4];
        for &j in &perm {
            assert!(!seen[j]);
            seen[j] = true;
        }
        // and deterministic
        assert_eq!(perm, hungarian_round(&Array2::from_elem((4, 4), 0.25)));
    }

    #[test]
    fn hungarian_beats_random_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let n = rng.random_range(2..=7);
            let p = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
            let best = hungarian_round(&p);
            let best_w: f64 = (0..n).map(|i| p[[i, best[i]]]).sum();
            let mut perm: Vec<usize> = (0..n).collect();
            for _ in 0..1000 {
                perm.shuffle(&mut rng);
                let w: f64 = (0..n).map(|i| p[[i, perm[i]]]).sum();
                assert!(
                    best_w >= w - 1e-12,
                    "sampled permutation beat hungarian: {w} > {best_w}"
                );
            }
        }
    }

    #[test]
    fn alignment_export_format() {
        let q = crate::graph::shapes::path("q7", 3);
        let c = crate::graph::shapes::complete("c2", 3);
        let pair = crate::graph::build_minimal_pair(&q, &c);
        let perm = vec![0, 1, 2];
        let matched = matched_edges(&pair, &perm);
        assert_eq!(matched, vec![(0, 1), (1, 2)]);
        let line = format_alignment(&pair, &perm, &matched);
        assert_eq!(line, "q7\tc2\t0:0,1:1,2:2\t0-1,1-2");
    }
}
