//! The relevance scoring heads.
//!
//! Late interaction: `lmces` (per-layer alignments, layer-weighted coverage),
//! `lmccs` (edge-scored common subgraph through a differentiable gossip
//! component counter with a learned noise filter), `combo` (trainable
//! non-negative mix of both), and an embedding-min `baseline`. Early
//! interaction: `xmcs`, where the alignment feeds back into every encoder
//! layer.
//!
//! Every head is a deterministic function of (pair, parameters) built on one
//! tape, so the same code path serves forward scoring, training gradients,
//! and gradient checks.

use std::fmt;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::{init_align_params, AlignBind, SinkhornConfig};
use crate::diffengine::params::{init_linear, Binding, ParameterStore};
use crate::diffengine::tape::{Tape, Var};
use crate::encoder::{
    encode_graph, init_encoder_params, BoundGraph, EncoderBind, EncoderConfig, GraphOps,
};
use crate::error::{CoreError, Result};
use crate::graph::Graph;

/// Which scoring head to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lmces,
    Lmccs,
    Xmcs,
    Combo,
    Baseline,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Lmces,
        ModelKind::Lmccs,
        ModelKind::Xmcs,
        ModelKind::Combo,
        ModelKind::Baseline,
    ];

    /// Early-interaction models re-encode both graphs per pair; late ones
    /// can score from precomputed per-graph embeddings.
    pub fn is_late_interaction(&self) -> bool {
        !matches!(self, ModelKind::Xmcs)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Lmces => "lmces",
            ModelKind::Lmccs => "lmccs",
            ModelKind::Xmcs => "xmcs",
            ModelKind::Combo => "combo",
            ModelKind::Baseline => "baseline",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lmces" => Ok(ModelKind::Lmces),
            "lmccs" => Ok(ModelKind::Lmccs),
            "xmcs" => Ok(ModelKind::Xmcs),
            "combo" => Ok(ModelKind::Combo),
            "baseline" => Ok(ModelKind::Baseline),
            other => Err(CoreError::Config(format!(
                "unknown model '{other}' (expected lmces, lmccs, xmcs, combo or baseline)"
            ))),
        }
    }
}

/// Full configuration of a scoring head.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    pub sinkhorn: SinkhornConfig,
    /// Noise filter temperature (lmccs/combo).
    pub lambda: f64,
    /// Gossip rounds; `None` uses the padded size of the pair.
    pub gossip_t: Option<usize>,
    /// Divide the gossip state by its maximum after every round.
    /// Off by default; the noise filter is the conditioning mechanism.
    pub gossip_rescale: bool,
    /// Replace every learned alignment with the identity matrix. A
    /// verification hook (exercised by the `verify` suites and tests),
    /// never used in training.
    pub forced_identity_align: bool,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            encoder: EncoderConfig::default(),
            sinkhorn: SinkhornConfig::default(),
            lambda: 1.0,
            gossip_t: None,
            gossip_rescale: false,
            forced_identity_align: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.sinkhorn.validate()?;
        if self.lambda <= 0.0 {
            return Err(CoreError::Config(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    fn uses_cross_encoder(&self) -> bool {
        self.kind == ModelKind::Xmcs
    }

    fn uses_edge_scores(&self) -> bool {
        matches!(self.kind, ModelKind::Lmccs | ModelKind::Combo)
    }

    fn uses_alignment(&self) -> bool {
        !matches!(self.kind, ModelKind::Baseline)
    }

    fn uses_layer_weights(&self) -> bool {
        matches!(self.kind, ModelKind::Lmces | ModelKind::Combo)
    }
}

const EDGE_HIDDEN: usize = 16;
const THRESH_HIDDEN: usize = 8;
pub const LAYER_WEIGHTS: &str = "layer_weights";
pub const COMBO_WEIGHTS: &str = "combo";

/// Freshly initialized parameters for a scoring head. Group layout depends
/// on the head: `theta` always; `phi` unless baseline; `alpha`/`beta` for
/// the gossip heads; `w` for layer and combo mixing weights.
pub fn init_model_params(cfg: &ModelConfig, seed: u64) -> ParameterStore {
    let mut store = ParameterStore::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_encoder_params(&mut store, &mut rng, &cfg.encoder, cfg.uses_cross_encoder());
    if cfg.uses_alignment() {
        init_align_params(&mut store, &mut rng, cfg.encoder.node_dim);
    }
    if cfg.uses_edge_scores() {
        let de = cfg.encoder.msg_dim;
        store.add("alpha", "edge_w1", init_linear(&mut rng, de, EDGE_HIDDEN));
        store.add("alpha", "edge_b1", Array2::zeros((1, EDGE_HIDDEN)));
        store.add("alpha", "edge_w2", init_linear(&mut rng, EDGE_HIDDEN, 1));
        store.add("alpha", "edge_b2", Array2::zeros((1, 1)));
        store.add("beta", "thresh_w1", init_linear(&mut rng, 3, THRESH_HIDDEN));
        store.add("beta", "thresh_b1", Array2::zeros((1, THRESH_HIDDEN)));
        store.add("beta", "thresh_w2", init_linear(&mut rng, THRESH_HIDDEN, 1));
        store.add("beta", "thresh_b2", Array2::zeros((1, 1)));
    }
    if cfg.uses_layer_weights() {
        let r = cfg.encoder.layers;
        store.add(
            "w",
            LAYER_WEIGHTS,
            Array2::from_elem((1, r), 1.0 / r as f64),
        );
    }
    if cfg.kind == ModelKind::Combo {
        store.add("w", COMBO_WEIGHTS, Array2::from_elem((1, 2), 0.5));
    }
    store
}

// ---------------------------------------------------------------------------
// Tape-level building blocks
// ---------------------------------------------------------------------------

fn identity_plan<'t>(tape: &'t Tape, n: usize) -> Var<'t> {
    tape.constant(Array2::from_shape_fn((n, n), |(i, j)| f64::from(i == j)))
}

struct HeadBind<'t> {
    enc: EncoderBind<'t>,
    align: Option<AlignBind<'t>>,
    edge: Option<[Var<'t>; 4]>,
    thresh: Option<[Var<'t>; 4]>,
    layer_w: Option<Var<'t>>,
    combo_w: Option<Var<'t>>,
}

fn bind_head<'t>(store: &ParameterStore, binding: &Binding<'t>, cfg: &ModelConfig) -> HeadBind<'t> {
    HeadBind {
        enc: EncoderBind::new(store, binding, cfg.encoder.clone(), cfg.uses_cross_encoder()),
        align: cfg.uses_alignment().then(|| AlignBind::new(store, binding)),
        edge: cfg.uses_edge_scores().then(|| {
            ["edge_w1", "edge_b1", "edge_w2", "edge_b2"].map(|n| binding.var(store, "alpha", n))
        }),
        thresh: cfg.uses_edge_scores().then(|| {
            ["thresh_w1", "thresh_b1", "thresh_w2", "thresh_b2"]
                .map(|n| binding.var(store, "beta", n))
        }),
        layer_w: cfg
            .uses_layer_weights()
            .then(|| binding.var(store, "w", LAYER_WEIGHTS)),
        combo_w: (cfg.kind == ModelKind::Combo).then(|| binding.var(store, "w", COMBO_WEIGHTS)),
    }
}

impl<'t> HeadBind<'t> {
    fn plan(&self, cfg: &ModelConfig, h_q: Var<'t>, h_c: Var<'t>) -> Var<'t> {
        if cfg.forced_identity_align {
            return identity_plan(h_q.tape(), h_q.dim().0);
        }
        self.align
            .as_ref()
            .expect("alignment parameters missing")
            .gs_align(h_q, h_c, &cfg.sinkhorn)
    }

    /// Symmetric edge score matrix `A (.) S`: directed edge scores from the
    /// edge embeddings, scattered into adjacency slots and averaged over
    /// both orientations. Support stays inside the true edge set.
    fn edge_score_matrix(&self, g: &BoundGraph<'t>, edge_embeddings: Var<'t>) -> Var<'t> {
        let [w1, b1, w2, b2] = self.edge.as_ref().expect("edge scorer parameters missing");
        let m = g.num_directed;
        let tape = edge_embeddings.tape();
        let ones = tape.constant(Array2::ones((m, 1)));
        let scores = edge_embeddings
            .matmul(*w1)
            .add(ones.matmul(*b1))
            .relu()
            .matmul(*w2)
            .add(ones.matmul(*b2)); // (|Ed|, 1)
        let ones_row = tape.constant(Array2::ones((1, g.n)));
        let tiled = scores.matmul(ones_row); // (|Ed|, n)
        let placed = tiled.mul(g.gather_dst()); // keep only the destination slot
        let s_dir = g.gather_src().transpose().matmul(placed); // (n, n)
        s_dir.add(s_dir.transpose()).scalar_mul(0.5)
    }

    /// Learned scalar threshold from permutation- and size-invariant
    /// statistics of the gossip state: [mean, std, max] -> MLP -> ReLU.
    fn threshold(&self, xt: Var<'t>) -> Var<'t> {
        let [w1, b1, w2, b2] = self.thresh.as_ref().expect("threshold parameters missing");
        let (n, m) = xt.dim();
        let count = (n * m) as f64;
        let mean = xt.sum_all().scalar_mul(1.0 / count);
        let centered = xt.sub(mean.broadcast_scalar(n, m));
        let var = centered.mul(centered).sum_all().scalar_mul(1.0 / count);
        let std = var.add_scalar(1e-12).sqrt();
        let max = xt.row_max().transpose().row_max();
        let stats = mean.concat_cols(std).concat_cols(max); // (1, 3)
        stats
            .matmul(*w1)
            .add(*b1)
            .relu()
            .matmul(*w2)
            .add(*b2)
            .relu()
    }
}

/// `X(T) = (B + I)^T` on the tape. With `rescale`, the state is divided by
/// its current maximum (a positive constant) after every round.
pub fn gossip_power<'t>(b: Var<'t>, rounds: usize, rescale: bool) -> Var<'t> {
    let n = b.dim().0;
    let tape = b.tape();
    let eye = Array2::from_shape_fn((n, n), |(i, j)| f64::from(i == j));
    let b_plus_i = b.add(tape.constant(eye.clone()));
    let mut x = tape.constant(eye);
    for _ in 0..rounds {
        x = x.matmul(b_plus_i);
        if rescale {
            let max = x.value().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max > 0.0 {
                x = x.scalar_mul(1.0 / max);
            }
        }
    }
    x
}

/// Noise-filtered component readout:
/// `Xhat = 2 sigmoid(relu(X - tau)/lambda) - 1`, then the maximum
/// per-column L1 norm.
pub fn noise_filter_readout<'t>(xt: Var<'t>, tau: Var<'t>, lambda: f64) -> Var<'t> {
    let (n, m) = xt.dim();
    xt.sub(tau.broadcast_scalar(n, m))
        .relu()
        .scalar_mul(1.0 / lambda)
        .sigmoid()
        .scalar_mul(2.0)
        .add_scalar(-1.0)
        .col_l1_norm()
        .row_max()
}

/// The gossip tail on a raw matrix with the threshold forced to zero.
/// On a 0/1 component matrix this approaches the largest-component node
/// count as `lambda -> 0`.
pub fn neural_gossip_score(b: &Array2<f64>, rounds: usize, lambda: f64, rescale: bool) -> f64 {
    let tape = Tape::new();
    let bv = tape.constant(b.clone());
    let xt = gossip_power(bv, rounds, rescale);
    let tau = tape.scalar(0.0);
    noise_filter_readout(xt, tau, lambda).scalar_value()
}

// ---------------------------------------------------------------------------
// The five heads
// ---------------------------------------------------------------------------

struct PairCtx<'a, 't> {
    cfg: &'a ModelConfig,
    head: HeadBind<'t>,
    q: BoundGraph<'t>,
    c: BoundGraph<'t>,
}

fn late_stacks<'t>(ctx: &PairCtx<'_, 't>) -> (Vec<Var<'t>>, Var<'t>, Vec<Var<'t>>, Var<'t>) {
    let eq = encode_graph(&ctx.head.enc, &ctx.q, None);
    let ec = encode_graph(&ctx.head.enc, &ctx.c, None);
    (eq.h, eq.edge_embeddings, ec.h, ec.edge_embeddings)
}

/// Layer-weighted coverage: per layer r in 1..=R align the stacks and sum
/// `min(H_q(r), P(r) H_c(r))`; mix with the non-negative layer weights.
fn lmces_score<'t>(ctx: &PairCtx<'_, 't>, h_q: &[Var<'t>], h_c: &[Var<'t>]) -> Var<'t> {
    let r = ctx.cfg.encoder.layers;
    let mut terms: Option<Var<'t>> = None;
    for layer in 1..=r {
        let p = ctx.head.plan(ctx.cfg, h_q[layer], h_c[layer]);
        let term = h_q[layer].emin(p.matmul(h_c[layer])).sum_all();
        terms = Some(match terms {
            None => term,
            Some(t) => t.concat_cols(term),
        });
    }
    let terms = terms.expect("at least one layer");
    let w = ctx.head.layer_w.expect("layer weights missing");
    w.mul(terms).sum_all()
}

/// Gossip head: edge-scored common-subgraph estimate from the final layer,
/// powered `T` rounds, thresholded, and max-pooled.
fn lmccs_score<'t>(
    ctx: &PairCtx<'_, 't>,
    h_q_final: Var<'t>,
    h_c_final: Var<'t>,
    m_q: Var<'t>,
    m_c: Var<'t>,
) -> Var<'t> {
    let s_q = ctx.head.edge_score_matrix(&ctx.q, m_q);
    let s_c = ctx.head.edge_score_matrix(&ctx.c, m_c);
    let p = ctx.head.plan(ctx.cfg, h_q_final, h_c_final);
    let b = s_q.emin(p.matmul(s_c).matmul(p.transpose()));
    let rounds = ctx.cfg.gossip_t.unwrap_or(ctx.q.n);
    let xt = gossip_power(b, rounds, ctx.cfg.gossip_rescale);
    let tau = ctx.head.threshold(xt);
    noise_filter_readout(xt, tau, ctx.cfg.lambda)
}

/// Graph-level min of sum-pooled final embeddings.
fn baseline_score<'t>(ctx: &PairCtx<'_, 't>, h_q: Var<'t>, h_c: Var<'t>) -> Var<'t> {
    let tape = h_q.tape();
    let pool_q = tape.constant(Array2::ones((1, ctx.q.n))).matmul(h_q);
    let pool_c = tape.constant(Array2::ones((1, ctx.c.n))).matmul(h_c);
    pool_q.emin(pool_c).sum_all()
}

/// Early interaction: at every layer the alignment of the current stacks
/// yields per-node difference signals that feed both GRU updates; the score
/// reads the final layer.
fn xmcs_score<'t>(ctx: &PairCtx<'_, 't>) -> Var<'t> {
    let mut h_q = ctx.head.enc.initial_embeddings(&ctx.q);
    let mut h_c = ctx.head.enc.initial_embeddings(&ctx.c);
    for _layer in 0..ctx.cfg.encoder.layers {
        let p = ctx.head.plan(ctx.cfg, h_q, h_c);
        // Delta = H - min(H, P H') = relu(H - P H')
        let delta_q = h_q.sub(p.matmul(h_c)).relu();
        let delta_c = h_c.sub(p.transpose().matmul(h_q)).relu();
        let (next_q, _) = ctx.head.enc.propagate(&ctx.q, h_q, Some(delta_q.row_sum()));
        let (next_c, _) = ctx.head.enc.propagate(&ctx.c, h_c, Some(delta_c.row_sum()));
        h_q = next_q;
        h_c = next_c;
    }
    let p = ctx.head.plan(ctx.cfg, h_q, h_c);
    h_q.emin(p.matmul(h_c)).sum_all()
}

/// Build the configured head's score on `tape` for one padded pair.
/// Both graphs must share the padding `n` baked into their [`GraphOps`].
pub fn build_score<'t>(
    tape: &'t Tape,
    store: &ParameterStore,
    binding: &Binding<'t>,
    cfg: &ModelConfig,
    q_ops: &GraphOps,
    c_ops: &GraphOps,
) -> Var<'t> {
    assert_eq!(q_ops.n, c_ops.n, "pair graphs padded to different sizes");
    let ctx = PairCtx {
        cfg,
        head: bind_head(store, binding, cfg),
        q: q_ops.bind(tape),
        c: c_ops.bind(tape),
    };
    match cfg.kind {
        ModelKind::Lmces => {
            let (h_q, _mq, h_c, _mc) = late_stacks(&ctx);
            lmces_score(&ctx, &h_q, &h_c)
        }
        ModelKind::Lmccs => {
            let (h_q, m_q, h_c, m_c) = late_stacks(&ctx);
            lmccs_score(&ctx, *h_q.last().unwrap(), *h_c.last().unwrap(), m_q, m_c)
        }
        ModelKind::Baseline => {
            let (h_q, _mq, h_c, _mc) = late_stacks(&ctx);
            baseline_score(&ctx, *h_q.last().unwrap(), *h_c.last().unwrap())
        }
        ModelKind::Combo => {
            let (h_q, m_q, h_c, m_c) = late_stacks(&ctx);
            let mces = lmces_score(&ctx, &h_q, &h_c);
            let mccs = lmccs_score(&ctx, *h_q.last().unwrap(), *h_c.last().unwrap(), m_q, m_c);
            let w = ctx.head.combo_w.expect("combo weights missing");
            w.mul(mccs.concat_cols(mces)).sum_all()
        }
        ModelKind::Xmcs => xmcs_score(&ctx),
    }
}

/// Forward-only score of one pair (fresh tape).
pub fn score_pair(
    store: &ParameterStore,
    cfg: &ModelConfig,
    q_ops: &GraphOps,
    c_ops: &GraphOps,
) -> f64 {
    let tape = Tape::new();
    let binding = store.bind(&tape);
    build_score(&tape, store, &binding, cfg, q_ops, c_ops).scalar_value()
}

/// The head's final-layer soft alignment for one pair (the one its score
/// reads). Used to export explanations; panics for the baseline head,
/// which has no alignment.
pub fn final_alignment(
    store: &ParameterStore,
    cfg: &ModelConfig,
    q_ops: &GraphOps,
    c_ops: &GraphOps,
) -> Array2<f64> {
    assert!(
        cfg.uses_alignment(),
        "the {} head has no alignment to export",
        cfg.kind
    );
    let tape = Tape::new();
    let binding = store.bind(&tape);
    let ctx = PairCtx {
        cfg,
        head: bind_head(store, &binding, cfg),
        q: q_ops.bind(&tape),
        c: c_ops.bind(&tape),
    };
    match cfg.kind {
        ModelKind::Xmcs => {
            let mut h_q = ctx.head.enc.initial_embeddings(&ctx.q);
            let mut h_c = ctx.head.enc.initial_embeddings(&ctx.c);
            for _ in 0..cfg.encoder.layers {
                let p = ctx.head.plan(cfg, h_q, h_c);
                let delta_q = h_q.sub(p.matmul(h_c)).relu();
                let delta_c = h_c.sub(p.transpose().matmul(h_q)).relu();
                let (nq, _) = ctx.head.enc.propagate(&ctx.q, h_q, Some(delta_q.row_sum()));
                let (nc, _) = ctx.head.enc.propagate(&ctx.c, h_c, Some(delta_c.row_sum()));
                h_q = nq;
                h_c = nc;
            }
            ctx.head.plan(cfg, h_q, h_c).value()
        }
        _ => {
            let eq = encode_graph(&ctx.head.enc, &ctx.q, None);
            let ec = encode_graph(&ctx.head.enc, &ctx.c, None);
            ctx.head
                .plan(cfg, *eq.h.last().unwrap(), *ec.h.last().unwrap())
                .value()
        }
    }
}

/// Finite-difference check of the full head score with respect to every
/// parameter entry of every group. Central differences in double precision;
/// returns the maximum relative error `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn grad_check_model(
    store: &ParameterStore,
    cfg: &ModelConfig,
    q_ops: &GraphOps,
    c_ops: &GraphOps,
    eps: f64,
) -> f64 {
    // analytic gradients
    let tape = Tape::new();
    let binding = store.bind(&tape);
    let score = build_score(&tape, store, &binding, cfg, q_ops, c_ops);
    crate::diffengine::tape::backward(score);
    let analytic = binding.collect_grads();

    let mut max_rel = 0.0f64;
    for (gi, group) in store.groups().iter().enumerate() {
        for (pi, param) in group.params.iter().enumerate() {
            for r in 0..param.value.nrows() {
                for c in 0..param.value.ncols() {
                    let eval = |delta: f64| -> f64 {
                        let mut probe = store.clone();
                        probe
                            .get_mut(&group.name, &param.name)
                            .value[[r, c]] += delta;
                        score_pair(&probe, cfg, q_ops, c_ops)
                    };
                    let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
                    let a = analytic[gi][pi][[r, c]];
                    let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                    if rel > max_rel {
                        max_rel = rel;
                    }
                }
            }
        }
    }
    max_rel
}

// ---------------------------------------------------------------------------
// Precomputed late-interaction embeddings
// ---------------------------------------------------------------------------

/// Per-graph quantities that a late-interaction head needs at scoring time.
/// Computed once per graph and shared read-only across queries.
#[derive(Debug, Clone)]
pub struct GraphEmbedding {
    /// H(0..R) values.
    pub h: Vec<Array2<f64>>,
    /// Symmetric edge score matrix (gossip heads only).
    pub edge_scores: Option<Array2<f64>>,
    /// Sum-pooled H(R) (baseline).
    pub pooled: Array2<f64>,
}

/// Encode one graph and extract everything the late heads reuse.
pub fn precompute_embedding(
    store: &ParameterStore,
    cfg: &ModelConfig,
    ops: &GraphOps,
) -> GraphEmbedding {
    let tape = Tape::new();
    let binding = store.bind(&tape);
    let head = bind_head(store, &binding, cfg);
    let g = ops.bind(&tape);
    let enc = encode_graph(&head.enc, &g, None);
    let h: Vec<Array2<f64>> = enc.h.iter().map(Var::value).collect();
    let edge_scores = cfg
        .uses_edge_scores()
        .then(|| head.edge_score_matrix(&g, enc.edge_embeddings).value());
    let pooled = Array2::ones((1, ops.n)).dot(h.last().unwrap());
    GraphEmbedding {
        h,
        edge_scores,
        pooled,
    }
}

/// Score a pair of precomputed embeddings under a late-interaction head.
/// The encoder is bypassed entirely; only the interaction stage runs.
pub fn score_precomputed(
    store: &ParameterStore,
    cfg: &ModelConfig,
    q: &GraphEmbedding,
    c: &GraphEmbedding,
) -> f64 {
    assert!(
        cfg.kind.is_late_interaction(),
        "early-interaction models cannot score from precomputed embeddings"
    );
    let tape = Tape::new();
    let binding = store.bind(&tape);
    let head = bind_head(store, &binding, cfg);
    let n = q.h[0].nrows();
    assert_eq!(n, c.h[0].nrows(), "pair embeddings padded to different sizes");

    fn plan_for<'t>(
        head: &HeadBind<'t>,
        cfg: &ModelConfig,
        h_q: Var<'t>,
        h_c: Var<'t>,
    ) -> Var<'t> {
        head.plan(cfg, h_q, h_c)
    }
    let plan = |h_q, h_c| plan_for(&head, cfg, h_q, h_c);

    let lmces_part = || {
        let mut total: Option<Var<'_>> = None;
        for layer in 1..=cfg.encoder.layers {
            let h_q = tape.constant(q.h[layer].clone());
            let h_c = tape.constant(c.h[layer].clone());
            let p = plan(h_q, h_c);
            let term = h_q.emin(p.matmul(h_c)).sum_all();
            total = Some(match total {
                None => term,
                Some(t) => t.concat_cols(term),
            });
        }
        head.layer_w
            .expect("layer weights missing")
            .mul(total.expect("layers"))
            .sum_all()
    };
    let lmccs_part = || {
        let h_q = tape.constant(q.h.last().unwrap().clone());
        let h_c = tape.constant(c.h.last().unwrap().clone());
        let s_q = tape.constant(q.edge_scores.clone().expect("edge scores missing"));
        let s_c = tape.constant(c.edge_scores.clone().expect("edge scores missing"));
        let p = plan(h_q, h_c);
        let b = s_q.emin(p.matmul(s_c).matmul(p.transpose()));
        let xt = gossip_power(b, cfg.gossip_t.unwrap_or(n), cfg.gossip_rescale);
        let tau = head.threshold(xt);
        noise_filter_readout(xt, tau, cfg.lambda)
    };

    let score = match cfg.kind {
        ModelKind::Lmces => lmces_part(),
        ModelKind::Lmccs => lmccs_part(),
        ModelKind::Baseline => {
            let pq = tape.constant(q.pooled.clone());
            let pc = tape.constant(c.pooled.clone());
            pq.emin(pc).sum_all()
        }
        ModelKind::Combo => {
            let w = head.combo_w.expect("combo weights missing");
            let mccs = lmccs_part();
            let mces = lmces_part();
            w.mul(mccs.concat_cols(mces)).sum_all()
        }
        ModelKind::Xmcs => unreachable!("guarded above"),
    };
    score.scalar_value()
}

// ---------------------------------------------------------------------------
// Score records and shared helpers
// ---------------------------------------------------------------------------

/// One predicted relevance score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub query_id: String,
    pub corpus_id: String,
    pub model: String,
    pub score: f64,
}

/// `query_id<TAB>corpus_id<TAB>model<TAB>score` per line.
pub fn scores_to_string(records: &[ScoreRecord]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.query_id, r.corpus_id, r.model, r.score);
    }
    out
}

pub fn scores_from_string(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(CoreError::Parse {
                line: i + 1,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        out.push(ScoreRecord {
            query_id: fields[0].to_string(),
            corpus_id: fields[1].to_string(),
            model: fields[2].to_string(),
            score: fields[3].parse().map_err(|_| CoreError::Parse {
                line: i + 1,
                msg: format!("bad score '{}'", fields[3]),
            })?,
        });
    }
    Ok(out)
}

pub fn save_scores(records: &[ScoreRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scores_to_string(records))
        .map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Serialize a model configuration into checkpoint metadata.
pub fn model_config_to_meta(cfg: &ModelConfig, padding: usize) -> std::collections::BTreeMap<String, String> {
    let mut meta = std::collections::BTreeMap::new();
    meta.insert("model".into(), cfg.kind.to_string());
    meta.insert("layers".into(), cfg.encoder.layers.to_string());
    meta.insert("node_dim".into(), cfg.encoder.node_dim.to_string());
    meta.insert("msg_dim".into(), cfg.encoder.msg_dim.to_string());
    meta.insert("feature_dim".into(), cfg.encoder.feature_dim.to_string());
    meta.insert("zeta".into(), cfg.sinkhorn.zeta.to_string());
    meta.insert(
        "sinkhorn_iterations".into(),
        cfg.sinkhorn.iterations.to_string(),
    );
    meta.insert("lambda".into(), cfg.lambda.to_string());
    if let Some(t) = cfg.gossip_t {
        meta.insert("gossip_t".into(), t.to_string());
    }
    meta.insert("gossip_rescale".into(), cfg.gossip_rescale.to_string());
    meta.insert("padding".into(), padding.to_string());
    meta
}

/// Rebuild a model configuration (and the training-time padded size) from
/// checkpoint metadata.
pub fn model_config_from_meta(
    meta: &std::collections::BTreeMap<String, String>,
) -> Result<(ModelConfig, usize)> {
    fn field<T: std::str::FromStr>(
        meta: &std::collections::BTreeMap<String, String>,
        key: &str,
    ) -> Result<T> {
        meta.get(key)
            .ok_or_else(|| CoreError::Checkpoint(format!("metadata key '{key}' missing")))?
            .parse()
            .map_err(|_| CoreError::Checkpoint(format!("metadata key '{key}' unparsable")))
    }
    let kind: ModelKind = meta
        .get("model")
        .ok_or_else(|| CoreError::Checkpoint("metadata key 'model' missing".into()))?
        .parse()?;
    let mut cfg = ModelConfig::new(kind);
    cfg.encoder.layers = field(meta, "layers")?;
    cfg.encoder.node_dim = field(meta, "node_dim")?;
    cfg.encoder.msg_dim = field(meta, "msg_dim")?;
    cfg.encoder.feature_dim = field(meta, "feature_dim")?;
    cfg.sinkhorn.zeta = field(meta, "zeta")?;
    cfg.sinkhorn.iterations = field(meta, "sinkhorn_iterations")?;
    cfg.lambda = field(meta, "lambda")?;
    cfg.gossip_t = match meta.get("gossip_t") {
        Some(_) => Some(field(meta, "gossip_t")?),
        None => None,
    };
    cfg.gossip_rescale = field(meta, "gossip_rescale")?;
    let padding = field(meta, "padding")?;
    Ok((cfg, padding))
}

/// Score every (query, corpus) pair. Late-interaction heads precompute
/// per-graph embeddings once; the early-interaction head re-encodes each
/// pair. Rows follow the query order, columns the corpus order.
pub fn score_all(
    store: &ParameterStore,
    cfg: &ModelConfig,
    q_ops: &[GraphOps],
    c_ops: &[GraphOps],
) -> Vec<Vec<f64>> {
    use rayon::prelude::*;
    if cfg.kind.is_late_interaction() {
        let q_emb: Vec<GraphEmbedding> = q_ops
            .par_iter()
            .map(|ops| precompute_embedding(store, cfg, ops))
            .collect();
        let c_emb: Vec<GraphEmbedding> = c_ops
            .par_iter()
            .map(|ops| precompute_embedding(store, cfg, ops))
            .collect();
        q_emb
            .par_iter()
            .map(|qe| {
                c_emb
                    .iter()
                    .map(|ce| score_precomputed(store, cfg, qe, ce))
                    .collect()
            })
            .collect()
    } else {
        q_ops
            .par_iter()
            .map(|qo| c_ops.iter().map(|co| score_pair(store, cfg, qo, co)).collect())
            .collect()
    }
}

/// Build the per-graph structure constants, all padded to `n`.
pub fn build_ops(graphs: &[Graph], n: usize, cfg: &EncoderConfig) -> Vec<GraphOps> {
    graphs
        .iter()
        .map(|g| GraphOps::new(g, n, cfg.feature_dim))
        .collect()
}

/// Dataset-wide padded size: the maximum node count over all graph sets.
pub fn common_padding(sets: &[&[Graph]]) -> usize {
    sets.iter()
        .flat_map(|s| s.iter())
        .map(Graph::num_nodes)
        .max()
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::shapes;
    use crate::oracle;
    use rand::prelude::*;

    fn cfg_small(kind: ModelKind) -> ModelConfig {
        let mut cfg = ModelConfig::new(kind);
        cfg.encoder = EncoderConfig {
            layers: 2,
            node_dim: 4,
            msg_dim: 6,
            feature_dim: 1,
        };
        cfg
    }

    fn ops_for(g: &Graph, n: usize, cfg: &ModelConfig) -> GraphOps {
        GraphOps::new(g, n, cfg.encoder.feature_dim)
    }

    #[test]
    fn zero_layer_weights_zero_the_lmces_score() {
        let cfg = cfg_small(ModelKind::Lmces);
        let mut store = init_model_params(&cfg, 1);
        store.get_mut("w", LAYER_WEIGHTS).value.fill(0.0);
        let q = shapes::cycle("q", 5);
        let c = shapes::path("c", 5);
        let s = score_pair(&store, &cfg, &ops_for(&q, 5, &cfg), &ops_for(&c, 5, &cfg));
        assert_eq!(s, 0.0);
    }

    #[test]
    fn identity_pair_identity_alignment_sums_layers() {
        let mut cfg = cfg_small(ModelKind::Lmces);
        cfg.forced_identity_align = true;
        let store = init_model_params(&cfg, 2);
        let g = shapes::cycle("g", 5);
        let ops = ops_for(&g, 5, &cfg);
        let s = score_pair(&store, &cfg, &ops, &ops);
        // min(H, I H) = H so s = sum_r w_r * sum(H(r))
        let tape = Tape::new();
        let binding = store.bind(&tape);
        let head = bind_head(&store, &binding, &cfg);
        let enc = encode_graph(&head.enc, &ops.bind(&tape), None);
        let w = store.get("w", LAYER_WEIGHTS).value.clone();
        let mut want = 0.0;
        for layer in 1..=cfg.encoder.layers {
            want += w[[0, layer - 1]] * enc.h[layer].value().sum();
        }
        assert!((s - want).abs() < 1e-12, "{s} vs {want}");
    }

    #[test]
    fn scores_are_bitwise_deterministic() {
        let q = shapes::star("q", 4);
        let c = shapes::cycle("c", 6);
        for kind in ModelKind::ALL {
            let cfg = cfg_small(kind);
            let store = init_model_params(&cfg, 3);
            let qo = ops_for(&q, 6, &cfg);
            let co = ops_for(&c, 6, &cfg);
            let s1 = score_pair(&store, &cfg, &qo, &co);
            let s2 = score_pair(&store, &cfg, &qo, &co);
            assert_eq!(s1.to_bits(), s2.to_bits(), "{kind} not deterministic");
        }
    }

    #[test]
    fn baseline_is_symmetric() {
        let cfg = cfg_small(ModelKind::Baseline);
        let store = init_model_params(&cfg, 4);
        let a = shapes::path("a", 5);
        let b = shapes::star("b", 5);
        let ao = ops_for(&a, 6, &cfg);
        let bo = ops_for(&b, 6, &cfg);
        let s_ab = score_pair(&store, &cfg, &ao, &bo);
        let s_ba = score_pair(&store, &cfg, &bo, &ao);
        assert!((s_ab - s_ba).abs() < 1e-12);
    }

    #[test]
    fn combo_endpoints_reduce_to_single_heads() {
        let cfg = cfg_small(ModelKind::Combo);
        let store = init_model_params(&cfg, 5);
        let q = shapes::cycle("q", 5);
        let c = shapes::complete("c", 4);
        let qo = ops_for(&q, 5, &cfg);
        let co = ops_for(&c, 5, &cfg);

        // w = (0, 1): pure coverage head; matches lmces with the same params
        let mut s0 = store.clone();
        s0.get_mut("w", COMBO_WEIGHTS).value = ndarray::array![[0.0, 1.0]];
        let combo_score = score_pair(&s0, &cfg, &qo, &co);
        let mut lmces_cfg = cfg.clone();
        lmces_cfg.kind = ModelKind::Lmces;
        let lmces = score_pair(&s0, &lmces_cfg, &qo, &co);
        assert!((combo_score - lmces).abs() < 1e-12);

        // w = (1, 0): pure gossip head
        let mut s1 = store.clone();
        s1.get_mut("w", COMBO_WEIGHTS).value = ndarray::array![[1.0, 0.0]];
        let combo_score = score_pair(&s1, &cfg, &qo, &co);
        let mut lmccs_cfg = cfg.clone();
        lmccs_cfg.kind = ModelKind::Lmccs;
        let lmccs = score_pair(&s1, &lmccs_cfg, &qo, &co);
        assert!((combo_score - lmccs).abs() < 1e-12);
    }

    #[test]
    fn gossip_limit_recovers_component_size() {
        // on 0/1 block matrices the filtered readout approaches the largest
        // component size at low temperature
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let n = rng.random_range(2..=8);
            // random partition into path components
            let mut b = Array2::zeros((n, n));
            let mut start = 0;
            while start < n {
                let len = rng.random_range(1..=(n - start));
                for i in start..start + len - 1 {
                    b[[i, i + 1]] = 1.0;
                    b[[i + 1, i]] = 1.0;
                }
                start += len;
            }
            let lcc = oracle::largest_cc(&b).unwrap() as f64;
            let s = neural_gossip_score(&b, n, 1e-3, false);
            assert!((s - lcc).abs() < 0.05, "s={s} lcc={lcc} for\n{b:?}");
        }
    }

    #[test]
    fn all_zero_b_readout_matches_closed_form() {
        // X(T) = I; every column holds a single 1
        let n = 5;
        let b = Array2::zeros((n, n));
        for lambda in [0.5, 1.0, 2.0] {
            let s = neural_gossip_score(&b, n, lambda, false);
            let want = 2.0 / (1.0 + (-1.0 / lambda).exp()) - 1.0;
            assert!((s - want).abs() < 1e-12, "{s} vs {want}");
            assert!(s <= 1.0);
        }
    }

    #[test]
    fn readout_nonincreasing_in_lambda() {
        let mut b = Array2::zeros((4, 4));
        b[[0, 1]] = 1.0;
        b[[1, 0]] = 1.0;
        b[[2, 3]] = 1.0;
        b[[3, 2]] = 1.0;
        let mut prev = f64::INFINITY;
        for lambda in [0.1, 0.5, 1.0, 5.0, 20.0] {
            let s = neural_gossip_score(&b, 4, lambda, false);
            assert!(s <= prev + 1e-12, "score rose from {prev} to {s}");
            prev = s;
        }
    }

    #[test]
    fn xmcs_identity_alignment_on_identical_graphs_has_zero_deltas() {
        // with P = I and G_q = G_c the difference signals vanish, so the
        // cross encoder behaves like the zero-hook encoder and the score is
        // sum(H(R))
        let mut cfg = cfg_small(ModelKind::Xmcs);
        cfg.forced_identity_align = true;
        let store = init_model_params(&cfg, 7);
        let g = shapes::cycle("g", 5);
        let ops = ops_for(&g, 5, &cfg);
        let s = score_pair(&store, &cfg, &ops, &ops);

        let tape = Tape::new();
        let binding = store.bind(&tape);
        let head = bind_head(&store, &binding, &cfg);
        let enc = encode_graph(&head.enc, &ops.bind(&tape), None); // zero hook
        let want = enc.h.last().unwrap().value().sum();
        assert!((s - want).abs() < 1e-12, "{s} vs {want}");
    }

    #[test]
    fn neural_scores_invariant_under_corpus_relabeling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let q = shapes::cycle("q", 6);
        let c = crate::graph::Graph::new("c", 6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (1, 4)])
            .unwrap();
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng);
        let c2 = c.relabel(&perm).unwrap();
        for kind in [ModelKind::Lmces, ModelKind::Xmcs, ModelKind::Lmccs] {
            let cfg = cfg_small(kind);
            let store = init_model_params(&cfg, 9);
            let qo = ops_for(&q, 6, &cfg);
            let s1 = score_pair(&store, &cfg, &qo, &ops_for(&c, 6, &cfg));
            let s2 = score_pair(&store, &cfg, &qo, &ops_for(&c2, 6, &cfg));
            let rel = (s1 - s2).abs() / s1.abs().max(1e-9);
            assert!(rel < 1e-9, "{kind}: {s1} vs {s2} (rel {rel})");
        }
    }

    #[test]
    fn precomputed_scores_match_full_scores_for_late_heads() {
        let q = shapes::star("q", 5);
        let c = shapes::cycle("c", 6);
        for kind in [
            ModelKind::Lmces,
            ModelKind::Lmccs,
            ModelKind::Combo,
            ModelKind::Baseline,
        ] {
            let cfg = cfg_small(kind);
            let store = init_model_params(&cfg, 10);
            let qo = ops_for(&q, 6, &cfg);
            let co = ops_for(&c, 6, &cfg);
            let full = score_pair(&store, &cfg, &qo, &co);
            let qe = precompute_embedding(&store, &cfg, &qo);
            let ce = precompute_embedding(&store, &cfg, &co);
            let pre = score_precomputed(&store, &cfg, &qe, &ce);
            assert!(
                (full - pre).abs() < 1e-12,
                "{kind}: full {full} vs precomputed {pre}"
            );
        }
    }

    #[test]
    fn score_records_round_trip() {
        let recs = vec![
            ScoreRecord {
                query_id: "q0".into(),
                corpus_id: "c1".into(),
                model: "lmces".into(),
                score: 3.25,
            },
            ScoreRecord {
                query_id: "q0".into(),
                corpus_id: "c2".into(),
                model: "lmces".into(),
                score: -0.5,
            },
        ];
        let text = scores_to_string(&recs);
        assert_eq!(scores_from_string(&text).unwrap(), recs);
    }
}
