//! Message-passing GNN encoder producing per-layer node embeddings and
//! final-layer edge embeddings.
//!
//! Every node starts from the same constant feature, gets a linear initial
//! encoding, then runs `R` rounds of message passing with a GRU update.
//! Messages are direction-aware: for each directed edge `(u, v)` a linear
//! layer maps `[h_u ; h_v]` to a message, and a node aggregates the
//! messages on its incoming edges by summation. The early-interaction
//! scorer feeds an extra per-node scalar into the GRU input through the
//! cross hook.

use ndarray::Array2;
use rand::Rng;

use crate::diffengine::params::{init_linear, Binding, ParameterStore};
use crate::diffengine::tape::{Tape, Var};
use crate::graph::Graph;

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    /// Propagation rounds R.
    pub layers: usize,
    /// Node embedding width d.
    pub node_dim: usize,
    /// Message / edge embedding width d_E.
    pub msg_dim: usize,
    /// Input feature width (constant feature 1 per node).
    pub feature_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 5,
            node_dim: 10,
            msg_dim: 20,
            feature_dim: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.layers < 1 || self.node_dim < 1 || self.msg_dim < 1 || self.feature_dim < 1 {
            return Err(crate::CoreError::Config(
                "encoder dimensions must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Constant structure matrices for one padded graph. Gathers and scatters
/// are expressed as 0/1 selector matrices so the whole encoder is plain
/// matrix algebra on the tape.
#[derive(Debug, Clone)]
pub struct GraphOps {
    pub n: usize,
    /// Both orientations of every undirected edge, in canonical order:
    /// `(u, v)` then `(v, u)` for each stored edge `u < v`.
    pub edges_directed: Vec<(usize, usize)>,
    gather_src: Array2<f64>, // |Ed| x n
    gather_dst: Array2<f64>, // |Ed| x n
    scatter_in: Array2<f64>, // n x |Ed|, 1 at (dst, e): sums incoming messages
    features: Array2<f64>,   // n x feature_dim, all ones
}

impl GraphOps {
    pub fn new(graph: &Graph, n: usize, feature_dim: usize) -> Self {
        assert!(n >= graph.num_nodes(), "padding smaller than graph");
        let mut edges_directed = Vec::with_capacity(2 * graph.num_edges());
        for &(u, v) in graph.edges() {
            edges_directed.push((u, v));
            edges_directed.push((v, u));
        }
        let m = edges_directed.len();
        let mut gather_src = Array2::zeros((m, n));
        let mut gather_dst = Array2::zeros((m, n));
        let mut scatter_in = Array2::zeros((n, m));
        for (e, &(s, d)) in edges_directed.iter().enumerate() {
            gather_src[[e, s]] = 1.0;
            gather_dst[[e, d]] = 1.0;
            scatter_in[[d, e]] = 1.0;
        }
        GraphOps {
            n,
            edges_directed,
            gather_src,
            gather_dst,
            scatter_in,
            features: Array2::ones((n, feature_dim)),
        }
    }

    /// Register the structure constants on a tape.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundGraph<'t> {
        BoundGraph {
            n: self.n,
            num_directed: self.edges_directed.len(),
            gather_src: tape.constant(self.gather_src.clone()),
            gather_dst: tape.constant(self.gather_dst.clone()),
            scatter_in: tape.constant(self.scatter_in.clone()),
            features: tape.constant(self.features.clone()),
        }
    }
}

/// Tape-bound structure constants for one graph.
#[derive(Clone, Copy)]
pub struct BoundGraph<'t> {
    pub n: usize,
    pub num_directed: usize,
    gather_src: Var<'t>,
    gather_dst: Var<'t>,
    scatter_in: Var<'t>,
    features: Var<'t>,
}

impl<'t> BoundGraph<'t> {
    /// Selector (|Ed| x n) picking each directed edge's source row.
    pub fn gather_src(&self) -> Var<'t> {
        self.gather_src
    }

    /// Selector (|Ed| x n) picking each directed edge's destination row.
    pub fn gather_dst(&self) -> Var<'t> {
        self.gather_dst
    }
}

const FEAT_W: &str = "feat_w";
const FEAT_B: &str = "feat_b";
const MSG_W: &str = "msg_w";
const MSG_B: &str = "msg_b";
const GRU_W: [&str; 3] = ["gru_wr", "gru_wz", "gru_wn"];
const GRU_U: [&str; 3] = ["gru_ur", "gru_uz", "gru_un"];
const GRU_B: [&str; 3] = ["gru_br", "gru_bz", "gru_bn"];

/// Register freshly initialized encoder parameters in group `theta`.
///
/// `cross` widens the GRU input by one column for the early-interaction
/// scalar. Weights are uniform in `+-1/sqrt(fan_in)`, biases zero.
pub fn init_encoder_params(
    store: &mut ParameterStore,
    rng: &mut impl Rng,
    cfg: &EncoderConfig,
    cross: bool,
) {
    let d = cfg.node_dim;
    let de = cfg.msg_dim;
    let in_dim = gru_input_dim(cfg, cross);
    store.add("theta", FEAT_W, init_linear(rng, cfg.feature_dim, d));
    store.add("theta", FEAT_B, Array2::zeros((1, d)));
    store.add("theta", MSG_W, init_linear(rng, 2 * d, de));
    store.add("theta", MSG_B, Array2::zeros((1, de)));
    for name in GRU_W {
        store.add("theta", name, init_linear(rng, in_dim, d));
    }
    for name in GRU_U {
        store.add("theta", name, init_linear(rng, d, d));
    }
    for name in GRU_B {
        store.add("theta", name, Array2::zeros((1, d)));
    }
}

pub fn gru_input_dim(cfg: &EncoderConfig, cross: bool) -> usize {
    cfg.msg_dim + usize::from(cross)
}

/// Encoder parameters bound to one tape.
pub struct EncoderBind<'t> {
    pub cfg: EncoderConfig,
    pub cross: bool,
    feat_w: Var<'t>,
    feat_b: Var<'t>,
    msg_w: Var<'t>,
    msg_b: Var<'t>,
    gru_w: [Var<'t>; 3],
    gru_u: [Var<'t>; 3],
    gru_b: [Var<'t>; 3],
}

impl<'t> EncoderBind<'t> {
    pub fn new(
        store: &ParameterStore,
        binding: &Binding<'t>,
        cfg: EncoderConfig,
        cross: bool,
    ) -> Self {
        let var = |name: &str| binding.var(store, "theta", name);
        EncoderBind {
            cfg,
            cross,
            feat_w: var(FEAT_W),
            feat_b: var(FEAT_B),
            msg_w: var(MSG_W),
            msg_b: var(MSG_B),
            gru_w: GRU_W.map(&var),
            gru_u: GRU_U.map(&var),
            gru_b: GRU_B.map(&var),
        }
    }

    /// H(0): the same linear encoding of the constant feature for every node.
    pub fn initial_embeddings(&self, g: &BoundGraph<'t>) -> Var<'t> {
        let ones = g.features.tape().constant(Array2::ones((g.n, 1)));
        g.features.matmul(self.feat_w).add(ones.matmul(self.feat_b))
    }

    /// Directed per-edge messages from node embeddings `h`:
    /// row e = Linear([h_src(e) ; h_dst(e)]).
    pub fn messages(&self, g: &BoundGraph<'t>, h: Var<'t>) -> Var<'t> {
        let src = g.gather_src.matmul(h);
        let dst = g.gather_dst.matmul(h);
        let ones = h.tape().constant(Array2::ones((g.num_directed, 1)));
        src.concat_cols(dst)
            .matmul(self.msg_w)
            .add(ones.matmul(self.msg_b))
    }

    /// Sum of incoming messages per node.
    pub fn aggregate(&self, g: &BoundGraph<'t>, messages: Var<'t>) -> Var<'t> {
        g.scatter_in.matmul(messages)
    }

    /// One GRU update: `x` is the (possibly cross-augmented) input, `h` the
    /// hidden state.
    pub fn gru(&self, x: Var<'t>, h: Var<'t>) -> Var<'t> {
        let n = h.dim().0;
        let ones = h.tape().constant(Array2::ones((n, 1)));
        let gate = |k: usize| {
            x.matmul(self.gru_w[k])
                .add(h.matmul(self.gru_u[k]))
                .add(ones.matmul(self.gru_b[k]))
        };
        let r = gate(0).sigmoid();
        let z = gate(1).sigmoid();
        let cand = x
            .matmul(self.gru_w[2])
            .add(r.mul(h.matmul(self.gru_u[2]).add(ones.matmul(self.gru_b[2]))))
            .tanh();
        // h' = (1 - z) * cand + z * h
        cand.add(z.mul(h.sub(cand)))
    }

    /// One propagation step `H(r) -> H(r+1)`; also returns the messages
    /// computed from `H(r)`.
    pub fn propagate(
        &self,
        g: &BoundGraph<'t>,
        h: Var<'t>,
        cross_signal: Option<Var<'t>>,
    ) -> (Var<'t>, Var<'t>) {
        let msgs = self.messages(g, h);
        let mut input = self.aggregate(g, msgs);
        if self.cross {
            let signal =
                cross_signal.unwrap_or_else(|| h.tape().constant(Array2::zeros((g.n, 1))));
            input = input.concat_cols(signal);
        } else {
            assert!(
                cross_signal.is_none(),
                "cross signal supplied to a non-cross encoder"
            );
        }
        (self.gru(input, h), msgs)
    }
}

/// Per-layer node embeddings and final-layer edge embeddings, as tape nodes.
pub struct EncodedGraph<'t> {
    /// `h[r]` is H(r); `h.len() == R + 1`.
    pub h: Vec<Var<'t>>,
    /// Directed edge embedding matrix M(R) computed from H(R), row per
    /// directed edge.
    pub edge_embeddings: Var<'t>,
}

/// Run the full encoder on one graph. `cross_hook(r, h_r)` supplies the
/// per-node column appended to the GRU input at layer r; a hook returning
/// zeros (or no hook at all) makes a cross-capable encoder behave like the
/// plain one.
pub fn encode_graph<'t>(
    enc: &EncoderBind<'t>,
    g: &BoundGraph<'t>,
    mut cross_hook: Option<&mut dyn FnMut(usize, Var<'t>) -> Var<'t>>,
) -> EncodedGraph<'t> {
    let mut h = enc.initial_embeddings(g);
    let mut stack = vec![h];
    for r in 0..enc.cfg.layers {
        let signal = cross_hook.as_mut().map(|hook| hook(r, h));
        let (next, _msgs) = enc.propagate(g, h, signal);
        h = next;
        stack.push(h);
    }
    let edge_embeddings = enc.messages(g, h);
    EncodedGraph {
        h: stack,
        edge_embeddings,
    }
}
