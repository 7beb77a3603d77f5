//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records one computation; [`Var`] handles index into it.
//! The op set is deliberately small: 2-D matrices only, no broadcasting
//! beyond scalars. Everything the scoring heads need (GRU cells, Sinkhorn
//! normalization, gossip powers, readouts) is composed from these ops.
//!
//! Gradients accumulate: calling [`backward`] twice doubles every leaf
//! gradient. Each call runs a fresh reverse sweep over a scratch buffer and
//! adds the result into the persistent per-node gradients.

use std::cell::RefCell;

use ndarray::{concatenate, s, Array2, Axis};

/// One recorded computation. Single-threaded; independent tapes may run in
/// parallel.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

struct Node {
    value: Array2<f64>,
    grad: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Clone)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Min(usize, usize),
    ScalarMul(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Sqrt(usize),
    RowNormalize(usize),
    ColNormalize(usize),
    SumAll(usize),
    RowSum(usize),
    RowMax(usize),
    ColL1Norm(usize),
    ConcatCols(usize, usize),
    SliceRows(usize, usize, usize),
    SliceCols(usize, usize, usize),
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let grad = Array2::zeros(value.dim());
        nodes.push(Node {
            value,
            grad,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// A leaf that never receives gradient (structure matrices, labels...).
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf (parameters, grad-checked inputs).
    pub fn leaf(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// 1x1 constant.
    pub fn scalar(&self, x: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), x))
    }

    fn value_of(&self, idx: usize) -> Array2<f64> {
        self.nodes.borrow()[idx].value.clone()
    }

    fn dim_of(&self, idx: usize) -> (usize, usize) {
        self.nodes.borrow()[idx].value.dim()
    }
}

fn same_shape(op: &str, a: (usize, usize), b: (usize, usize)) {
    assert_eq!(
        a, b,
        "{op}: shape mismatch between {}x{} and {}x{}",
        a.0, a.1, b.0, b.1
    );
}

impl<'t> Var<'t> {
    /// The tape this node lives on.
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Array2<f64> {
        self.tape.value_of(self.idx)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.tape.dim_of(self.idx)
    }

    /// Persistent gradient accumulated by [`backward`] calls.
    pub fn grad(&self) -> Array2<f64> {
        self.tape.nodes.borrow()[self.idx].grad.clone()
    }

    /// Value of a 1x1 node.
    pub fn scalar_value(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "scalar_value on a {:?} node", v.dim());
        v[[0, 0]]
    }

    fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.idx].requires_grad
    }

    fn unary(self, value: Array2<f64>, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, value: Array2<f64>, op: Op) -> Var<'t> {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands live on different tapes"
        );
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        assert_eq!(
            a.ncols(),
            b.nrows(),
            "matmul: inner dimensions differ, {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        );
        let v = a.dot(&b);
        self.binary(other, v, Op::Matmul(self.idx, other.idx))
    }

    pub fn transpose(self) -> Var<'t> {
        let v = self.value().t().to_owned();
        self.unary(v, Op::Transpose(self.idx))
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", a.dim(), b.dim());
        self.binary(other, &a + &b, Op::Add(self.idx, other.idx))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", a.dim(), b.dim());
        self.binary(other, &a - &b, Op::Sub(self.idx, other.idx))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", a.dim(), b.dim());
        self.binary(other, &a * &b, Op::Mul(self.idx, other.idx))
    }

    /// Elementwise quotient.
    pub fn div(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("div", a.dim(), b.dim());
        self.binary(other, &a / &b, Op::Div(self.idx, other.idx))
    }

    /// Elementwise minimum. Equivalent to `a - relu(a - b)`; on ties the
    /// gradient flows to the first argument, matching that rewrite.
    pub fn emin(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("min", a.dim(), b.dim());
        let mut v = a.clone();
        v.zip_mut_with(&b, |x, &y| {
            if y < *x {
                *x = y;
            }
        });
        self.binary(other, v, Op::Min(self.idx, other.idx))
    }

    pub fn scalar_mul(self, c: f64) -> Var<'t> {
        let v = self.value() * c;
        self.unary(v, Op::ScalarMul(self.idx, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value() + c;
        self.unary(v, Op::AddScalar(self.idx))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value().mapv(|x| if x > 0.0 { x } else { 0.0 });
        self.unary(v, Op::Relu(self.idx))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.value().mapv(sigmoid);
        self.unary(v, Op::Sigmoid(self.idx))
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().mapv(f64::exp);
        self.unary(v, Op::Exp(self.idx))
    }

    pub fn sqrt(self) -> Var<'t> {
        let v = self.value().mapv(f64::sqrt);
        self.unary(v, Op::Sqrt(self.idx))
    }

    /// `tanh` composed from the registered ops: `2 sigmoid(2x) - 1`.
    pub fn tanh(self) -> Var<'t> {
        self.scalar_mul(2.0).sigmoid().scalar_mul(2.0).add_scalar(-1.0)
    }

    /// Divide every row by its sum.
    pub fn row_normalize(self) -> Var<'t> {
        let a = self.value();
        let sums = a.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(&a / &sums, Op::RowNormalize(self.idx))
    }

    /// Divide every column by its sum.
    pub fn col_normalize(self) -> Var<'t> {
        let a = self.value();
        let sums = a.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.unary(&a / &sums, Op::ColNormalize(self.idx))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum_all(self) -> Var<'t> {
        let v = Array2::from_elem((1, 1), self.value().sum());
        self.unary(v, Op::SumAll(self.idx))
    }

    /// Per-row sum, shape (rows, 1).
    pub fn row_sum(self) -> Var<'t> {
        let v = self.value().sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(v, Op::RowSum(self.idx))
    }

    /// Per-row maximum over columns, shape (rows, 1). Ties break to the
    /// lowest column index.
    pub fn row_max(self) -> Var<'t> {
        let a = self.value();
        let v = Array2::from_shape_fn((a.nrows(), 1), |(i, _)| {
            a.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
        });
        self.unary(v, Op::RowMax(self.idx))
    }

    /// Per-column L1 norm, shape (1, cols).
    pub fn col_l1_norm(self) -> Var<'t> {
        let a = self.value();
        let v = Array2::from_shape_fn((1, a.ncols()), |(_, j)| {
            a.column(j).iter().map(|x| x.abs()).sum()
        });
        self.unary(v, Op::ColL1Norm(self.idx))
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn concat_cols(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(
            a.nrows(),
            b.nrows(),
            "concat_cols: row counts differ, {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        );
        let v = concatenate(Axis(1), &[a.view(), b.view()]).unwrap();
        self.binary(other, v, Op::ConcatCols(self.idx, other.idx))
    }

    /// Row range `[start, end)`.
    pub fn slice_rows(self, start: usize, end: usize) -> Var<'t> {
        let a = self.value();
        assert!(
            start <= end && end <= a.nrows(),
            "slice_rows: [{start}, {end}) out of {} rows",
            a.nrows()
        );
        let v = a.slice(s![start..end, ..]).to_owned();
        self.unary(v, Op::SliceRows(self.idx, start, end))
    }

    /// Column range `[start, end)`.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        let a = self.value();
        assert!(
            start <= end && end <= a.ncols(),
            "slice_cols: [{start}, {end}) out of {} cols",
            a.ncols()
        );
        let v = a.slice(s![.., start..end]).to_owned();
        self.unary(v, Op::SliceCols(self.idx, start, end))
    }

    /// Broadcast a 1x1 node to (rows, cols) through constant one-vectors.
    pub fn broadcast_scalar(self, rows: usize, cols: usize) -> Var<'t> {
        assert_eq!(self.dim(), (1, 1), "broadcast_scalar on non-scalar node");
        let ones_col = self.tape.constant(Array2::ones((rows, 1)));
        let ones_row = self.tape.constant(Array2::ones((1, cols)));
        ones_col.matmul(self).matmul(ones_row)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Reverse sweep from a scalar root. Adds this pass's gradients into each
/// node's persistent gradient, so repeated calls accumulate.
pub fn backward(root: Var<'_>) {
    assert_eq!(
        root.dim(),
        (1, 1),
        "backward requires a scalar (1x1) root, got {:?}",
        root.dim()
    );
    let mut nodes = root.tape.nodes.borrow_mut();
    let n = root.idx + 1;
    let mut scratch: Vec<Option<Array2<f64>>> = vec![None; n];
    scratch[root.idx] = Some(Array2::ones((1, 1)));
    for i in (0..n).rev() {
        let Some(g) = scratch[i].take() else { continue };
        if !nodes[i].requires_grad {
            continue;
        }
        nodes[i].grad += &g;
        let op = nodes[i].op.clone();
        let mut send = |j: usize, contrib: Array2<f64>, nodes: &Vec<Node>| {
            if !nodes[j].requires_grad {
                return;
            }
            match &mut scratch[j] {
                Some(acc) => *acc += &contrib,
                slot => *slot = Some(contrib),
            }
        };
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let ga = g.dot(&nodes[b].value.t());
                let gb = nodes[a].value.t().dot(&g);
                send(a, ga, &nodes);
                send(b, gb, &nodes);
            }
            Op::Transpose(a) => send(a, g.t().to_owned(), &nodes),
            Op::Add(a, b) => {
                send(a, g.clone(), &nodes);
                send(b, g, &nodes);
            }
            Op::Sub(a, b) => {
                send(a, g.clone(), &nodes);
                send(b, -g, &nodes);
            }
            Op::Mul(a, b) => {
                let ga = &g * &nodes[b].value;
                let gb = &g * &nodes[a].value;
                send(a, ga, &nodes);
                send(b, gb, &nodes);
            }
            Op::Div(a, b) => {
                let bv = &nodes[b].value;
                let ga = &g / bv;
                let gb = -&g * &nodes[a].value / (bv * bv);
                send(a, ga, &nodes);
                send(b, gb, &nodes);
            }
            Op::Min(a, b) => {
                // ties send gradient to the first argument
                let av = &nodes[a].value;
                let bv = &nodes[b].value;
                let mask_a = Array2::from_shape_fn(av.dim(), |ix| {
                    if av[ix] <= bv[ix] {
                        1.0
                    } else {
                        0.0
                    }
                });
                let ga = &g * &mask_a;
                let gb = &g * &(1.0 - &mask_a);
                send(a, ga, &nodes);
                send(b, gb, &nodes);
            }
            Op::ScalarMul(a, c) => send(a, &g * c, &nodes),
            Op::AddScalar(a) => send(a, g, &nodes),
            Op::Relu(a) => {
                let mask = nodes[a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                send(a, &g * &mask, &nodes);
            }
            Op::Sigmoid(a) => {
                let y = &nodes[i].value;
                send(a, &g * &(y * &(1.0 - y)), &nodes);
            }
            Op::Exp(a) => {
                let y = &nodes[i].value;
                send(a, &g * y, &nodes);
            }
            Op::Sqrt(a) => {
                let y = &nodes[i].value;
                send(a, &g * &(0.5 / y), &nodes);
            }
            Op::RowNormalize(a) => {
                let av = &nodes[a].value;
                let y = &nodes[i].value;
                let sums = av.sum_axis(Axis(1)).insert_axis(Axis(1));
                let t = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                send(a, (&g - &t) / &sums, &nodes);
            }
            Op::ColNormalize(a) => {
                let av = &nodes[a].value;
                let y = &nodes[i].value;
                let sums = av.sum_axis(Axis(0)).insert_axis(Axis(0));
                let t = (&g * y).sum_axis(Axis(0)).insert_axis(Axis(0));
                send(a, (&g - &t) / &sums, &nodes);
            }
            Op::SumAll(a) => {
                let ga = Array2::from_elem(nodes[a].value.dim(), g[[0, 0]]);
                send(a, ga, &nodes);
            }
            Op::RowSum(a) => {
                let dim = nodes[a].value.dim();
                let ga = Array2::from_shape_fn(dim, |(r, _)| g[[r, 0]]);
                send(a, ga, &nodes);
            }
            Op::RowMax(a) => {
                let av = &nodes[a].value;
                let mut ga = Array2::zeros(av.dim());
                for r in 0..av.nrows() {
                    let row = av.row(r);
                    let mut arg = 0;
                    for (j, &x) in row.iter().enumerate() {
                        if x > row[arg] {
                            arg = j;
                        }
                    }
                    ga[[r, arg]] = g[[r, 0]];
                }
                send(a, ga, &nodes);
            }
            Op::ColL1Norm(a) => {
                let av = &nodes[a].value;
                let ga = Array2::from_shape_fn(av.dim(), |(r, c)| {
                    g[[0, c]] * av[[r, c]].signum() * if av[[r, c]] == 0.0 { 0.0 } else { 1.0 }
                });
                send(a, ga, &nodes);
            }
            Op::ConcatCols(a, b) => {
                let ca = nodes[a].value.ncols();
                let ga = g.slice(s![.., ..ca]).to_owned();
                let gb = g.slice(s![.., ca..]).to_owned();
                send(a, ga, &nodes);
                send(b, gb, &nodes);
            }
            Op::SliceRows(a, start, _end) => {
                let mut ga = Array2::zeros(nodes[a].value.dim());
                ga.slice_mut(s![start..start + g.nrows(), ..]).assign(&g);
                send(a, ga, &nodes);
            }
            Op::SliceCols(a, start, _end) => {
                let mut ga = Array2::zeros(nodes[a].value.dim());
                ga.slice_mut(s![.., start..start + g.ncols()]).assign(&g);
                send(a, ga, &nodes);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffengine::gradcheck::grad_check;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| {
            // Box-Muller would do; a sum of uniforms is plenty for tests
            (0..6).map(|_| rng.random::<f64>()).sum::<f64>() - 3.0
        })
    }

    #[test]
    fn min_forward_and_grads() {
        let tape = Tape::new();
        let a = tape.leaf(array![[3.0]]);
        let b = tape.leaf(array![[5.0]]);
        let m = a.emin(b);
        assert_eq!(m.scalar_value(), 3.0);
        backward(m.sum_all());
        assert_eq!(a.grad()[[0, 0]], 1.0);
        assert_eq!(b.grad()[[0, 0]], 0.0);
    }

    #[test]
    fn min_tie_gradient_goes_to_first() {
        let tape = Tape::new();
        let a = tape.leaf(array![[2.0]]);
        let b = tape.leaf(array![[2.0]]);
        backward(a.emin(b).sum_all());
        assert_eq!(a.grad()[[0, 0]], 1.0);
        assert_eq!(b.grad()[[0, 0]], 0.0);
    }

    #[test]
    fn relu_gradient_is_indicator() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.5, -2.0], [0.0, 3.0]]);
        backward(x.relu().sum_all());
        assert_eq!(x.grad(), array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        backward(x.sum_all());
        assert_eq!(x.grad(), Array2::<f64>::ones((2, 2)));
    }

    #[test]
    fn backward_twice_doubles_grads() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0]]);
        let y = x.sum_all();
        backward(y);
        backward(y);
        assert_eq!(x.grad(), array![[2.0, 2.0]]);
    }

    #[test]
    fn non_scalar_root_panics() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0]]);
        let err = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| backward(x)));
        assert!(err.is_err());
        let _ = x;
    }

    #[test]
    fn matmul_shape_mismatch_names_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Array2::zeros((2, 3)));
        let b = tape.leaf(Array2::zeros((2, 3)));
        let err = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            a.matmul(b);
        }))
        .expect_err("should panic");
        let msg = err.downcast_ref::<String>().cloned().unwrap_or_default();
        assert!(msg.contains("2x3"), "panic message was: {msg}");
    }

    #[test]
    fn matmul_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = randn(&mut rng, 3, 4);
        let b = randn(&mut rng, 4, 2);
        let err = grad_check(&[a, b], |_t, vars| vars[0].matmul(vars[1]).sum_all(), 1e-5);
        assert!(err < 1e-8, "matmul grad error {err}");
    }

    #[test]
    fn chained_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn(&mut rng, 4, 4);
        let err = grad_check(
            &[x],
            |_t, vars| {
                let x = vars[0];
                x.matmul(x.transpose()).relu().sum_all()
            },
            1e-5,
        );
        assert!(err < 1e-6, "chain grad error {err}");
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = randn(&mut rng, 3, 5);
        let b = randn(&mut rng, 3, 5);
        let checks: Vec<(&str, f64)> = vec![
            (
                "add/sub/mul",
                grad_check(
                    &[a.clone(), b.clone()],
                    |_t, v| v[0].add(v[1]).mul(v[0].sub(v[1])).sum_all(),
                    1e-5,
                ),
            ),
            (
                "div",
                grad_check(
                    &[a.clone(), b.mapv(|x| x + 8.0)],
                    |_t, v| v[0].div(v[1]).sum_all(),
                    1e-5,
                ),
            ),
            (
                "min",
                grad_check(
                    &[a.clone(), b.clone()],
                    |_t, v| v[0].emin(v[1]).sum_all(),
                    1e-5,
                ),
            ),
            (
                "sigmoid/exp",
                grad_check(
                    &[a.clone()],
                    |_t, v| v[0].sigmoid().add(v[0].scalar_mul(0.1).exp()).sum_all(),
                    1e-5,
                ),
            ),
            (
                "sqrt",
                grad_check(
                    &[a.mapv(|x| x.abs() + 1.0)],
                    |_t, v| v[0].sqrt().sum_all(),
                    1e-5,
                ),
            ),
            (
                "tanh",
                grad_check(&[a.clone()], |_t, v| v[0].tanh().sum_all(), 1e-5),
            ),
            (
                "row_normalize",
                grad_check(
                    &[a.mapv(|x| x.abs() + 0.5)],
                    |_t, v| {
                        let w = v[0].row_normalize();
                        w.mul(w).sum_all()
                    },
                    1e-6,
                ),
            ),
            (
                "col_normalize",
                grad_check(
                    &[a.mapv(|x| x.abs() + 0.5)],
                    |_t, v| {
                        let w = v[0].col_normalize();
                        w.mul(w).sum_all()
                    },
                    1e-6,
                ),
            ),
            (
                "row_sum/row_max",
                grad_check(
                    &[a.clone()],
                    |_t, v| v[0].row_sum().mul(v[0].row_max()).sum_all(),
                    1e-5,
                ),
            ),
            (
                "col_l1_norm",
                grad_check(
                    &[a.clone()],
                    |_t, v| {
                        let n = v[0].col_l1_norm();
                        n.mul(n).sum_all()
                    },
                    1e-5,
                ),
            ),
            (
                "concat/slice",
                grad_check(
                    &[a.clone(), b.clone()],
                    |_t, v| {
                        let cat = v[0].concat_cols(v[1]);
                        cat.slice_cols(2, 7).slice_rows(1, 3).sum_all()
                    },
                    1e-5,
                ),
            ),
            (
                "transpose/scalar",
                grad_check(
                    &[a.clone()],
                    |_t, v| v[0].transpose().scalar_mul(2.5).add_scalar(1.0).sum_all(),
                    1e-5,
                ),
            ),
        ];
        for (name, err) in checks {
            assert!(err < 1e-4, "{name}: grad error {err}");
        }
    }

    #[test]
    fn broadcast_scalar_spreads_gradient() {
        let tape = Tape::new();
        let s = tape.leaf(array![[2.0]]);
        let b = s.broadcast_scalar(3, 4);
        assert_eq!(b.value(), Array2::from_elem((3, 4), 2.0));
        backward(b.sum_all());
        assert_eq!(s.grad()[[0, 0]], 12.0);
    }
}
