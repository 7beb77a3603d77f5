//! Central-difference gradient verification for anything built on the tape.

use ndarray::Array2;

use crate::diffengine::tape::{backward, Tape, Var};

/// Compare analytic gradients of `f` against central finite differences at
/// every entry of every input, in double precision. Returns the maximum
/// relative error `|a - n| / max(|a| + |n|, 1e-6)`.
///
/// `f` must build a scalar (1x1) output from the given leaves (the tape is
/// reachable via [`Var::tape`] when constants are needed) and must be
/// deterministic: it is re-evaluated on perturbed copies of the inputs.
pub fn grad_check<F>(inputs: &[Array2<f64>], f: F, eps: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    // analytic gradients
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = f(&tape, &vars);
    assert_eq!(out.dim(), (1, 1), "grad_check output must be scalar");
    backward(out);
    let analytic: Vec<Array2<f64>> = vars.iter().map(|v| v.grad()).collect();

    let eval = |xs: &[Array2<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|a| tape.leaf(a.clone())).collect();
        f(&tape, &vars).scalar_value()
    };

    let mut max_rel = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for r in 0..input.nrows() {
            for c in 0..input.ncols() {
                let mut plus = inputs.to_vec();
                plus[i][[r, c]] += eps;
                let mut minus = inputs.to_vec();
                minus[i][[r, c]] -= eps;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let a = analytic[i][[r, c]];
                let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
    }
    max_rel
}
