//! Named trainable parameter groups, the Adam optimizer, and checkpoint I/O.
//!
//! Groups follow the scoring heads: `theta` (encoder), `phi` (alignment),
//! `alpha` (edge scorer), `beta` (noise filter), `w` (layer-mixing and combo
//! weights). Parameters in group `w` are projected to be non-negative after
//! every optimizer step.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffengine::tape::{Tape, Var};
use crate::error::{CoreError, Result};

/// Group whose parameters are clamped at zero after each step.
pub const NONNEG_GROUP: &str = "w";

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    m: Array2<f64>,
    v: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub name: String,
    pub params: Vec<Param>,
}

/// Ordered collection of parameter groups plus optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    groups: Vec<ParamGroup>,
    step: u64,
    pub seed: u64,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            groups: Vec::new(),
            step: 0,
            seed,
        }
    }

    pub fn add(&mut self, group: &str, name: &str, value: Array2<f64>) {
        let grad = Array2::zeros(value.dim());
        let m = Array2::zeros(value.dim());
        let v = Array2::zeros(value.dim());
        let param = Param {
            name: name.to_string(),
            value,
            grad,
            m,
            v,
        };
        match self.groups.iter_mut().find(|g| g.name == group) {
            Some(g) => {
                assert!(
                    g.params.iter().all(|p| p.name != param.name),
                    "duplicate parameter {group}/{name}"
                );
                g.params.push(param);
            }
            None => self.groups.push(ParamGroup {
                name: group.to_string(),
                params: vec![param],
            }),
        }
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn get(&self, group: &str, name: &str) -> &Param {
        self.groups
            .iter()
            .find(|g| g.name == group)
            .and_then(|g| g.params.iter().find(|p| p.name == name))
            .unwrap_or_else(|| panic!("unknown parameter {group}/{name}"))
    }

    pub fn get_mut(&mut self, group: &str, name: &str) -> &mut Param {
        self.groups
            .iter_mut()
            .find(|g| g.name == group)
            .and_then(|g| g.params.iter_mut().find(|p| p.name == name))
            .unwrap_or_else(|| panic!("unknown parameter {group}/{name}"))
    }

    pub fn num_entries(&self) -> usize {
        self.groups
            .iter()
            .flat_map(|g| g.params.iter())
            .map(|p| p.value.len())
            .sum()
    }

    /// Bind every parameter as a differentiable leaf on `tape`, preserving
    /// group/param order.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Binding<'t> {
        let vars = self
            .groups
            .iter()
            .map(|g| g.params.iter().map(|p| tape.leaf(p.value.clone())).collect())
            .collect();
        Binding { vars }
    }

    /// Add the leaf gradients accumulated on a tape into the store, scaled.
    pub fn absorb_grads(&mut self, binding: &Binding<'_>, scale: f64) {
        for (gi, group) in self.groups.iter_mut().enumerate() {
            for (pi, param) in group.params.iter_mut().enumerate() {
                param.grad += &(binding.vars[gi][pi].grad() * scale);
            }
        }
    }

    /// Add detached gradients (from [`Binding::collect_grads`]) into the
    /// store, scaled. Shapes must match the store layout.
    pub fn add_grads(&mut self, grads: &[Vec<Array2<f64>>], scale: f64) {
        assert_eq!(grads.len(), self.groups.len(), "gradient group count mismatch");
        for (group, ggrads) in self.groups.iter_mut().zip(grads) {
            assert_eq!(group.params.len(), ggrads.len(), "gradient param count mismatch");
            for (param, g) in group.params.iter_mut().zip(ggrads) {
                param.grad += &(g * scale);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.groups {
            for p in &mut g.params {
                p.grad.fill(0.0);
            }
        }
    }

    /// One Adam step with classic L2 weight decay (decay added to the
    /// gradient). Group `w` is re-projected to be non-negative.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for group in &mut self.groups {
            let nonneg = group.name == NONNEG_GROUP;
            for p in &mut group.params {
                let g = &p.grad + &(&p.value * cfg.weight_decay);
                p.m = &p.m * cfg.beta1 + &(&g * (1.0 - cfg.beta1));
                p.v = &p.v * cfg.beta2 + &(&g * &g * (1.0 - cfg.beta2));
                let m_hat = &p.m / bc1;
                let v_hat = &p.v / bc2;
                let update = m_hat / (v_hat.mapv(f64::sqrt) + cfg.eps);
                p.value -= &(update * cfg.lr);
                if nonneg {
                    p.value.mapv_inplace(|x| x.max(0.0));
                }
            }
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Leaf handles for one tape, parallel to the store's group/param layout.
pub struct Binding<'t> {
    vars: Vec<Vec<Var<'t>>>,
}

impl<'t> Binding<'t> {
    /// Detach the accumulated leaf gradients, in store layout order.
    pub fn collect_grads(&self) -> Vec<Vec<Array2<f64>>> {
        self.vars
            .iter()
            .map(|group| group.iter().map(|v| v.grad()).collect())
            .collect()
    }

    pub fn var(&self, store: &ParameterStore, group: &str, name: &str) -> Var<'t> {
        for (gi, g) in store.groups.iter().enumerate() {
            if g.name == group {
                for (pi, p) in g.params.iter().enumerate() {
                    if p.name == name {
                        return self.vars[gi][pi];
                    }
                }
            }
        }
        panic!("unknown parameter {group}/{name}");
    }
}

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

// --- checkpoint serialization -------------------------------------------

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointParam {
    name: String,
    rows: usize,
    cols: usize,
    /// Row-major values; serde_json round-trips every finite f64 exactly.
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointGroup {
    name: String,
    params: Vec<CheckpointParam>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    seed: u64,
    step: u64,
    /// Free-form model tag recorded by the trainer (model kind, target...).
    #[serde(default)]
    meta: std::collections::BTreeMap<String, String>,
    groups: Vec<CheckpointGroup>,
}

impl ParameterStore {
    pub fn to_checkpoint_string(&self, meta: &std::collections::BTreeMap<String, String>) -> Result<String> {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            step: self.step,
            meta: meta.clone(),
            groups: self
                .groups
                .iter()
                .map(|g| CheckpointGroup {
                    name: g.name.clone(),
                    params: g
                        .params
                        .iter()
                        .map(|p| CheckpointParam {
                            name: p.name.clone(),
                            rows: p.value.nrows(),
                            cols: p.value.ncols(),
                            data: p.value.iter().copied().collect(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&file)
            .map_err(|e| CoreError::Checkpoint(format!("serialize failed: {e}")))
    }

    pub fn from_checkpoint_string(text: &str) -> Result<(Self, std::collections::BTreeMap<String, String>)> {
        let file: CheckpointFile = serde_json::from_str(text)
            .map_err(|e| CoreError::Checkpoint(format!("parse failed: {e}")))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                file.version
            )));
        }
        let mut store = ParameterStore::new(file.seed);
        store.step = file.step;
        for g in file.groups {
            for p in g.params {
                if p.data.len() != p.rows * p.cols {
                    return Err(CoreError::Checkpoint(format!(
                        "parameter {}/{} has {} values for shape {}x{}",
                        g.name,
                        p.name,
                        p.data.len(),
                        p.rows,
                        p.cols
                    )));
                }
                let value = Array2::from_shape_vec((p.rows, p.cols), p.data)
                    .expect("length checked above");
                store.add(&g.name, &p.name, value);
            }
        }
        Ok((store, file.meta))
    }

    pub fn save_checkpoint(
        &self,
        path: impl AsRef<Path>,
        meta: &std::collections::BTreeMap<String, String>,
    ) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_string(meta)?)
            .map_err(|e| CoreError::io(path.display().to_string(), e))
    }

    pub fn load_checkpoint(
        path: impl AsRef<Path>,
    ) -> Result<(Self, std::collections::BTreeMap<String, String>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        Self::from_checkpoint_string(&text)
    }
}

// --- initialization helpers ----------------------------------------------

/// Uniform `+-1/sqrt(fan_in)` weight initialization.
pub fn init_linear(rng: &mut impl rand::Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound))
}

pub fn zeros(rows: usize, cols: usize) -> Array2<f64> {
    Array2::zeros((rows, cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_grad_zero_decay_leaves_params_unchanged() {
        let mut store = ParameterStore::new(0);
        store.add("theta", "wt", array![[1.5, -2.0]]);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        store.adam_step(&cfg);
        assert_eq!(store.get("theta", "wt").value, array![[1.5, -2.0]]);
    }

    #[test]
    fn first_adam_step_moves_by_about_lr() {
        // single scalar parameter, constant gradient 1, one bias-corrected step
        let mut store = ParameterStore::new(0);
        store.add("theta", "x", array![[1.0]]);
        store.get_mut("theta", "x").grad[[0, 0]] = 1.0;
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        store.adam_step(&cfg);
        // hand-derived: m_hat = 1, v_hat = 1 => step = lr / (1 + eps)
        let expected = 1.0 - cfg.lr / (1.0 + cfg.eps);
        let got = store.get("theta", "x").value[[0, 0]];
        assert!((got - expected).abs() < 1e-15, "got {got}, want {expected}");
        assert!((got - (1.0 - cfg.lr)).abs() < 1e-6);
    }

    #[test]
    fn w_group_is_projected_to_nonnegative() {
        let mut store = ParameterStore::new(0);
        store.add("w", "layer_weights", array![[0.0004, 0.5]]);
        store.get_mut("w", "layer_weights").grad[[0, 0]] = 1.0;
        let cfg = AdamConfig::default();
        store.adam_step(&cfg); // step ~ lr = 1e-3 > 0.0004 drives it negative
        let v = store.get("w", "layer_weights").value[[0, 0]];
        assert_eq!(v, 0.0, "clamped at zero, got {v}");
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut store = ParameterStore::new(99);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        store.add("theta", "a", init_linear(&mut rng, 7, 3));
        store.add("phi", "b", init_linear(&mut rng, 4, 4));
        store.add("w", "layer_weights", array![[0.2, 0.2, 0.2, 0.2, 0.2]]);
        let meta = std::collections::BTreeMap::from([("model".to_string(), "lmces".to_string())]);
        let text = store.to_checkpoint_string(&meta).unwrap();
        let (loaded, meta2) = ParameterStore::from_checkpoint_string(&text).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(loaded.seed, 99);
        for (g1, g2) in store.groups().iter().zip(loaded.groups()) {
            assert_eq!(g1.name, g2.name);
            for (p1, p2) in g1.params.iter().zip(&g2.params) {
                assert_eq!(p1.name, p2.name);
                assert_eq!(p1.value.dim(), p2.value.dim());
                for (a, b) in p1.value.iter().zip(p2.value.iter()) {
                    assert_eq!(a.to_bits(), b.to_bits(), "bit-exact round trip");
                }
            }
        }
    }

    #[test]
    fn absorb_grads_reads_tape_leaves() {
        let mut store = ParameterStore::new(0);
        store.add("theta", "x", array![[1.0, 2.0]]);
        let tape = Tape::new();
        let binding = store.bind(&tape);
        let x = binding.var(&store, "theta", "x");
        crate::diffengine::tape::backward(x.sum_all());
        store.absorb_grads(&binding, 0.5);
        assert_eq!(store.get("theta", "x").grad, array![[0.5, 0.5]]);
    }
}
