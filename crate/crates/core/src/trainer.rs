//! Supervised training: query splits, minibatched MSE regression on exact
//! labels, early stopping on validation MSE, and temperature selection for
//! the gossip head.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::diffengine::params::{AdamConfig, ParameterStore};
use crate::diffengine::tape::{backward, Tape};
use crate::encoder::GraphOps;
use crate::error::{CoreError, Result};
use crate::graph::{Graph, LabelRecord, LabelTarget};
use crate::scorers::{build_ops, build_score, common_padding, score_all, ModelConfig};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Early-stopping patience: epochs without validation improvement.
    pub patience: usize,
    pub max_epochs: usize,
    /// Train / validation / test fractions over queries.
    pub split: (f64, f64, f64),
    pub seed: u64,
    pub target: LabelTarget,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            lr: 1e-3,
            weight_decay: 5e-4,
            patience: 50,
            max_epochs: 500,
            split: (0.6, 0.2, 0.2),
            seed: 0,
            target: LabelTarget::Mces,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split;
        if (a + b + c - 1.0).abs() > 1e-9 || a < 0.0 || b < 0.0 || c < 0.0 {
            return Err(CoreError::Config(format!(
                "split fractions ({a}, {b}, {c}) must be non-negative and sum to 1"
            )));
        }
        if self.patience < 1 {
            return Err(CoreError::Config("patience must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(CoreError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Deterministic query split: shuffle indices by seed, take
/// `floor(frac * n)` for validation and test, remainder to train.
pub fn split_queries(
    num_queries: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut idx: Vec<usize> = (0..num_queries).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = (fractions.1 * num_queries as f64).floor() as usize;
    let n_test = (fractions.2 * num_queries as f64).floor() as usize;
    let n_train = num_queries - n_val - n_test;
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    (train, val, test)
}

/// Label lookup keyed by (query index, corpus index).
#[derive(Debug)]
pub struct LabelGrid {
    values: Vec<f64>,
    num_corpus: usize,
}

impl LabelGrid {
    /// Index labels against the query/corpus orderings. Every pair must be
    /// covered.
    pub fn build(
        queries: &[Graph],
        corpus: &[Graph],
        labels: &[LabelRecord],
        target: LabelTarget,
    ) -> Result<Self> {
        let q_index: HashMap<&str, usize> = queries
            .iter()
            .enumerate()
            .map(|(i, g)| (g.id(), i))
            .collect();
        let c_index: HashMap<&str, usize> = corpus
            .iter()
            .enumerate()
            .map(|(i, g)| (g.id(), i))
            .collect();
        let mut values = vec![f64::NAN; queries.len() * corpus.len()];
        for rec in labels {
            let (Some(&qi), Some(&ci)) = (
                q_index.get(rec.query_id.as_str()),
                c_index.get(rec.corpus_id.as_str()),
            ) else {
                continue; // labels may cover more graphs than this run uses
            };
            values[qi * corpus.len() + ci] = rec.target_value(target)?;
        }
        if let Some(pos) = values.iter().position(|v| v.is_nan()) {
            let (qi, ci) = (pos / corpus.len(), pos % corpus.len());
            return Err(CoreError::Validation(format!(
                "label missing for pair ({}, {})",
                queries[qi].id(),
                corpus[ci].id()
            )));
        }
        Ok(LabelGrid {
            values,
            num_corpus: corpus.len(),
        })
    }

    pub fn get(&self, qi: usize, ci: usize) -> f64 {
        self.values[qi * self.num_corpus + ci]
    }
}

/// Early-stopping bookkeeping: strict improvement resets the counter.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    pub best_value: f64,
    pub best_epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_value: f64::INFINITY,
            best_epoch: 0,
        }
    }

    /// Returns (improved, stop_now).
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        let improved = value < self.best_value;
        if improved {
            self.best_value = value;
            self.best_epoch = epoch;
        }
        let stop = epoch - self.best_epoch >= self.patience;
        (improved, stop)
    }
}

/// Result of one training run.
pub struct TrainOutcome {
    /// Parameters at the epoch with minimum validation MSE.
    pub best: ParameterStore,
    /// `(epoch, train_mse, val_mse)` per epoch actually run.
    pub history: Vec<(usize, f64, f64)>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

fn epoch_seed(base: u64, epoch: usize) -> u64 {
    base ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15)
}

/// Mean squared error of a head over `q_idx x corpus`, forward only.
pub fn evaluate_mse(
    store: &ParameterStore,
    cfg: &ModelConfig,
    q_ops: &[GraphOps],
    q_idx: &[usize],
    c_ops: &[GraphOps],
    grid: &LabelGrid,
) -> f64 {
    if q_idx.is_empty() || c_ops.is_empty() {
        return 0.0;
    }
    let selected: Vec<GraphOps> = q_idx.iter().map(|&qi| q_ops[qi].clone()).collect();
    let scores = score_all(store, cfg, &selected, c_ops);
    let mut total = 0.0;
    let mut count = 0usize;
    for (row, &qi) in scores.iter().zip(q_idx) {
        for (ci, s) in row.iter().enumerate() {
            let y = grid.get(qi, ci);
            total += (s - y) * (s - y);
            count += 1;
        }
    }
    total / count as f64
}

/// Train a scoring head by minibatch MSE regression over all
/// (train query, corpus) pairs, shuffled per epoch. Stops when validation
/// MSE fails to improve for `patience` epochs or at `max_epochs`; returns
/// the parameters of the best validation epoch.
pub fn train(
    mut store: ParameterStore,
    model_cfg: &ModelConfig,
    queries: &[Graph],
    corpus: &[Graph],
    labels: &[LabelRecord],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    cfg.validate()?;
    model_cfg.validate()?;
    let grid = LabelGrid::build(queries, corpus, labels, cfg.target)?;
    let padding = common_padding(&[queries, corpus]);
    let q_ops = build_ops(queries, padding, &model_cfg.encoder);
    let c_ops = build_ops(corpus, padding, &model_cfg.encoder);
    let adam = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };

    let mut pairs: Vec<(usize, usize)> = train_idx
        .iter()
        .flat_map(|&qi| (0..corpus.len()).map(move |ci| (qi, ci)))
        .collect();
    if pairs.is_empty() {
        return Err(CoreError::Config("no training pairs".into()));
    }

    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = store.clone();
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch));
        pairs.shuffle(&mut rng);
        let mut epoch_sq_sum = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            // per-pair losses and gradients in parallel, reduced in order
            let results: Vec<(f64, Vec<Vec<ndarray::Array2<f64>>>)> = batch
                .par_iter()
                .map(|&(qi, ci)| {
                    let tape = Tape::new();
                    let binding = store.bind(&tape);
                    let s = build_score(&tape, &store, &binding, model_cfg, &q_ops[qi], &c_ops[ci]);
                    let diff = s.add_scalar(-grid.get(qi, ci));
                    let loss = diff.mul(diff);
                    backward(loss);
                    (loss.scalar_value(), binding.collect_grads())
                })
                .collect();
            let bad: Vec<String> = batch
                .iter()
                .zip(&results)
                .filter(|(_, (l, _))| !l.is_finite())
                .map(|(&(qi, ci), _)| format!("({}, {})", queries[qi].id(), corpus[ci].id()))
                .collect();
            if !bad.is_empty() {
                return Err(CoreError::Diverged(format!(
                    "non-finite loss in epoch {epoch} on pairs {}",
                    bad.join(", ")
                )));
            }
            store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for (loss, grads) in &results {
                epoch_sq_sum += loss;
                store.add_grads(grads, scale);
            }
            store.adam_step(&adam);
        }
        let train_mse = epoch_sq_sum / pairs.len() as f64;
        let val_mse = evaluate_mse(&store, model_cfg, &q_ops, val_idx, &c_ops, &grid);
        history.push((epoch, train_mse, val_mse));
        let (improved, stop) = stopper.observe(epoch, val_mse);
        if improved {
            best = store.clone();
        }
        if stop {
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch: stopper.best_epoch,
        best_val_mse: stopper.best_value,
        history,
    })
}

/// Temperatures that worked best per source dataset tag.
pub fn default_lambda_for_tag(tag: &str) -> Option<f64> {
    match tag.to_ascii_uppercase().as_str() {
        "MM" => Some(0.7),
        "MR" => Some(0.1),
        "FM" => Some(0.8),
        "FR" => Some(1.4),
        "DD" => Some(10.0),
        "COX" => Some(1.1),
        "MSRC" => Some(1.0),
        _ => None,
    }
}

/// Train the gossip head once per temperature and keep the one with the
/// lowest validation MSE. Returns (best lambda, outcome, per-lambda MSE).
#[allow(clippy::too_many_arguments)]
pub fn tune_lambda(
    model_cfg: &ModelConfig,
    lambda_grid: &[f64],
    queries: &[Graph],
    corpus: &[Graph],
    labels: &[LabelRecord],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, TrainOutcome, Vec<(f64, f64)>)> {
    if lambda_grid.is_empty() {
        return Err(CoreError::Config("empty lambda grid".into()));
    }
    let mut best: Option<(f64, TrainOutcome)> = None;
    let mut curve = Vec::new();
    for &lambda in lambda_grid {
        let mut cfg_l = model_cfg.clone();
        cfg_l.lambda = lambda;
        let store = crate::scorers::init_model_params(&cfg_l, cfg.seed);
        let outcome = train(store, &cfg_l, queries, corpus, labels, train_idx, val_idx, cfg)?;
        curve.push((lambda, outcome.best_val_mse));
        let better = best
            .as_ref()
            .map(|(_, o)| outcome.best_val_mse < o.best_val_mse)
            .unwrap_or(true);
        if better {
            best = Some((lambda, outcome));
        }
    }
    let (lambda, outcome) = best.expect("non-empty grid");
    Ok((lambda, outcome, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::graph::shapes;
    use crate::oracle;
    use crate::scorers::{init_model_params, ModelKind};

    #[test]
    fn split_sizes_follow_floor_remainder_rule() {
        let (train, val, test) = split_queries(500, (0.6, 0.2, 0.2), 42);
        assert_eq!((train.len(), val.len(), test.len()), (300, 100, 100));
        // disjoint and covering
        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_split_goes_to_train() {
        let (train, val, test) = split_queries(10, (1.0, 0.0, 0.0), 1);
        assert_eq!(train.len(), 10);
        assert!(val.is_empty() && test.is_empty());
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        assert_eq!(split_queries(50, (0.6, 0.2, 0.2), 7), split_queries(50, (0.6, 0.2, 0.2), 7));
        assert_ne!(
            split_queries(50, (0.6, 0.2, 0.2), 7).0,
            split_queries(50, (0.6, 0.2, 0.2), 8).0
        );
    }

    #[test]
    fn early_stopper_contract() {
        // patience 1, strictly worsening: stop right after epoch 2
        let mut s = EarlyStopper::new(1);
        assert_eq!(s.observe(1, 1.0), (true, false));
        assert_eq!(s.observe(2, 2.0), (false, true));
        // equal values are not improvements
        let mut s = EarlyStopper::new(2);
        s.observe(1, 1.0);
        assert_eq!(s.observe(2, 1.0), (false, false));
        assert_eq!(s.observe(3, 1.0), (false, true));
    }

    fn tiny_dataset() -> (Vec<Graph>, Vec<Graph>, Vec<crate::graph::LabelRecord>) {
        let queries = vec![
            shapes::path("q0", 4),
            shapes::cycle("q1", 5),
            shapes::star("q2", 4),
            shapes::complete("q3", 4),
        ];
        let corpus = vec![
            shapes::path("c0", 5),
            shapes::cycle("c1", 4),
            shapes::star("c2", 3),
            shapes::complete("c3", 3),
            shapes::path("c4", 3),
            shapes::cycle("c5", 6),
        ];
        let labels = oracle::label_pairs(&queries, &corpus, None, oracle::DEFAULT_BUDGET).unwrap();
        (queries, corpus, labels)
    }

    fn tiny_model(kind: ModelKind) -> ModelConfig {
        let mut cfg = ModelConfig::new(kind);
        cfg.encoder = EncoderConfig {
            layers: 2,
            node_dim: 4,
            msg_dim: 6,
            feature_dim: 1,
        };
        cfg
    }

    #[test]
    fn perfect_predictor_stops_after_patience() {
        // all-zero parameters on the baseline head give a constant zero
        // score; zero labels mean zero loss and no movement
        let (queries, corpus, mut labels) = tiny_dataset();
        for l in &mut labels {
            l.y_mces = 0;
        }
        let model_cfg = tiny_model(ModelKind::Baseline);
        let mut store = init_model_params(&model_cfg, 0);
        for g in 0..store.groups().len() {
            let names: Vec<String> = store.groups()[g]
                .params
                .iter()
                .map(|p| p.name.clone())
                .collect();
            let group = store.groups()[g].name.clone();
            for n in names {
                store.get_mut(&group, &n).value.fill(0.0);
            }
        }
        let cfg = TrainConfig {
            patience: 3,
            max_epochs: 50,
            seed: 1,
            ..TrainConfig::default()
        };
        let (train_idx, val_idx, _) = split_queries(queries.len(), (0.5, 0.5, 0.0), 1);
        let out = train(
            store, &model_cfg, &queries, &corpus, &labels, &train_idx, &val_idx, &cfg,
        )
        .unwrap();
        assert_eq!(out.history.len(), cfg.patience + 1);
        assert!(out.history.iter().all(|(_, t, v)| *t == 0.0 && *v == 0.0));
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn lmces_loss_decreases_on_tiny_dataset() {
        let (queries, corpus, labels) = tiny_dataset();
        let model_cfg = tiny_model(ModelKind::Lmces);
        let store = init_model_params(&model_cfg, 3);
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 5,
            patience: 50,
            seed: 3,
            target: LabelTarget::Mces,
            ..TrainConfig::default()
        };
        let (train_idx, val_idx, _) = split_queries(queries.len(), (0.5, 0.5, 0.0), 3);
        let out = train(
            store, &model_cfg, &queries, &corpus, &labels, &train_idx, &val_idx, &cfg,
        )
        .unwrap();
        assert_eq!(out.history.len(), 5);
        assert!(
            out.history[4].1 < out.history[0].1,
            "train MSE did not decrease: {:?}",
            out.history
        );
        // best checkpoint's val MSE is the minimum of history
        let min_val = out
            .history
            .iter()
            .map(|h| h.2)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_mse, min_val);
    }

    #[test]
    fn training_histories_are_bitwise_reproducible() {
        let (queries, corpus, labels) = tiny_dataset();
        let model_cfg = tiny_model(ModelKind::Lmces);
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let (train_idx, val_idx, _) = split_queries(queries.len(), (0.5, 0.5, 0.0), 9);
        let run = || {
            let store = init_model_params(&model_cfg, 9);
            train(
                store, &model_cfg, &queries, &corpus, &labels, &train_idx, &val_idx, &cfg,
            )
            .unwrap()
            .history
        };
        let h1 = run();
        let h2 = run();
        assert_eq!(h1.len(), h2.len());
        for (a, b) in h1.iter().zip(&h2) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.to_bits(), b.1.to_bits(), "train MSE differs");
            assert_eq!(a.2.to_bits(), b.2.to_bits(), "val MSE differs");
        }
    }

    #[test]
    fn tune_lambda_picks_singleton_and_minimum() {
        let (queries, corpus, labels) = tiny_dataset();
        let model_cfg = tiny_model(ModelKind::Lmccs);
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 2,
            seed: 5,
            target: LabelTarget::Mccs,
            ..TrainConfig::default()
        };
        let (train_idx, val_idx, _) = split_queries(queries.len(), (0.5, 0.5, 0.0), 5);
        let (lambda, _out, curve) = tune_lambda(
            &model_cfg,
            &[0.7],
            &queries,
            &corpus,
            &labels,
            &train_idx,
            &val_idx,
            &cfg,
        )
        .unwrap();
        assert_eq!(lambda, 0.7);
        assert_eq!(curve.len(), 1);

        let (lambda, out, curve) = tune_lambda(
            &model_cfg,
            &[0.5, 2.0],
            &queries,
            &corpus,
            &labels,
            &train_idx,
            &val_idx,
            &cfg,
        )
        .unwrap();
        let min = curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_mse, min);
        assert!(curve.iter().any(|&(l, v)| l == lambda && v == min));
    }

    #[test]
    fn table_defaults_cover_known_tags() {
        assert_eq!(default_lambda_for_tag("MM"), Some(0.7));
        assert_eq!(default_lambda_for_tag("msrc"), Some(1.0));
        assert_eq!(default_lambda_for_tag("MR"), Some(0.1));
        assert_eq!(default_lambda_for_tag("FM"), Some(0.8));
        assert_eq!(default_lambda_for_tag("FR"), Some(1.4));
        assert_eq!(default_lambda_for_tag("DD"), Some(10.0));
        assert_eq!(default_lambda_for_tag("COX"), Some(1.1));
        assert_eq!(default_lambda_for_tag("unknown"), None);
    }

    #[test]
    fn missing_labels_are_reported() {
        let (queries, corpus, mut labels) = tiny_dataset();
        labels.pop();
        let err = LabelGrid::build(&queries, &corpus, &labels, LabelTarget::Mces).unwrap_err();
        assert!(matches!(err, CoreError::Validation(_)));
    }
}
