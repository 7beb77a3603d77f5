//! The data-facing subcommands: gen-data, label, train, eval, retrieve,
//! explain.

use std::collections::BTreeMap;
use std::path::Path;

use mcsr_core::align::{format_alignment, hungarian_round, matched_edges};
use mcsr_core::evalkit::{metric_report, rank_corpus, ranking_to_string, TauVariant};
use mcsr_core::graph::{
    build_minimal_pair, load_dataset, load_labels, save_dataset, save_labels, Graph, LabelRecord,
    LabelTarget,
};
use mcsr_core::oracle::label_pairs;
use mcsr_core::sampler::{generate_dataset, synthetic_sources, SamplerConfig};
use mcsr_core::scorers::{
    build_ops, common_padding, final_alignment, init_model_params, model_config_from_meta,
    model_config_to_meta, save_scores, score_all, ModelConfig, ModelKind, ScoreRecord,
};
use mcsr_core::trainer::{
    default_lambda_for_tag, split_queries, train as run_train, tune_lambda, TrainConfig,
};
use mcsr_core::{CoreError, Result};

use crate::support::{
    config_get, ensure_dir, load_config_file, parse_f64_list, parse_split, Phases, RunManifest,
};
use crate::{
    CliResult, EvalArgs, ExplainArgs, GenDataArgs, LabelArgs, RetrieveArgs, TrainArgs,
};

fn load_config_opt(path: &Option<std::path::PathBuf>) -> Result<BTreeMap<String, String>> {
    match path {
        Some(p) => load_config_file(p),
        None => Ok(BTreeMap::new()),
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

pub fn gen_data(args: GenDataArgs) -> CliResult {
    let file_cfg = load_config_opt(&args.config)?;
    let mut cfg = match args.profile.as_str() {
        "desk" => SamplerConfig::desk(0),
        "paper" => SamplerConfig::default(),
        other => {
            return Err(CoreError::Config(format!(
                "unknown profile '{other}' (expected desk or paper)"
            )))
        }
    };
    // config file first, then flags
    macro_rules! resolve {
        ($field:ident, $flag:expr) => {
            if let Some(v) = config_get(&file_cfg, stringify!($field))? {
                cfg.$field = v;
            }
            if let Some(v) = $flag {
                cfg.$field = v;
            }
        };
    }
    resolve!(seed, args.seed);
    resolve!(corpus_count, args.corpus_count);
    resolve!(query_count, args.query_count);
    resolve!(min_nodes, args.min_nodes);
    resolve!(max_nodes, args.max_nodes);
    resolve!(eta_low, args.eta_low);
    resolve!(eta_high, args.eta_high);
    resolve!(augment_nodes_min, args.augment_nodes_min);
    resolve!(augment_nodes_max, args.augment_nodes_max);
    resolve!(augment_edge_prob, args.augment_edge_prob);
    cfg.validate()?;

    let mut manifest = RunManifest::new("gen-data");
    manifest.seed = Some(cfg.seed);
    manifest.set("profile", &args.profile);
    manifest.set("corpus_count", cfg.corpus_count);
    manifest.set("query_count", cfg.query_count);
    manifest.set("min_nodes", cfg.min_nodes);
    manifest.set("max_nodes", cfg.max_nodes);
    manifest.set("eta_low", cfg.eta_low);
    manifest.set("eta_high", cfg.eta_high);
    manifest.set("augment_nodes_min", cfg.augment_nodes_min);
    manifest.set("augment_nodes_max", cfg.augment_nodes_max);
    manifest.set("augment_edge_prob", cfg.augment_edge_prob);

    let mut phases = Phases::start();
    let sources = match (&args.sources, args.synthetic_sources) {
        (Some(path), None) => {
            manifest.input(path);
            load_dataset(path)?
        }
        (None, Some(count)) => {
            manifest.set("synthetic_sources", count);
            manifest.set("synthetic_source_nodes", args.synthetic_source_nodes);
            synthetic_sources(count, args.synthetic_source_nodes, 0.12, cfg.seed)
        }
        (Some(_), Some(_)) => {
            return Err(CoreError::Config(
                "--sources and --synthetic-sources are mutually exclusive".into(),
            ))
        }
        (None, None) => {
            return Err(CoreError::Config(
                "either --sources or --synthetic-sources is required".into(),
            ))
        }
    };
    phases.mark(&mut manifest, "sources");

    let bundle = generate_dataset(&sources, &cfg)?;
    phases.mark(&mut manifest, "sampling");

    ensure_dir(&args.out)?;
    let corpus_path = args.out.join("corpus.tsv");
    let queries_path = args.out.join("queries.tsv");
    let seeds_path = args.out.join("query_seeds.tsv");
    save_dataset(&bundle.corpus, &corpus_path)?;
    save_dataset(&bundle.queries, &queries_path)?;
    save_dataset(&bundle.query_seeds, &seeds_path)?;
    manifest.output(&corpus_path);
    manifest.output(&queries_path);
    manifest.output(&seeds_path);
    phases.mark(&mut manifest, "write");
    manifest.write_next_to(&args.out)?;
    println!(
        "wrote {} corpus graphs and {} queries to {}",
        bundle.corpus.len(),
        bundle.queries.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// label
// ---------------------------------------------------------------------------

pub fn label(args: LabelArgs) -> CliResult {
    let mut manifest = RunManifest::new("label");
    manifest.input(&args.queries);
    manifest.input(&args.corpus);
    if let Some(a) = args.combo_a {
        manifest.set("combo_a", a);
    }
    manifest.set("budget", args.budget);

    let mut phases = Phases::start();
    let queries = load_dataset(&args.queries)?;
    let corpus = load_dataset(&args.corpus)?;
    phases.mark(&mut manifest, "load");
    let records = label_pairs(&queries, &corpus, args.combo_a, args.budget)?;
    phases.mark(&mut manifest, "solve");
    save_labels(&records, &args.out)?;
    manifest.output(&args.out);
    phases.mark(&mut manifest, "write");
    manifest.write_next_to(&args.out)?;
    println!("labeled {} pairs -> {}", records.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn train(args: TrainArgs) -> CliResult {
    let file_cfg = load_config_opt(&args.config)?;
    let kind: ModelKind = args.model.parse()?;
    let target: LabelTarget = args.target.parse()?;

    let mut tcfg = TrainConfig {
        target,
        ..TrainConfig::default()
    };
    macro_rules! resolve {
        ($field:ident, $flag:expr) => {
            if let Some(v) = config_get(&file_cfg, stringify!($field))? {
                tcfg.$field = v;
            }
            if let Some(v) = $flag {
                tcfg.$field = v;
            }
        };
    }
    resolve!(seed, args.seed);
    resolve!(batch_size, args.batch_size);
    resolve!(lr, args.lr);
    resolve!(weight_decay, args.weight_decay);
    resolve!(patience, args.patience);
    resolve!(max_epochs, args.max_epochs);
    if let Some(split) = config_get::<String>(&file_cfg, "split")? {
        tcfg.split = parse_split(&split)?;
    }
    if let Some(split) = &args.split {
        tcfg.split = parse_split(split)?;
    }
    tcfg.validate()?;

    let mut mcfg = ModelConfig::new(kind);
    macro_rules! resolve_enc {
        ($field:ident, $flag:expr) => {
            if let Some(v) = config_get(&file_cfg, stringify!($field))? {
                mcfg.encoder.$field = v;
            }
            if let Some(v) = $flag {
                mcfg.encoder.$field = v;
            }
        };
    }
    resolve_enc!(layers, args.layers);
    resolve_enc!(node_dim, args.node_dim);
    resolve_enc!(msg_dim, args.msg_dim);
    if let Some(v) = config_get(&file_cfg, "zeta")?.or(args.zeta) {
        mcfg.sinkhorn.zeta = v;
    }
    if let Some(v) = config_get(&file_cfg, "sinkhorn_iterations")?.or(args.sinkhorn_iterations) {
        mcfg.sinkhorn.iterations = v;
    }
    mcfg.gossip_t = config_get(&file_cfg, "gossip_t")?.or(args.gossip_t);
    mcfg.gossip_rescale =
        config_get(&file_cfg, "gossip_rescale")?.unwrap_or(args.gossip_rescale);

    // temperature: explicit flag > dataset tag default > config file > 1.0
    let tag_lambda = args
        .dataset_tag
        .as_deref()
        .and_then(default_lambda_for_tag);
    if let Some(v) = config_get(&file_cfg, "lambda")? {
        mcfg.lambda = v;
    }
    if let Some(v) = tag_lambda {
        mcfg.lambda = v;
    }
    if let Some(v) = args.lambda {
        mcfg.lambda = v;
    }
    mcfg.validate()?;

    let mut manifest = RunManifest::new("train");
    manifest.seed = Some(tcfg.seed);
    manifest.input(&args.queries);
    manifest.input(&args.corpus);
    manifest.input(&args.labels);
    manifest.set("model", kind);
    manifest.set("target", &args.target);
    manifest.set("batch_size", tcfg.batch_size);
    manifest.set("lr", tcfg.lr);
    manifest.set("weight_decay", tcfg.weight_decay);
    manifest.set("patience", tcfg.patience);
    manifest.set("max_epochs", tcfg.max_epochs);
    manifest.set(
        "split",
        format!("{},{},{}", tcfg.split.0, tcfg.split.1, tcfg.split.2),
    );
    manifest.set("layers", mcfg.encoder.layers);
    manifest.set("node_dim", mcfg.encoder.node_dim);
    manifest.set("msg_dim", mcfg.encoder.msg_dim);
    manifest.set("zeta", mcfg.sinkhorn.zeta);
    manifest.set("sinkhorn_iterations", mcfg.sinkhorn.iterations);

    let mut phases = Phases::start();
    let queries = load_dataset(&args.queries)?;
    let corpus = load_dataset(&args.corpus)?;
    let labels = load_labels(&args.labels)?;
    phases.mark(&mut manifest, "load");

    let (train_idx, val_idx, _test_idx) = split_queries(queries.len(), tcfg.split, tcfg.seed);
    let uses_lambda = matches!(kind, ModelKind::Lmccs | ModelKind::Combo);
    let outcome = if args.tune_lambda && uses_lambda {
        let grid = parse_f64_list(&args.lambda_grid)?;
        manifest.set("lambda_grid", &args.lambda_grid);
        let (best_lambda, outcome, curve) = tune_lambda(
            &mcfg, &grid, &queries, &corpus, &labels, &train_idx, &val_idx, &tcfg,
        )?;
        mcfg.lambda = best_lambda;
        let curve_str: Vec<String> = curve.iter().map(|(l, v)| format!("{l}:{v}")).collect();
        manifest.set("lambda_curve", curve_str.join(","));
        outcome
    } else {
        let store = init_model_params(&mcfg, tcfg.seed);
        run_train(
            store, &mcfg, &queries, &corpus, &labels, &train_idx, &val_idx, &tcfg,
        )?
    };
    manifest.set("lambda", mcfg.lambda);
    phases.mark(&mut manifest, "train");

    ensure_dir(&args.out)?;
    let padding = common_padding(&[&queries, &corpus]);
    let mut meta = model_config_to_meta(&mcfg, padding);
    meta.insert("target".into(), args.target.clone());
    meta.insert("split_seed".into(), tcfg.seed.to_string());
    meta.insert(
        "split_fractions".into(),
        format!("{},{},{}", tcfg.split.0, tcfg.split.1, tcfg.split.2),
    );
    meta.insert("best_epoch".into(), outcome.best_epoch.to_string());
    meta.insert("best_val_mse".into(), outcome.best_val_mse.to_string());
    let ckpt_path = args.out.join("checkpoint.json");
    outcome.best.save_checkpoint(&ckpt_path, &meta)?;
    let history_path = args.out.join("history.tsv");
    std::fs::write(
        &history_path,
        mcsr_core::evalkit::history_to_string(&outcome.history),
    )
    .map_err(|e| CoreError::io(history_path.display().to_string(), e))?;
    manifest.output(&ckpt_path);
    manifest.output(&history_path);
    phases.mark(&mut manifest, "write");
    manifest.write_next_to(&args.out)?;
    println!(
        "trained {} for {} epochs (best epoch {}, val MSE {:.6}) -> {}",
        kind,
        outcome.history.len(),
        outcome.best_epoch,
        outcome.best_val_mse,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval / retrieve shared scoring
// ---------------------------------------------------------------------------

struct LoadedModel {
    store: mcsr_core::diffengine::ParameterStore,
    cfg: ModelConfig,
    padding: usize,
    meta: BTreeMap<String, String>,
}

fn load_model(path: &Path) -> Result<LoadedModel> {
    let (store, meta) = mcsr_core::diffengine::ParameterStore::load_checkpoint(path)?;
    let (cfg, padding) = model_config_from_meta(&meta)?;
    Ok(LoadedModel {
        store,
        cfg,
        padding,
        meta,
    })
}

fn label_target_map(
    labels: &[LabelRecord],
    target: LabelTarget,
) -> Result<std::collections::HashMap<(String, String), f64>> {
    let mut map = std::collections::HashMap::new();
    for rec in labels {
        map.insert(
            (rec.query_id.clone(), rec.corpus_id.clone()),
            rec.target_value(target)?,
        );
    }
    Ok(map)
}

fn fold_indices(
    split: &str,
    n: usize,
    meta: Option<&BTreeMap<String, String>>,
) -> Result<Vec<usize>> {
    if split == "all" {
        return Ok((0..n).collect());
    }
    let meta = meta.ok_or_else(|| {
        CoreError::Config(format!(
            "--split {split} needs a checkpoint with stored split metadata (use --split all)"
        ))
    })?;
    let seed: u64 = meta
        .get("split_seed")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CoreError::Checkpoint("split_seed missing from checkpoint".into()))?;
    let fractions = meta
        .get("split_fractions")
        .ok_or_else(|| CoreError::Checkpoint("split_fractions missing from checkpoint".into()))?;
    let fractions = parse_split(fractions)?;
    let (train, val, test) = split_queries(n, fractions, seed);
    match split {
        "train" => Ok(train),
        "val" => Ok(val),
        "test" => Ok(test),
        other => Err(CoreError::Config(format!(
            "unknown split '{other}' (expected train, val, test or all)"
        ))),
    }
}

pub fn eval(args: EvalArgs) -> CliResult {
    let mut manifest = RunManifest::new("eval");
    manifest.input(&args.queries);
    manifest.input(&args.corpus);
    manifest.input(&args.labels);
    manifest.set("split", &args.split);
    let tau = match args.tau.as_str() {
        "b" => TauVariant::B,
        "a" => TauVariant::A,
        other => {
            return Err(CoreError::Config(format!(
                "unknown tau variant '{other}' (expected a or b)"
            )))
        }
    };

    let mut phases = Phases::start();
    let queries = load_dataset(&args.queries)?;
    let corpus = load_dataset(&args.corpus)?;
    let labels = load_labels(&args.labels)?;
    phases.mark(&mut manifest, "load");

    let model = match (&args.checkpoint, args.oracle) {
        (Some(path), false) => {
            manifest.input(path);
            Some(load_model(path)?)
        }
        (None, true) => None,
        (Some(_), true) => {
            return Err(CoreError::Config(
                "--checkpoint and --oracle are mutually exclusive".into(),
            ))
        }
        (None, false) => {
            return Err(CoreError::Config(
                "either --checkpoint or --oracle is required".into(),
            ))
        }
    };
    let target: LabelTarget = match (&model, &args.target) {
        (_, Some(t)) => t.parse()?,
        (Some(m), None) => m
            .meta
            .get("target")
            .map(|t| t.parse())
            .transpose()?
            .unwrap_or(LabelTarget::Mces),
        (None, None) => LabelTarget::Mces,
    };
    let fold = fold_indices(&args.split, queries.len(), model.as_ref().map(|m| &m.meta))?;
    if fold.is_empty() {
        return Err(CoreError::Config(format!(
            "split '{}' selected no queries",
            args.split
        )));
    }
    let label_map = label_target_map(&labels, target)?;
    let model_name = model
        .as_ref()
        .map(|m| m.cfg.kind.to_string())
        .unwrap_or_else(|| "oracle".to_string());

    let fold_queries: Vec<Graph> = fold.iter().map(|&i| queries[i].clone()).collect();
    let scores: Vec<Vec<f64>> = match &model {
        Some(m) => {
            let padding = m.padding.max(common_padding(&[&queries, &corpus]));
            let q_ops = build_ops(&fold_queries, padding, &m.cfg.encoder);
            let c_ops = build_ops(&corpus, padding, &m.cfg.encoder);
            score_all(&m.store, &m.cfg, &q_ops, &c_ops)
        }
        None => fold_queries
            .iter()
            .map(|q| {
                corpus
                    .iter()
                    .map(|c| {
                        label_map
                            .get(&(q.id().to_string(), c.id().to_string()))
                            .copied()
                            .ok_or_else(|| {
                                CoreError::Validation(format!(
                                    "label missing for pair ({}, {})",
                                    q.id(),
                                    c.id()
                                ))
                            })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<Vec<f64>>>>()?,
    };
    phases.mark(&mut manifest, "score");

    let mut score_records = Vec::new();
    let mut per_query = Vec::new();
    for (row, q) in scores.iter().zip(&fold_queries) {
        let mut ys = Vec::with_capacity(corpus.len());
        for (c, s) in corpus.iter().zip(row) {
            let y = label_map
                .get(&(q.id().to_string(), c.id().to_string()))
                .copied()
                .ok_or_else(|| {
                    CoreError::Validation(format!(
                        "label missing for pair ({}, {})",
                        q.id(),
                        c.id()
                    ))
                })?;
            ys.push(y);
            score_records.push(ScoreRecord {
                query_id: q.id().to_string(),
                corpus_id: c.id().to_string(),
                model: model_name.clone(),
                score: *s,
            });
        }
        per_query.push((q.id().to_string(), row.clone(), ys));
    }
    let report = metric_report(per_query, tau);
    phases.mark(&mut manifest, "metrics");

    ensure_dir(&args.out)?;
    let report_path = args.out.join("report.tsv");
    std::fs::write(&report_path, report.to_tsv())
        .map_err(|e| CoreError::io(report_path.display().to_string(), e))?;
    let scores_path = args.out.join("scores.tsv");
    save_scores(&score_records, &scores_path)?;
    manifest.output(&report_path);
    manifest.output(&scores_path);
    manifest.set("model", &model_name);
    manifest.set("queries_evaluated", fold.len());
    phases.mark(&mut manifest, "write");
    manifest.write_next_to(&args.out)?;
    println!(
        "{}: mse {:.6} +- {:.6}, ktau {:.4} +- {:.4}, pairrank {:.4} +- {:.4} ({} queries)",
        model_name,
        report.mse.0,
        report.mse.1,
        report.ktau.0,
        report.ktau.1,
        report.pairrank.0,
        report.pairrank.1,
        fold.len()
    );
    Ok(())
}

pub fn retrieve(args: RetrieveArgs) -> CliResult {
    let mut manifest = RunManifest::new("retrieve");
    manifest.input(&args.queries);
    manifest.input(&args.corpus);
    manifest.set("query_id", &args.query_id);
    manifest.set("k", args.k);

    let mut phases = Phases::start();
    let queries = load_dataset(&args.queries)?;
    let corpus = load_dataset(&args.corpus)?;
    let query = queries
        .iter()
        .find(|g| g.id() == args.query_id)
        .ok_or_else(|| {
            CoreError::Validation(format!("query id '{}' not in dataset", args.query_id))
        })?
        .clone();
    phases.mark(&mut manifest, "load");

    let scored: Vec<(String, f64)> = match (&args.checkpoint, args.oracle) {
        (Some(path), false) => {
            manifest.input(path);
            let m = load_model(path)?;
            let padding = m.padding.max(common_padding(&[&queries, &corpus]));
            let q_ops = build_ops(std::slice::from_ref(&query), padding, &m.cfg.encoder);
            let c_ops = build_ops(&corpus, padding, &m.cfg.encoder);
            let scores = score_all(&m.store, &m.cfg, &q_ops, &c_ops);
            manifest.set("model", m.cfg.kind);
            corpus
                .iter()
                .map(|g| g.id().to_string())
                .zip(scores[0].iter().copied())
                .collect()
        }
        (None, true) => {
            let labels_path = args.labels.as_ref().ok_or_else(|| {
                CoreError::Config("--oracle retrieval needs --labels".into())
            })?;
            manifest.input(labels_path);
            let labels = load_labels(labels_path)?;
            let target: LabelTarget = args
                .target
                .as_deref()
                .unwrap_or("mces")
                .parse()?;
            let map = label_target_map(&labels, target)?;
            manifest.set("model", "oracle");
            corpus
                .iter()
                .map(|c| {
                    map.get(&(query.id().to_string(), c.id().to_string()))
                        .copied()
                        .map(|s| (c.id().to_string(), s))
                        .ok_or_else(|| {
                            CoreError::Validation(format!(
                                "label missing for pair ({}, {})",
                                query.id(),
                                c.id()
                            ))
                        })
                })
                .collect::<Result<Vec<_>>>()?
        }
        _ => {
            return Err(CoreError::Config(
                "exactly one of --checkpoint or --oracle is required".into(),
            ))
        }
    };
    phases.mark(&mut manifest, "score");

    let ranked = rank_corpus(scored, args.k);
    std::fs::write(&args.out, ranking_to_string(&args.query_id, &ranked))
        .map_err(|e| CoreError::io(args.out.display().to_string(), e))?;
    manifest.output(&args.out);
    phases.mark(&mut manifest, "write");
    manifest.write_next_to(&args.out)?;
    println!(
        "ranked {} corpus graphs for {} -> {}",
        ranked.len(),
        args.query_id,
        args.out.display()
    );
    Ok(())
}

pub fn explain(args: ExplainArgs) -> CliResult {
    let mut manifest = RunManifest::new("explain");
    manifest.input(&args.checkpoint);
    manifest.input(&args.queries);
    manifest.input(&args.corpus);
    manifest.set("query_id", &args.query_id);
    manifest.set("corpus_id", &args.corpus_id);

    let mut phases = Phases::start();
    let queries = load_dataset(&args.queries)?;
    let corpus = load_dataset(&args.corpus)?;
    let find = |graphs: &[Graph], id: &str| -> Result<Graph> {
        graphs
            .iter()
            .find(|g| g.id() == id)
            .cloned()
            .ok_or_else(|| CoreError::Validation(format!("graph id '{id}' not in dataset")))
    };
    let query = find(&queries, &args.query_id)?;
    let corpus_graph = find(&corpus, &args.corpus_id)?;
    let model = load_model(&args.checkpoint)?;
    if model.cfg.kind == ModelKind::Baseline {
        return Err(CoreError::Config(
            "the baseline head has no alignment to explain".into(),
        ));
    }
    phases.mark(&mut manifest, "load");

    let pair = build_minimal_pair(&query, &corpus_graph);
    let q_ops = build_ops(std::slice::from_ref(&query), pair.n(), &model.cfg.encoder);
    let c_ops = build_ops(
        std::slice::from_ref(&corpus_graph),
        pair.n(),
        &model.cfg.encoder,
    );
    let p_soft = final_alignment(&model.store, &model.cfg, &q_ops[0], &c_ops[0]);
    let perm = hungarian_round(&p_soft);
    let matched = matched_edges(&pair, &perm);
    let line = format_alignment(&pair, &perm, &matched);
    phases.mark(&mut manifest, "align");

    std::fs::write(&args.out, format!("{line}\n"))
        .map_err(|e| CoreError::io(args.out.display().to_string(), e))?;
    manifest.output(&args.out);
    manifest.set("model", model.cfg.kind);
    manifest.set("matched_edges", matched.len());
    phases.mark(&mut manifest, "write");
    manifest.write_next_to(&args.out)?;
    println!(
        "alignment for ({}, {}): {} matched edges -> {}",
        args.query_id,
        args.corpus_id,
        matched.len(),
        args.out.display()
    );
    Ok(())
}
