//! Retrieval quality metrics (per-query MSE, Kendall tau, PairRank) with
//! standard errors, plus ranked retrieval output.

use std::fmt::Write as _;

use crate::error::{CoreError, Result};

/// Mean squared error between scores and labels for one query's corpus.
pub fn mse_per_query(scores: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(scores.len(), labels.len(), "score/label length mismatch");
    if scores.is_empty() {
        return 0.0;
    }
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(s, y)| (y - s) * (y - s))
        .sum::<f64>()
        / n
}

/// Which tau variant to compute. The raw concordant-minus-discordant count
/// over `C(n,2)` is tau-a; the tie-corrected quotient (the default of the
/// usual library implementations) is tau-b.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TauVariant {
    #[default]
    B,
    A,
}

/// Kendall rank correlation between scores and labels.
///
/// Returns `(value, defined)`; `defined` is false when every label and
/// every score is tied, in which case the value is 0 by convention.
pub fn kendall_tau(scores: &[f64], labels: &[f64], variant: TauVariant) -> (f64, bool) {
    assert_eq!(scores.len(), labels.len(), "score/label length mismatch");
    let n = scores.len();
    if n < 2 {
        return (0.0, false);
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut tied_labels = 0i64; // pairs tied in labels only or both
    let mut tied_scores = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dl = labels[i] - labels[j];
            let ds = scores[i] - scores[j];
            if dl == 0.0 {
                tied_labels += 1;
                if ds == 0.0 {
                    tied_scores += 1;
                }
                continue;
            }
            if ds == 0.0 {
                tied_scores += 1;
                continue;
            }
            if (dl > 0.0) == (ds > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    let diff = (concordant - discordant) as f64;
    match variant {
        TauVariant::A => (diff / n0, true),
        TauVariant::B => {
            let denom = ((n0 - tied_labels as f64) * (n0 - tied_scores as f64)).sqrt();
            if denom == 0.0 {
                (0.0, false)
            } else {
                (diff / denom, true)
            }
        }
    }
}

/// Tie-corrected Kendall tau (tau-b); undefined inputs give 0.
pub fn kendall_tau_b(scores: &[f64], labels: &[f64]) -> f64 {
    kendall_tau(scores, labels, TauVariant::B).0
}

/// Fraction of label-distinct pairs ranked strictly concordantly by the
/// scores. Score ties on label-distinct pairs count as non-concordant;
/// 1.0 when there are no label-distinct pairs at all.
pub fn pair_rank(scores: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(scores.len(), labels.len(), "score/label length mismatch");
    let n = scores.len();
    let mut concordant = 0u64;
    let mut max_possible = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dl = labels[i] - labels[j];
            if dl == 0.0 {
                continue;
            }
            max_possible += 1;
            let ds = scores[i] - scores[j];
            if ds != 0.0 && (dl > 0.0) == (ds > 0.0) {
                concordant += 1;
            }
        }
    }
    if max_possible == 0 {
        1.0
    } else {
        concordant as f64 / max_possible as f64
    }
}

/// Per-query metric rows plus mean and standard error aggregates.
#[derive(Debug, Clone)]
pub struct MetricReport {
    /// (query_id, mse, ktau, pairrank)
    pub per_query: Vec<(String, f64, f64, f64)>,
    pub mse: (f64, f64),
    pub ktau: (f64, f64),
    pub pairrank: (f64, f64),
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt() / n.sqrt())
}

/// Aggregate per-query (scores, labels) into the full report.
pub fn metric_report(
    queries: impl IntoIterator<Item = (String, Vec<f64>, Vec<f64>)>,
    tau: TauVariant,
) -> MetricReport {
    let mut per_query = Vec::new();
    for (id, scores, labels) in queries {
        let mse = mse_per_query(&scores, &labels);
        let (kt, _) = kendall_tau(&scores, &labels, tau);
        let pr = pair_rank(&scores, &labels);
        per_query.push((id, mse, kt, pr));
    }
    let mses: Vec<f64> = per_query.iter().map(|r| r.1).collect();
    let ktaus: Vec<f64> = per_query.iter().map(|r| r.2).collect();
    let prs: Vec<f64> = per_query.iter().map(|r| r.3).collect();
    MetricReport {
        mse: mean_se(&mses),
        ktau: mean_se(&ktaus),
        pairrank: mean_se(&prs),
        per_query,
    }
}

impl MetricReport {
    /// Tab-separated report: a summary block then one row per query.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "metric\tmean\tstd_error");
        let _ = writeln!(out, "mse\t{}\t{}", self.mse.0, self.mse.1);
        let _ = writeln!(out, "ktau\t{}\t{}", self.ktau.0, self.ktau.1);
        let _ = writeln!(out, "pairrank\t{}\t{}", self.pairrank.0, self.pairrank.1);
        let _ = writeln!(out, "query_id\tmse\tktau\tpairrank");
        for (id, mse, kt, pr) in &self.per_query {
            let _ = writeln!(out, "{id}\t{mse}\t{kt}\t{pr}");
        }
        out
    }
}

/// One ranked retrieval row.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub rank: usize,
    pub corpus_id: String,
    pub score: f64,
}

/// Rank a scored corpus in descending score order, ties broken by ascending
/// corpus id, truncated to `k`.
pub fn rank_corpus(mut scored: Vec<(String, f64)>, k: usize) -> Vec<RankedEntry> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (corpus_id, score))| RankedEntry {
            rank: i + 1,
            corpus_id,
            score,
        })
        .collect()
}

/// `query_id<TAB>rank<TAB>corpus_id<TAB>score` per line.
pub fn ranking_to_string(query_id: &str, entries: &[RankedEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(out, "{query_id}\t{}\t{}\t{}", e.rank, e.corpus_id, e.score);
    }
    out
}

/// History rows `epoch<TAB>train_mse<TAB>val_mse`.
pub fn history_to_string(history: &[(usize, f64, f64)]) -> String {
    let mut out = String::from("epoch\ttrain_mse\tval_mse\n");
    for (epoch, train, val) in history {
        let _ = writeln!(out, "{epoch}\t{train}\t{val}");
    }
    out
}

pub fn history_from_string(text: &str) -> Result<Vec<(usize, f64, f64)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate().skip(1) {
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 {
            return Err(CoreError::Parse {
                line: i + 1,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| CoreError::Parse {
                line: i + 1,
                msg: format!("bad number '{s}'"),
            })
        };
        out.push((
            fields[0].parse().map_err(|_| CoreError::Parse {
                line: i + 1,
                msg: format!("bad epoch '{}'", fields[0]),
            })?,
            parse_f(fields[1])?,
            parse_f(fields[2])?,
        ));
    }
    Ok(out)
}
