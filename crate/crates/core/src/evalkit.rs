//! Task metrics and run evaluation.
//!
//! Answer normalization follows the standard QA recipe: lowercase, strip
//! ASCII punctuation, drop the articles a/an/the, collapse whitespace.
//! Exact match and token F1 take the best score over the gold list;
//! short-form accuracy is gold-substring containment.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Recorded in output metadata so downstream tooling knows which
/// normalization produced the numbers.
pub const NORMALIZATION_RECIPE: &str = "qa-norm-v1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no overlap between prediction ids and gold ids (gold sample: {sample:?})")]
    IdMismatch { sample: Vec<String> },
    #[error("empty gold set")]
    EmptyGolds,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A query with its reference answers; the gold side of an evaluation and
/// the line format of query files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalQuery {
    pub id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
}

fn is_article(word: &str) -> bool {
    matches!(word, "a" | "an" | "the")
}

/// Standard QA normalization. Punctuation is removed without inserting
/// spaces, matching the conventional implementation.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !is_article(w))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1.0 iff the normalized prediction equals any normalized gold.
pub fn exact_match(pred: &str, golds: &[String]) -> f64 {
    let p = normalize_answer(pred);
    if golds.iter().any(|g| normalize_answer(g) == p) {
        1.0
    } else {
        0.0
    }
}

fn token_f1_single(pred_tokens: &[&str], gold_tokens: &[&str]) -> f64 {
    if pred_tokens.is_empty() && gold_tokens.is_empty() {
        return 1.0;
    }
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return 0.0;
    }
    let mut gold_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in gold_tokens {
        *gold_counts.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in pred_tokens {
        if let Some(c) = gold_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_tokens.len() as f64;
    let recall = overlap as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token-multiset F1 over the gold list.
pub fn token_f1(pred: &str, golds: &[String]) -> f64 {
    let p = normalize_answer(pred);
    let pred_tokens: Vec<&str> = p.split_whitespace().collect();
    golds
        .iter()
        .map(|g| {
            let g = normalize_answer(g);
            let gold_tokens: Vec<&str> = g.split_whitespace().collect();
            token_f1_single(&pred_tokens, &gold_tokens)
        })
        .fold(0.0, f64::max)
}

/// 1.0 iff any normalized gold occurs as a substring of the normalized
/// prediction. The matcher used for short-form tasks and fact verdicts.
pub fn short_form_accuracy(pred: &str, golds: &[String]) -> f64 {
    let p = normalize_answer(pred);
    if golds.iter().any(|g| {
        let g = normalize_answer(g);
        !g.is_empty() && p.contains(&g)
    }) {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Em,
    F1,
    Acc,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Em, MetricKind::F1, MetricKind::Acc];

    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Em => "em",
            MetricKind::F1 => "f1",
            MetricKind::Acc => "acc",
        }
    }

    pub fn parse_label(s: &str) -> Option<MetricKind> {
        match s {
            "em" => Some(MetricKind::Em),
            "f1" => Some(MetricKind::F1),
            "acc" => Some(MetricKind::Acc),
            _ => None,
        }
    }

    pub fn score(self, pred: &str, golds: &[String]) -> f64 {
        match self {
            MetricKind::Em => exact_match(pred, golds),
            MetricKind::F1 => token_f1(pred, golds),
            MetricKind::Acc => short_form_accuracy(pred, golds),
        }
    }
}

/// Per-query evaluation record; the line format of per-query JSONL output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerQueryScore {
    pub id: String,
    pub pred: Option<String>,
    pub gold: Vec<String>,
    pub em: f64,
    pub f1: f64,
    pub acc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    /// Gold queries with no prediction; they score 0 on every metric.
    pub missing: usize,
    pub mean_em: f64,
    pub mean_f1: f64,
    pub mean_acc: f64,
    pub recipe: String,
}

/// Score a prediction map against the gold queries. Gold order drives the
/// per-query output; predictions without a gold id are ignored. Zero
/// overlap between the id sets is an error.
pub fn evaluate_run(
    predictions: &BTreeMap<String, String>,
    golds: &[EvalQuery],
) -> Result<(EvalSummary, Vec<PerQueryScore>), EvalError> {
    if golds.is_empty() {
        return Err(EvalError::EmptyGolds);
    }
    let overlap = golds.iter().filter(|g| predictions.contains_key(&g.id)).count();
    if overlap == 0 {
        return Err(EvalError::IdMismatch {
            sample: golds.iter().take(10).map(|g| g.id.clone()).collect(),
        });
    }
    let mut per_query = Vec::with_capacity(golds.len());
    let mut missing = 0usize;
    let (mut em_sum, mut f1_sum, mut acc_sum) = (0.0, 0.0, 0.0);
    for gold in golds {
        let pred = predictions.get(&gold.id);
        let (em, f1, acc) = match pred {
            Some(p) => (
                exact_match(p, &gold.gold_answers),
                token_f1(p, &gold.gold_answers),
                short_form_accuracy(p, &gold.gold_answers),
            ),
            None => {
                missing += 1;
                (0.0, 0.0, 0.0)
            }
        };
        em_sum += em;
        f1_sum += f1;
        acc_sum += acc;
        per_query.push(PerQueryScore {
            id: gold.id.clone(),
            pred: pred.cloned(),
            gold: gold.gold_answers.clone(),
            em,
            f1,
            acc,
        });
    }
    let n = golds.len();
    let summary = EvalSummary {
        n,
        missing,
        mean_em: em_sum / n as f64,
        mean_f1: f1_sum / n as f64,
        mean_acc: acc_sum / n as f64,
        recipe: NORMALIZATION_RECIPE.to_string(),
    };
    Ok((summary, per_query))
}

/// Long-format CSV: `metric,value` rows.
pub fn write_summary_csv(mut w: impl Write, summary: &EvalSummary) -> std::io::Result<()> {
    writeln!(w, "metric,value")?;
    writeln!(w, "em,{}", summary.mean_em)?;
    writeln!(w, "f1,{}", summary.mean_f1)?;
    writeln!(w, "acc,{}", summary.mean_acc)?;
    writeln!(w, "n,{}", summary.n)?;
    writeln!(w, "missing,{}", summary.missing)?;
    writeln!(w, "recipe,{}", summary.recipe)?;
    Ok(())
}

pub fn read_queries_jsonl<R: std::io::BufRead>(reader: R) -> Result<Vec<EvalQuery>, EvalError> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
