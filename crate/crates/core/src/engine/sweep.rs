//! Threshold-sweep runner: computes one confidence score and one answer
//! pair per query, then evaluates the whole gamma grid on the cached
//! outcomes.

use crate::adaptive::{
    decide, sweep_points, ConfidenceMethod, DecideOptions, QueryOutcome, SweepPoint,
};
use crate::evalkit::{EvalQuery, MetricKind};
use crate::reflection::{default_table, parse_with};

use super::{
    answer_short, clean_answer, parametric_prompt, EngineError, EngineOptions, FileRetriever,
};
use crate::backend::Backend;

#[derive(Debug, Clone)]
pub struct SweepRunConfig {
    pub method: ConfidenceMethod,
    pub gammas: Vec<f64>,
    pub flip_comparison: bool,
    pub metric: MetricKind,
    /// Contexts taken per query from the retriever store.
    pub top_n: usize,
}

/// Run the adaptive-retrieval sweep over a query set. Returns the curve
/// plus the per-query outcomes it was computed from.
pub fn run_sweep(
    queries: &[EvalQuery],
    retriever: &FileRetriever,
    backend: &dyn Backend,
    opts: &EngineOptions,
    cfg: &SweepRunConfig,
) -> Result<(Vec<SweepPoint>, Vec<QueryOutcome>), EngineError> {
    if cfg.gammas.is_empty() {
        return Err(EngineError::BadConfig("gamma grid is empty".into()));
    }
    let table = default_table();
    let mut outcomes = Vec::with_capacity(queries.len());
    // Always-retrieve options for the retrieval arm.
    let retrieve_opts = EngineOptions { adaptive: None, ..opts.clone() };
    for query in queries {
        // Confidence and the no-retrieval completion, computed once. The
        // gamma grid is applied later to the cached score.
        let decide_opts = DecideOptions {
            method: cfg.method,
            gamma: 0.0,
            include_reflection_tokens: opts
                .adaptive
                .as_ref()
                .map(|a| a.include_reflection_tokens)
                .unwrap_or(false),
            flip_comparison: cfg.flip_comparison,
        };
        let base = opts.template.render(&query.question);
        let outcome = decide(&base, backend, table, &decide_opts)?;
        let confidence = outcome.decision.score.value;
        let parametric_answer = match outcome.completion {
            Some(completion) => {
                let parsed = parse_with(table, &completion.text)?;
                clean_answer(&parsed.answer, &opts.eos_marker)
            }
            None => {
                let completion =
                    backend.complete(&parametric_prompt(&base, table), &opts.stop)?;
                let parsed = parse_with(table, &completion.text)?;
                clean_answer(&parsed.answer, &opts.eos_marker)
            }
        };
        let contexts = retriever.top_n(&query.id, cfg.top_n)?;
        let retrieved = answer_short(&query.id, &query.question, &contexts, backend, &retrieve_opts)?;
        outcomes.push(QueryOutcome {
            id: query.id.clone(),
            confidence,
            correct_retrieve: cfg.metric.score(&retrieved.answer, &query.gold_answers),
            correct_parametric: cfg.metric.score(&parametric_answer, &query.gold_answers),
        });
    }
    let points = sweep_points(&outcomes, &cfg.gammas, cfg.flip_comparison)?;
    Ok((points, outcomes))
}
