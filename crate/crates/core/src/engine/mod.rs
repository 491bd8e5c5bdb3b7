//! End-to-end inference: the adaptive retrieval decision, parallel
//! per-candidate generation and ranking for short-form answers, and
//! segment-level beam search for long-form generation.
//!
//! Each retrieved context is prompted as `template(q)` + the retrieval
//! token + the passages in a `<p>...</p>` block; the completion's
//! reflection tokens are scored into group confidences and the candidates
//! ranked by their weighted sum. Traces carry the raw completions and
//! per-token log-probabilities, so every rank score can be recomputed
//! bit-exactly offline.

mod retriever;
mod sweep;
mod templates;

pub use retriever::{ContextStoreLine, FileRetriever, RetrievedContext};
pub use sweep::{run_sweep, SweepRunConfig};
pub use templates::TemplateKind;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive::{decide, AdaptiveError, DecideOptions, RetrievalDecision};
use crate::backend::{Backend, BackendError, Completion, TokenLogprob};
use crate::reflection::{
    default_table, normalize_group_with, parse_with, CandidateScore, CollapseConfig, Group,
    GroupConfidence, ParsedOutput, ReflectionError, ReflectionToken, RetrievalToken, ScoreWeights,
    SpellingTable, PASSAGE_CLOSE, PASSAGE_OPEN,
};

/// Passages of one context bundle are joined with a newline inside the
/// prompt's `<p>...</p>` block.
pub const PROMPT_PASSAGE_JOIN: &str = "\n";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no contexts available in retrieval mode")]
    NoCandidates,
    #[error("every candidate failed: {0:?}")]
    AllCandidatesFailed(Vec<String>),
    #[error("unknown query id {0:?}")]
    UnknownQueryId(String),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Adaptive(#[from] AdaptiveError),
    #[error(transparent)]
    Reflection(#[from] ReflectionError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Knobs shared by short- and long-form inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineOptions {
    pub weights: ScoreWeights,
    pub collapse: CollapseConfig,
    pub template: TemplateKind,
    /// Present: decide per query whether to retrieve. Absent: always
    /// retrieve.
    pub adaptive: Option<DecideOptions>,
    /// Bound on the candidate-generation worker pool.
    pub workers: usize,
    /// Stop sequences passed to the backend.
    pub stop: Vec<String>,
    /// Marker that ends long-form generation.
    pub eos_marker: String,
    /// Expand beam states with a continuation segment that reuses the
    /// previous context.
    pub enable_continue: bool,
    /// Compare beam states by mean segment score instead of the sum.
    pub cumulative_mean: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            weights: ScoreWeights::default(),
            collapse: CollapseConfig::default(),
            template: TemplateKind::SingleHop,
            adaptive: None,
            workers: 1,
            stop: Vec::new(),
            eos_marker: "</s>".to_string(),
            enable_continue: false,
            cumulative_mean: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Prompt construction
// ---------------------------------------------------------------------------

/// Joined prior segment answers, with a trailing space when non-empty.
pub fn segment_prefix(prefix_answers: &[String]) -> String {
    if prefix_answers.is_empty() {
        String::new()
    } else {
        format!("{} ", prefix_answers.join(" "))
    }
}

/// Prompt for the enforced no-retrieval generation.
pub fn parametric_prompt(base: &str, table: &SpellingTable) -> String {
    format!("{base}{}", table.canonical(ReflectionToken::Retrieval(RetrievalToken::NoRt)))
}

/// Prompt for one candidate: base, prior segments, the retrieval token and
/// the passage block.
pub fn retrieval_prompt(
    base: &str,
    prefix_answers: &[String],
    passages: &[String],
    table: &SpellingTable,
) -> String {
    format!(
        "{base}{}{}{PASSAGE_OPEN}{}{PASSAGE_CLOSE}",
        segment_prefix(prefix_answers),
        table.canonical(ReflectionToken::Retrieval(RetrievalToken::Rt)),
        passages.join(PROMPT_PASSAGE_JOIN),
    )
}

/// Prompt for a continuation segment that keeps using the prior context.
pub fn continue_prompt(base: &str, prefix_answers: &[String], table: &SpellingTable) -> String {
    format!(
        "{base}{}{}",
        segment_prefix(prefix_answers),
        table.canonical(ReflectionToken::Continue),
    )
}

// ---------------------------------------------------------------------------
// Completion scoring
// ---------------------------------------------------------------------------

/// Group confidence read off the completion tokens: at the position where
/// a token of `group` was emitted, the emitted variant's log-probability
/// and any variants present among the top alternatives are normalized
/// together. A completion without any token of the group gets the
/// zero-confidence point mass.
pub fn group_confidence_from_tokens(
    tokens: &[TokenLogprob],
    group: Group,
    table: &SpellingTable,
    collapse: &CollapseConfig,
) -> Result<GroupConfidence, ReflectionError> {
    for t in tokens {
        let Some(emitted) = table.lookup(t.token.trim()) else { continue };
        if emitted.group() != group {
            continue;
        }
        let mut logprobs: BTreeMap<ReflectionToken, f64> = BTreeMap::new();
        logprobs.insert(emitted, t.logprob);
        for (alt, lp) in &t.top_logprobs {
            if let Some(alt_token) = table.lookup(alt.trim()) {
                if alt_token.group() == group && alt_token != emitted {
                    logprobs.insert(alt_token, *lp);
                }
            }
        }
        return normalize_group_with(&logprobs, group, collapse);
    }
    Ok(GroupConfidence::absent(group, collapse))
}

fn is_answer_token(token: &str, table: &SpellingTable, eos_marker: &str) -> bool {
    let trimmed = token.trim();
    !(table.is_token_surface(trimmed)
        || trimmed == PASSAGE_OPEN
        || trimmed == PASSAGE_CLOSE
        || trimmed == eos_marker)
}

/// Mean natural-log probability over the answer tokens (0 when the
/// completion has none).
pub fn seq_logprob_mean(tokens: &[TokenLogprob], table: &SpellingTable, eos_marker: &str) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in tokens {
        if is_answer_token(&t.token, table, eos_marker) {
            sum += t.logprob;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Parse a completion and score it: parse for the answer span, normalize
/// the three ranking groups from the token-level probabilities, and
/// compute the weighted rank score.
pub fn score_completion(
    completion: &Completion,
    opts: &EngineOptions,
) -> Result<(ParsedOutput, CandidateScore), ReflectionError> {
    let table = default_table();
    let parsed = parse_with(table, &completion.text)?;
    let relevance =
        group_confidence_from_tokens(&completion.tokens, Group::Relevance, table, &opts.collapse)?;
    let grounding =
        group_confidence_from_tokens(&completion.tokens, Group::Grounding, table, &opts.collapse)?;
    let utility =
        group_confidence_from_tokens(&completion.tokens, Group::Utility, table, &opts.collapse)?;
    let seq = seq_logprob_mean(&completion.tokens, table, &opts.eos_marker);
    let score = CandidateScore::compute(relevance, grounding, utility, seq, &opts.weights);
    Ok((parsed, score))
}

/// Strip the end marker and surrounding whitespace from an answer span.
pub fn clean_answer(answer: &str, eos_marker: &str) -> String {
    answer.replace(eos_marker, "").trim().to_string()
}

// ---------------------------------------------------------------------------
// Short-form answering
// ---------------------------------------------------------------------------

/// One scored candidate answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub context: RetrievedContext,
    pub prompt: String,
    pub answer: String,
    pub raw_completion: String,
    pub tokens: Vec<TokenLogprob>,
    pub retries: u32,
    pub score: CandidateScore,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub context_id: String,
    pub error: String,
}

/// Trace of the enforced no-retrieval generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParametricTrace {
    pub prompt: String,
    pub raw_completion: String,
    pub tokens: Vec<TokenLogprob>,
    pub answer: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamMeta {
    pub beam_size: usize,
    pub max_depth: usize,
    pub cumulative: String,
    pub depths: Vec<Vec<BeamStateSummary>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamStateSummary {
    pub answers: Vec<String>,
    pub cumulative_score: f64,
    pub terminal: bool,
}

/// One line of the trace JSONL output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryTrace {
    pub id: String,
    pub question: String,
    pub mode: String,
    /// Seed recorded by the driver; inference itself is deterministic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub template: String,
    pub weights: ScoreWeights,
    pub collapse: CollapseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<DecideOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<RetrievalDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parametric: Option<ParametricTrace>,
    pub answer: String,
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<DroppedCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam: Option<BeamMeta>,
}

#[derive(Debug)]
pub struct ShortFormResult {
    pub answer: String,
    pub decision: Option<RetrievalDecision>,
    pub candidates: Vec<Candidate>,
    pub trace: QueryTrace,
}

/// Run `f` over `0..n` on a bounded worker pool, returning results in
/// index order whatever the scheduling.
fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                *slots[i].lock().expect("worker slot poisoned") = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("worker slot poisoned").expect("slot filled"))
        .collect()
}

fn generate_candidate(
    base: &str,
    prefix_answers: &[String],
    context: &RetrievedContext,
    backend: &dyn Backend,
    opts: &EngineOptions,
) -> Result<Candidate, EngineError> {
    let table = default_table();
    let prompt = retrieval_prompt(base, prefix_answers, &context.passages, table);
    let completion = backend.complete(&prompt, &opts.stop)?;
    let (parsed, score) = score_completion(&completion, opts)?;
    Ok(Candidate {
        context: context.clone(),
        prompt,
        answer: clean_answer(&parsed.answer, &opts.eos_marker),
        raw_completion: completion.text,
        tokens: completion.tokens,
        retries: completion.retries,
        score,
    })
}

/// Index of the best candidate: highest rank score, ties to the earliest.
fn argmax_candidate(candidates: &[Candidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if c.score.rank_score > candidates[b].score.rank_score => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Answer a short-form query. With adaptive options present the retrieval
/// decision runs first and a no-retrieval verdict returns the parametric
/// answer; otherwise every context is processed in parallel, scored, and
/// the best-ranked candidate's answer returned.
pub fn answer_short(
    id: &str,
    question: &str,
    contexts: &[RetrievedContext],
    backend: &dyn Backend,
    opts: &EngineOptions,
) -> Result<ShortFormResult, EngineError> {
    let table = default_table();
    let base = opts.template.render(question);
    let mut trace = QueryTrace {
        id: id.to_string(),
        question: question.to_string(),
        mode: "short".to_string(),
        seed: None,
        template: opts.template.name().to_string(),
        weights: opts.weights,
        collapse: opts.collapse.clone(),
        adaptive: opts.adaptive.clone(),
        decision: None,
        parametric: None,
        answer: String::new(),
        candidates: Vec::new(),
        dropped: Vec::new(),
        beam: None,
    };

    let mut decision = None;
    if let Some(adaptive_opts) = &opts.adaptive {
        let outcome = decide(&base, backend, table, adaptive_opts)?;
        trace.decision = Some(outcome.decision.clone());
        if !outcome.decision.retrieve {
            let completion = match outcome.completion {
                Some(c) => c,
                None => backend.complete(&parametric_prompt(&base, table), &opts.stop)?,
            };
            let parsed = parse_with(table, &completion.text)?;
            let answer = clean_answer(&parsed.answer, &opts.eos_marker);
            trace.parametric = Some(ParametricTrace {
                prompt: parametric_prompt(&base, table),
                raw_completion: completion.text,
                tokens: completion.tokens,
                answer: answer.clone(),
            });
            trace.answer = answer.clone();
            return Ok(ShortFormResult {
                answer,
                decision: Some(outcome.decision),
                candidates: Vec::new(),
                trace,
            });
        }
        decision = Some(outcome.decision);
    }

    if contexts.is_empty() {
        return Err(EngineError::NoCandidates);
    }
    let outcomes = map_indexed(contexts.len(), opts.workers, |i| {
        generate_candidate(&base, &[], &contexts[i], backend, opts)
    });
    let mut candidates = Vec::with_capacity(contexts.len());
    for (context, outcome) in contexts.iter().zip(outcomes) {
        match outcome {
            Ok(c) => candidates.push(c),
            Err(e) => trace
                .dropped
                .push(DroppedCandidate { context_id: context.id.clone(), error: e.to_string() }),
        }
    }
    if candidates.is_empty() {
        return Err(EngineError::AllCandidatesFailed(
            trace.dropped.iter().map(|d| d.error.clone()).collect(),
        ));
    }
    let best = argmax_candidate(&candidates).expect("candidates is non-empty");
    let answer = candidates[best].answer.clone();
    trace.answer = answer.clone();
    trace.candidates = candidates.clone();
    Ok(ShortFormResult { answer, decision, candidates, trace })
}

// ---------------------------------------------------------------------------
// Long-form answering: segment-level beam search
// ---------------------------------------------------------------------------

/// One generated segment of a long-form answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segment {
    /// Context that produced this segment; absent for continuation
    /// segments at the root.
    pub context_id: Option<String>,
    pub continued: bool,
    pub answer: String,
    pub raw_completion: String,
    pub tokens: Vec<TokenLogprob>,
    pub score: CandidateScore,
    pub eos: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamState {
    pub segments: Vec<Segment>,
    /// Sum of segment rank scores.
    pub cumulative_score: f64,
    pub depth: usize,
    pub terminal: bool,
}

impl BeamState {
    fn root() -> BeamState {
        BeamState { segments: Vec::new(), cumulative_score: 0.0, depth: 0, terminal: false }
    }

    fn answers(&self) -> Vec<String> {
        self.segments.iter().map(|s| s.answer.clone()).collect()
    }

    pub fn answer_text(&self) -> String {
        self.answers().join(" ")
    }

    fn key(&self, mean: bool) -> f64 {
        if mean && !self.segments.is_empty() {
            self.cumulative_score / self.segments.len() as f64
        } else {
            self.cumulative_score
        }
    }

    fn summary(&self) -> BeamStateSummary {
        BeamStateSummary {
            answers: self.answers(),
            cumulative_score: self.cumulative_score,
            terminal: self.terminal,
        }
    }
}

#[derive(Debug)]
pub struct LongFormResult {
    pub answer: String,
    pub best: BeamState,
    pub trace: QueryTrace,
}

enum Expansion<'a> {
    Context(&'a RetrievedContext),
    Continue,
}

fn expand_state(
    base: &str,
    state: &BeamState,
    expansion: Expansion<'_>,
    backend: &dyn Backend,
    opts: &EngineOptions,
) -> Result<BeamState, EngineError> {
    let table = default_table();
    let prefix = state.answers();
    let (prompt, context_id, continued) = match &expansion {
        Expansion::Context(ctx) => (
            retrieval_prompt(base, &prefix, &ctx.passages, table),
            Some(ctx.id.clone()),
            false,
        ),
        Expansion::Continue => {
            let prior = state.segments.last().and_then(|s| s.context_id.clone());
            (continue_prompt(base, &prefix, table), prior, true)
        }
    };
    let completion = backend.complete(&prompt, &opts.stop)?;
    let (parsed, score) = score_completion(&completion, opts)?;
    let eos = completion.text.contains(&opts.eos_marker) || completion.text.is_empty();
    let answer = clean_answer(&parsed.answer, &opts.eos_marker);
    let segment = Segment {
        context_id,
        continued,
        answer,
        raw_completion: completion.text,
        tokens: completion.tokens,
        score,
        eos,
    };
    let mut segments = state.segments.clone();
    let cumulative_score = state.cumulative_score + segment.score.rank_score;
    let terminal = segment.eos;
    segments.push(segment);
    Ok(BeamState { segments, cumulative_score, depth: state.depth + 1, terminal })
}

/// Segment-level beam search: at each depth every surviving state expands
/// against every context (plus an optional continuation of its previous
/// context), children are ranked by cumulative score, and the `beam_size`
/// best survive. Generation ends at the end marker or `max_depth`.
pub fn answer_long(
    id: &str,
    question: &str,
    contexts: &[RetrievedContext],
    backend: &dyn Backend,
    beam_size: usize,
    max_depth: usize,
    opts: &EngineOptions,
) -> Result<LongFormResult, EngineError> {
    if beam_size == 0 {
        return Err(EngineError::BadConfig("beam_size must be >= 1".into()));
    }
    if max_depth == 0 {
        return Err(EngineError::BadConfig("max_depth must be >= 1".into()));
    }
    if contexts.is_empty() {
        return Err(EngineError::NoCandidates);
    }
    let base = opts.template.render(question);
    let mut frontier = vec![BeamState::root()];
    let mut depths: Vec<Vec<BeamStateSummary>> = Vec::new();
    let mut dropped: Vec<DroppedCandidate> = Vec::new();

    for _depth in 1..=max_depth {
        if frontier.iter().all(|s| s.terminal) {
            break;
        }
        let mut children: Vec<BeamState> = Vec::new();
        for state in &frontier {
            if state.terminal {
                children.push(state.clone());
                continue;
            }
            for ctx in contexts {
                match expand_state(&base, state, Expansion::Context(ctx), backend, opts) {
                    Ok(child) => children.push(child),
                    Err(e) => dropped
                        .push(DroppedCandidate { context_id: ctx.id.clone(), error: e.to_string() }),
                }
            }
            if opts.enable_continue && !state.segments.is_empty() {
                match expand_state(&base, state, Expansion::Continue, backend, opts) {
                    Ok(child) => children.push(child),
                    Err(e) => dropped.push(DroppedCandidate {
                        context_id: "[Continue]".to_string(),
                        error: e.to_string(),
                    }),
                }
            }
        }
        if children.is_empty() {
            return Err(EngineError::AllCandidatesFailed(
                dropped.iter().map(|d| d.error.clone()).collect(),
            ));
        }
        // Stable sort: equal scores keep creation order, so earlier
        // contexts win ties deterministically.
        children.sort_by(|a, b| {
            b.key(opts.cumulative_mean)
                .partial_cmp(&a.key(opts.cumulative_mean))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        children.truncate(beam_size);
        depths.push(children.iter().map(BeamState::summary).collect());
        frontier = children;
    }

    let best = frontier
        .iter()
        .max_by(|a, b| {
            a.key(opts.cumulative_mean)
                .partial_cmp(&b.key(opts.cumulative_mean))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("frontier is never empty")
        .clone();
    let answer = best.answer_text();

    // The best path's segments go into the trace as full candidates so the
    // scores stay recomputable; other beam states keep summaries only.
    let candidates: Vec<Candidate> = best
        .segments
        .iter()
        .map(|s| Candidate {
            context: RetrievedContext {
                id: s.context_id.clone().unwrap_or_else(|| "[Continue]".to_string()),
                passages: Vec::new(),
                retriever_score: None,
            },
            prompt: String::new(),
            answer: s.answer.clone(),
            raw_completion: s.raw_completion.clone(),
            tokens: s.tokens.clone(),
            retries: 0,
            score: s.score.clone(),
        })
        .collect();
    let trace = QueryTrace {
        id: id.to_string(),
        question: question.to_string(),
        mode: "long".to_string(),
        seed: None,
        template: opts.template.name().to_string(),
        weights: opts.weights,
        collapse: opts.collapse.clone(),
        adaptive: None,
        decision: None,
        parametric: None,
        answer: answer.clone(),
        candidates,
        dropped,
        beam: Some(BeamMeta {
            beam_size,
            max_depth,
            cumulative: if opts.cumulative_mean { "mean" } else { "sum" }.to_string(),
            depths,
        }),
    };
    Ok(LongFormResult { answer, best, trace })
}

/// Read a query file (JSONL of [`crate::evalkit::EvalQuery`]).
pub fn read_query_file(
    path: impl AsRef<std::path::Path>,
) -> Result<Vec<crate::evalkit::EvalQuery>, EngineError> {
    let file = std::fs::File::open(path)?;
    crate::evalkit::read_queries_jsonl(std::io::BufReader::new(file))
        .map_err(|e| EngineError::BadConfig(e.to_string()))
}
