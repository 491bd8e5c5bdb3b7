//! Adaptive retrieval: sequence-confidence scoring of the enforced
//! no-retrieval generation, the threshold decision, and sweep tooling.
//!
//! Three confidence scores are supported: the minimum per-token
//! probability, the geometric mean of per-token probabilities (computed in
//! log space), and the normalized probability of the no-retrieval token.
//! Retrieval triggers when the score falls strictly below the threshold
//! gamma, so a larger gamma retrieves more often; a flipped comparison is
//! available for reproduction studies of setups that quote the opposite
//! convention.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, Completion};
use crate::reflection::{
    normalize_group, Group, GroupConfidence, ReflectionToken, RetrievalToken, SpellingTable,
};

/// Probabilities of exactly 0 are clamped to this before log-space math.
pub const PROB_FLOOR: f64 = 1e-30;

#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error("empty token sequence")]
    EmptySequence,
    #[error("non-positive token probability {0}")]
    NonPositiveProbability(f64),
    #[error("confidence group is empty or not a retrieval group")]
    EmptyGroup,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Reflection(#[from] crate::reflection::ReflectionError),
    #[error("csv parse error at line {line}: {message}")]
    CsvParse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMethod {
    /// Minimum of the per-token probabilities.
    MinProb,
    /// Geometric mean of the per-token probabilities.
    GeoMeanProb,
    /// Normalized probability of the no-retrieval token.
    RetrievalProb,
}

impl ConfidenceMethod {
    /// Short label used in CLI flags and output file names.
    pub fn label(self) -> &'static str {
        match self {
            ConfidenceMethod::MinProb => "minp",
            ConfidenceMethod::GeoMeanProb => "meanp",
            ConfidenceMethod::RetrievalProb => "ret",
        }
    }

    pub fn parse_label(s: &str) -> Option<ConfidenceMethod> {
        match s {
            "minp" => Some(ConfidenceMethod::MinProb),
            "meanp" => Some(ConfidenceMethod::GeoMeanProb),
            "ret" => Some(ConfidenceMethod::RetrievalProb),
            _ => None,
        }
    }
}

impl fmt::Display for ConfidenceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfidence {
    pub method: ConfidenceMethod,
    pub value: f64,
    pub token_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalDecision {
    pub gamma: f64,
    pub score: SequenceConfidence,
    pub retrieve: bool,
}

/// One point of a threshold sweep curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub retrieval_frequency: f64,
    pub accuracy: f64,
    pub n_queries: usize,
}

/// Minimum of the per-token probabilities.
pub fn min_prob(token_probs: &[f64]) -> Result<f64, AdaptiveError> {
    if token_probs.is_empty() {
        return Err(AdaptiveError::EmptySequence);
    }
    Ok(token_probs.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Geometric mean of the per-token probabilities, exp(mean(ln p)).
pub fn geo_mean_prob(token_probs: &[f64]) -> Result<f64, AdaptiveError> {
    if token_probs.is_empty() {
        return Err(AdaptiveError::EmptySequence);
    }
    let mut sum = 0.0;
    for &p in token_probs {
        if p <= 0.0 {
            return Err(AdaptiveError::NonPositiveProbability(p));
        }
        sum += p.ln();
    }
    Ok((sum / token_probs.len() as f64).exp())
}

/// The no-retrieval confidence read from a normalized Retrieval group:
/// p(NoRT). Note this is the probability itself, not its logarithm.
pub fn no_retrieval_confidence(gc: &GroupConfidence) -> Result<f64, AdaptiveError> {
    if gc.group != Group::Retrieval || gc.probs.is_empty() {
        return Err(AdaptiveError::EmptyGroup);
    }
    Ok(gc.prob(ReflectionToken::Retrieval(RetrievalToken::NoRt)))
}

/// Clamp zeros to [`PROB_FLOOR`], returning the clamped list and how many
/// entries were affected.
pub fn clamp_probs(token_probs: &[f64]) -> (Vec<f64>, usize) {
    let mut clamped = 0usize;
    let out = token_probs
        .iter()
        .map(|&p| {
            if p < PROB_FLOOR {
                clamped += 1;
                PROB_FLOOR
            } else {
                p
            }
        })
        .collect();
    (out, clamped)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecideOptions {
    pub method: ConfidenceMethod,
    pub gamma: f64,
    /// Include reflection-token and delimiter positions in the confidence
    /// score instead of answer tokens only.
    #[serde(default)]
    pub include_reflection_tokens: bool,
    /// Trigger retrieval when the score is *above* gamma instead of below.
    #[serde(default)]
    pub flip_comparison: bool,
}

impl DecideOptions {
    pub fn new(method: ConfidenceMethod, gamma: f64) -> Self {
        DecideOptions { method, gamma, include_reflection_tokens: false, flip_comparison: false }
    }

    fn should_retrieve(&self, score: f64) -> bool {
        if self.flip_comparison {
            score > self.gamma
        } else {
            score < self.gamma
        }
    }
}

/// Outcome of a retrieval decision. For the token-probability methods the
/// no-retrieval completion generated along the way is kept so callers can
/// reuse it as the parametric answer.
#[derive(Debug, Clone)]
pub struct DecideOutcome {
    pub decision: RetrievalDecision,
    pub completion: Option<Completion>,
    /// Token probabilities clamped up to the floor.
    pub clamped: usize,
}

/// Per-token answer probabilities of a completion: reflection-token and
/// passage-delimiter positions are excluded unless asked for.
pub fn answer_token_probs(
    completion: &Completion,
    table: &SpellingTable,
    include_reflection_tokens: bool,
    extra_excluded: &[String],
) -> Vec<f64> {
    completion
        .tokens
        .iter()
        .filter(|t| {
            if include_reflection_tokens {
                return true;
            }
            let trimmed = t.token.trim();
            !(table.is_token_surface(trimmed)
                || trimmed == crate::reflection::PASSAGE_OPEN
                || trimmed == crate::reflection::PASSAGE_CLOSE
                || extra_excluded.iter().any(|s| s == trimmed))
        })
        .map(|t| t.logprob.exp())
        .collect()
}

/// Decide whether to retrieve for the prompt. `prompt` is the already
/// rendered instruction; the no-retrieval token is appended here.
pub fn decide(
    prompt: &str,
    backend: &dyn Backend,
    table: &SpellingTable,
    opts: &DecideOptions,
) -> Result<DecideOutcome, AdaptiveError> {
    let nort = table.canonical(ReflectionToken::Retrieval(RetrievalToken::NoRt));
    match opts.method {
        ConfidenceMethod::RetrievalProb => {
            let rt = table.canonical(ReflectionToken::Retrieval(RetrievalToken::Rt));
            let lp_rt: f64 = backend.token_logprobs(prompt, rt)?.iter().sum();
            let lp_nort: f64 = backend.token_logprobs(prompt, nort)?.iter().sum();
            let mut logprobs = std::collections::BTreeMap::new();
            logprobs.insert(ReflectionToken::Retrieval(RetrievalToken::Rt), lp_rt);
            logprobs.insert(ReflectionToken::Retrieval(RetrievalToken::NoRt), lp_nort);
            let gc = normalize_group(&logprobs, Group::Retrieval)?;
            let value = no_retrieval_confidence(&gc)?;
            let score = SequenceConfidence {
                method: opts.method,
                value,
                token_probs: vec![value],
            };
            Ok(DecideOutcome {
                decision: RetrievalDecision {
                    gamma: opts.gamma,
                    retrieve: opts.should_retrieve(value),
                    score,
                },
                completion: None,
                clamped: 0,
            })
        }
        ConfidenceMethod::MinProb | ConfidenceMethod::GeoMeanProb => {
            let forced = format!("{prompt}{nort}");
            let completion = backend.complete(&forced, &[])?;
            let raw =
                answer_token_probs(&completion, table, opts.include_reflection_tokens, &[]);
            if raw.is_empty() {
                return Err(AdaptiveError::EmptySequence);
            }
            let (probs, clamped) = clamp_probs(&raw);
            let value = match opts.method {
                ConfidenceMethod::MinProb => min_prob(&probs)?,
                ConfidenceMethod::GeoMeanProb => geo_mean_prob(&probs)?,
                ConfidenceMethod::RetrievalProb => unreachable!(),
            };
            let score = SequenceConfidence { method: opts.method, value, token_probs: probs };
            Ok(DecideOutcome {
                decision: RetrievalDecision {
                    gamma: opts.gamma,
                    retrieve: opts.should_retrieve(value),
                    score,
                },
                completion: Some(completion),
                clamped,
            })
        }
    }
}

/// Per-query inputs to a sweep curve: the confidence score (computed once
/// and reused for every gamma) and the correctness of the two answers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub id: String,
    pub confidence: f64,
    pub correct_retrieve: f64,
    pub correct_parametric: f64,
}

/// Build the trade-off curve over the gamma grid.
pub fn sweep_points(
    outcomes: &[QueryOutcome],
    gammas: &[f64],
    flip_comparison: bool,
) -> Result<Vec<SweepPoint>, AdaptiveError> {
    if outcomes.is_empty() {
        return Err(AdaptiveError::EmptySequence);
    }
    let n = outcomes.len();
    let mut points = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let mut retrieved = 0usize;
        let mut correct_sum = 0.0;
        for o in outcomes {
            let retrieve = if flip_comparison {
                o.confidence > gamma
            } else {
                o.confidence < gamma
            };
            if retrieve {
                retrieved += 1;
                correct_sum += o.correct_retrieve;
            } else {
                correct_sum += o.correct_parametric;
            }
        }
        points.push(SweepPoint {
            gamma,
            retrieval_frequency: retrieved as f64 / n as f64,
            accuracy: correct_sum / n as f64,
            n_queries: n,
        });
    }
    Ok(points)
}

pub const SWEEP_CSV_HEADER: &str = "gamma,retrieval_frequency,accuracy,n_queries";

/// Plot-ready CSV. Floats print in shortest round-trip form, so reading
/// the file back reproduces the values bit-exactly.
pub fn write_sweep_csv(mut w: impl Write, points: &[SweepPoint]) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for p in points {
        writeln!(w, "{},{},{},{}", p.gamma, p.retrieval_frequency, p.accuracy, p.n_queries)?;
    }
    Ok(())
}

pub fn read_sweep_csv(r: impl BufRead) -> Result<Vec<SweepPoint>, AdaptiveError> {
    let mut points = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != SWEEP_CSV_HEADER {
                return Err(AdaptiveError::CsvParse {
                    line: 1,
                    message: format!("expected header {SWEEP_CSV_HEADER:?}, got {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(AdaptiveError::CsvParse {
                line: i + 1,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64, AdaptiveError> {
            s.parse().map_err(|e| AdaptiveError::CsvParse {
                line: i + 1,
                message: format!("bad {what} {s:?}: {e}"),
            })
        };
        points.push(SweepPoint {
            gamma: parse(fields[0], "gamma")?,
            retrieval_frequency: parse(fields[1], "retrieval_frequency")?,
            accuracy: parse(fields[2], "accuracy")?,
            n_queries: fields[3].parse().map_err(|e| AdaptiveError::CsvParse {
                line: i + 1,
                message: format!("bad n_queries {:?}: {e}", fields[3]),
            })?,
        });
    }
    Ok(points)
}

pub fn write_sweep_json(w: impl Write, points: &[SweepPoint]) -> Result<(), AdaptiveError> {
    serde_json::to_writer_pretty(w, points)
        .map_err(|e| AdaptiveError::Io(std::io::Error::other(e)))
}
