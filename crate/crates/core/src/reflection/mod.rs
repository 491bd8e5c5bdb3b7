//! Reflection-token vocabulary, output parsing, and candidate scoring.

mod confidence;
mod parser;
mod score;
mod token;

pub use confidence::{
    collapse_group, collapse_group_with, normalize_group, normalize_group_with, CollapseConfig,
    GroupConfidence,
};
pub use parser::{parse_reflection_output, parse_with, ParsedOutput, PASSAGE_CLOSE, PASSAGE_OPEN};
pub use score::{rank_score, CandidateScore, ScoreWeights};
pub use token::{
    default_table, Group, GroundingToken, ReflectionToken, RelevanceToken, RetrievalToken,
    SpellingTable, UtilityToken,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReflectionError {
    #[error("malformed output: two {group} tokens in one completion")]
    MalformedOutput { group: Group },
    #[error("no {group} variant with a finite log-probability")]
    EmptyGroup { group: Group },
    #[error("unknown reflection token {0:?}")]
    UnknownToken(String),
    #[error("surface {0:?} is already assigned to another token")]
    DuplicateSurface(String),
}
