//! Multi-hop training-data preparation.
//!
//! A source QA pair carries supporting and non-supporting (distractor)
//! context passages. A critic labels the pair with a retrieval token and a
//! utility rating; retrieval-free pairs become a single instance, pairs
//! that need retrieval become three contrastive instances built from
//! sampled passage bundles:
//!
//! - two supporting passages, relevant and fully supported;
//! - one supporting plus one distractor, relevant but partially supported;
//! - two distractors, irrelevant, no grounding token.
//!
//! Every emitted output string parses back under the reflection grammar.

use std::io::Write;

use rand::RngExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError};
use crate::reflection::{
    parse_with, GroundingToken, ParsedOutput, RelevanceToken, RetrievalToken,
    SpellingTable, UtilityToken,
};

pub const MULTI_HOP_INSTRUCTION_TEMPLATE: &str = include_str!("../assets/multi_hop_v1.txt");
pub const MULTI_HOP_INSTRUCTION_VERSION: &str = "multi_hop_v1";
const CRITIC_PROMPT_TEMPLATE: &str = include_str!("../assets/critic_prompt_v1.txt");

/// Passages inside one bundle are joined with a single newline.
pub const PASSAGE_JOIN: &str = "\n";

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("pair {id}: retrieval case needs >= 2 supporting and >= 2 non-supporting contexts, found {supporting}/{nonsupporting}")]
    InsufficientContexts { id: String, supporting: usize, nonsupporting: usize },
    #[error("empty passage flag list")]
    EmptyList,
    #[error("critic failure: {0}")]
    Critic(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Reflection(#[from] crate::reflection::ReflectionError),
    #[error("bad input line {line}: {message}")]
    BadInput { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl DatagenError {
    /// Pair-level problems are skipped and counted; everything else aborts
    /// the corpus run.
    fn is_pair_level(&self) -> bool {
        matches!(self, DatagenError::InsufficientContexts { .. } | DatagenError::Critic(_))
    }
}

/// One source QA pair with its annotated context pools.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceQaPair {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub supporting: Vec<String>,
    pub nonsupporting: Vec<String>,
}

/// Critic labels for one pair. Relevance and grounding slots exist for
/// single-hop style critics; the multi-hop pipeline derives those tokens
/// from passage-set membership instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticVerdict {
    pub retrieval: RetrievalToken,
    pub utility: UtilityToken,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<RelevanceToken>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<GroundingToken>,
}

pub trait Critic {
    fn assess(&self, pair: &SourceQaPair) -> Result<CriticVerdict, DatagenError>;
}

/// Rule-based critic for tests and dry runs: retrieval is needed exactly
/// when supporting contexts exist, and a non-empty answer gets top
/// utility.
pub struct MockCritic;

impl Critic for MockCritic {
    fn assess(&self, pair: &SourceQaPair) -> Result<CriticVerdict, DatagenError> {
        Ok(CriticVerdict {
            retrieval: if pair.supporting.is_empty() {
                RetrievalToken::NoRt
            } else {
                RetrievalToken::Rt
            },
            utility: if pair.answer.trim().is_empty() { UtilityToken::U1 } else { UtilityToken::U5 },
            relevance: None,
            grounding: None,
        })
    }
}

/// Critic that prompts a model over the completion protocol and reads the
/// retrieval and utility tokens out of the reply.
pub struct RemoteCritic {
    backend: Box<dyn Backend>,
}

impl RemoteCritic {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        RemoteCritic { backend }
    }
}

impl Critic for RemoteCritic {
    fn assess(&self, pair: &SourceQaPair) -> Result<CriticVerdict, DatagenError> {
        let prompt = CRITIC_PROMPT_TEMPLATE
            .replace("{question}", &pair.question)
            .replace("{answer}", &pair.answer);
        let completion = self.backend.complete(&prompt, &[])?;
        let parsed = parse_with(crate::reflection::default_table(), &completion.text)
            .map_err(|e| DatagenError::Critic(format!("unparseable verdict: {e}")))?;
        let retrieval = parsed.retrieval.ok_or_else(|| {
            DatagenError::Critic(format!("no retrieval token in verdict {:?}", completion.text))
        })?;
        let utility = parsed.utility.ok_or_else(|| {
            DatagenError::Critic(format!("no utility token in verdict {:?}", completion.text))
        })?;
        Ok(CriticVerdict {
            retrieval,
            utility,
            relevance: parsed.relevance,
            grounding: parsed.grounding,
        })
    }
}

/// Which of the contrastive templates produced an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoKind {
    Rho0,
    Rho1,
    Rho2,
    Rho3,
}

impl RhoKind {
    pub const ALL: [RhoKind; 4] = [RhoKind::Rho0, RhoKind::Rho1, RhoKind::Rho2, RhoKind::Rho3];

    pub fn index(self) -> usize {
        match self {
            RhoKind::Rho0 => 0,
            RhoKind::Rho1 => 1,
            RhoKind::Rho2 => 2,
            RhoKind::Rho3 => 3,
        }
    }
}

/// Where an instance came from: the source pair, the template, and the
/// sampled passage ids (`P<i>` supporting, `N<i>` non-supporting, in
/// sampling order).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub rho_kind: RhoKind,
    pub passage_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub instruction: String,
    pub output: String,
    pub provenance: Provenance,
}

/// Hop-unified relevance: a bundle is relevant if at least one passage is.
pub fn hop_unified_relevance(passage_flags: &[bool]) -> Result<RelevanceToken, DatagenError> {
    if passage_flags.is_empty() {
        return Err(DatagenError::EmptyList);
    }
    Ok(if passage_flags.iter().any(|&f| f) {
        RelevanceToken::Relevant
    } else {
        RelevanceToken::Irrelevant
    })
}

/// Data-contrastive grounding: fully supported only when every passage in
/// the bundle supports the answer.
pub fn contrastive_grounding(
    passage_support_flags: &[bool],
) -> Result<GroundingToken, DatagenError> {
    if passage_support_flags.is_empty() {
        return Err(DatagenError::EmptyList);
    }
    Ok(if passage_support_flags.iter().all(|&f| f) {
        GroundingToken::FullySupported
    } else {
        GroundingToken::PartiallySupported
    })
}

pub fn render_instruction(question: &str) -> String {
    MULTI_HOP_INSTRUCTION_TEMPLATE.replace("{question}", question)
}

struct Bundle {
    passages: Vec<String>,
    ids: Vec<String>,
    support_flags: Vec<bool>,
}

/// Two distinct indices sampled uniformly without replacement.
fn sample_two_distinct(rng: &mut dyn rand::Rng, len: usize) -> (usize, usize) {
    let first = rng.random_range(0..len);
    let mut second = rng.random_range(0..len - 1);
    if second >= first {
        second += 1;
    }
    (first, second)
}

fn instance_from_bundle(
    pair: &SourceQaPair,
    verdict: &CriticVerdict,
    bundle: Bundle,
    rho_kind: RhoKind,
    table: &SpellingTable,
) -> Result<TrainingInstance, DatagenError> {
    let relevance = hop_unified_relevance(&bundle.support_flags)?;
    let grounding = match relevance {
        RelevanceToken::Relevant => Some(contrastive_grounding(&bundle.support_flags)?),
        RelevanceToken::Irrelevant => None,
    };
    let output = ParsedOutput {
        retrieval: Some(RetrievalToken::Rt),
        relevance: Some(relevance),
        grounding,
        utility: Some(verdict.utility),
        continued: false,
        passage: Some(bundle.passages.join(PASSAGE_JOIN)),
        answer: pair.answer.clone(),
    }
    .render_with(table);
    Ok(TrainingInstance {
        instruction: render_instruction(&pair.question),
        output,
        provenance: Provenance {
            source_id: pair.id.clone(),
            rho_kind,
            passage_ids: bundle.ids,
        },
    })
}

/// Build the training instances for one pair: one retrieval-free instance,
/// or the three contrastive retrieval instances.
pub fn build_instances(
    pair: &SourceQaPair,
    critic: &dyn Critic,
    rng: &mut dyn rand::Rng,
) -> Result<Vec<TrainingInstance>, DatagenError> {
    build_instances_with(pair, critic, rng, crate::reflection::default_table())
}

pub fn build_instances_with(
    pair: &SourceQaPair,
    critic: &dyn Critic,
    rng: &mut dyn rand::Rng,
    table: &SpellingTable,
) -> Result<Vec<TrainingInstance>, DatagenError> {
    let verdict = critic.assess(pair)?;
    match verdict.retrieval {
        RetrievalToken::NoRt => {
            let output = ParsedOutput {
                retrieval: Some(RetrievalToken::NoRt),
                utility: Some(verdict.utility),
                answer: pair.answer.clone(),
                ..ParsedOutput::default()
            }
            .render_with(table);
            Ok(vec![TrainingInstance {
                instruction: render_instruction(&pair.question),
                output,
                provenance: Provenance {
                    source_id: pair.id.clone(),
                    rho_kind: RhoKind::Rho0,
                    passage_ids: Vec::new(),
                },
            }])
        }
        RetrievalToken::Rt => {
            let (np, nn) = (pair.supporting.len(), pair.nonsupporting.len());
            if np < 2 || nn < 2 {
                return Err(DatagenError::InsufficientContexts {
                    id: pair.id.clone(),
                    supporting: np,
                    nonsupporting: nn,
                });
            }
            // Sampling order is fixed so a seeded run is reproducible:
            // the fully-supported pair, then the mixed pair (supporting
            // first), then the distractor pair.
            let (s1, s2) = sample_two_distinct(rng, np);
            let rho1 = instance_from_bundle(
                pair,
                &verdict,
                Bundle {
                    passages: vec![pair.supporting[s1].clone(), pair.supporting[s2].clone()],
                    ids: vec![format!("P{s1}"), format!("P{s2}")],
                    support_flags: vec![true, true],
                },
                RhoKind::Rho1,
                table,
            )?;
            let s3 = rng.random_range(0..np);
            let n1 = rng.random_range(0..nn);
            let rho2 = instance_from_bundle(
                pair,
                &verdict,
                Bundle {
                    passages: vec![pair.supporting[s3].clone(), pair.nonsupporting[n1].clone()],
                    ids: vec![format!("P{s3}"), format!("N{n1}")],
                    support_flags: vec![true, false],
                },
                RhoKind::Rho2,
                table,
            )?;
            let (n2, n3) = sample_two_distinct(rng, nn);
            let rho3 = instance_from_bundle(
                pair,
                &verdict,
                Bundle {
                    passages: vec![pair.nonsupporting[n2].clone(), pair.nonsupporting[n3].clone()],
                    ids: vec![format!("N{n2}"), format!("N{n3}")],
                    support_flags: vec![false, false],
                },
                RhoKind::Rho3,
                table,
            )?;
            Ok(vec![rho1, rho2, rho3])
        }
    }
}

/// Corpus-level counters. The identity
/// `instances_emitted == rho_counts[0] + 3 * retrieval_pairs` holds
/// exactly.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusSummary {
    pub pairs_seen: u64,
    pub pairs_skipped: u64,
    pub instances_emitted: u64,
    /// Counts indexed by [`RhoKind::index`].
    pub rho_counts: [u64; 4],
}

impl CorpusSummary {
    pub fn retrieval_pairs(&self) -> u64 {
        // Each retrieval pair contributes exactly one instance per
        // contrastive template.
        self.rho_counts[1]
    }
}

/// Stream training instances for a whole corpus as JSONL, in input order.
/// Pair-level failures (insufficient contexts, critic refusals) are
/// skipped and counted; I/O errors abort.
pub fn run_corpus<I>(
    pairs: I,
    critic: &dyn Critic,
    rng: &mut dyn rand::Rng,
    sink: &mut dyn Write,
) -> Result<CorpusSummary, DatagenError>
where
    I: IntoIterator<Item = Result<SourceQaPair, DatagenError>>,
{
    let mut summary = CorpusSummary::default();
    for pair in pairs {
        let pair = pair?;
        summary.pairs_seen += 1;
        match build_instances(&pair, critic, rng) {
            Ok(instances) => {
                for instance in instances {
                    let line = serde_json::to_string(&instance)
                        .map_err(|e| DatagenError::Io(std::io::Error::other(e)))?;
                    writeln!(sink, "{line}")?;
                    summary.rho_counts[instance.provenance.rho_kind.index()] += 1;
                    summary.instances_emitted += 1;
                }
            }
            Err(e) if e.is_pair_level() => summary.pairs_skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(summary)
}

/// Iterate a JSONL reader of source pairs, reporting the offending line on
/// parse errors.
pub fn read_pairs_jsonl<R: std::io::BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<SourceQaPair, DatagenError>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(DatagenError::Io(e))),
        Ok(line) if line.trim().is_empty() => None,
        Ok(line) => Some(serde_json::from_str(&line).map_err(|e| DatagenError::BadInput {
            line: i + 1,
            message: e.to_string(),
        })),
    })
}
