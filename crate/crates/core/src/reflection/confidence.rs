//! Per-group token confidences.
//!
//! The backend reports log-probabilities for whichever group variants it
//! saw at a token position. `normalize_group` turns those into a proper
//! distribution over the whole group (absent variants get probability 0)
//! and collapses it to a single scalar in [0, 1] used for ranking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::token::{Group, GroundingToken, ReflectionToken, RelevanceToken, RetrievalToken};
use super::ReflectionError;

/// How each group's distribution collapses to a scalar.
///
/// Relevance collapses to p(Relevant) and Retrieval to p(NoRT); those are
/// not configurable. Grounding and Utility use weighted sums over the
/// variants in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseConfig {
    /// Weights for (FullySupported, PartiallySupported, NoSupport).
    pub grounding_weights: [f64; 3],
    /// Weights for (U:1, ..., U:5).
    pub utility_weights: [f64; 5],
}

impl Default for CollapseConfig {
    fn default() -> Self {
        CollapseConfig {
            grounding_weights: [1.0, 0.5, 0.0],
            // Rank-linear: (rating - 1) / 4.
            utility_weights: [0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

/// A normalized distribution over one group's variants plus its collapsed
/// scalar confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupConfidence {
    pub group: Group,
    pub probs: BTreeMap<ReflectionToken, f64>,
    pub scalar: f64,
}

impl GroupConfidence {
    /// Probability of one variant (0 if it is not in the map).
    pub fn prob(&self, token: ReflectionToken) -> f64 {
        self.probs.get(&token).copied().unwrap_or(0.0)
    }

    /// Point mass on the group's zero-confidence variant. Used when a
    /// completion carries no token of this group at all.
    pub fn absent(group: Group, cfg: &CollapseConfig) -> GroupConfidence {
        let mut probs = BTreeMap::new();
        for v in group.variants() {
            probs.insert(*v, 0.0);
        }
        probs.insert(group.worst_variant(), 1.0);
        let mut gc = GroupConfidence { group, probs, scalar: 0.0 };
        gc.scalar = collapse_group_with(&gc, cfg);
        gc
    }
}

/// Normalize per-variant log-probabilities into a distribution over the
/// group. Missing variants count as probability 0. The shared maximum is
/// subtracted before exponentiation, so adding a constant to every input
/// leaves the result unchanged.
pub fn normalize_group(
    logprobs: &BTreeMap<ReflectionToken, f64>,
    group: Group,
) -> Result<GroupConfidence, ReflectionError> {
    normalize_group_with(logprobs, group, &CollapseConfig::default())
}

pub fn normalize_group_with(
    logprobs: &BTreeMap<ReflectionToken, f64>,
    group: Group,
    cfg: &CollapseConfig,
) -> Result<GroupConfidence, ReflectionError> {
    let variants = group.variants();
    let mut max_lp = f64::NEG_INFINITY;
    let mut any = false;
    for v in variants {
        if let Some(lp) = logprobs.get(v) {
            if lp.is_finite() {
                any = true;
                max_lp = max_lp.max(*lp);
            }
        }
    }
    if !any {
        return Err(ReflectionError::EmptyGroup { group });
    }
    let mut probs = BTreeMap::new();
    let mut sum = 0.0;
    for v in variants {
        let p = match logprobs.get(v) {
            Some(lp) if lp.is_finite() => (lp - max_lp).exp(),
            _ => 0.0,
        };
        sum += p;
        probs.insert(*v, p);
    }
    for p in probs.values_mut() {
        *p /= sum;
    }
    let mut gc = GroupConfidence { group, probs, scalar: 0.0 };
    gc.scalar = collapse_group_with(&gc, cfg);
    Ok(gc)
}

/// Collapse a group distribution to a scalar in [0, 1] with the default
/// weights.
pub fn collapse_group(gc: &GroupConfidence) -> f64 {
    collapse_group_with(gc, &CollapseConfig::default())
}

pub fn collapse_group_with(gc: &GroupConfidence, cfg: &CollapseConfig) -> f64 {
    match gc.group {
        Group::Relevance => gc.prob(ReflectionToken::Relevance(RelevanceToken::Relevant)),
        Group::Grounding => {
            let g = [
                GroundingToken::FullySupported,
                GroundingToken::PartiallySupported,
                GroundingToken::NoSupport,
            ];
            g.iter()
                .zip(cfg.grounding_weights.iter())
                .map(|(v, w)| w * gc.prob(ReflectionToken::Grounding(*v)))
                .sum()
        }
        Group::Utility => Group::Utility
            .variants()
            .iter()
            .zip(cfg.utility_weights.iter())
            .map(|(v, w)| w * gc.prob(*v))
            .sum(),
        // The no-retrieval confidence; what the adaptive threshold reads.
        Group::Retrieval => gc.prob(ReflectionToken::Retrieval(RetrievalToken::NoRt)),
        Group::Continue => gc.prob(ReflectionToken::Continue),
    }
}
