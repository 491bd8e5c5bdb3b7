//! Candidate rank scores: the weighted sum of collapsed group confidences.

use serde::{Deserialize, Serialize};

use super::confidence::GroupConfidence;

/// Weights of the Relevance, Grounding and Utility terms. The sequence
/// likelihood term is off by default; enabling it adds the mean answer
/// token log-probability to the score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub w_rel: f64,
    pub w_grd: f64,
    pub w_utl: f64,
    pub include_seq_term: bool,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights { w_rel: 1.0, w_grd: 1.0, w_utl: 0.5, include_seq_term: false }
    }
}

/// Everything needed to rank one candidate answer. `rank_score` is always
/// recomputable from the other fields and the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub relevance: GroupConfidence,
    pub grounding: GroupConfidence,
    pub utility: GroupConfidence,
    pub seq_logprob_mean: f64,
    pub rank_score: f64,
}

impl CandidateScore {
    pub fn compute(
        relevance: GroupConfidence,
        grounding: GroupConfidence,
        utility: GroupConfidence,
        seq_logprob_mean: f64,
        weights: &ScoreWeights,
    ) -> CandidateScore {
        let rank_score =
            rank_score(&relevance, &grounding, &utility, seq_logprob_mean, weights);
        CandidateScore { relevance, grounding, utility, seq_logprob_mean, rank_score }
    }

    /// Recompute the score from the stored confidences; used to verify
    /// traces offline.
    pub fn recompute(&self, weights: &ScoreWeights) -> f64 {
        rank_score(&self.relevance, &self.grounding, &self.utility, self.seq_logprob_mean, weights)
    }
}

pub fn rank_score(
    relevance: &GroupConfidence,
    grounding: &GroupConfidence,
    utility: &GroupConfidence,
    seq_logprob_mean: f64,
    w: &ScoreWeights,
) -> f64 {
    let mut score =
        w.w_rel * relevance.scalar + w.w_grd * grounding.scalar + w.w_utl * utility.scalar;
    if w.include_seq_term {
        score += seq_logprob_mean;
    }
    score
}
