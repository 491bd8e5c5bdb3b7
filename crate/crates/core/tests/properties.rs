//! Property tests over the library invariants.

use std::collections::BTreeMap;

use proptest::prelude::*;

use reflectrag::adaptive::{geo_mean_prob, min_prob, sweep_points, QueryOutcome};
use reflectrag::moe::{route_detailed, RouterWeights};
use reflectrag::reflection::{
    normalize_group, parse_reflection_output, rank_score, CollapseConfig, Group, GroundingToken,
    GroupConfidence, ParsedOutput, ReflectionToken, RelevanceToken, RetrievalToken, UtilityToken,
};

fn answer_text() -> impl Strategy<Value = String> {
    // Free text without bracketed tokens or passage delimiters.
    "[a-zA-Z0-9 ,.'-]{1,40}"
}

fn utility() -> impl Strategy<Value = UtilityToken> {
    prop::sample::select(UtilityToken::ALL.to_vec())
}

/// Outputs shaped like the training grammar: the retrieval-free form and
/// the three retrieval forms.
fn grammar_output() -> impl Strategy<Value = ParsedOutput> {
    let rho0 = (answer_text(), utility()).prop_map(|(answer, u)| ParsedOutput {
        retrieval: Some(RetrievalToken::NoRt),
        utility: Some(u),
        answer,
        ..ParsedOutput::default()
    });
    let retrieval = (
        answer_text(),
        answer_text(),
        answer_text(),
        utility(),
        prop::sample::select(vec![
            (Some(RelevanceToken::Relevant), Some(GroundingToken::FullySupported)),
            (Some(RelevanceToken::Relevant), Some(GroundingToken::PartiallySupported)),
            (Some(RelevanceToken::Irrelevant), None),
        ]),
    )
        .prop_map(|(p1, p2, answer, u, (relevance, grounding))| ParsedOutput {
            retrieval: Some(RetrievalToken::Rt),
            relevance,
            grounding,
            utility: Some(u),
            continued: false,
            passage: Some(format!("{p1}\n{p2}")),
            answer,
        });
    prop_oneof![rho0, retrieval]
}

proptest! {
    #[test]
    fn parser_roundtrips_grammar_strings(output in grammar_output()) {
        let rendered = output.render();
        let parsed = parse_reflection_output(&rendered).unwrap();
        prop_assert_eq!(parsed.render(), rendered);
    }

    #[test]
    fn normalized_groups_sum_to_one(
        lps in prop::collection::vec(-30.0f64..0.0, 1..=5),
        group in prop::sample::select(vec![Group::Relevance, Group::Grounding, Group::Utility]),
    ) {
        let variants = group.variants();
        let map: BTreeMap<ReflectionToken, f64> = variants
            .iter()
            .zip(lps.iter())
            .map(|(v, lp)| (*v, *lp))
            .collect();
        let gc = normalize_group(&map, group).unwrap();
        let total: f64 = gc.probs.values().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&gc.scalar));
    }

    #[test]
    fn normalization_is_shift_invariant(
        lps in prop::collection::vec(-20.0f64..0.0, 2),
        shift in -50.0f64..50.0,
    ) {
        let variants = Group::Relevance.variants();
        let base: BTreeMap<_, _> = variants.iter().zip(lps.iter()).map(|(v, lp)| (*v, *lp)).collect();
        let shifted: BTreeMap<_, _> = base.iter().map(|(k, v)| (*k, v + shift)).collect();
        let a = normalize_group(&base, Group::Relevance).unwrap();
        let b = normalize_group(&shifted, Group::Relevance).unwrap();
        for v in variants {
            prop_assert!((a.prob(*v) - b.prob(*v)).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_score_is_monotone_in_each_scalar(
        base in prop::collection::vec(0.0f64..1.0, 3),
        bump in 0.001f64..0.5,
        which in 0usize..3,
    ) {
        let weights = reflectrag::reflection::ScoreWeights::default();
        let cfg = CollapseConfig::default();
        let make = |scalars: &[f64]| {
            let groups = [Group::Relevance, Group::Grounding, Group::Utility];
            let gcs: Vec<GroupConfidence> = groups
                .iter()
                .zip(scalars)
                .map(|(g, s)| {
                    let mut gc = GroupConfidence::absent(*g, &cfg);
                    gc.scalar = *s;
                    gc
                })
                .collect();
            rank_score(&gcs[0], &gcs[1], &gcs[2], 0.0, &weights)
        };
        let lo = make(&base);
        let mut bumped = base.clone();
        bumped[which] = (bumped[which] + bump).min(1.0);
        let hi = make(&bumped);
        prop_assert!(hi >= lo);
    }

    /// Scaling every candidate's unnormalized group probabilities by one
    /// positive constant shifts all log-probabilities equally and must not
    /// change the ranking order.
    #[test]
    fn ranking_order_invariant_under_common_scaling(
        cands in prop::collection::vec(
            (prop::collection::vec(-8.0f64..0.0, 2),
             prop::collection::vec(-8.0f64..0.0, 3),
             prop::collection::vec(-8.0f64..0.0, 5)),
            2..5,
        ),
        ln_scale in -3.0f64..3.0,
    ) {
        let weights = reflectrag::reflection::ScoreWeights::default();
        let score_with = |lps: &(Vec<f64>, Vec<f64>, Vec<f64>), shift: f64| {
            let build = |group: Group, vals: &[f64]| {
                let map: BTreeMap<_, _> = group
                    .variants()
                    .iter()
                    .zip(vals.iter())
                    .map(|(v, lp)| (*v, lp + shift))
                    .collect();
                normalize_group(&map, group).unwrap()
            };
            let rel = build(Group::Relevance, &lps.0);
            let grd = build(Group::Grounding, &lps.1);
            let utl = build(Group::Utility, &lps.2);
            rank_score(&rel, &grd, &utl, 0.0, &weights)
        };
        let base: Vec<f64> = cands.iter().map(|c| score_with(c, 0.0)).collect();
        let scaled: Vec<f64> = cands.iter().map(|c| score_with(c, ln_scale)).collect();
        let order = |scores: &[f64]| {
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            idx
        };
        // Ignore near-ties, where fp rounding may legitimately reorder.
        let mut sorted = base.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let min_gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        prop_assume!(min_gap > 1e-6);
        prop_assert_eq!(order(&base), order(&scaled));
    }

    #[test]
    fn min_prob_bounded_by_geo_mean(probs in prop::collection::vec(0.001f64..1.0, 1..64)) {
        let minp = min_prob(&probs).unwrap();
        let meanp = geo_mean_prob(&probs).unwrap();
        let maxp = probs.iter().copied().fold(0.0, f64::max);
        prop_assert!(minp <= meanp + 1e-12);
        prop_assert!(meanp <= maxp + 1e-12);
    }

    #[test]
    fn geo_mean_is_permutation_invariant(
        probs in prop::collection::vec(0.001f64..1.0, 2..32),
        seed in 0u64..1000,
    ) {
        let base = geo_mean_prob(&probs).unwrap();
        let mut shuffled = probs.clone();
        // Deterministic Fisher-Yates driven by the seed.
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let j = (state % (i as u64 + 1)) as usize;
            shuffled.swap(i, j);
        }
        let perm = geo_mean_prob(&shuffled).unwrap();
        prop_assert!((base - perm).abs() < 1e-12);
    }

    #[test]
    fn geo_mean_strictly_increasing_in_any_prob(
        probs in prop::collection::vec(0.01f64..0.9, 1..16),
        which in 0usize..16,
        bump in 0.01f64..0.09,
    ) {
        let which = which % probs.len();
        let base = geo_mean_prob(&probs).unwrap();
        let mut bumped = probs.clone();
        bumped[which] += bump;
        prop_assert!(geo_mean_prob(&bumped).unwrap() > base);
    }

    #[test]
    fn sweep_frequency_monotone(
        scores in prop::collection::vec(0.0f64..1.0, 1..50),
        gammas in prop::collection::vec(0.0f64..1.2, 1..20),
    ) {
        let outcomes: Vec<QueryOutcome> = scores
            .iter()
            .enumerate()
            .map(|(i, &confidence)| QueryOutcome {
                id: format!("q{i}"),
                confidence,
                correct_retrieve: 1.0,
                correct_parametric: 0.0,
            })
            .collect();
        let mut sorted = gammas.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let points = sweep_points(&outcomes, &sorted, false).unwrap();
        for w in points.windows(2) {
            prop_assert!(w[0].retrieval_frequency <= w[1].retrieval_frequency);
        }
    }

    #[test]
    fn route_gates_are_sparse_normalized(
        flat in prop::collection::vec(-5.0f64..5.0, 24),
        x in prop::collection::vec(-2.0f64..2.0, 4),
        k in 1usize..=6,
    ) {
        let router = RouterWeights {
            w: ndarray::Array2::from_shape_vec((6, 4), flat).unwrap(),
        };
        let x = ndarray::Array1::from_vec(x);
        let routing = route_detailed(x.view(), &router, k).unwrap();
        let nonzero = routing.gates.iter().filter(|&&g| g > 0.0).count();
        prop_assert_eq!(nonzero, k);
        prop_assert_eq!(routing.selected.len(), k);
        let sum: f64 = routing.gates.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
    }
}
