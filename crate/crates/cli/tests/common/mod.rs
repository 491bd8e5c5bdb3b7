//! Deterministic fixture builders shared by the integration tests.
//!
//! The golden scenario pins 20 queries, 3 scored candidates each, plus a
//! parametric completion per query. All probabilities come from a seeded
//! generator, so the files (and everything computed from them) are
//! byte-stable across runs.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reflectrag::backend::{Script, ScriptCompletion, ScriptRule, ScriptToken};
use reflectrag::engine::{
    parametric_prompt, retrieval_prompt, ContextStoreLine, RetrievedContext, TemplateKind,
};
use reflectrag::evalkit::EvalQuery;
use reflectrag::reflection::default_table;

/// Raw scripted probabilities for one candidate, kept so tests can apply
/// an independent scoring oracle.
#[derive(Debug, Clone)]
pub struct CandidateProbs {
    pub answer: String,
    pub p_rel: f64,
    pub p_irr: f64,
    pub p_fs: f64,
    pub p_ps: f64,
    pub p_ns: f64,
    pub p_u1: f64,
    pub p_u3: f64,
    pub p_u5: f64,
}

#[derive(Debug, Clone)]
pub struct GoldenQuery {
    pub query: EvalQuery,
    pub contexts: Vec<RetrievedContext>,
    pub candidates: Vec<CandidateProbs>,
    pub parametric_confidence: f64,
}

pub struct GoldenFixture {
    pub queries: Vec<GoldenQuery>,
    pub script: Script,
}

pub const GOLDEN_N: usize = 20;

pub fn golden_fixture() -> GoldenFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(0x601d);
    let table = default_table();
    let mut rules = Vec::new();
    let mut queries = Vec::new();
    for i in 0..GOLDEN_N {
        let id = format!("q{i:02}");
        let question = format!("golden question {i:02}: which entity is described?");
        let gold = format!("entity {i:02}");
        let base = TemplateKind::SingleHop.render(&question);

        let mut contexts = Vec::new();
        let mut candidates = Vec::new();
        for j in 0..3 {
            let mut passages = vec![format!("passage {i:02}-{j} mentions entity {i:02}")];
            if j == 1 {
                passages.push(format!("second hop {i:02}-{j}"));
            }
            let context =
                RetrievedContext { id: format!("{id}-c{j}"), passages, retriever_score: None };
            let answer = if j == i % 3 { gold.clone() } else { format!("decoy {i:02}-{j}") };
            let probs = CandidateProbs {
                answer: answer.clone(),
                p_rel: rng.random_range(0.10..0.90),
                p_irr: rng.random_range(0.02..0.40),
                p_fs: rng.random_range(0.05..0.60),
                p_ps: rng.random_range(0.05..0.40),
                p_ns: rng.random_range(0.02..0.30),
                p_u1: rng.random_range(0.02..0.20),
                p_u3: rng.random_range(0.05..0.30),
                p_u5: rng.random_range(0.10..0.60),
            };
            let tokens = vec![
                ScriptToken::new("[Relevant]", probs.p_rel)
                    .with_top(&[("[Irrelevant]", probs.p_irr)]),
                ScriptToken::new(answer, rng.random_range(0.60..0.95)),
                ScriptToken::new("[Fully Supported]", probs.p_fs)
                    .with_top(&[("[Partially Supported]", probs.p_ps), ("[No Support]", probs.p_ns)]),
                ScriptToken::new("[U:5]", probs.p_u5)
                    .with_top(&[("[U:1]", probs.p_u1), ("[U:3]", probs.p_u3)]),
            ];
            rules.push(ScriptRule {
                pattern: retrieval_prompt(&base, &[], &context.passages, table),
                completion: ScriptCompletion { tokens },
                forced: BTreeMap::new(),
            });
            contexts.push(context);
            candidates.push(probs);
        }

        // Parametric completion: confidence spread over (0, 1) so adaptive
        // thresholds bite at different gammas.
        let confidence = 0.05 + 0.9 * (i as f64 / (GOLDEN_N - 1) as f64);
        let parametric_answer =
            if i % 2 == 0 { gold.clone() } else { format!("parametric guess {i:02}") };
        let mut forced = BTreeMap::new();
        forced.insert("[RT]".to_string(), vec![1.0 - confidence.min(0.99)]);
        forced.insert("[NoRT]".to_string(), vec![confidence.min(0.99)]);
        rules.push(ScriptRule {
            pattern: parametric_prompt(&base, table),
            completion: ScriptCompletion {
                tokens: vec![ScriptToken::new(parametric_answer, confidence)],
            },
            forced,
        });

        queries.push(GoldenQuery {
            query: EvalQuery { id, question, gold_answers: vec![gold] },
            contexts,
            candidates,
            parametric_confidence: confidence,
        });
    }
    GoldenFixture { queries, script: Script { fallback: None, rules } }
}

/// Write the golden scenario to `dir`: queries.jsonl, contexts.jsonl, and
/// script.json. Returns the fixture for oracle use.
pub fn write_golden_files(dir: &Path) -> GoldenFixture {
    let fixture = golden_fixture();
    write_fixture_files(dir, &fixture);
    fixture
}

pub fn write_fixture_files(dir: &Path, fixture: &GoldenFixture) {
    std::fs::create_dir_all(dir).unwrap();
    let mut queries = String::new();
    let mut contexts = String::new();
    for gq in &fixture.queries {
        queries.push_str(&serde_json::to_string(&gq.query).unwrap());
        queries.push('\n');
        contexts.push_str(
            &serde_json::to_string(&ContextStoreLine {
                query_id: gq.query.id.clone(),
                contexts: gq.contexts.clone(),
            })
            .unwrap(),
        );
        contexts.push('\n');
    }
    std::fs::write(dir.join("queries.jsonl"), queries).unwrap();
    std::fs::write(dir.join("contexts.jsonl"), contexts).unwrap();
    std::fs::write(
        dir.join("script.json"),
        serde_json::to_string_pretty(&fixture.script).unwrap(),
    )
    .unwrap();
}

/// Independent scoring oracle: plain ratio arithmetic over the scripted
/// probabilities, no library calls.
pub fn oracle_rank_score(c: &CandidateProbs) -> f64 {
    let rel = c.p_rel / (c.p_rel + c.p_irr);
    let grd_total = c.p_fs + c.p_ps + c.p_ns;
    let grd = (1.0 * c.p_fs + 0.5 * c.p_ps + 0.0 * c.p_ns) / grd_total;
    let utl_total = c.p_u1 + c.p_u3 + c.p_u5;
    let utl = (0.0 * c.p_u1 + 0.5 * c.p_u3 + 1.0 * c.p_u5) / utl_total;
    1.0 * rel + 1.0 * grd + 0.5 * utl
}

/// Oracle winner: argmax of the oracle scores, ties to the lowest index.
pub fn oracle_winner(candidates: &[CandidateProbs]) -> usize {
    let mut best = 0usize;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        if oracle_rank_score(c) > oracle_rank_score(&candidates[best]) {
            best = i;
        }
    }
    best
}

/// A fixture corpus for the data-preparation pipeline: `no_retrieval`
/// pairs with no supporting contexts plus retrieval pairs with ample
/// context pools.
pub fn write_datagen_corpus(path: &Path, no_retrieval: usize, retrieval: usize) {
    let mut out = String::new();
    for i in 0..(no_retrieval + retrieval) {
        let (supporting, nonsupporting) = if i < no_retrieval {
            (Vec::new(), vec![format!("bg {i}-0"), format!("bg {i}-1")])
        } else {
            (
                (0..3).map(|j| format!("support {i}-{j}")).collect(),
                (0..4).map(|j| format!("distract {i}-{j}")).collect(),
            )
        };
        let pair = serde_json::json!({
            "id": format!("pair{i:03}"),
            "question": format!("fixture question {i:03}"),
            "answer": format!("fixture answer {i:03}"),
            "supporting": supporting,
            "nonsupporting": nonsupporting,
        });
        out.push_str(&pair.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

/// Run the built binary with the given args, returning (exit code, stdout,
/// stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_reflectrag"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        output.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&output.stdout).into_owned(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}
