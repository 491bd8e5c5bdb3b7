//! Parsing of model completions that carry reflection tokens.
//!
//! A completion is a flat string like
//! `[RT]<p>ctx</p>[Relevant]Lahore[Fully supported][U:5]`. The parser
//! splits it into the per-group tokens, the optional passage block, and
//! the answer span; `render` reassembles the canonical form. Rendering a
//! parse of a canonically-rendered string is the identity, which is what
//! the training-data generator relies on.

use super::token::{
    GroundingToken, ReflectionToken, RelevanceToken, RetrievalToken, SpellingTable,
    UtilityToken, default_table,
};
use super::ReflectionError;

pub const PASSAGE_OPEN: &str = "<p>";
pub const PASSAGE_CLOSE: &str = "</p>";

/// Structured view of a completion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedOutput {
    pub retrieval: Option<RetrievalToken>,
    pub relevance: Option<RelevanceToken>,
    pub grounding: Option<GroundingToken>,
    pub utility: Option<UtilityToken>,
    pub continued: bool,
    /// Raw text between `<p>` and `</p>`, when a passage block precedes
    /// the relevance token.
    pub passage: Option<String>,
    /// Everything that is not a recognised token or the passage block.
    /// Unknown bracketed tokens stay in here untouched.
    pub answer: String,
}

impl ParsedOutput {
    /// Canonical string form: retrieval, continue, passage, relevance,
    /// answer, grounding, utility.
    pub fn render(&self) -> String {
        self.render_with(default_table())
    }

    pub fn render_with(&self, table: &SpellingTable) -> String {
        let mut out = String::new();
        if let Some(r) = self.retrieval {
            out.push_str(table.canonical(ReflectionToken::Retrieval(r)));
        }
        if self.continued {
            out.push_str(table.canonical(ReflectionToken::Continue));
        }
        if let Some(p) = &self.passage {
            out.push_str(PASSAGE_OPEN);
            out.push_str(p);
            out.push_str(PASSAGE_CLOSE);
        }
        if let Some(r) = self.relevance {
            out.push_str(table.canonical(ReflectionToken::Relevance(r)));
        }
        out.push_str(&self.answer);
        if let Some(g) = self.grounding {
            out.push_str(table.canonical(ReflectionToken::Grounding(g)));
        }
        if let Some(u) = self.utility {
            out.push_str(table.canonical(ReflectionToken::Utility(u)));
        }
        out
    }

    fn set(&mut self, token: ReflectionToken) -> Result<(), ReflectionError> {
        let group = token.group();
        let occupied = match token {
            ReflectionToken::Retrieval(t) => self.retrieval.replace(t).is_some(),
            ReflectionToken::Relevance(t) => self.relevance.replace(t).is_some(),
            ReflectionToken::Grounding(t) => self.grounding.replace(t).is_some(),
            ReflectionToken::Utility(t) => self.utility.replace(t).is_some(),
            ReflectionToken::Continue => {
                let was = self.continued;
                self.continued = true;
                was
            }
        };
        if occupied {
            return Err(ReflectionError::MalformedOutput { group });
        }
        Ok(())
    }
}

/// Parse a completion with the default spelling table.
pub fn parse_reflection_output(text: &str) -> Result<ParsedOutput, ReflectionError> {
    parse_with(default_table(), text)
}

pub fn parse_with(table: &SpellingTable, text: &str) -> Result<ParsedOutput, ReflectionError> {
    let mut out = ParsedOutput::default();
    let mut rest = text;
    while !rest.is_empty() {
        // A passage block is only recognised in the position the output
        // grammar puts it: before the relevance token and before any
        // answer text. Anywhere else, <p> is ordinary answer content.
        if rest.starts_with(PASSAGE_OPEN)
            && out.passage.is_none()
            && out.relevance.is_none()
            && out.answer.is_empty()
        {
            if let Some(close) = rest.find(PASSAGE_CLOSE) {
                out.passage = Some(rest[PASSAGE_OPEN.len()..close].to_string());
                rest = &rest[close + PASSAGE_CLOSE.len()..];
                continue;
            }
        }
        if let Some((token, len)) = table.match_prefix(rest) {
            out.set(token)?;
            rest = &rest[len..];
            continue;
        }
        let mut chars = rest.chars();
        let c = chars.next().expect("rest is non-empty");
        out.answer.push(c);
        rest = chars.as_str();
    }
    Ok(out)
}
