//! Reflection-token vocabulary and surface spellings.
//!
//! The generator model annotates its output with inline control tokens:
//! whether retrieval is needed, whether a retrieved context is relevant,
//! how well the answer is grounded in it, and how useful the answer is.
//! Every token has a canonical bracketed surface form plus optional
//! aliases accepted on input (checkpoints in the wild differ in casing).

use std::fmt;
use std::sync::LazyLock;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use super::ReflectionError;

/// Token group. `Continue` is the long-form continuation marker and forms
/// a single-variant group of its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    Retrieval,
    Relevance,
    Grounding,
    Utility,
    Continue,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Retrieval,
        Group::Relevance,
        Group::Grounding,
        Group::Utility,
        Group::Continue,
    ];

    /// Variants of this group in canonical order.
    pub fn variants(self) -> &'static [ReflectionToken] {
        use ReflectionToken as T;
        match self {
            Group::Retrieval => &[
                T::Retrieval(RetrievalToken::Rt),
                T::Retrieval(RetrievalToken::NoRt),
            ],
            Group::Relevance => &[
                T::Relevance(RelevanceToken::Relevant),
                T::Relevance(RelevanceToken::Irrelevant),
            ],
            Group::Grounding => &[
                T::Grounding(GroundingToken::FullySupported),
                T::Grounding(GroundingToken::PartiallySupported),
                T::Grounding(GroundingToken::NoSupport),
            ],
            Group::Utility => &[
                T::Utility(UtilityToken::U1),
                T::Utility(UtilityToken::U2),
                T::Utility(UtilityToken::U3),
                T::Utility(UtilityToken::U4),
                T::Utility(UtilityToken::U5),
            ],
            Group::Continue => &[T::Continue],
        }
    }

    /// The variant used when a group is absent from a completion: the one
    /// that collapses to zero confidence.
    pub fn worst_variant(self) -> ReflectionToken {
        use ReflectionToken as T;
        match self {
            Group::Retrieval => T::Retrieval(RetrievalToken::Rt),
            Group::Relevance => T::Relevance(RelevanceToken::Irrelevant),
            Group::Grounding => T::Grounding(GroundingToken::NoSupport),
            Group::Utility => T::Utility(UtilityToken::U1),
            Group::Continue => T::Continue,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Group::Retrieval => "Retrieval",
            Group::Relevance => "Relevance",
            Group::Grounding => "Grounding",
            Group::Utility => "Utility",
            Group::Continue => "Continue",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RetrievalToken {
    Rt,
    NoRt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelevanceToken {
    Relevant,
    Irrelevant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroundingToken {
    FullySupported,
    PartiallySupported,
    NoSupport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UtilityToken {
    U1,
    U2,
    U3,
    U4,
    U5,
}

impl UtilityToken {
    pub const ALL: [UtilityToken; 5] = [
        UtilityToken::U1,
        UtilityToken::U2,
        UtilityToken::U3,
        UtilityToken::U4,
        UtilityToken::U5,
    ];

    /// Ordinal rating 1..=5.
    pub fn rating(self) -> u8 {
        match self {
            UtilityToken::U1 => 1,
            UtilityToken::U2 => 2,
            UtilityToken::U3 => 3,
            UtilityToken::U4 => 4,
            UtilityToken::U5 => 5,
        }
    }

    pub fn from_rating(r: u8) -> Option<UtilityToken> {
        Self::ALL.get(r.checked_sub(1)? as usize).copied()
    }
}

/// One token of the reflection vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReflectionToken {
    Retrieval(RetrievalToken),
    Relevance(RelevanceToken),
    Grounding(GroundingToken),
    Utility(UtilityToken),
    Continue,
}

impl ReflectionToken {
    pub const ALL: [ReflectionToken; 13] = {
        use ReflectionToken as T;
        [
            T::Retrieval(RetrievalToken::Rt),
            T::Retrieval(RetrievalToken::NoRt),
            T::Relevance(RelevanceToken::Relevant),
            T::Relevance(RelevanceToken::Irrelevant),
            T::Grounding(GroundingToken::FullySupported),
            T::Grounding(GroundingToken::PartiallySupported),
            T::Grounding(GroundingToken::NoSupport),
            T::Utility(UtilityToken::U1),
            T::Utility(UtilityToken::U2),
            T::Utility(UtilityToken::U3),
            T::Utility(UtilityToken::U4),
            T::Utility(UtilityToken::U5),
            T::Continue,
        ]
    };

    pub fn group(self) -> Group {
        match self {
            ReflectionToken::Retrieval(_) => Group::Retrieval,
            ReflectionToken::Relevance(_) => Group::Relevance,
            ReflectionToken::Grounding(_) => Group::Grounding,
            ReflectionToken::Utility(_) => Group::Utility,
            ReflectionToken::Continue => Group::Continue,
        }
    }

    /// Canonical surface under the default spelling table.
    pub fn surface(self) -> &'static str {
        default_table().canonical(self)
    }
}

impl fmt::Display for ReflectionToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.surface())
    }
}

impl std::str::FromStr for ReflectionToken {
    type Err = ReflectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        default_table()
            .lookup(s)
            .ok_or_else(|| ReflectionError::UnknownToken(s.to_string()))
    }
}

// Tokens cross process boundaries (trace files, training JSONL) as their
// canonical surface string. Aliases are accepted when reading back.
impl Serialize for ReflectionToken {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.surface())
    }
}

impl<'de> Deserialize<'de> for ReflectionToken {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = ReflectionToken;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a reflection-token surface string like \"[Relevant]\"")
            }
            fn visit_str<E: de::Error>(self, s: &str) -> Result<Self::Value, E> {
                s.parse().map_err(|_| E::custom(format!("unknown reflection token {s:?}")))
            }
        }
        deserializer.deserialize_str(V)
    }
}

// The group-specific enums also serialize as their surface strings.
macro_rules! surface_serde {
    ($ty:ident, $variant:ident) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                ReflectionToken::$variant(*self).serialize(serializer)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                match ReflectionToken::deserialize(deserializer)? {
                    ReflectionToken::$variant(t) => Ok(t),
                    other => Err(de::Error::custom(format!(
                        "expected a {} token, got {other}",
                        stringify!($variant)
                    ))),
                }
            }
        }
    };
}

surface_serde!(RetrievalToken, Retrieval);
surface_serde!(RelevanceToken, Relevance);
surface_serde!(GroundingToken, Grounding);
surface_serde!(UtilityToken, Utility);

#[derive(Debug)]
struct Spelling {
    token: ReflectionToken,
    canonical: String,
    aliases: Vec<String>,
}

/// Maps every token to its surface form. The canonical spelling is used
/// when rendering; aliases are additionally accepted when parsing. The
/// table can be customised for checkpoint compatibility as long as all
/// surfaces stay pairwise distinct.
#[derive(Debug)]
pub struct SpellingTable {
    entries: Vec<Spelling>,
}

impl SpellingTable {
    /// Canonical spellings plus lowercase grounding aliases seen in
    /// training-data listings.
    pub fn new() -> Self {
        use GroundingToken as G;
        use ReflectionToken as T;
        use RelevanceToken as Rel;
        use RetrievalToken as R;
        use UtilityToken as U;
        let e = |token: ReflectionToken, canonical: &str, aliases: &[&str]| Spelling {
            token,
            canonical: canonical.to_string(),
            aliases: aliases.iter().map(|s| s.to_string()).collect(),
        };
        SpellingTable {
            entries: vec![
                e(T::Retrieval(R::Rt), "[RT]", &[]),
                e(T::Retrieval(R::NoRt), "[NoRT]", &[]),
                e(T::Relevance(Rel::Relevant), "[Relevant]", &[]),
                e(T::Relevance(Rel::Irrelevant), "[Irrelevant]", &[]),
                e(T::Grounding(G::FullySupported), "[Fully Supported]", &["[Fully supported]"]),
                e(
                    T::Grounding(G::PartiallySupported),
                    "[Partially Supported]",
                    &["[Partially supported]"],
                ),
                e(T::Grounding(G::NoSupport), "[No Support]", &["[No support]"]),
                e(T::Utility(U::U1), "[U:1]", &[]),
                e(T::Utility(U::U2), "[U:2]", &[]),
                e(T::Utility(U::U3), "[U:3]", &[]),
                e(T::Utility(U::U4), "[U:4]", &[]),
                e(T::Utility(U::U5), "[U:5]", &[]),
                e(T::Continue, "[Continue]", &[]),
            ],
        }
    }

    /// Replace the canonical spelling of `token`. Fails if the surface is
    /// already taken by another token.
    pub fn with_canonical(
        mut self,
        token: ReflectionToken,
        surface: &str,
    ) -> Result<Self, ReflectionError> {
        for entry in &self.entries {
            if entry.token != token
                && (entry.canonical == surface || entry.aliases.iter().any(|a| a == surface))
            {
                return Err(ReflectionError::DuplicateSurface(surface.to_string()));
            }
        }
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.token == token)
            .expect("every token has a table entry");
        entry.canonical = surface.to_string();
        Ok(self)
    }

    pub fn canonical(&self, token: ReflectionToken) -> &str {
        &self
            .entries
            .iter()
            .find(|e| e.token == token)
            .expect("every token has a table entry")
            .canonical
    }

    /// Exact lookup of a full surface string (canonical or alias).
    pub fn lookup(&self, s: &str) -> Option<ReflectionToken> {
        self.entries
            .iter()
            .find(|e| e.canonical == s || e.aliases.iter().any(|a| a == s))
            .map(|e| e.token)
    }

    /// Longest surface (canonical or alias) that `text` starts with.
    pub fn match_prefix(&self, text: &str) -> Option<(ReflectionToken, usize)> {
        let mut best: Option<(ReflectionToken, usize)> = None;
        for entry in &self.entries {
            for surface in std::iter::once(&entry.canonical).chain(entry.aliases.iter()) {
                if text.starts_with(surface.as_str())
                    && best.map_or(true, |(_, len)| surface.len() > len)
                {
                    best = Some((entry.token, surface.len()));
                }
            }
        }
        best
    }

    /// True if `s`, after trimming ASCII whitespace, is a token surface.
    pub fn is_token_surface(&self, s: &str) -> bool {
        self.lookup(s.trim()).is_some()
    }
}

impl Default for SpellingTable {
    fn default() -> Self {
        SpellingTable::new()
    }
}

static DEFAULT_TABLE: LazyLock<SpellingTable> = LazyLock::new(SpellingTable::new);

/// Shared default spelling table.
pub fn default_table() -> &'static SpellingTable {
    &DEFAULT_TABLE
}
