use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Word classes counted per utterance. The first nine are the interpretable
/// psycholinguistic categories; filler absorbs hesitation words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Adverb,
    Pronoun,
    Social,
    Negate,
    Posemo,
    Negemo,
    Insight,
    Tentat,
    Certain,
    Filler,
    Discourse,
}

impl Category {
    pub const ALL: [Category; 11] = [
        Category::Adverb,
        Category::Pronoun,
        Category::Social,
        Category::Negate,
        Category::Posemo,
        Category::Negemo,
        Category::Insight,
        Category::Tentat,
        Category::Certain,
        Category::Filler,
        Category::Discourse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Adverb => "adverb",
            Category::Pronoun => "pronoun",
            Category::Social => "social",
            Category::Negate => "negate",
            Category::Posemo => "posemo",
            Category::Negemo => "negemo",
            Category::Insight => "insight",
            Category::Tentat => "tentat",
            Category::Certain => "certain",
            Category::Filler => "filler",
            Category::Discourse => "discourse",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "hesitation" || s == "fillers" {
            return Ok(Category::Filler);
        }
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::format("lexicon", format!("unknown category [{s}]")))
    }
}

/// Word lists per category. Entries ending in `*` match by prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryLexicon {
    sets: [BTreeSet<String>; 11],
}

impl CategoryLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, category: Category, word: &str) {
        self.sets[category as usize].insert(word.trim().to_lowercase());
    }

    pub fn words(&self, category: Category) -> &BTreeSet<String> {
        &self.sets[category as usize]
    }

    pub fn contains(&self, category: Category, token: &str) -> bool {
        let set = &self.sets[category as usize];
        if set.contains(token) {
            return true;
        }
        set.iter()
            .filter_map(|w| w.strip_suffix('*'))
            .any(|prefix| token.starts_with(prefix))
    }

    /// Parses `[category]` sections followed by one word per line. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Self::new();
        let mut current: Option<Category> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(name.parse()?);
                continue;
            }
            let cat = current.ok_or_else(|| {
                Error::format("lexicon", format!("line {}: word before any [category]", i + 1))
            })?;
            lex.insert(cat, line);
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in Category::ALL {
            out.push_str(&format!("[{c}]\n"));
            for w in self.words(c) {
                out.push_str(w);
                out.push('\n');
            }
        }
        out
    }

    /// Small open word list covering every category.
    pub fn builtin() -> Self {
        Self::parse(include_str!("builtin_lexicon.txt")).expect("builtin lexicon parses")
    }
}

/// Lowercases, splits on whitespace and strips surrounding punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

pub const FEATURE_NAMES: [&str; 12] = [
    "adverb",
    "pronoun",
    "social",
    "negate",
    "posemo",
    "negemo",
    "insight",
    "tentat",
    "certain",
    "filler",
    "discourse",
    "content_rate",
];

/// Eleven word-count-normalized category rates plus words per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LexicalFeatureVector(pub [f64; 12]);

impl LexicalFeatureVector {
    pub fn rate(&self, c: Category) -> f64 {
        self.0[c as usize]
    }

    pub fn content_rate(&self) -> f64 {
        self.0[11]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn lexical_category_vector(
    tokens: &[String],
    lexicon: &CategoryLexicon,
    duration_s: f64,
) -> Result<LexicalFeatureVector> {
    if !(duration_s > 0.0) {
        return Err(Error::Config(format!("duration must be > 0, got {duration_s}")));
    }
    let mut v = [0.0; 12];
    if tokens.is_empty() {
        return Ok(LexicalFeatureVector(v));
    }
    let n = tokens.len() as f64;
    for c in Category::ALL {
        let hits = tokens.iter().filter(|t| lexicon.contains(c, t)).count();
        v[c as usize] = hits as f64 / n;
    }
    v[11] = n / duration_s;
    Ok(LexicalFeatureVector(v))
}
