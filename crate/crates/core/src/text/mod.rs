//! Text normalization: character cleaning, tokenization, stop-word and
//! question-word removal, spelling variants and stemming.

mod porter;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use porter::{stem, stem_once};

const DEFAULT_STOP_WORDS: &str = include_str!("../../data/stopwords_en.txt");
const DEFAULT_VARIANTS: &str = include_str!("../../data/variants_en.csv");

/// Version tag of the bundled stop-word list, recorded in run manifests.
pub const STOP_LIST_VERSION: &str = "en-v1";

/// British spellings whose American form is the canonical one.
const OUR_WORDS: &[&str] = &[
    "ardour", "armour", "behaviour", "candour", "clamour", "colour", "endeavour", "favour",
    "fervour", "flavour", "harbour", "honour", "humour", "labour", "neighbour", "odour",
    "parlour", "rigour", "rumour", "saviour", "savour", "splendour", "tumour", "valour",
    "vapour", "vigour",
];
const OUR_SUFFIXES: &[&str] = &[
    "", "s", "ed", "ing", "al", "ally", "able", "er", "ers", "ful", "ite", "ites",
];

/// An answer (or model answer) after preprocessing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub source_id: String,
    /// Lowercase stems in original order; repeats are kept.
    pub tokens: Vec<String>,
}

/// Lowercases, deletes apostrophes inside words, and splits on every
/// non-letter character. Tokens shorter than two characters are dropped.
///
/// ```
/// use sagrade::text::normalize_and_tokenize;
/// assert_eq!(normalize_and_tokenize("1- specification 2- design"), ["specification", "design"]);
/// ```
pub fn normalize_and_tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut chars = lowered.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_alphabetic() {
            current.push(c);
        } else if is_apostrophe(c)
            && !current.is_empty()
            && chars.peek().is_some_and(|n| n.is_alphabetic())
        {
            // "doesn't" -> "doesnt", "function's" -> "functions"
        } else {
            flush(&mut current, &mut tokens);
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}')
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if current.chars().count() >= 2 {
        tokens.push(std::mem::take(current));
    } else {
        current.clear();
    }
}

/// Normalizes one stop-list entry the same way tokens are normalized.
fn normalize_word(word: &str) -> String {
    word.trim()
        .to_lowercase()
        .chars()
        .filter(|c| !is_apostrophe(*c))
        .collect()
}

/// Words removed from every token stream.
///
/// `base_list` and `user_extra` are compared against tokens before stemming;
/// `question_words` holds stems and is compared after stemming, together with
/// the stems of `user_extra`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StopWordPolicy {
    pub base_list: BTreeSet<String>,
    pub question_words: BTreeSet<String>,
    pub user_extra: BTreeSet<String>,
}

impl StopWordPolicy {
    /// The bundled English list with no question or user words.
    pub fn english() -> Self {
        Self::from_list(DEFAULT_STOP_WORDS)
    }

    /// Parses a stop list: one word per line, `#` starts a comment.
    pub fn from_list(contents: &str) -> Self {
        let base_list = contents
            .lines()
            .map(|line| line.split('#').next().unwrap_or(""))
            .map(normalize_word)
            .filter(|w| !w.is_empty())
            .collect();
        Self {
            base_list,
            ..Self::default()
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self::from_list(&std::fs::read_to_string(path)?))
    }

    /// Returns a copy whose question words are the stems of `question_text`
    /// (after base stop-word removal).
    pub fn with_question(&self, question_text: &str, variants: &SpellingMap) -> Self {
        let base_only = Self {
            base_list: self.base_list.clone(),
            ..Self::default()
        };
        let question_words = Preprocessor::new(base_only, variants.clone())
            .tokens(question_text)
            .into_iter()
            .collect();
        Self {
            question_words,
            ..self.clone()
        }
    }

    pub fn with_user_extra<I: IntoIterator<Item = S>, S: AsRef<str>>(mut self, words: I) -> Self {
        self.user_extra
            .extend(words.into_iter().map(|w| normalize_word(w.as_ref())));
        self
    }

    fn is_raw_stop(&self, token: &str) -> bool {
        self.base_list.contains(token) || self.user_extra.contains(token)
    }

    fn stemmed_stop_set(&self) -> BTreeSet<String> {
        self.question_words
            .iter()
            .cloned()
            .chain(self.user_extra.iter().map(|w| stem(w)))
            .collect()
    }
}

/// Removes every policy word from `tokens`, preserving order.
pub fn remove_stop_words(tokens: &[String], policy: &StopWordPolicy) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !policy.is_raw_stop(t) && !policy.question_words.contains(t.as_str()))
        .cloned()
        .collect()
}

pub fn stem_all(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| stem(t)).collect()
}

/// Token-level spelling normalization applied before stemming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpellingMap {
    entries: BTreeMap<String, String>,
}

impl Default for SpellingMap {
    fn default() -> Self {
        Self::english()
    }
}

impl SpellingMap {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// British `-our` spellings mapped to `-or`, plus the bundled irregular
    /// participle list.
    pub fn english() -> Self {
        let mut entries = BTreeMap::new();
        for word in OUR_WORDS {
            let stem = &word[..word.len() - 3];
            for suffix in OUR_SUFFIXES {
                entries.insert(format!("{stem}our{suffix}"), format!("{stem}or{suffix}"));
            }
        }
        let mut map = Self { entries };
        map.extend_from_csv(DEFAULT_VARIANTS.as_bytes())
            .expect("bundled variant map is well formed");
        map
    }

    /// Reads `variant,canonical` rows; `#` lines are comments and a literal
    /// `variant,canonical` header row is skipped.
    pub fn extend_from_csv<R: Read>(&mut self, reader: R) -> Result<()> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        for record in rdr.records() {
            let record = record?;
            let (Some(variant), Some(canonical)) = (record.get(0), record.get(1)) else {
                continue;
            };
            if variant == "variant" && canonical == "canonical" {
                continue;
            }
            self.entries
                .insert(normalize_word(variant), normalize_word(canonical));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut map = Self::empty();
        map.extend_from_csv(std::fs::File::open(path)?)?;
        Ok(map)
    }

    pub fn canonical<'a>(&'a self, token: &'a str) -> &'a str {
        self.entries.get(token).map(String::as_str).unwrap_or(token)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A stop-word policy and spelling map applied together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub policy: StopWordPolicy,
    pub variants: SpellingMap,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::new(StopWordPolicy::english(), SpellingMap::english())
    }
}

impl Preprocessor {
    pub fn new(policy: StopWordPolicy, variants: SpellingMap) -> Self {
        Self { policy, variants }
    }

    /// The same preprocessor with `question_text`'s stems added as stop words.
    pub fn for_question(&self, question_text: &str) -> Self {
        Self {
            policy: self.policy.with_question(question_text, &self.variants),
            variants: self.variants.clone(),
        }
    }

    /// tokenize, map variants, drop raw stop words, stem, then drop stemmed
    /// question and user words.
    pub fn tokens(&self, text: &str) -> Vec<String> {
        let stemmed_stops = self.policy.stemmed_stop_set();
        normalize_and_tokenize(text)
            .iter()
            .map(|t| self.variants.canonical(t))
            .filter(|t| !self.policy.is_raw_stop(t))
            .map(stem)
            .filter(|s| !stemmed_stops.contains(s))
            .collect()
    }

    pub fn preprocess(&self, source_id: impl Into<String>, text: &str) -> TokenizedDoc {
        TokenizedDoc {
            source_id: source_id.into(),
            tokens: self.tokens(text),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenizes_table_two_answer() {
        assert_eq!(
            normalize_and_tokenize("High risk problems are address in the prototype program"),
            toks(&[
                "high", "risk", "problems", "are", "address", "in", "the", "prototype", "program"
            ])
        );
    }

    #[test]
    fn empty_and_punctuation_only() {
        assert!(normalize_and_tokenize("").is_empty());
        assert!(normalize_and_tokenize("1, 2; 3... a").is_empty());
    }

    #[test]
    fn apostrophes_join_words() {
        assert_eq!(
            normalize_and_tokenize("the function's code doesn't 'quote'"),
            toks(&["the", "functions", "code", "doesnt", "quote"])
        );
    }

    #[test]
    fn base_list_removes_examples() {
        let policy = StopWordPolicy::english();
        let raw = DEFAULT_STOP_WORDS
            .lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
            .count();
        assert_eq!(raw, 174);
        // "it's" and "its" collapse once apostrophes are dropped.
        assert!(policy.base_list.len() < raw);
        assert_eq!(
            remove_stop_words(&toks(&["the", "desired", "software", "product"]), &policy),
            toks(&["desired", "software", "product"])
        );
        assert!(remove_stop_words(&[], &policy).is_empty());
        for w in ["the", "and", "it", "doesnt"] {
            assert!(policy.base_list.contains(w), "{w}");
        }
        assert!(!policy.base_list.contains("can"));
    }

    #[test]
    fn stop_list_file_format() {
        let policy = StopWordPolicy::from_list("# header\nThe\n  and # inline\n\nIt's\n");
        assert_eq!(policy.base_list, ["and", "its", "the"].iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn spelling_map_csv() {
        let mut map = SpellingMap::empty();
        map.extend_from_csv("variant,canonical\n# c\ncolour , color\n".as_bytes())
            .unwrap();
        assert_eq!(map.canonical("colour"), "color");
        assert_eq!(map.canonical("color"), "color");
        assert_eq!(map.len(), 1);
    }

    #[test]
    fn our_or_pairs() {
        let map = SpellingMap::english();
        assert_eq!(map.canonical("behaviour"), "behavior");
        assert_eq!(map.canonical("behaviours"), "behaviors");
        assert_eq!(map.canonical("eaten"), "eat");
    }

    #[test]
    fn question_words_removed() {
        let pre = Preprocessor::default()
            .for_question("What is the role of a prototype program in problem solving?");
        for w in ["role", "prototyp", "program", "problem", "solv"] {
            assert!(pre.policy.question_words.contains(w), "{w}");
        }
        let doc = pre.preprocess("a", "A prototype program solves problems; its role is solving.");
        assert!(doc.tokens.is_empty(), "{:?}", doc.tokens);
    }

    #[test]
    fn eat_family_after_variants() {
        let pre = Preprocessor::default();
        let stems: BTreeSet<_> = ["eat", "eating", "eaten"]
            .iter()
            .flat_map(|w| pre.tokens(w))
            .collect();
        assert_eq!(stems.len(), 1);
    }

    #[test]
    fn simulate_family() {
        assert_eq!(stem("simulates"), stem("simulate"));
    }

    #[test]
    fn user_extra_removed_before_and_after_stemming() {
        let pre = Preprocessor::new(
            StopWordPolicy::english().with_user_extra(["compile"]),
            SpellingMap::english(),
        );
        assert!(pre.tokens("compile compiled compiling").is_empty());
    }
}
