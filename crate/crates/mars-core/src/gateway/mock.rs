//! Deterministic rule-based generation doubles. [`MockBackend`] answers the
//! pipeline's phase prompts from the taxonomy, per-language sentiment
//! lexicons and a bilingual dictionary table, so end-to-end runs are
//! hermetic and byte-reproducible. [`SyntheticBackend`] adds configurable
//! latency for the benchmark harness.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use serde::Deserialize;

use super::template::{markers, VERBATIM_SEPARATOR};
use super::{GatewayError, GenParams, GenerationBackend};
use crate::model::{whitespace_token_count, LanguageCode, Review, Taxonomy};
use crate::segmenter;

const LEXICON_YAML: &str = include_str!("../../data/mock/lexicons.yml");
const DICTIONARY_TSV: &str = include_str!("../../data/mock/dictionary.tsv");

#[derive(Debug, Clone, Deserialize)]
struct LexiconEntry {
    positive: Vec<String>,
    negative: Vec<String>,
}

fn dictionary_column(lang: LanguageCode) -> usize {
    match lang {
        LanguageCode::En => 0,
        LanguageCode::Es => 1,
        LanguageCode::Fr => 2,
        LanguageCode::De => 3,
        LanguageCode::It => 4,
    }
}

/// Whole-word, case-insensitive search. Both `text` and `word` must already
/// be lowercase. Returns the byte offset of the first hit.
fn find_word(text: &str, word: &str) -> Option<usize> {
    if word.is_empty() {
        return None;
    }
    let mut from = 0;
    while let Some(rel) = text[from..].find(word) {
        let at = from + rel;
        let before_ok = at == 0
            || !text[..at]
                .chars()
                .next_back()
                .is_some_and(char::is_alphanumeric);
        let after_ok = !text[at + word.len()..]
            .chars()
            .next()
            .is_some_and(char::is_alphanumeric);
        if before_ok && after_ok {
            return Some(at);
        }
        from = at + word.len().max(1);
    }
    None
}

fn field<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    let start = prompt.find(marker)? + marker.len();
    let rest = &prompt[start..];
    Some(rest.split('\n').next().unwrap_or(rest).trim())
}

/// Context is the final template slot; everything after "Review: " is it.
fn context_of(prompt: &str) -> Option<&str> {
    let marker = "\nReview: ";
    let start = prompt.find(marker)? + marker.len();
    Some(prompt[start..].trim())
}

/// Rule-based mock of the generation backend, keyed on the phase markers of
/// the shipped templates.
pub struct MockBackend {
    /// keyword (lowercase) -> L3 name, ordered by taxonomy iteration.
    keyword_index: Vec<(String, String)>,
    /// L3 name -> its lowercase keywords.
    aspect_keywords: BTreeMap<String, Vec<String>>,
    lexicons: BTreeMap<String, LexiconEntry>,
    dictionary: Vec<Vec<String>>,
    max_context: usize,
    calls: AtomicU64,
    prompts: AtomicU64,
}

impl MockBackend {
    pub fn new(taxonomy: &Taxonomy) -> Self {
        let mut keyword_index = Vec::new();
        let mut aspect_keywords = BTreeMap::new();
        for (l3, keywords) in taxonomy.keyword_map() {
            let lower: Vec<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
            for kw in &lower {
                keyword_index.push((kw.clone(), l3.clone()));
            }
            aspect_keywords.insert(l3.clone(), lower);
        }
        let lexicons: BTreeMap<String, LexiconEntry> =
            serde_yaml::from_str(LEXICON_YAML).expect("builtin lexicon data");
        let dictionary = DICTIONARY_TSV
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split('\t').map(|c| c.trim().to_string()).collect())
            .collect();
        MockBackend {
            keyword_index,
            aspect_keywords,
            lexicons,
            dictionary,
            max_context: 4096,
            calls: AtomicU64::new(0),
            prompts: AtomicU64::new(0),
        }
    }

    pub fn with_max_context(mut self, tokens: usize) -> Self {
        self.max_context = tokens;
        self
    }

    /// Number of `generate` invocations so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Number of prompts answered so far.
    pub fn prompts(&self) -> u64 {
        self.prompts.load(Ordering::SeqCst)
    }

    fn language_of(&self, prompt: &str) -> Result<LanguageCode, GatewayError> {
        field(prompt, "Review language: ")
            .ok_or_else(|| GatewayError::Content("prompt carries no review language".into()))?
            .parse()
            .map_err(|e| GatewayError::Content(format!("{e}")))
    }

    /// Aspect phase: taxonomy keywords found in the context, reported as
    /// their English L3 names in order of first occurrence.
    fn answer_aspects(&self, prompt: &str) -> Result<String, GatewayError> {
        let context = context_of(prompt)
            .ok_or_else(|| GatewayError::Content("prompt carries no context".into()))?
            .to_lowercase();
        let mut first_hit: BTreeMap<&str, usize> = BTreeMap::new();
        for (keyword, l3) in &self.keyword_index {
            if let Some(pos) = find_word(&context, keyword) {
                let entry = first_hit.entry(l3.as_str()).or_insert(pos);
                if pos < *entry {
                    *entry = pos;
                }
            }
        }
        let mut hits: Vec<(usize, &str)> = first_hit.into_iter().map(|(l3, p)| (p, l3)).collect();
        hits.sort();
        Ok(hits
            .into_iter()
            .map(|(_, l3)| l3)
            .collect::<Vec<_>>()
            .join(", "))
    }

    fn matched_segments(&self, prompt: &str) -> Result<Vec<String>, GatewayError> {
        let aspect = field(prompt, "Aspect: ")
            .ok_or_else(|| GatewayError::Content("prompt carries no aspect".into()))?;
        let language = self.language_of(prompt)?;
        let context = context_of(prompt)
            .ok_or_else(|| GatewayError::Content("prompt carries no context".into()))?;
        let keywords = match self.aspect_keywords.get(aspect) {
            Some(k) => k.as_slice(),
            None => return Ok(Vec::new()),
        };
        let review = Review::new("mock", "mock", language, context, None)
            .map_err(|e| GatewayError::Content(e.to_string()))?;
        Ok(segmenter::segment(&review)
            .into_iter()
            .filter(|seg| {
                let lower = seg.text.to_lowercase();
                keywords.iter().any(|kw| find_word(&lower, kw).is_some())
            })
            .map(|seg| seg.text)
            .collect())
    }

    /// Sentiment phase: lexicon vote over the segments matching the aspect.
    fn answer_sentiment(&self, prompt: &str) -> Result<String, GatewayError> {
        let language = self.language_of(prompt)?;
        let segments = self.matched_segments(prompt)?;
        let lexicon = self.lexicons.get(language.as_str());
        let (mut pos, mut neg) = (0usize, 0usize);
        if let Some(lex) = lexicon {
            for seg in &segments {
                let lower = seg.to_lowercase();
                pos += lex
                    .positive
                    .iter()
                    .filter(|w| find_word(&lower, &w.to_lowercase()).is_some())
                    .count();
                neg += lex
                    .negative
                    .iter()
                    .filter(|w| find_word(&lower, &w.to_lowercase()).is_some())
                    .count();
            }
        }
        Ok(match (pos > 0, neg > 0) {
            (true, true) => "both",
            (false, true) => "negative",
            // No lexicon evidence defaults to positive so the phase stays total.
            _ => "positive",
        }
        .to_string())
    }

    /// Verbatim phase: the matching segments, one per line.
    fn answer_verbatims(&self, prompt: &str) -> Result<String, GatewayError> {
        Ok(self.matched_segments(prompt)?.join("\n"))
    }

    fn translate_token(&self, token: &str, source: usize, target: usize) -> String {
        let core = token.trim_matches(|c: char| !c.is_alphanumeric());
        if core.is_empty() {
            return token.to_string();
        }
        let prefix_len = token.find(core).unwrap_or(0);
        let prefix = &token[..prefix_len];
        let suffix = &token[prefix_len + core.len()..];
        let lower = core.to_lowercase();
        for row in &self.dictionary {
            if row.get(source).map(|c| c.to_lowercase()) == Some(lower.clone()) {
                if let Some(out) = row.get(target) {
                    return format!("{prefix}{out}{suffix}");
                }
            }
        }
        token.to_string()
    }

    /// Translation phase: word-by-word dictionary lookup with pass-through
    /// for unknown words; one output line per input phrase.
    fn answer_translation(&self, prompt: &str) -> Result<String, GatewayError> {
        let target: LanguageCode = field(prompt, "Target language: ")
            .ok_or_else(|| GatewayError::Content("prompt carries no target language".into()))?
            .parse()
            .map_err(|e| GatewayError::Content(format!("{e}")))?;
        let source = self.language_of(prompt)?;
        let phrases_raw = prompt
            .find("Phrases: ")
            .map(|start| {
                let rest = &prompt[start + "Phrases: ".len()..];
                match rest.find("\nReview language: ") {
                    Some(end) => &rest[..end],
                    None => rest,
                }
            })
            .ok_or_else(|| GatewayError::Content("prompt carries no phrases".into()))?;
        let source_col = dictionary_column(source);
        let target_col = dictionary_column(target);
        let lines: Vec<String> = phrases_raw
            .split(VERBATIM_SEPARATOR)
            .map(|phrase| {
                phrase
                    .split_whitespace()
                    .map(|tok| self.translate_token(tok, source_col, target_col))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        Ok(lines.join("\n"))
    }

    /// Summarise phase: head-token concatenation that keeps each input
    /// line's lead visible, truncated to the instructed word count.
    fn answer_summary(&self, prompt: &str) -> Result<String, GatewayError> {
        let word_count = prompt
            .find("within ")
            .and_then(|at| prompt[at + "within ".len()..].split(' ').next())
            .and_then(|n| n.parse::<usize>().ok())
            .unwrap_or(10);
        let input = prompt
            .find("### Input: ")
            .map(|at| {
                let rest = &prompt[at + "### Input: ".len()..];
                match rest.find("\n\n### Response:") {
                    Some(end) => &rest[..end],
                    None => rest,
                }
            })
            .ok_or_else(|| GatewayError::Content("prompt carries no input section".into()))?;

        let mut parts = Vec::new();
        for line in input.lines().map(str::trim).filter(|l| !l.is_empty()) {
            parts.push(summarise_line(line));
        }
        let joined = parts.join(". ");
        let words: Vec<&str> = joined.split_whitespace().collect();
        Ok(words[..words.len().min(word_count)].join(" "))
    }

    fn answer(&self, prompt: &str) -> Result<String, GatewayError> {
        if prompt.starts_with(markers::ASPECT_ID) {
            self.answer_aspects(prompt)
        } else if prompt.starts_with(markers::SENTIMENT) {
            self.answer_sentiment(prompt)
        } else if prompt.starts_with(markers::VERBATIM) {
            self.answer_verbatims(prompt)
        } else if prompt.starts_with(markers::TRANSLATE) {
            self.answer_translation(prompt)
        } else if prompt.contains(markers::SUMMARISE) {
            self.answer_summary(prompt)
        } else {
            Err(GatewayError::Content(
                "unrecognised phase marker in prompt".into(),
            ))
        }
    }
}

/// Percent lines keep their lead sentence with the head verbatim; plain
/// lines contribute their first four tokens.
fn summarise_line(line: &str) -> String {
    if let Some((digits, rest)) = line.split_once('%') {
        if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
            if let Some(tail) = rest.strip_prefix(" of the reviews mention ") {
                if let Some((aspect, verbatims)) = tail.split_once(": ") {
                    let head = verbatims.split(';').next().unwrap_or("").trim();
                    return format!("{digits}% of the reviews mention {aspect}: {head}");
                }
            }
        }
    }
    let tokens: Vec<&str> = line.split_whitespace().take(4).collect();
    tokens.join(" ")
}

impl GenerationBackend for MockBackend {
    fn generate(&self, prompts: &[String], params: &GenParams) -> Result<Vec<String>, GatewayError> {
        params.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.fetch_add(prompts.len() as u64, Ordering::SeqCst);
        prompts.iter().map(|p| self.answer(p)).collect()
    }

    fn max_context_tokens(&self) -> usize {
        self.max_context
    }
}

/// Latency double: sleeps a fixed per-call cost plus a per-input-token cost,
/// then answers "ok" to every prompt.
pub struct SyntheticBackend {
    base_cost: Duration,
    per_token: Duration,
    max_context: usize,
    calls: AtomicU64,
}

impl SyntheticBackend {
    pub fn new(base_cost: Duration, per_token: Duration) -> Self {
        SyntheticBackend {
            base_cost,
            per_token,
            max_context: 1_000_000,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl GenerationBackend for SyntheticBackend {
    fn generate(&self, prompts: &[String], _params: &GenParams) -> Result<Vec<String>, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let tokens: usize = prompts.iter().map(|p| whitespace_token_count(p)).sum();
        let cost = self.base_cost + self.per_token * tokens as u32;
        if !cost.is_zero() {
            thread::sleep(cost);
        }
        Ok(prompts.iter().map(|_| "ok".to_string()).collect())
    }

    fn max_context_tokens(&self) -> usize {
        self.max_context
    }
}
