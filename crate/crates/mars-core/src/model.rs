//! Shared data model: reviews, taxonomy, insights, summaries and pipeline
//! configuration. All types are immutable after construction and safe to
//! share across worker threads (the taxonomy's new-aspect registry is the
//! one interior-mutable piece and is serialised behind a mutex).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unsupported language {0:?} (expected one of EN, ES, FR, DE, IT)")]
    UnsupportedLanguage(String),
    #[error("review text is empty after trimming")]
    EmptyReviewText,
    #[error("rating {0} out of range 1-5")]
    RatingOutOfRange(i64),
    #[error("line {line}: {message}")]
    CorpusLine { line: usize, message: String },
    #[error("duplicate review_id {0}")]
    DuplicateReviewId(String),
    #[error("unknown sentiment {0:?} (expected positive, negative or both)")]
    UnknownSentiment(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("taxonomy file: {0}")]
    TaxonomyFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The five review/summary languages supported by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LanguageCode {
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "ES")]
    Es,
    #[serde(rename = "FR")]
    Fr,
    #[serde(rename = "DE")]
    De,
    #[serde(rename = "IT")]
    It,
}

impl LanguageCode {
    pub const ALL: [LanguageCode; 5] = [
        LanguageCode::En,
        LanguageCode::Es,
        LanguageCode::Fr,
        LanguageCode::De,
        LanguageCode::It,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LanguageCode::En => "EN",
            LanguageCode::Es => "ES",
            LanguageCode::Fr => "FR",
            LanguageCode::De => "DE",
            LanguageCode::It => "IT",
        }
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageCode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EN" => Ok(LanguageCode::En),
            "ES" => Ok(LanguageCode::Es),
            "FR" => Ok(LanguageCode::Fr),
            "DE" => Ok(LanguageCode::De),
            "IT" => Ok(LanguageCode::It),
            other => Err(ModelError::UnsupportedLanguage(other.to_string())),
        }
    }
}

/// One customer review. `text` is guaranteed non-empty after trimming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub review_id: String,
    pub entity_id: String,
    pub language: LanguageCode,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
}

impl Review {
    pub fn new(
        review_id: impl Into<String>,
        entity_id: impl Into<String>,
        language: LanguageCode,
        text: impl Into<String>,
        rating: Option<u8>,
    ) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyReviewText);
        }
        if let Some(r) = rating {
            if !(1..=5).contains(&r) {
                return Err(ModelError::RatingOutOfRange(i64::from(r)));
            }
        }
        Ok(Review {
            review_id: review_id.into(),
            entity_id: entity_id.into(),
            language,
            text,
            rating,
        })
    }
}

/// Sentiment polarity of an insight. The parser is case-insensitive and the
/// set is closed: anything outside {positive, negative, both} is rejected so
/// extractor drift surfaces as an error instead of silent coercion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
    Both,
}

impl Sentiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
            Sentiment::Both => "both",
        }
    }

    /// Combine two sentiments observed for the same aspect.
    pub fn merge(self, other: Sentiment) -> Sentiment {
        if self == other {
            self
        } else {
            Sentiment::Both
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(Sentiment::Positive),
            "negative" => Ok(Sentiment::Negative),
            "both" => Ok(Sentiment::Both),
            other => Err(ModelError::UnknownSentiment(other.to_string())),
        }
    }
}

/// On-disk shape of a taxonomy document. Keys:
///
/// ```yaml
/// l1: [Coarse Aspect, ...]
/// l2: { Hinge Aspect: Coarse Aspect, ... }
/// l3: { Granular Aspect: Hinge Aspect, ... }
/// keywords: { Granular Aspect: [keyword, ...], ... }
/// ```
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TaxonomyConfig {
    pub l1: Vec<String>,
    pub l2: BTreeMap<String, String>,
    pub l3: BTreeMap<String, String>,
    #[serde(default)]
    pub keywords: BTreeMap<String, Vec<String>>,
}

/// Three-level aspect hierarchy with per-L3 keyword lists and a registry of
/// emergent aspects flagged during post-processing. The registry append is
/// atomic; everything else is read-only after construction.
#[derive(Debug)]
pub struct Taxonomy {
    l1_aspects: BTreeSet<String>,
    l2_aspects: BTreeMap<String, String>,
    l3_aspects: BTreeMap<String, String>,
    keywords: BTreeMap<String, Vec<String>>,
    new_aspects: Mutex<Vec<String>>,
}

impl Clone for Taxonomy {
    fn clone(&self) -> Self {
        Taxonomy {
            l1_aspects: self.l1_aspects.clone(),
            l2_aspects: self.l2_aspects.clone(),
            l3_aspects: self.l3_aspects.clone(),
            keywords: self.keywords.clone(),
            new_aspects: Mutex::new(self.new_aspects()),
        }
    }
}

impl Taxonomy {
    pub fn from_config(cfg: TaxonomyConfig) -> Self {
        Taxonomy {
            l1_aspects: cfg.l1.into_iter().collect(),
            l2_aspects: cfg.l2,
            l3_aspects: cfg.l3,
            keywords: cfg.keywords,
            new_aspects: Mutex::new(Vec::new()),
        }
    }

    pub fn from_yaml_str(doc: &str) -> Result<Self, ModelError> {
        let cfg: TaxonomyConfig =
            serde_yaml::from_str(doc).map_err(|e| ModelError::TaxonomyFile(e.to_string()))?;
        Ok(Self::from_config(cfg))
    }

    pub fn l1_aspects(&self) -> &BTreeSet<String> {
        &self.l1_aspects
    }

    pub fn l2_aspects(&self) -> &BTreeMap<String, String> {
        &self.l2_aspects
    }

    /// Granular aspects, keyed by name, valued by their L2 parent.
    pub fn l3_aspects(&self) -> &BTreeMap<String, String> {
        &self.l3_aspects
    }

    pub fn keywords(&self, l3: &str) -> &[String] {
        self.keywords.get(l3).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn keyword_map(&self) -> &BTreeMap<String, Vec<String>> {
        &self.keywords
    }

    pub fn contains_l3(&self, name: &str) -> bool {
        self.l3_aspects.contains_key(name)
    }

    /// Walk parent links from an L3 name up to its (L1, L2) ancestors.
    pub fn parents_of_l3(&self, l3: &str) -> Option<(String, String)> {
        let l2 = self.l3_aspects.get(l3)?;
        let l1 = self.l2_aspects.get(l2)?;
        Some((l1.clone(), l2.clone()))
    }

    /// Append an emergent aspect name to the registry. Atomic; duplicate
    /// names are kept at their first position only.
    pub fn register_new_aspect(&self, name: &str) {
        let mut registry = self.new_aspects.lock().expect("new_aspects poisoned");
        if !registry.iter().any(|n| n == name) {
            registry.push(name.to_string());
        }
    }

    pub fn new_aspects(&self) -> Vec<String> {
        self.new_aspects.lock().expect("new_aspects poisoned").clone()
    }
}

/// Outcome of taxonomy validation. Valid iff there are zero errors;
/// warnings (thin keyword lists) do not affect validity.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Minimum keyword count below which validation warns (not errors).
pub const KEYWORD_WARN_THRESHOLD: usize = 15;

/// Check tree structure, name uniqueness and keyword coverage of a taxonomy.
pub fn validate_taxonomy(tax: &Taxonomy) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut seen: HashSet<&str> = HashSet::new();
    for name in tax
        .l1_aspects
        .iter()
        .chain(tax.l2_aspects.keys())
        .chain(tax.l3_aspects.keys())
    {
        if !seen.insert(name.as_str()) {
            report
                .errors
                .push(format!("duplicate aspect name {name:?} across the tree"));
        }
    }

    for (l2, parent) in &tax.l2_aspects {
        if !tax.l1_aspects.contains(parent) {
            report.errors.push(format!(
                "dangling parent: L2 {l2:?} points at unknown L1 {parent:?}"
            ));
        }
    }
    for (l3, parent) in &tax.l3_aspects {
        if !tax.l2_aspects.contains_key(parent) {
            report.errors.push(format!(
                "dangling parent: L3 {l3:?} points at unknown L2 {parent:?}"
            ));
        }
    }

    for l3 in tax.l3_aspects.keys() {
        let kws = tax.keywords(l3);
        if kws.is_empty() {
            report
                .errors
                .push(format!("L3 {l3:?} has an empty keyword list"));
        } else if kws.len() < KEYWORD_WARN_THRESHOLD {
            report.warnings.push(format!(
                "L3 {l3:?} has {} keywords, below {KEYWORD_WARN_THRESHOLD}",
                kws.len()
            ));
        }
    }

    for l3 in tax.keywords.keys() {
        if !tax.l3_aspects.contains_key(l3) {
            report
                .errors
                .push(format!("keywords listed for unknown L3 {l3:?}"));
        }
    }

    report
}

/// A verbatim phrase with the language it is written in.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Verbatim {
    pub text: String,
    pub language: LanguageCode,
}

impl Verbatim {
    pub fn new(text: impl Into<String>, language: LanguageCode) -> Self {
        Verbatim {
            text: text.into(),
            language,
        }
    }
}

/// The insight quadruple extracted from one review: a taxonomy-aligned
/// aspect, its sentiment, and the supporting verbatims in source and target
/// language. `translated_verbatims[i]` is the translation of
/// `source_verbatims[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Insight {
    pub entity_id: String,
    pub review_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1_aspect: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2_aspect: Option<String>,
    pub l3_aspect: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l4_aspect: Option<String>,
    #[serde(default)]
    pub is_new_aspect: bool,
    pub sentiment: Sentiment,
    pub source_verbatims: Vec<Verbatim>,
    pub translated_verbatims: Vec<Verbatim>,
}

impl Insight {
    /// Stable identifier used for summary provenance.
    pub fn id(&self) -> String {
        match &self.l4_aspect {
            Some(l4) => format!("{}:{}:{}", self.review_id, self.l3_aspect, l4),
            None => format!("{}:{}", self.review_id, self.l3_aspect),
        }
    }

    /// Check the quadruple invariants against a target language.
    pub fn check(&self, target: LanguageCode) -> Result<(), String> {
        if self.source_verbatims.is_empty() {
            return Err(format!("insight {} has no source verbatims", self.id()));
        }
        if self.source_verbatims.len() != self.translated_verbatims.len() {
            return Err(format!(
                "insight {} has {} source but {} translated verbatims",
                self.id(),
                self.source_verbatims.len(),
                self.translated_verbatims.len()
            ));
        }
        if let Some(v) = self
            .translated_verbatims
            .iter()
            .find(|v| v.language != target)
        {
            return Err(format!(
                "insight {} carries a {} verbatim, target is {}",
                self.id(),
                v.language,
                target
            ));
        }
        Ok(())
    }
}

/// Aspect-level and overall summaries for one entity in the target language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryBundle {
    pub entity_id: String,
    pub target_language: LanguageCode,
    pub aspect_summaries: BTreeMap<String, String>,
    pub overall_summary: String,
    /// Keys are aspect names plus `"overall"`; values are insight ids.
    pub provenance: BTreeMap<String, Vec<String>>,
    /// Percent of the entity's reviews mentioning each aspect, 0-100.
    pub aspect_stats: BTreeMap<String, u8>,
}

/// Verbatim selection strategies for summarisation input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionKind {
    Random,
    Weighted,
    Centroid,
}

impl FromStr for SelectionKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(SelectionKind::Random),
            "weighted" => Ok(SelectionKind::Weighted),
            "centroid" => Ok(SelectionKind::Centroid),
            other => Err(ModelError::InvalidConfig(format!(
                "unknown selection strategy {other:?}"
            ))),
        }
    }
}

/// Matching thresholds for semantic standardisation. All comparisons in the
/// matcher are strict (`>`), so a score exactly at a threshold does not fire
/// that branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub sem_replace: f64,
    pub sem_l4_topic: f64,
    pub sem_l4_verbatim: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            sem_replace: 0.95,
            sem_l4_topic: 0.7,
            sem_l4_verbatim: 0.4,
        }
    }
}

fn default_context_length() -> usize {
    100
}
fn default_top_aspect_count() -> usize {
    5
}
fn default_words_per_aspect() -> usize {
    10
}
fn default_selection_k() -> usize {
    8
}

/// Pipeline-wide configuration. `context_length` is the token budget for
/// summariser input (whitespace tokens by default; the counter is injectable
/// at the summariser call sites).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub target_language: LanguageCode,
    #[serde(default = "default_context_length")]
    pub context_length: usize,
    #[serde(default = "default_top_aspect_count")]
    pub top_aspect_count: usize,
    #[serde(default = "default_words_per_aspect")]
    pub words_per_aspect: usize,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "PipelineConfig::default_selection")]
    pub selection_strategy: SelectionKind,
    /// Cap on verbatims fed to summarisation per aspect.
    #[serde(default = "default_selection_k")]
    pub selection_k: usize,
    #[serde(default)]
    pub random_seed: u64,
    /// When true, aspects already surfaced as new in this run take part in
    /// exact-name matching so repeats resolve to the first registration.
    #[serde(default)]
    pub match_new_aspects: bool,
    /// Generate the overall summary per sentiment (default) or mixed.
    #[serde(default = "PipelineConfig::default_per_sentiment")]
    pub per_sentiment_overall: bool,
}

impl PipelineConfig {
    fn default_selection() -> SelectionKind {
        SelectionKind::Random
    }
    fn default_per_sentiment() -> bool {
        true
    }

    pub fn new(target_language: LanguageCode) -> Self {
        PipelineConfig {
            target_language,
            context_length: default_context_length(),
            top_aspect_count: default_top_aspect_count(),
            words_per_aspect: default_words_per_aspect(),
            thresholds: Thresholds::default(),
            selection_strategy: SelectionKind::Random,
            selection_k: default_selection_k(),
            random_seed: 0,
            match_new_aspects: false,
            per_sentiment_overall: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let t = &self.thresholds;
        if !(t.sem_l4_topic > 0.0 && t.sem_l4_topic < t.sem_replace && t.sem_replace <= 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "thresholds must satisfy 0 < sem_l4_topic < sem_replace <= 1, got {} / {}",
                t.sem_l4_topic, t.sem_replace
            )));
        }
        if !(t.sem_l4_verbatim > 0.0 && t.sem_l4_verbatim <= 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "sem_l4_verbatim must be in (0, 1], got {}",
                t.sem_l4_verbatim
            )));
        }
        if self.context_length < 32 {
            return Err(ModelError::InvalidConfig(format!(
                "context_length must be >= 32, got {}",
                self.context_length
            )));
        }
        if self.top_aspect_count == 0 || self.words_per_aspect == 0 || self.selection_k == 0 {
            return Err(ModelError::InvalidConfig(
                "top_aspect_count, words_per_aspect and selection_k must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Whitespace-delimited token count: the default, backend-agnostic counter.
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Injectable token counter used wherever the context budget is enforced.
pub type TokenCounter = fn(&str) -> usize;

/// Parse a UTF-8 JSONL stream into reviews, preserving file order.
/// Fails on the first malformed line, unsupported language, invariant
/// violation or duplicate review id, reporting the 1-based line number.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<Review>, ModelError> {
    let mut reviews = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: Review = serde_json::from_str(&line).map_err(|e| ModelError::CorpusLine {
            line: line_no,
            message: e.to_string(),
        })?;
        // Re-run construction so the JSON path enforces the same invariants.
        let review = Review::new(
            raw.review_id,
            raw.entity_id,
            raw.language,
            raw.text,
            raw.rating,
        )
        .map_err(|e| ModelError::CorpusLine {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(review.review_id.clone()) {
            return Err(ModelError::DuplicateReviewId(review.review_id));
        }
        reviews.push(review);
    }
    Ok(reviews)
}

/// Serialise reviews back to JSONL, one object per line.
pub fn corpus_to_jsonl(reviews: &[Review]) -> Result<String, serde_json::Error> {
    let mut out = String::new();
    for review in reviews {
        out.push_str(&serde_json::to_string(review)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn demo_taxonomy() -> Taxonomy {
        let mut cfg = TaxonomyConfig {
            l1: vec!["Hospitality".into()],
            ..Default::default()
        };
        cfg.l2.insert("Hotel Services".into(), "Hospitality".into());
        cfg.l3.insert("Accommodation".into(), "Hotel Services".into());
        cfg.keywords.insert(
            "Accommodation".into(),
            (0..16).map(|i| format!("kw{i}")).collect(),
        );
        Taxonomy::from_config(cfg)
    }

    #[test]
    fn language_codes_round_trip_and_reject_unknown() {
        for lang in LanguageCode::ALL {
            assert_eq!(lang.as_str().parse::<LanguageCode>().unwrap(), lang);
        }
        assert!(matches!(
            "PT".parse::<LanguageCode>(),
            Err(ModelError::UnsupportedLanguage(_))
        ));
    }

    #[test]
    fn sentiment_parses_case_insensitively_and_rejects_neutral() {
        assert_eq!("Both".parse::<Sentiment>().unwrap(), Sentiment::Both);
        assert_eq!(
            "POSITIVE".parse::<Sentiment>().unwrap(),
            Sentiment::Positive
        );
        assert!(matches!(
            "neutral".parse::<Sentiment>(),
            Err(ModelError::UnknownSentiment(_))
        ));
    }

    #[test]
    fn review_rejects_blank_text_and_bad_rating() {
        assert!(matches!(
            Review::new("r1", "p1", LanguageCode::En, "   ", None),
            Err(ModelError::EmptyReviewText)
        ));
        assert!(matches!(
            Review::new("r1", "p1", LanguageCode::En, "ok", Some(6)),
            Err(ModelError::RatingOutOfRange(6))
        ));
    }

    #[test]
    fn minimal_single_chain_taxonomy_is_valid_without_warnings() {
        let report = validate_taxonomy(&demo_taxonomy());
        assert!(report.is_valid());
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn thin_keyword_list_warns_but_stays_valid() {
        let mut cfg = TaxonomyConfig {
            l1: vec!["Hospitality".into()],
            ..Default::default()
        };
        cfg.l2.insert("Pricing".into(), "Hospitality".into());
        cfg.l3.insert("prices".into(), "Pricing".into());
        cfg.keywords.insert(
            "prices".into(),
            vec!["cheap".into(), "expensive".into(), "cost".into()],
        );
        let report = validate_taxonomy(&Taxonomy::from_config(cfg));
        assert!(report.is_valid());
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].contains("below 15"));
    }

    #[test]
    fn dangling_parent_is_an_error() {
        let mut cfg = TaxonomyConfig {
            l1: vec!["Hospitality".into()],
            ..Default::default()
        };
        cfg.l3.insert("prices".into(), "Nonexistent".into());
        cfg.keywords.insert("prices".into(), vec!["cheap".into()]);
        let report = validate_taxonomy(&Taxonomy::from_config(cfg));
        assert!(!report.is_valid());
        assert!(report.errors.iter().any(|e| e.contains("dangling parent")));
    }

    #[test]
    fn empty_keywords_and_duplicate_names_are_errors() {
        let mut cfg = TaxonomyConfig {
            l1: vec!["Food".into()],
            ..Default::default()
        };
        cfg.l2.insert("Food".into(), "Food".into());
        cfg.l3.insert("taste".into(), "Food".into());
        let report = validate_taxonomy(&Taxonomy::from_config(cfg));
        assert!(report.errors.iter().any(|e| e.contains("duplicate")));
        assert!(report
            .errors
            .iter()
            .any(|e| e.contains("empty keyword list")));
    }

    #[test]
    fn parse_corpus_accepts_well_formed_lines() {
        let jsonl = r#"{"review_id":"r1","entity_id":"p1","language":"EN","text":"Great battery"}"#;
        let reviews = parse_corpus(Cursor::new(jsonl)).unwrap();
        assert_eq!(reviews.len(), 1);
        assert_eq!(reviews[0].review_id, "r1");
        assert_eq!(reviews[0].language, LanguageCode::En);
    }

    #[test]
    fn parse_corpus_rejects_unsupported_language_with_line_number() {
        let jsonl = "\
{\"review_id\":\"r1\",\"entity_id\":\"p1\",\"language\":\"EN\",\"text\":\"ok fine\"}
{\"review_id\":\"r2\",\"entity_id\":\"p1\",\"language\":\"PT\",\"text\":\"bom\"}";
        let err = parse_corpus(Cursor::new(jsonl)).unwrap_err();
        match err {
            ModelError::CorpusLine { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("unknown variant") || message.contains("PT"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_corpus_rejects_duplicate_review_ids() {
        let jsonl = "\
{\"review_id\":\"r1\",\"entity_id\":\"p1\",\"language\":\"EN\",\"text\":\"ok fine\"}
{\"review_id\":\"r1\",\"entity_id\":\"p1\",\"language\":\"EN\",\"text\":\"again\"}";
        let err = parse_corpus(Cursor::new(jsonl)).unwrap_err();
        assert!(matches!(err, ModelError::DuplicateReviewId(id) if id == "r1"));
    }

    #[test]
    fn taxonomy_tree_walk_reaches_one_l1_in_two_steps() {
        let tax = demo_taxonomy();
        for l3 in tax.l3_aspects().keys() {
            let (l1, l2) = tax.parents_of_l3(l3).unwrap();
            assert!(tax.l2_aspects().contains_key(&l2));
            assert!(tax.l1_aspects().contains(&l1));
        }
    }

    #[test]
    fn new_aspect_registry_appends_once() {
        let tax = demo_taxonomy();
        tax.register_new_aspect("pool access");
        tax.register_new_aspect("pool access");
        tax.register_new_aspect("parking");
        assert_eq!(tax.new_aspects(), vec!["pool access", "parking"]);
    }

    #[test]
    fn config_validation_enforces_threshold_ordering_and_budget_floor() {
        let mut cfg = PipelineConfig::new(LanguageCode::En);
        cfg.validate().unwrap();
        cfg.thresholds.sem_l4_topic = 0.96;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::new(LanguageCode::En);
        cfg.context_length = 31;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn insight_check_enforces_quadruple_invariants() {
        let insight = Insight {
            entity_id: "p1".into(),
            review_id: "r1".into(),
            l1_aspect: Some("Product Experience".into()),
            l2_aspect: Some("Hardware".into()),
            l3_aspect: "battery life".into(),
            l4_aspect: None,
            is_new_aspect: false,
            sentiment: Sentiment::Positive,
            source_verbatims: vec![Verbatim::new("great battery", LanguageCode::En)],
            translated_verbatims: vec![Verbatim::new("gran batería", LanguageCode::Es)],
        };
        insight.check(LanguageCode::Es).unwrap();
        assert!(insight.check(LanguageCode::Fr).is_err());
        let mut broken = insight.clone();
        broken.translated_verbatims.clear();
        assert!(broken.check(LanguageCode::Es).is_err());
    }

    prop_compose! {
        fn arb_review()(
            id in "[a-z][a-z0-9]{0,8}",
            entity in "[a-z][a-z0-9]{0,8}",
            lang in prop::sample::select(LanguageCode::ALL.to_vec()),
            text in "[a-zA-Z0-9 ,.!?¿¡àéèüöß]{1,80}",
            rating in prop::option::of(1u8..=5),
        ) -> Option<Review> {
            Review::new(id, entity, lang, text, rating).ok()
        }
    }

    proptest! {
        #[test]
        fn corpus_round_trip_is_field_equivalent(reviews in prop::collection::vec(arb_review(), 0..20)) {
            let mut unique = Vec::new();
            let mut seen = HashSet::new();
            for r in reviews.into_iter().flatten() {
                if seen.insert(r.review_id.clone()) {
                    unique.push(r);
                }
            }
            let jsonl = corpus_to_jsonl(&unique).unwrap();
            let parsed = parse_corpus(Cursor::new(jsonl)).unwrap();
            prop_assert_eq!(parsed, unique);
        }
    }
}
