//! Rule-based multilingual splitting of reviews into candidate verbatim
//! phrases. Two passes: review -> sentences on the language's sentence
//! delimiters, then sentence -> phrases on its phrase delimiters, with a
//! 2-word minimum that suppresses any split producing a shorter side.
//!
//! Lexical delimiters ("but", "aber", "parce que") match whole words only,
//! case-insensitively; punctuation matches literally, except "." which
//! splits only when followed by whitespace or end of text so decimals like
//! "4.5" survive.

use serde::Serialize;

use crate::model::{LanguageCode, Review};

/// Minimum words per emitted phrase. Fixed; not configurable below 2.
pub const MIN_PHRASE_WORDS: usize = 2;

/// A split trigger: literal punctuation or a whole-word lexical delimiter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Punct(&'static str),
    Word(&'static str),
}

impl Delimiter {
    fn pattern(&self) -> &'static str {
        match self {
            Delimiter::Punct(p) | Delimiter::Word(p) => p,
        }
    }
}

/// Per-language delimiter tables.
#[derive(Debug, Clone)]
pub struct SegmentRuleSet {
    pub language: LanguageCode,
    pub sentence_delimiters: Vec<Delimiter>,
    pub phrase_delimiters: Vec<Delimiter>,
    pub min_phrase_words: usize,
}

/// Serializable view of a rule set, for the `segment-rules` audit dump.
#[derive(Debug, Serialize)]
pub struct RuleSetDump {
    pub language: LanguageCode,
    pub sentence_punct: Vec<String>,
    pub sentence_words: Vec<String>,
    pub phrase_punct: Vec<String>,
    pub phrase_words: Vec<String>,
    pub min_phrase_words: usize,
    /// "." splits only when followed by whitespace or end of text.
    pub dot_requires_following_whitespace: bool,
}

impl SegmentRuleSet {
    pub fn dump(&self) -> RuleSetDump {
        let split = |delims: &[Delimiter]| {
            let punct: Vec<String> = delims
                .iter()
                .filter_map(|d| match d {
                    Delimiter::Punct(p) => Some((*p).to_string()),
                    Delimiter::Word(_) => None,
                })
                .collect();
            let words: Vec<String> = delims
                .iter()
                .filter_map(|d| match d {
                    Delimiter::Word(w) => Some((*w).to_string()),
                    Delimiter::Punct(_) => None,
                })
                .collect();
            (punct, words)
        };
        let (sentence_punct, sentence_words) = split(&self.sentence_delimiters);
        let (phrase_punct, phrase_words) = split(&self.phrase_delimiters);
        RuleSetDump {
            language: self.language,
            sentence_punct,
            sentence_words,
            phrase_punct,
            phrase_words,
            min_phrase_words: self.min_phrase_words,
            dot_requires_following_whitespace: true,
        }
    }
}

/// Delimiter tables for the five supported languages. Longest patterns are
/// listed first so multi-word delimiters win over their suffixes.
pub fn rules_for(language: LanguageCode) -> SegmentRuleSet {
    use Delimiter::{Punct, Word};
    let (sentence, phrase): (Vec<Delimiter>, Vec<Delimiter>) = match language {
        LanguageCode::Es => (
            vec![
                Word("pero"),
                Punct("."),
                Punct("!"),
                Punct("?"),
                Punct("¡"),
                Punct("¿"),
            ],
            vec![Word("porque"), Word("y"), Punct(","), Punct(";")],
        ),
        LanguageCode::En => (
            vec![Word("but"), Punct("."), Punct("!"), Punct("?")],
            vec![
                Word("because"),
                Word("and"),
                Punct(","),
                Punct(";"),
                Punct("&"),
            ],
        ),
        LanguageCode::De => (
            vec![Word("aber"), Punct("."), Punct("!"), Punct("?")],
            vec![Word("weil"), Word("und"), Punct(","), Punct(";")],
        ),
        LanguageCode::It => (
            vec![Word("ma"), Punct("."), Punct("!"), Punct("?")],
            vec![Word("perché"), Word("e"), Punct(","), Punct(";")],
        ),
        LanguageCode::Fr => (
            vec![Word("mais"), Punct("."), Punct("!"), Punct("?")],
            vec![Word("parce que"), Word("et"), Punct(","), Punct(";")],
        ),
    };
    SegmentRuleSet {
        language,
        sentence_delimiters: sentence,
        phrase_delimiters: phrase,
        min_phrase_words: MIN_PHRASE_WORDS,
    }
}

/// A candidate verbatim phrase. `span` holds byte offsets into the original
/// review text; `review.text[span.0..span.1]` equals `text` exactly (the
/// span is tightened past trimmed whitespace and delimiter punctuation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub text: String,
    pub review_id: String,
    pub span: (usize, usize),
    pub language: LanguageCode,
}

/// One matched delimiter occurrence, as byte offsets into the scanned text.
#[derive(Debug, Clone, Copy)]
struct SplitPoint {
    start: usize,
    end: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Case-insensitive whole-word match of `word` at byte offset `at`.
/// Returns the matched byte length.
fn match_word(text: &str, at: usize, word: &str) -> Option<usize> {
    let candidate = &text[at..];
    let mut len = 0usize;
    let mut cand_chars = candidate.chars();
    for wc in word.chars() {
        let cc = cand_chars.next()?;
        if cc.to_lowercase().to_string() != wc.to_lowercase().to_string() {
            return None;
        }
        len += cc.len_utf8();
    }
    // Boundary before: start of text or a non-word char.
    if at > 0 {
        let before = text[..at].chars().next_back().expect("non-empty prefix");
        if is_word_char(before) {
            return None;
        }
    }
    // Boundary after: end of text or a non-word char.
    if let Some(after) = text[at + len..].chars().next() {
        if is_word_char(after) {
            return None;
        }
    }
    Some(len)
}

fn match_delimiter(text: &str, at: usize, delim: &Delimiter) -> Option<usize> {
    match delim {
        Delimiter::Punct(p) => {
            if !text[at..].starts_with(p) {
                return None;
            }
            if *p == "." {
                // Decimal protection: only split when "." ends a token.
                match text[at + p.len()..].chars().next() {
                    Some(c) if !c.is_whitespace() => return None,
                    _ => {}
                }
            }
            Some(p.len())
        }
        Delimiter::Word(w) => match_word(text, at, w),
    }
}

/// Find every delimiter occurrence, longest pattern first at each position.
fn scan_splits(text: &str, delims: &[Delimiter]) -> Vec<SplitPoint> {
    let mut ordered: Vec<&Delimiter> = delims.iter().collect();
    ordered.sort_by_key(|d| std::cmp::Reverse(d.pattern().chars().count()));
    let mut points = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let mut matched = None;
        for delim in &ordered {
            if let Some(len) = match_delimiter(text, i, delim) {
                matched = Some(len);
                break;
            }
        }
        match matched {
            Some(len) => {
                points.push(SplitPoint {
                    start: i,
                    end: i + len,
                });
                i += len;
            }
            None => i += text[i..].chars().next().map_or(1, char::len_utf8),
        }
    }
    points
}

/// Punctuation trimmed from segment edges: the union of punctuation
/// delimiters across both passes.
fn is_trimmable(c: char) -> bool {
    c.is_whitespace() || matches!(c, '.' | '!' | '?' | '¡' | '¿' | ',' | ';' | '&')
}

/// Tighten a raw span: drop surrounding whitespace and delimiter
/// punctuation, returning the tight byte span, or None when nothing is left.
fn tighten(text: &str, start: usize, end: usize) -> Option<(usize, usize)> {
    let slice = &text[start..end];
    let trimmed = slice.trim_matches(is_trimmable);
    if trimmed.is_empty() {
        return None;
    }
    let offset = trimmed.as_ptr() as usize - slice.as_ptr() as usize;
    Some((start + offset, start + offset + trimmed.len()))
}

fn emit(
    original: &str,
    review_id: &str,
    language: LanguageCode,
    start: usize,
    end: usize,
) -> Option<Segment> {
    let (s, e) = tighten(original, start, end)?;
    Some(Segment {
        text: original[s..e].to_string(),
        review_id: review_id.to_string(),
        span: (s, e),
        language,
    })
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Split a review into sentence segments on the language's sentence
/// delimiters. Delimiters are consumed; empty pieces are dropped.
pub fn split_sentences(review: &Review) -> Vec<Segment> {
    let rules = rules_for(review.language);
    let text = &review.text;
    let points = scan_splits(text, &rules.sentence_delimiters);
    let mut segments = Vec::new();
    let mut cursor = 0usize;
    for p in &points {
        if let Some(seg) = emit(text, &review.review_id, review.language, cursor, p.start) {
            segments.push(seg);
        }
        cursor = p.end;
    }
    if let Some(seg) = emit(text, &review.review_id, review.language, cursor, text.len()) {
        segments.push(seg);
    }
    segments
}

/// Split a sentence segment into phrases. A candidate split point is
/// skipped whenever either resulting side would fall below
/// [`MIN_PHRASE_WORDS`], so short fragments stay attached to their hosts.
pub fn split_phrases(sentence: &Segment, original_text: &str) -> Vec<Segment> {
    let rules = rules_for(sentence.language);
    let base = sentence.span.0;
    let text = &sentence.text;
    let points = scan_splits(text, &rules.phrase_delimiters);

    let mut segments = Vec::new();
    let mut cursor = 0usize;
    for p in &points {
        let left = text[cursor..p.start].trim_matches(is_trimmable);
        let right = text[p.end..].trim_matches(is_trimmable);
        if word_count(left) < rules.min_phrase_words || word_count(right) < rules.min_phrase_words
        {
            continue;
        }
        if let Some(seg) = emit(
            original_text,
            &sentence.review_id,
            sentence.language,
            base + cursor,
            base + p.start,
        ) {
            segments.push(seg);
        }
        cursor = p.end;
    }
    if let Some(seg) = emit(
        original_text,
        &sentence.review_id,
        sentence.language,
        base + cursor,
        base + text.len(),
    ) {
        segments.push(seg);
    }
    segments
}

/// Full segmentation: sentences, then phrases, order preserved.
pub fn segment(review: &Review) -> Vec<Segment> {
    split_sentences(review)
        .iter()
        .flat_map(|sentence| split_phrases(sentence, &review.text))
        .collect()
}

/// Segment a whole corpus, one segment list per review, input order
/// preserved. Data-parallel when the `parallel` feature is enabled.
pub fn segment_corpus(reviews: &[Review]) -> Vec<Vec<Segment>> {
    crate::parallel::map_slice(reviews, segment)
}
