//! Four-phase decomposed extraction: aspect identification, per-aspect
//! sentiment, verbatim extraction and verbatim translation, each phase
//! conditioning on the previous one. Generated aspects are standardised
//! against the taxonomy and duplicate aspects merge. A review costs
//! 3N + 1 prompts for N identified aspects.

use serde::Serialize;
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, TemplateError, TemplateSet, VERBATIM_SEPARATOR};
use crate::matcher::{standardise, EmbeddingProvider, MatchError, MatchKind, MatchOptions};
use crate::model::{
    whitespace_token_count, Insight, ModelError, PipelineConfig, Review, Sentiment, Taxonomy,
    Verbatim,
};
use crate::segmenter;

/// Minimum token-level Jaccard overlap between a generated verbatim and
/// some review segment for the verbatim to count as grounded.
pub const GROUNDING_JACCARD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("gold insight set is empty; recall is undefined")]
    EmptyGold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionPhase {
    AspectId,
    Sentiment,
    Verbatim,
    Translate,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseRecord {
    pub phase: ExtractionPhase,
    pub prompt: String,
    pub response: String,
}

/// Full record of one review's pass through the pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct ExtractionTrace {
    pub review_id: String,
    pub phase_prompts: Vec<PhaseRecord>,
    /// Aspect names as generated in phase 1, before standardisation.
    pub aspects: Vec<String>,
    pub prompt_count: usize,
    pub warnings: Vec<String>,
}

/// Everything extraction needs, borrowed for the duration of a run.
pub struct ExtractorContext<'a> {
    pub taxonomy: &'a Taxonomy,
    pub gateway: &'a Gateway,
    pub embedder: &'a dyn EmbeddingProvider,
    pub templates: &'a TemplateSet,
    pub config: &'a PipelineConfig,
}

pub struct ReviewExtraction {
    pub insights: Vec<Insight>,
    pub trace: ExtractionTrace,
}

/// Strip list furniture from a model response line.
fn clean_item(raw: &str) -> String {
    let mut s = raw.trim();
    for prefix in ["-", "*", "•"] {
        if let Some(rest) = s.strip_prefix(prefix) {
            s = rest.trim_start();
        }
    }
    // numbering like "1." or "2)"
    let digits: usize = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            s = rest.trim_start();
        }
    }
    s.trim_matches(|c| c == '"' || c == '\'').trim().to_string()
}

/// Parse the phase-1 response into aspect names: comma or line separated,
/// bullets and quotes tolerated, deduplicated case-insensitively.
pub fn parse_aspects(response: &str) -> Vec<String> {
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for piece in response.split(['\n', ',']) {
        let name = clean_item(piece);
        if name.is_empty() {
            continue;
        }
        let key = name.to_lowercase();
        if !seen.contains(&key) {
            seen.push(key);
            out.push(name);
        }
    }
    out
}

fn parse_lines(response: &str) -> Vec<String> {
    response
        .lines()
        .map(clean_item)
        .filter(|l| !l.is_empty())
        .collect()
}

/// Token-level Jaccard similarity over lowercase word sets.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let set_a: std::collections::HashSet<String> =
        a.split_whitespace().map(str::to_lowercase).collect();
    let set_b: std::collections::HashSet<String> =
        b.split_whitespace().map(str::to_lowercase).collect();
    if set_a.is_empty() && set_b.is_empty() {
        return 0.0;
    }
    let inter = set_a.intersection(&set_b).count() as f64;
    let union = set_a.union(&set_b).count() as f64;
    inter / union
}

fn render_vars(pairs: &[(&str, &str)]) -> std::collections::BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| ((*k).to_string(), (*v).to_string()))
        .collect()
}

struct AspectRecord {
    l1: Option<String>,
    l2: Option<String>,
    l3: String,
    l4: Option<String>,
    is_new: bool,
    sentiment: Sentiment,
    pairs: Vec<(Verbatim, Verbatim)>,
}

/// Run the four phases over one review and standardise the result into
/// insight quadruples. Backend failures abort with the trace intact so far;
/// soft problems (unparseable sentiment, ungrounded verbatims) degrade to
/// warnings.
pub fn extract(review: &Review, ctx: &ExtractorContext) -> Result<ReviewExtraction, ExtractError> {
    let mut trace = ExtractionTrace {
        review_id: review.review_id.clone(),
        phase_prompts: Vec::new(),
        aspects: Vec::new(),
        prompt_count: 0,
        warnings: Vec::new(),
    };

    let mut ask = |phase: ExtractionPhase,
                   prompt: String,
                   trace: &mut ExtractionTrace|
     -> Result<String, ExtractError> {
        let response = ctx.gateway.generate_one(prompt.clone())?;
        trace.prompt_count += 1;
        trace.phase_prompts.push(PhaseRecord {
            phase,
            prompt,
            response: response.clone(),
        });
        Ok(response)
    };

    let language = review.language.as_str();

    // Phase 1: aspect identification, output in English regardless of the
    // review language.
    let prompt = ctx
        .templates
        .aspect_id
        .render(&render_vars(&[("language", language), ("context", &review.text)]))?;
    let response = ask(ExtractionPhase::AspectId, prompt, &mut trace)?;
    let aspects = parse_aspects(&response);
    if aspects.is_empty() && !response.trim().is_empty() {
        trace
            .warnings
            .push("phase-1 response yielded no parseable aspects".into());
    }
    trace.aspects = aspects.clone();

    let segments = segmenter::segment(review);
    let match_options = MatchOptions {
        thresholds: ctx.config.thresholds,
        match_new_aspects: ctx.config.match_new_aspects,
    };

    let mut records: Vec<AspectRecord> = Vec::new();
    for aspect in &aspects {
        // Phase 2: sentiment for this aspect, English label.
        let prompt = ctx.templates.sentiment.render(&render_vars(&[
            ("aspect", aspect),
            ("language", language),
            ("context", &review.text),
        ]))?;
        let response = ask(ExtractionPhase::Sentiment, prompt, &mut trace)?;
        let sentiment: Sentiment = match response
            .trim()
            .split_whitespace()
            .next()
            .unwrap_or("")
            .parse()
        {
            Ok(s) => s,
            Err(e) => {
                trace
                    .warnings
                    .push(format!("aspect {aspect:?}: {e}; aspect dropped"));
                continue;
            }
        };

        // Phase 3: source verbatims, grounded against the segmenter output.
        let prompt = ctx.templates.verbatim.render(&render_vars(&[
            ("aspect", aspect),
            ("sentiment", sentiment.as_str()),
            ("language", language),
            ("context", &review.text),
        ]))?;
        let response = ask(ExtractionPhase::Verbatim, prompt, &mut trace)?;
        let mut verbatims = Vec::new();
        for line in parse_lines(&response) {
            let grounded = segments
                .iter()
                .any(|seg| token_jaccard(&line, &seg.text) >= GROUNDING_JACCARD);
            if grounded {
                verbatims.push(line);
            } else {
                trace
                    .warnings
                    .push(format!("hallucinated verbatim dropped: {line:?}"));
            }
        }
        if verbatims.is_empty() {
            trace.warnings.push(format!(
                "aspect {aspect:?}: no grounded verbatims; aspect dropped"
            ));
            continue;
        }

        // Phase 4: translation into the target language.
        let joined = verbatims.join(VERBATIM_SEPARATOR);
        let prompt = ctx.templates.translate.render(&render_vars(&[
            ("target_language", ctx.config.target_language.as_str()),
            ("verbatims", &joined),
            ("language", language),
            ("context", &review.text),
        ]))?;
        let response = ask(ExtractionPhase::Translate, prompt, &mut trace)?;
        let translations: Vec<String> = response
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        if translations.len() != verbatims.len() {
            trace.warnings.push(format!(
                "aspect {aspect:?}: {} verbatims but {} translations; extras dropped",
                verbatims.len(),
                translations.len()
            ));
        }
        let pairs: Vec<(Verbatim, Verbatim)> = verbatims
            .iter()
            .zip(&translations)
            .map(|(src, dst)| {
                (
                    Verbatim::new(src.clone(), review.language),
                    Verbatim::new(dst.clone(), ctx.config.target_language),
                )
            })
            .collect();
        if pairs.is_empty() {
            trace
                .warnings
                .push(format!("aspect {aspect:?}: no translated pairs; aspect dropped"));
            continue;
        }

        // Standardise against the taxonomy and fill the upper levels.
        let outcome = standardise(
            aspect,
            &pairs[0].0.text,
            ctx.taxonomy,
            ctx.embedder,
            &match_options,
        )?;
        let (l1, l2, l3, l4, is_new) = match outcome.kind {
            MatchKind::ExistingL3 => {
                let (l1, l2) = ctx
                    .taxonomy
                    .parents_of_l3(&outcome.resolved_aspect)
                    .map(|(a, b)| (Some(a), Some(b)))
                    .unwrap_or((None, None));
                (l1, l2, outcome.resolved_aspect, None, false)
            }
            MatchKind::NewL4Of(parent) => {
                let (l1, l2) = ctx
                    .taxonomy
                    .parents_of_l3(&parent)
                    .map(|(a, b)| (Some(a), Some(b)))
                    .unwrap_or((None, None));
                (l1, l2, parent, Some(outcome.resolved_aspect), false)
            }
            MatchKind::NewAspect => (None, None, outcome.resolved_aspect, None, true),
        };

        records.push(AspectRecord {
            l1,
            l2,
            l3,
            l4,
            is_new,
            sentiment,
            pairs,
        });
    }

    // Merge aspects that standardised to the same identity.
    let mut merged: Vec<AspectRecord> = Vec::new();
    for record in records {
        match merged
            .iter_mut()
            .find(|m| m.l3 == record.l3 && m.l4 == record.l4 && m.is_new == record.is_new)
        {
            Some(existing) => {
                existing.sentiment = existing.sentiment.merge(record.sentiment);
                for pair in record.pairs {
                    if !existing.pairs.iter().any(|(src, _)| src == &pair.0) {
                        existing.pairs.push(pair);
                    }
                }
            }
            None => merged.push(record),
        }
    }

    let insights = merged
        .into_iter()
        .map(|record| {
            let (source, translated) = record.pairs.into_iter().unzip();
            Insight {
                entity_id: review.entity_id.clone(),
                review_id: review.review_id.clone(),
                l1_aspect: record.l1,
                l2_aspect: record.l2,
                l3_aspect: record.l3,
                l4_aspect: record.l4,
                is_new_aspect: record.is_new,
                sentiment: record.sentiment,
                source_verbatims: source,
                translated_verbatims: translated,
            }
        })
        .collect();

    Ok(ReviewExtraction { insights, trace })
}

/// Context-length-reduction accounting: how much shorter the verbatims are
/// than the raw reviews, on average.
#[derive(Debug, Clone, Serialize)]
pub struct ClrStats {
    pub domain: String,
    pub n_reviews: usize,
    pub avg_tokens_per_review: f64,
    pub avg_tokens_per_verbatim: f64,
    pub clr_percent: u32,
}

/// CLR% = round(100 * (1 - avg verbatim tokens / avg review tokens)),
/// floored at zero.
pub fn clr_percent(avg_tokens_per_review: f64, avg_tokens_per_verbatim: f64) -> u32 {
    if avg_tokens_per_review <= 0.0 {
        return 0;
    }
    let pct = 100.0 * (1.0 - avg_tokens_per_verbatim / avg_tokens_per_review);
    pct.round().max(0.0) as u32
}

impl ClrStats {
    pub fn from_corpus(domain: &str, reviews: &[Review], insights: &[Insight]) -> Self {
        let n_reviews = reviews.len();
        let review_tokens: usize = reviews
            .iter()
            .map(|r| whitespace_token_count(&r.text))
            .sum();
        let avg_tokens_per_review = if n_reviews == 0 {
            0.0
        } else {
            review_tokens as f64 / n_reviews as f64
        };
        let verbatims: Vec<&Verbatim> = insights
            .iter()
            .flat_map(|i| i.source_verbatims.iter())
            .collect();
        let avg_tokens_per_verbatim = if verbatims.is_empty() {
            0.0
        } else {
            verbatims
                .iter()
                .map(|v| whitespace_token_count(&v.text))
                .sum::<usize>() as f64
                / verbatims.len() as f64
        };
        ClrStats {
            domain: domain.to_string(),
            n_reviews,
            avg_tokens_per_review,
            avg_tokens_per_verbatim,
            clr_percent: clr_percent(avg_tokens_per_review, avg_tokens_per_verbatim),
        }
    }
}

pub struct CorpusExtraction {
    pub insights: Vec<Insight>,
    pub traces: Vec<ExtractionTrace>,
    pub clr: ClrStats,
    pub warnings: Vec<String>,
}

/// Extract every review in the corpus (data-parallel when the `parallel`
/// feature is on; all prompt dispatch funnels through the shared gateway
/// queue either way) and aggregate CLR statistics.
pub fn extract_corpus(
    reviews: &[Review],
    ctx: &ExtractorContext,
    domain: &str,
) -> Result<CorpusExtraction, ExtractError> {
    if reviews.is_empty() {
        return Err(ExtractError::EmptyCorpus);
    }
    let results = crate::parallel::map_slice(reviews, |review| extract(review, ctx));

    let mut insights = Vec::new();
    let mut traces = Vec::new();
    let mut warnings = Vec::new();
    for result in results {
        let extraction = result?;
        for w in &extraction.trace.warnings {
            warnings.push(format!("{}: {w}", extraction.trace.review_id));
        }
        insights.extend(extraction.insights);
        traces.push(extraction.trace);
    }
    let clr = ClrStats::from_corpus(domain, reviews, &insights);
    Ok(CorpusExtraction {
        insights,
        traces,
        clr,
        warnings,
    })
}

/// Harmonic mean of precision and recall.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreOptions {
    /// Minimum token Jaccard between predicted and gold source verbatims.
    pub verbatim_jaccard: f64,
    /// Minimum embedding cosine between predicted and gold translations.
    pub translation_cosine: f64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            verbatim_jaccard: 0.5,
            translation_cosine: 0.9,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractionScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub translation_accuracy: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

fn norm_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Score predicted quadruples against gold ones. A true positive needs the
/// same review, the same standardised L3 aspect, the same sentiment, and a
/// source-verbatim overlap at the Jaccard threshold; greedy one-to-one
/// matching in input order.
pub fn score_extraction(
    predicted: &[Insight],
    gold: &[Insight],
    emb: &dyn EmbeddingProvider,
    opts: &ScoreOptions,
) -> Result<ExtractionScore, ExtractError> {
    if gold.is_empty() {
        return Err(ExtractError::EmptyGold);
    }
    let mut gold_used = vec![false; gold.len()];
    let mut true_positives = 0usize;
    let mut translated_ok = 0usize;

    for pred in predicted {
        let matched = gold.iter().enumerate().find(|(gi, g)| {
            !gold_used[*gi]
                && g.review_id == pred.review_id
                && norm_name(&g.l3_aspect) == norm_name(&pred.l3_aspect)
                && g.sentiment == pred.sentiment
                && pred.source_verbatims.iter().any(|pv| {
                    g.source_verbatims
                        .iter()
                        .any(|gv| token_jaccard(&pv.text, &gv.text) >= opts.verbatim_jaccard)
                })
        });
        if let Some((gi, g)) = matched {
            gold_used[gi] = true;
            true_positives += 1;

            let mut best = -1.0f64;
            for pv in &pred.translated_verbatims {
                for gv in &g.translated_verbatims {
                    if pv.text == gv.text {
                        best = 1.0;
                        continue;
                    }
                    let vs = emb.embed(&[pv.text.clone(), gv.text.clone()])?;
                    best = best.max(crate::matcher::cosine(&vs[0], &vs[1])?);
                }
            }
            if best >= opts.translation_cosine {
                translated_ok += 1;
            }
        }
    }

    let precision = if predicted.is_empty() {
        0.0
    } else {
        true_positives as f64 / predicted.len() as f64
    };
    let recall = true_positives as f64 / gold.len() as f64;
    let translation_accuracy = if true_positives == 0 {
        0.0
    } else {
        translated_ok as f64 / true_positives as f64
    };
    Ok(ExtractionScore {
        precision,
        recall,
        f1: f1_score(precision, recall),
        translation_accuracy,
        true_positives,
        predicted: predicted.len(),
        gold: gold.len(),
    })
}
