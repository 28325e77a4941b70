//! Summarisation of extracted insights: per-aspect verbatim pools in the
//! target language, three selection strategies, recursive summarisation
//! that keeps every generation call within the configured context budget,
//! and overall-summary assembly over the top aspects.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, TemplateError, TemplateSet};
use crate::matcher::{cosine, EmbeddingProvider, MatchError};
use crate::model::{
    whitespace_token_count, Insight, LanguageCode, PipelineConfig, SelectionKind, Sentiment,
    SummaryBundle, TokenCounter,
};

/// Hard cap on summarisation recursion; a backend that fails to shrink its
/// input aborts instead of looping.
pub const MAX_RECURSION_DEPTH: usize = 8;

/// Cosine at or above which two verbatims count as near-duplicates for the
/// weighted strategy's popularity clusters.
pub const NEAR_DUP_COSINE: f64 = 0.9;

#[derive(Debug, Error)]
pub enum SummariseError {
    #[error("verbatim pool is empty")]
    EmptyPool,
    #[error("no insights for entity {0}")]
    NoInsights(String),
    #[error("verbatim exceeds context budget: {tokens} tokens > {budget}")]
    VerbatimExceedsBudget { tokens: usize, budget: usize },
    #[error("summarisation recursion exceeded {MAX_RECURSION_DEPTH} levels without shrinking")]
    DepthExceeded,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

/// One verbatim available for summarisation, in the target language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolVerbatim {
    pub text: String,
    pub language: LanguageCode,
    pub review_id: String,
}

/// All target-language verbatims collected for one aspect of one entity.
#[derive(Debug, Clone)]
pub struct VerbatimPool {
    pub aspect: String,
    pub entity_id: String,
    pub verbatims: Vec<PoolVerbatim>,
    /// Percent of the entity's reviews mentioning this aspect.
    pub mention_percent: u8,
    /// Ids of the insights that fed this pool.
    pub insight_ids: Vec<String>,
    /// Merged sentiment across the pool's insights.
    pub sentiment: Sentiment,
}

#[derive(Debug, Clone, Copy)]
pub struct SelectionStrategy {
    pub kind: SelectionKind,
    /// Pool size cap fed to summarisation.
    pub k: usize,
    pub seed: u64,
}

/// Derive a per-label seed from the run seed so parallel workers stay
/// deterministic regardless of scheduling.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is long enough"))
}

/// Group an entity's insights into per-aspect pools of target-language
/// verbatims. `total_reviews` defaults to the distinct reviews seen in the
/// insights themselves.
pub fn build_pools(
    entity_id: &str,
    insights: &[&Insight],
    total_reviews: Option<usize>,
) -> BTreeMap<String, VerbatimPool> {
    let distinct: BTreeSet<&str> = insights.iter().map(|i| i.review_id.as_str()).collect();
    let total = total_reviews.unwrap_or(distinct.len()).max(1);

    let mut pools: BTreeMap<String, VerbatimPool> = BTreeMap::new();
    let mut mentions: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for insight in insights {
        let pool = pools
            .entry(insight.l3_aspect.clone())
            .or_insert_with(|| VerbatimPool {
                aspect: insight.l3_aspect.clone(),
                entity_id: entity_id.to_string(),
                verbatims: Vec::new(),
                mention_percent: 0,
                insight_ids: Vec::new(),
                sentiment: insight.sentiment,
            });
        pool.sentiment = if pool.insight_ids.is_empty() {
            insight.sentiment
        } else {
            pool.sentiment.merge(insight.sentiment)
        };
        pool.insight_ids.push(insight.id());
        for v in &insight.translated_verbatims {
            pool.verbatims.push(PoolVerbatim {
                text: v.text.clone(),
                language: v.language,
                review_id: insight.review_id.clone(),
            });
        }
        mentions
            .entry(insight.l3_aspect.clone())
            .or_default()
            .insert(insight.review_id.as_str());
    }
    for (aspect, pool) in pools.iter_mut() {
        let mentioned = mentions.get(aspect).map_or(0, BTreeSet::len);
        let pct = (100.0 * mentioned as f64 / total as f64).round();
        pool.mention_percent = pct.clamp(0.0, 100.0) as u8;
    }
    pools
}

/// Pick the verbatims that feed summarisation. Random samples uniformly
/// without replacement; weighted clusters near-duplicates and samples
/// proportional to cluster size; centroid takes the verbatims nearest the
/// embedding centroid. Weighted/centroid order by representativeness.
pub fn select(
    pool: &VerbatimPool,
    strategy: &SelectionStrategy,
    emb: &dyn EmbeddingProvider,
) -> Result<Vec<PoolVerbatim>, SummariseError> {
    let n = pool.verbatims.len();
    if n == 0 {
        return Err(SummariseError::EmptyPool);
    }
    let k = strategy.k.max(1).min(n);

    match strategy.kind {
        SelectionKind::Random => {
            let mut rng = ChaCha20Rng::seed_from_u64(strategy.seed);
            let mut indices: Vec<usize> = (0..n).collect();
            // Partial Fisher-Yates; the first k slots are the sample, in
            // draw order.
            for i in 0..k {
                let j = rng.gen_range(i..n);
                indices.swap(i, j);
            }
            Ok(indices[..k]
                .iter()
                .map(|&i| pool.verbatims[i].clone())
                .collect())
        }
        SelectionKind::Weighted => {
            let texts: Vec<String> = pool.verbatims.iter().map(|v| v.text.clone()).collect();
            let vectors = emb.embed(&texts)?;
            // Leader clustering at the near-duplicate threshold.
            let mut clusters: Vec<Vec<usize>> = Vec::new();
            for (i, vec) in vectors.iter().enumerate() {
                let mut placed = false;
                for cluster in clusters.iter_mut() {
                    let leader = &vectors[cluster[0]];
                    if cosine(vec, leader)? >= NEAR_DUP_COSINE {
                        cluster.push(i);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    clusters.push(vec![i]);
                }
            }
            let original_sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();

            let mut rng = ChaCha20Rng::seed_from_u64(strategy.seed);
            let mut next_member: Vec<usize> = vec![0; clusters.len()];
            let mut picked: Vec<(usize, usize)> = Vec::new(); // (cluster, member)
            for _ in 0..k {
                let remaining: Vec<usize> = clusters
                    .iter()
                    .zip(&next_member)
                    .map(|(c, used)| c.len() - used)
                    .collect();
                let total: usize = remaining.iter().sum();
                if total == 0 {
                    break;
                }
                let mut roll = rng.gen_range(0..total);
                let mut chosen = 0;
                for (ci, rem) in remaining.iter().enumerate() {
                    if roll < *rem {
                        chosen = ci;
                        break;
                    }
                    roll -= rem;
                }
                picked.push((chosen, next_member[chosen]));
                next_member[chosen] += 1;
            }
            // Popularity order: bigger clusters first.
            picked.sort_by(|a, b| {
                original_sizes[b.0]
                    .cmp(&original_sizes[a.0])
                    .then(a.0.cmp(&b.0))
                    .then(a.1.cmp(&b.1))
            });
            Ok(picked
                .into_iter()
                .map(|(ci, mi)| pool.verbatims[clusters[ci][mi]].clone())
                .collect())
        }
        SelectionKind::Centroid => {
            let texts: Vec<String> = pool.verbatims.iter().map(|v| v.text.clone()).collect();
            let vectors = emb.embed(&texts)?;
            let dim = vectors.first().map_or(0, Vec::len);
            let mut centroid = vec![0.0f64; dim];
            for v in &vectors {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x;
                }
            }
            for c in centroid.iter_mut() {
                *c /= n as f64;
            }
            let norm: f64 = centroid.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                // Degenerate centroid: fall back to pool order.
                return Ok(pool.verbatims[..k].to_vec());
            }
            let mut scored: Vec<(usize, f64)> = vectors
                .iter()
                .enumerate()
                .map(|(i, v)| Ok((i, cosine(v, &centroid)?)))
                .collect::<Result<_, MatchError>>()?;
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
            Ok(scored[..k]
                .iter()
                .map(|&(i, _)| pool.verbatims[i].clone())
                .collect())
        }
    }
}

fn render_vars(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| ((*k).to_string(), v.clone()))
        .collect()
}

fn summarise_elem(
    elements: &[String],
    sentiment_label: &str,
    word_count: usize,
    aspect_count: usize,
    gateway: &Gateway,
    templates: &TemplateSet,
) -> Result<String, SummariseError> {
    let prompt = templates.summarise.render(&render_vars(&[
        ("word_count", word_count.to_string()),
        ("aspect_count", aspect_count.to_string()),
        ("sentiment", sentiment_label.to_string()),
        ("percent_contribution", elements.join("\n")),
    ]))?;
    Ok(gateway.generate_one(prompt)?)
}

/// Greedy contiguous chunking: fill each chunk up to the budget.
fn chunk_elements<'a>(
    elements: &'a [String],
    budget: usize,
    count_tokens: TokenCounter,
) -> Vec<&'a [String]> {
    let mut chunks = Vec::new();
    let mut start = 0usize;
    let mut used = 0usize;
    for (i, elem) in elements.iter().enumerate() {
        let tokens = count_tokens(elem);
        if i > start && used + tokens > budget {
            chunks.push(&elements[start..i]);
            start = i;
            used = 0;
        }
        used += tokens;
    }
    if start < elements.len() {
        chunks.push(&elements[start..]);
    }
    chunks
}

fn summarise_recursive(
    elements: &[String],
    sentiment_label: &str,
    gateway: &Gateway,
    templates: &TemplateSet,
    cfg: &PipelineConfig,
    count_tokens: TokenCounter,
    depth: usize,
) -> Result<String, SummariseError> {
    if depth > MAX_RECURSION_DEPTH {
        return Err(SummariseError::DepthExceeded);
    }
    let budget = cfg.context_length;
    for elem in elements {
        let tokens = count_tokens(elem);
        if tokens > budget {
            return Err(SummariseError::VerbatimExceedsBudget { tokens, budget });
        }
    }
    let total: usize = elements.iter().map(|e| count_tokens(e)).sum();
    if total <= budget {
        return summarise_elem(
            elements,
            sentiment_label,
            cfg.words_per_aspect,
            1,
            gateway,
            templates,
        );
    }
    let mut intermediate = Vec::new();
    for chunk in chunk_elements(elements, budget, count_tokens) {
        intermediate.push(summarise_recursive(
            chunk,
            sentiment_label,
            gateway,
            templates,
            cfg,
            count_tokens,
            depth + 1,
        )?);
    }
    summarise_recursive(
        &intermediate,
        sentiment_label,
        gateway,
        templates,
        cfg,
        count_tokens,
        depth + 1,
    )
}

/// Recursive context-bounded summarisation of one aspect's verbatims: a
/// single call when everything fits the budget, otherwise chunk, summarise
/// each chunk, and recurse on the intermediate summaries. Every generation
/// input stays within `cfg.context_length` tokens.
pub fn rec_summ(
    aspect: &str,
    verbatims: &[String],
    sentiment_label: &str,
    gateway: &Gateway,
    templates: &TemplateSet,
    cfg: &PipelineConfig,
    count_tokens: TokenCounter,
) -> Result<String, SummariseError> {
    if verbatims.is_empty() {
        return Err(SummariseError::EmptyPool);
    }
    let _ = aspect;
    summarise_recursive(
        verbatims,
        sentiment_label,
        gateway,
        templates,
        cfg,
        count_tokens,
        0,
    )
}

/// Result of summarising one entity: the bundle plus soft warnings.
#[derive(Debug)]
pub struct SummariseOutcome {
    pub bundle: SummaryBundle,
    pub warnings: Vec<String>,
}

fn percent_line(pool: &VerbatimPool, selected: &[PoolVerbatim]) -> String {
    let examples: Vec<&str> = selected.iter().take(3).map(|v| v.text.as_str()).collect();
    format!(
        "{}% of the reviews mention {}: {}",
        pool.mention_percent,
        pool.aspect,
        examples.join("; ")
    )
}

/// Summarise one entity: per-aspect summaries over selected verbatims, then
/// an overall summary over the top `T` aspects by mention percentage (ties
/// alphabetical), rendered with the instruction/input summarisation prompt.
pub fn summarise_entity(
    entity_id: &str,
    insights: &[Insight],
    gateway: &Gateway,
    emb: &dyn EmbeddingProvider,
    templates: &TemplateSet,
    cfg: &PipelineConfig,
    total_reviews: Option<usize>,
) -> Result<SummariseOutcome, SummariseError> {
    let entity_insights: Vec<&Insight> = insights
        .iter()
        .filter(|i| i.entity_id == entity_id)
        .collect();
    if entity_insights.is_empty() {
        return Err(SummariseError::NoInsights(entity_id.to_string()));
    }
    let pools = build_pools(entity_id, &entity_insights, total_reviews);
    let mut warnings = Vec::new();

    // Per-aspect selection and summarisation, order-stable and
    // data-parallel when enabled.
    let pool_list: Vec<&VerbatimPool> = pools.values().collect();
    let per_aspect: Vec<Result<(String, Vec<PoolVerbatim>, String), SummariseError>> =
        crate::parallel::map_slice(&pool_list, |pool| {
            let strategy = SelectionStrategy {
                kind: cfg.selection_strategy,
                k: cfg.selection_k,
                seed: derive_seed(cfg.random_seed, &pool.aspect),
            };
            let selected = select(pool, &strategy, emb)?;
            let texts: Vec<String> = selected.iter().map(|v| v.text.clone()).collect();
            let summary = rec_summ(
                &pool.aspect,
                &texts,
                pool.sentiment.as_str(),
                gateway,
                templates,
                cfg,
                whitespace_token_count,
            )?;
            Ok((pool.aspect.clone(), selected, summary))
        });

    let mut aspect_summaries = BTreeMap::new();
    let mut selections: BTreeMap<String, Vec<PoolVerbatim>> = BTreeMap::new();
    let mut provenance: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for result in per_aspect {
        match result {
            Ok((aspect, selected, summary)) => {
                provenance.insert(aspect.clone(), pools[&aspect].insight_ids.clone());
                selections.insert(aspect.clone(), selected);
                aspect_summaries.insert(aspect, summary);
            }
            Err(SummariseError::EmptyPool) => {
                warnings.push("empty verbatim pool skipped".to_string());
            }
            Err(err) => return Err(err),
        }
    }

    // Rank by mention percentage, ties alphabetical, and keep the top T.
    let mut ranked: Vec<&VerbatimPool> = pools.values().collect();
    ranked.sort_by(|a, b| {
        b.mention_percent
            .cmp(&a.mention_percent)
            .then_with(|| a.aspect.cmp(&b.aspect))
    });
    let top: Vec<&VerbatimPool> = ranked
        .into_iter()
        .filter(|p| selections.contains_key(&p.aspect))
        .take(cfg.top_aspect_count)
        .collect();

    let word_count = cfg.top_aspect_count * cfg.words_per_aspect;
    let overall_parts: Vec<String> = if cfg.per_sentiment_overall {
        let mut parts = Vec::new();
        for sentiment in [Sentiment::Positive, Sentiment::Negative] {
            let bucket: Vec<&&VerbatimPool> = top
                .iter()
                .filter(|p| p.sentiment == sentiment || p.sentiment == Sentiment::Both)
                .collect();
            if bucket.is_empty() {
                continue;
            }
            let lines: Vec<String> = bucket
                .iter()
                .map(|p| percent_line(p, &selections[&p.aspect]))
                .collect();
            parts.push(summarise_overall(
                &lines,
                sentiment.as_str(),
                word_count,
                cfg.top_aspect_count,
                gateway,
                templates,
            )?);
        }
        parts
    } else {
        let lines: Vec<String> = top
            .iter()
            .map(|p| percent_line(p, &selections[&p.aspect]))
            .collect();
        vec![summarise_overall(
            &lines,
            "positive and negative",
            word_count,
            cfg.top_aspect_count,
            gateway,
            templates,
        )?]
    };
    let overall_summary = overall_parts.join("\n");

    let overall_ids: Vec<String> = top
        .iter()
        .flat_map(|p| p.insight_ids.iter().cloned())
        .collect();
    provenance.insert("overall".to_string(), overall_ids);

    let aspect_stats: BTreeMap<String, u8> = pools
        .values()
        .map(|p| (p.aspect.clone(), p.mention_percent))
        .collect();

    Ok(SummariseOutcome {
        bundle: SummaryBundle {
            entity_id: entity_id.to_string(),
            target_language: cfg.target_language,
            aspect_summaries,
            overall_summary,
            provenance,
            aspect_stats,
        },
        warnings,
    })
}

fn summarise_overall(
    lines: &[String],
    sentiment_label: &str,
    word_count: usize,
    aspect_count: usize,
    gateway: &Gateway,
    templates: &TemplateSet,
) -> Result<String, SummariseError> {
    summarise_elem(
        lines,
        sentiment_label,
        word_count,
        aspect_count,
        gateway,
        templates,
    )
}
