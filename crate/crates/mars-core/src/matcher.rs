//! Aspect standardisation against the taxonomy: embedding provider
//! interface, cosine similarity, stable argmax, and the syntactic-then-
//! semantic post-processing that resolves a generated aspect to an existing
//! L3, a new L4 under an L3, or a brand-new aspect.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Taxonomy, Thresholds};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("vector dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine undefined for a zero vector")]
    ZeroVector,
    #[error("embedding contains a non-finite component")]
    NonFinite,
    #[error("argmax over empty input")]
    EmptyInput,
    #[error("taxonomy has no L3 aspects to match against")]
    EmptyTaxonomy,
    #[error("embedding provider: {0}")]
    Provider(String),
}

/// Deterministic text-to-vector interface. Same text must yield the same
/// vector within one provider instance; all vectors share `dimension()`.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, MatchError>;
    fn dimension(&self) -> usize;

    fn embed_one(&self, text: &str) -> Result<Vec<f64>, MatchError> {
        let mut out = self.embed(&[text.to_string()])?;
        out.pop().ok_or_else(|| {
            MatchError::Provider("provider returned no vector for one input".into())
        })
    }
}

/// Hermetic test/demo provider: hashes each text into a seeded pseudo-random
/// unit vector. Deterministic across runs and platforms.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension >= 2, "need at least 2 dimensions");
        HashEmbedder { dimension, seed }
    }

    fn vector(&self, text: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let mut rng = ChaCha20Rng::from_seed(key);
        loop {
            let v: Vec<f64> = (0..self.dimension)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(32, 0)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, MatchError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

/// Caches one vector per unique string. Taxonomy names and keywords are
/// compared against every generated aspect, so the cache pays for itself on
/// the second review.
pub struct MemoisedProvider<P> {
    inner: P,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl<P: EmbeddingProvider> MemoisedProvider<P> {
    pub fn new(inner: P) -> Self {
        MemoisedProvider {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for MemoisedProvider<P> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, MatchError> {
        let misses: Vec<String> = {
            let cache = self.cache.lock().expect("embed cache poisoned");
            let mut misses = Vec::new();
            for t in texts {
                if !cache.contains_key(t) && !misses.contains(t) {
                    misses.push(t.clone());
                }
            }
            misses
        };
        if !misses.is_empty() {
            let fresh = self.inner.embed(&misses)?;
            let mut cache = self.cache.lock().expect("embed cache poisoned");
            for (text, vector) in misses.into_iter().zip(fresh) {
                cache.insert(text, vector);
            }
        }
        let cache = self.cache.lock().expect("embed cache poisoned");
        Ok(texts.iter().map(|t| cache[t].clone()).collect())
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }
}

/// Wrapper that counts embed calls and embedded texts; used to observe that
/// syntactic hits never touch the provider.
pub struct CountingProvider<P> {
    inner: P,
    calls: AtomicUsize,
    texts: AtomicUsize,
}

impl<P: EmbeddingProvider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        CountingProvider {
            inner,
            calls: AtomicUsize::new(0),
            texts: AtomicUsize::new(0),
        }
    }

    pub fn embed_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn embedded_texts(&self) -> usize {
        self.texts.load(Ordering::SeqCst)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CountingProvider<P> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, MatchError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        self.inner.embed(texts)
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }
}

/// Cosine similarity of two equal-dimension non-zero vectors, in [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, MatchError> {
    if u.len() != v.len() {
        return Err(MatchError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(MatchError::NonFinite);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(MatchError::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Stable argmax: returns the aspect with the highest score, first index on
/// ties.
pub fn phi<'a>(aspects: &'a [String], scores: &[f64]) -> Result<(&'a str, f64), MatchError> {
    if aspects.is_empty() || scores.is_empty() {
        return Err(MatchError::EmptyInput);
    }
    if aspects.len() != scores.len() {
        return Err(MatchError::DimensionMismatch {
            left: aspects.len(),
            right: scores.len(),
        });
    }
    let mut best = 0usize;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok((aspects[best].as_str(), scores[best]))
}

/// Case-fold and collapse whitespace for name comparison.
fn normalise(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Ordered token-subsequence containment: every token of `needle` appears in
/// `haystack` in order ("battery" within "battery life", but not "rice"
/// within "prices").
fn is_token_subsequence(needle: &[&str], haystack: &[&str]) -> bool {
    let mut hay = haystack.iter();
    needle.iter().all(|tok| hay.by_ref().any(|h| h == tok))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchedBy {
    Exact,
    Substring,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum MatchKind {
    /// Generated aspect resolved to an existing taxonomy L3.
    ExistingL3,
    /// Generated aspect surfaced as a new L4 under the named L3 parent.
    NewL4Of(String),
    /// Off-taxonomy aspect, appended to the new-aspect registry.
    NewAspect,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MatchOutcome {
    pub kind: MatchKind,
    pub resolved_aspect: String,
    pub matched_by: MatchedBy,
    pub score_t: Option<f64>,
    pub score_v: Option<f64>,
}

pub(crate) fn syntactic_match_kind(generated: &str, tax: &Taxonomy) -> Option<(String, MatchedBy)> {
    let norm = normalise(generated);
    if norm.is_empty() {
        return None;
    }
    for name in tax.l3_aspects().keys() {
        if normalise(name) == norm {
            return Some((name.clone(), MatchedBy::Exact));
        }
    }
    let needle: Vec<&str> = norm.split(' ').collect();
    let mut best: Option<(String, usize)> = None;
    for name in tax.l3_aspects().keys() {
        let name_norm = normalise(name);
        let hay: Vec<&str> = name_norm.split(' ').collect();
        if needle.len() < hay.len() && is_token_subsequence(&needle, &hay) {
            // Most specific superstring: fewest tokens wins; BTreeMap
            // iteration order breaks ties deterministically.
            let better = best.as_ref().map_or(true, |(_, n)| hay.len() < *n);
            if better {
                best = Some((name.clone(), hay.len()));
            }
        }
    }
    best.map(|(name, _)| (name, MatchedBy::Substring))
}

/// Exact or token-subsequence match of a generated aspect against the
/// taxonomy's L3 names. Returns the winning L3, or None when the caller
/// should fall through to semantic matching.
pub fn syntactic_match(generated: &str, tax: &Taxonomy) -> Option<String> {
    syntactic_match_kind(generated, tax).map(|(name, _)| name)
}

/// Maximum-similarity scores of a generated aspect and its extracted
/// verbatim against the taxonomy.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticScores {
    /// L3 whose *name* is closest to the generated aspect.
    pub aspect_t: String,
    pub score_t: f64,
    /// L3 whose *keywords* are closest to the extracted verbatim.
    pub aspect_v: String,
    pub score_v: f64,
}

/// Score the generated aspect against every L3 name and the extracted
/// verbatim against every L3's keyword list, taking the argmax of each.
pub fn semantic_scores(
    generated: &str,
    verbatim: &str,
    tax: &Taxonomy,
    emb: &dyn EmbeddingProvider,
) -> Result<SemanticScores, MatchError> {
    let names: Vec<String> = tax.l3_aspects().keys().cloned().collect();
    if names.is_empty() {
        return Err(MatchError::EmptyTaxonomy);
    }

    let mut request: Vec<String> = vec![generated.to_string(), verbatim.to_string()];
    request.extend(names.iter().cloned());
    let keyword_lists: Vec<&[String]> = names.iter().map(|n| tax.keywords(n)).collect();
    for kws in &keyword_lists {
        request.extend(kws.iter().cloned());
    }
    let vectors = emb.embed(&request)?;
    if vectors.len() != request.len() {
        return Err(MatchError::Provider(format!(
            "provider returned {} vectors for {} inputs",
            vectors.len(),
            request.len()
        )));
    }

    let gen_vec = &vectors[0];
    let verb_vec = &vectors[1];
    let name_vecs = &vectors[2..2 + names.len()];

    let mut topic_scores = Vec::with_capacity(names.len());
    for nv in name_vecs {
        topic_scores.push(cosine(gen_vec, nv)?);
    }

    let mut verbatim_scores = Vec::with_capacity(names.len());
    let mut offset = 2 + names.len();
    for kws in &keyword_lists {
        let mut best = -1.0f64;
        for kv in &vectors[offset..offset + kws.len()] {
            best = best.max(cosine(verb_vec, kv)?);
        }
        offset += kws.len();
        verbatim_scores.push(best);
    }

    let (aspect_t, score_t) = phi(&names, &topic_scores)?;
    let aspect_t = aspect_t.to_string();
    let (aspect_v, score_v) = phi(&names, &verbatim_scores)?;
    Ok(SemanticScores {
        aspect_t,
        score_t,
        aspect_v: aspect_v.to_string(),
        score_v,
    })
}

/// Apply the semantic post-processing branches to already-computed scores.
/// All threshold comparisons are strict.
pub fn resolve_semantic(
    scores: &SemanticScores,
    generated: &str,
    thresholds: &Thresholds,
) -> MatchOutcome {
    if scores.score_t > thresholds.sem_replace {
        MatchOutcome {
            kind: MatchKind::ExistingL3,
            resolved_aspect: scores.aspect_t.clone(),
            matched_by: MatchedBy::Semantic,
            score_t: Some(scores.score_t),
            score_v: Some(scores.score_v),
        }
    } else if scores.score_t > thresholds.sem_l4_topic
        && scores.score_v > thresholds.sem_l4_verbatim
    {
        // The topic-name match names the parent; the verbatim score only
        // gates the branch.
        MatchOutcome {
            kind: MatchKind::NewL4Of(scores.aspect_t.clone()),
            resolved_aspect: generated.to_string(),
            matched_by: MatchedBy::Semantic,
            score_t: Some(scores.score_t),
            score_v: Some(scores.score_v),
        }
    } else {
        MatchOutcome {
            kind: MatchKind::NewAspect,
            resolved_aspect: generated.to_string(),
            matched_by: MatchedBy::Semantic,
            score_t: Some(scores.score_t),
            score_v: Some(scores.score_v),
        }
    }
}

/// Options for [`standardise`]. `match_new_aspects` lets aspects registered
/// earlier in the same run absorb exact repeats (off by default).
#[derive(Debug, Clone, Copy, Default)]
pub struct MatchOptions {
    pub thresholds: Thresholds,
    pub match_new_aspects: bool,
}

/// Standardise a generated aspect: syntactic match first (no embedding
/// call on a hit), then semantic scoring with the replace / new-L4 /
/// new-aspect branches. New aspects are appended to the taxonomy registry.
pub fn standardise(
    generated: &str,
    verbatim: &str,
    tax: &Taxonomy,
    emb: &dyn EmbeddingProvider,
    options: &MatchOptions,
) -> Result<MatchOutcome, MatchError> {
    let generated = generated.trim();

    if options.match_new_aspects {
        let norm = normalise(generated);
        if let Some(existing) = tax.new_aspects().iter().find(|n| normalise(n) == norm) {
            return Ok(MatchOutcome {
                kind: MatchKind::NewAspect,
                resolved_aspect: existing.clone(),
                matched_by: MatchedBy::Exact,
                score_t: None,
                score_v: None,
            });
        }
    }

    if let Some((name, matched_by)) = syntactic_match_kind(generated, tax) {
        return Ok(MatchOutcome {
            kind: MatchKind::ExistingL3,
            resolved_aspect: name,
            matched_by,
            score_t: None,
            score_v: None,
        });
    }

    let scores = semantic_scores(generated, verbatim, tax, emb)?;
    let outcome = resolve_semantic(&scores, generated, &options.thresholds);
    if outcome.kind == MatchKind::NewAspect {
        tax.register_new_aspect(generated);
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaxonomyConfig;
    use proptest::prelude::*;

    /// Test provider with hand-set vectors, so cosines are chosen exactly.
    pub struct MapProvider {
        map: HashMap<String, Vec<f64>>,
        dimension: usize,
    }

    impl MapProvider {
        fn new(dimension: usize, entries: &[(&str, Vec<f64>)]) -> Self {
            let map = entries
                .iter()
                .map(|(k, v)| ((*k).to_string(), v.clone()))
                .collect();
            MapProvider { map, dimension }
        }
    }

    impl EmbeddingProvider for MapProvider {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, MatchError> {
            texts
                .iter()
                .map(|t| {
                    self.map
                        .get(t)
                        .cloned()
                        .ok_or_else(|| MatchError::Provider(format!("no vector for {t:?}")))
                })
                .collect()
        }

        fn dimension(&self) -> usize {
            self.dimension
        }
    }

    fn two_aspect_taxonomy() -> Taxonomy {
        let mut cfg = TaxonomyConfig {
            l1: vec!["Hospitality".into()],
            ..Default::default()
        };
        cfg.l2.insert("Dining".into(), "Hospitality".into());
        cfg.l3.insert("prices".into(), "Dining".into());
        cfg.l3.insert("ambience".into(), "Dining".into());
        cfg.keywords
            .insert("prices".into(), vec!["expensive".into()]);
        cfg.keywords.insert("ambience".into(), vec!["decor".into()]);
        Taxonomy::from_config(cfg)
    }

    fn battery_taxonomy() -> Taxonomy {
        let mut cfg = TaxonomyConfig {
            l1: vec!["Product Experience".into()],
            ..Default::default()
        };
        cfg.l2.insert("Hardware".into(), "Product Experience".into());
        cfg.l3.insert("battery life".into(), "Hardware".into());
        cfg.l3.insert("screen quality".into(), "Hardware".into());
        cfg.keywords.insert(
            "battery life".into(),
            vec!["battery".into(), "charge".into()],
        );
        cfg.keywords
            .insert("screen quality".into(), vec!["screen".into()]);
        Taxonomy::from_config(cfg)
    }

    #[test]
    fn cosine_identity_orthogonal_and_closed_form() {
        let v = vec![1.0, 2.0, 3.0];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap()).abs() < 1e-12);
        let expected = 1.0 / 2.0f64.sqrt();
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn cosine_rejects_mismatch_and_zero() {
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(MatchError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 2.0]),
            Err(MatchError::ZeroVector)
        ));
    }

    #[test]
    fn phi_fixtures() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(phi(&names, &[0.2, 0.9, 0.4]).unwrap(), ("b", 0.9));
        let names: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        assert_eq!(phi(&names, &[0.5, 0.5]).unwrap(), ("a", 0.5));
        let names: Vec<String> = vec!["solo".into()];
        assert_eq!(phi(&names, &[0.1]).unwrap(), ("solo", 0.1));
        assert!(matches!(phi(&[], &[]), Err(MatchError::EmptyInput)));
    }

    #[test]
    fn syntactic_exact_substring_and_fallthrough() {
        let tax = battery_taxonomy();
        assert_eq!(
            syntactic_match("battery life", &tax),
            Some("battery life".into())
        );
        assert_eq!(
            syntactic_match("Battery  LIFE", &tax),
            Some("battery life".into())
        );
        assert_eq!(
            syntactic_match("battery", &tax),
            Some("battery life".into())
        );
        assert_eq!(syntactic_match("shipping speed", &tax), None);
    }

    #[test]
    fn substring_is_token_level_not_character_level() {
        let tax = two_aspect_taxonomy();
        // "rice" is a character substring of "prices" but not a token.
        assert_eq!(syntactic_match("rice", &tax), None);
    }

    #[test]
    fn substring_prefers_most_specific_superstring() {
        let mut cfg = TaxonomyConfig {
            l1: vec!["Product".into()],
            ..Default::default()
        };
        cfg.l2.insert("Hardware".into(), "Product".into());
        cfg.l3
            .insert("battery life span rating".into(), "Hardware".into());
        cfg.l3.insert("battery life".into(), "Hardware".into());
        cfg.keywords
            .insert("battery life span rating".into(), vec!["span".into()]);
        cfg.keywords
            .insert("battery life".into(), vec!["battery".into()]);
        let tax = Taxonomy::from_config(cfg);
        assert_eq!(
            syntactic_match("battery", &tax),
            Some("battery life".into())
        );
    }

    #[test]
    fn semantic_scores_match_brute_force_oracle() {
        // gA "price", eV "way too expensive"; vectors crafted so "prices"
        // should win both argmaxes, verified below by an independent
        // brute-force pass over all pairwise cosines.
        let provider = MapProvider::new(
            4,
            &[
                ("price", vec![0.9, 0.1, 0.0, 0.0]),
                ("way too expensive", vec![0.0, 0.0, 0.8, 0.1]),
                ("prices", vec![1.0, 0.0, 0.0, 0.0]),
                ("ambience", vec![0.0, 1.0, 0.0, 0.0]),
                ("expensive", vec![0.0, 0.0, 1.0, 0.0]),
                ("decor", vec![0.0, 0.0, 0.0, 1.0]),
            ],
        );
        let tax = two_aspect_taxonomy();
        let scores = semantic_scores("price", "way too expensive", &tax, &provider).unwrap();

        // Brute-force oracle.
        let names: Vec<String> = tax.l3_aspects().keys().cloned().collect();
        let mut best_t = (String::new(), -2.0);
        let mut best_v = (String::new(), -2.0);
        for name in &names {
            let t = cosine(
                &provider.embed_one("price").unwrap(),
                &provider.embed_one(name).unwrap(),
            )
            .unwrap();
            if t > best_t.1 {
                best_t = (name.clone(), t);
            }
            let mut kw_best = -2.0f64;
            for kw in tax.keywords(name) {
                let c = cosine(
                    &provider.embed_one("way too expensive").unwrap(),
                    &provider.embed_one(kw).unwrap(),
                )
                .unwrap();
                kw_best = kw_best.max(c);
            }
            if kw_best > best_v.1 {
                best_v = (name.clone(), kw_best);
            }
        }
        assert_eq!(scores.aspect_t, best_t.0);
        assert_eq!(scores.aspect_v, best_v.0);
        assert_eq!(scores.aspect_t, "prices");
        assert_eq!(scores.aspect_v, "prices");
        assert!((scores.score_t - best_t.1).abs() < 1e-12);
        assert!((scores.score_v - best_v.1).abs() < 1e-12);
    }

    #[test]
    fn identical_name_scores_one_and_singleton_taxonomy_wins_regardless() {
        let emb = HashEmbedder::default();
        let tax = two_aspect_taxonomy();
        let scores = semantic_scores("prices", "whatever text", &tax, &emb).unwrap();
        assert_eq!(scores.aspect_t, "prices");
        assert!((scores.score_t - 1.0).abs() < 1e-9);

        let mut cfg = TaxonomyConfig {
            l1: vec!["Only".into()],
            ..Default::default()
        };
        cfg.l2.insert("Level2".into(), "Only".into());
        cfg.l3.insert("solo aspect".into(), "Level2".into());
        cfg.keywords
            .insert("solo aspect".into(), vec!["solo".into()]);
        let tax = Taxonomy::from_config(cfg);
        let scores = semantic_scores("anything", "any verbatim", &tax, &emb).unwrap();
        assert_eq!(scores.aspect_t, "solo aspect");
        assert_eq!(scores.aspect_v, "solo aspect");
    }

    fn unit_lo(x: f64) -> Vec<f64> {
        vec![x, (1.0 - x * x).sqrt(), 0.0, 0.0]
    }

    fn unit_hi(x: f64) -> Vec<f64> {
        vec![0.0, 0.0, x, (1.0 - x * x).sqrt()]
    }

    fn standardise_with(score_t: f64, score_v: f64) -> (MatchOutcome, Taxonomy) {
        let provider = MapProvider::new(
            4,
            &[
                ("cost", unit_lo(score_t)),
                ("too costly really", unit_hi(score_v)),
                ("prices", vec![1.0, 0.0, 0.0, 0.0]),
                ("ambience", vec![0.0, 0.0, 0.0, 1.0]),
                ("expensive", vec![0.0, 0.0, 1.0, 0.0]),
                // keep ambience's keyword away from both query vectors
                ("decor", vec![0.0, 1.0, 0.0, 0.0]),
            ],
        );
        let tax = two_aspect_taxonomy();
        let outcome = standardise(
            "cost",
            "too costly really",
            &tax,
            &provider,
            &MatchOptions::default(),
        )
        .unwrap();
        (outcome, tax)
    }

    #[test]
    fn replacement_branch_above_replace_threshold() {
        let (outcome, tax) = standardise_with(0.96, 0.2);
        assert_eq!(outcome.kind, MatchKind::ExistingL3);
        assert_eq!(outcome.resolved_aspect, "prices");
        assert_eq!(outcome.matched_by, MatchedBy::Semantic);
        assert!(tax.new_aspects().is_empty());
    }

    #[test]
    fn l4_branch_between_thresholds() {
        let (outcome, tax) = standardise_with(0.80, 0.50);
        assert_eq!(outcome.kind, MatchKind::NewL4Of("prices".into()));
        assert_eq!(outcome.resolved_aspect, "cost");
        assert!(tax.new_aspects().is_empty());
    }

    #[test]
    fn new_aspect_branch_below_topic_threshold() {
        let (outcome, tax) = standardise_with(0.60, 0.2);
        assert_eq!(outcome.kind, MatchKind::NewAspect);
        assert_eq!(outcome.resolved_aspect, "cost");
        assert_eq!(tax.new_aspects(), vec!["cost"]);
    }

    #[test]
    fn threshold_boundaries_are_strict() {
        let thr = Thresholds::default();
        let mk = |t, v| SemanticScores {
            aspect_t: "prices".into(),
            score_t: t,
            aspect_v: "prices".into(),
            score_v: v,
        };
        // exactly 0.95 does not replace; it still clears the 0.7 gate
        let out = resolve_semantic(&mk(0.95, 0.5), "g", &thr);
        assert_eq!(out.kind, MatchKind::NewL4Of("prices".into()));
        // exactly 0.7 does not open the L4 branch
        let out = resolve_semantic(&mk(0.7, 0.9), "g", &thr);
        assert_eq!(out.kind, MatchKind::NewAspect);
        // exactly 0.4 does not open the L4 branch either
        let out = resolve_semantic(&mk(0.8, 0.4), "g", &thr);
        assert_eq!(out.kind, MatchKind::NewAspect);
    }

    #[test]
    fn branch_grid_is_exhaustive_and_exclusive() {
        let thr = Thresholds::default();
        for ti in 0..=20 {
            for vi in 0..=20 {
                let t = f64::from(ti) * 0.05;
                let v = f64::from(vi) * 0.05;
                let scores = SemanticScores {
                    aspect_t: "prices".into(),
                    score_t: t,
                    aspect_v: "prices".into(),
                    score_v: v,
                };
                let out = resolve_semantic(&scores, "gen", &thr);
                let expected = if t > 0.95 {
                    MatchKind::ExistingL3
                } else if t > 0.7 && v > 0.4 {
                    MatchKind::NewL4Of("prices".into())
                } else {
                    MatchKind::NewAspect
                };
                assert_eq!(out.kind, expected, "at ({t}, {v})");
            }
        }
    }

    #[test]
    fn syntactic_hit_issues_no_embedding_calls() {
        let provider = CountingProvider::new(HashEmbedder::default());
        let tax = battery_taxonomy();
        let outcome = standardise(
            "battery life",
            "battery dies fast",
            &tax,
            &provider,
            &MatchOptions::default(),
        )
        .unwrap();
        assert_eq!(outcome.kind, MatchKind::ExistingL3);
        assert_eq!(outcome.matched_by, MatchedBy::Exact);
        assert_eq!(provider.embed_calls(), 0);
    }

    #[test]
    fn new_aspect_registry_can_absorb_repeats_when_enabled() {
        let emb = HashEmbedder::default();
        let tax = two_aspect_taxonomy();
        let opts = MatchOptions {
            match_new_aspects: true,
            ..Default::default()
        };
        let first = standardise("wifi quality", "wifi kept dropping", &tax, &emb, &opts).unwrap();
        if first.kind == MatchKind::NewAspect {
            let second =
                standardise("Wifi  Quality", "wifi kept dropping", &tax, &emb, &opts).unwrap();
            assert_eq!(second.kind, MatchKind::NewAspect);
            assert_eq!(second.resolved_aspect, "wifi quality");
            assert_eq!(tax.new_aspects().len(), 1);
        }
    }

    #[test]
    fn memoised_provider_embeds_each_unique_string_once() {
        let counting = CountingProvider::new(HashEmbedder::default());
        let memo = MemoisedProvider::new(counting);
        let texts: Vec<String> = vec!["a".into(), "b".into(), "a".into()];
        let first = memo.embed(&texts).unwrap();
        let again = memo.embed(&texts).unwrap();
        assert_eq!(first, again);
        assert_eq!(memo.inner.embedded_texts(), 2);
    }

    #[test]
    fn hash_embedder_is_deterministic_and_unit_norm() {
        let emb = HashEmbedder::new(16, 42);
        let a = emb.embed_one("buena comida").unwrap();
        let b = emb.embed_one("buena comida").unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn phi_matches_brute_force_argmax(
            scores in prop::collection::vec(-1.0f64..1.0, 1..=10)
        ) {
            let names: Vec<String> = (0..scores.len()).map(|i| format!("a{i}")).collect();
            let (got_name, got_score) = phi(&names, &scores).unwrap();

            // independent stable argmax
            let mut best = 0usize;
            for i in 1..scores.len() {
                if scores[i] > scores[best] {
                    best = i;
                }
            }
            prop_assert_eq!(got_name, names[best].as_str());
            prop_assert_eq!(got_score, scores[best]);
        }

        #[test]
        fn cosine_is_symmetric_and_scale_invariant(
            u in prop::collection::vec(-10.0f64..10.0, 4),
            v in prop::collection::vec(-10.0f64..10.0, 4),
            alpha in 0.1f64..50.0,
        ) {
            prop_assume!(u.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            let uv = cosine(&u, &v).unwrap();
            let vu = cosine(&v, &u).unwrap();
            prop_assert!((uv - vu).abs() < 1e-12);
            let scaled: Vec<f64> = u.iter().map(|x| x * alpha).collect();
            let suv = cosine(&scaled, &v).unwrap();
            prop_assert!((suv - uv).abs() < 1e-9);
        }
    }
}
