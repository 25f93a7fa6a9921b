//! Derived quantities over ranked and embedded responses: CPR curves,
//! frequency-weighted centroids, weighted ratings, per-completion predictors
//! and per-stem LLM − human delta scores.

use serde::Serialize;

use crate::dataset::{FrequencyTable, RatingTable, ResponseDistribution};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::rules::{nn_targets_c, percentile, AnalogyStem, RuleKind};

pub const DEFAULT_TAUS: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
const DEGENERATE_NORM: f64 = 1e-10;
/// Two-sided 95% normal quantile used for mean-rank intervals.
const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CprPoint {
    pub tau: f64,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CprCurve {
    pub rule: RuleKind,
    pub system: String,
    pub exclude_stem: bool,
    pub points: Vec<CprPoint>,
    pub n_responses: u64,
    pub n_oov_skipped: u64,
}

fn check_taus(taus: &[f64]) -> Result<Vec<f64>> {
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t <= 100.0)) {
        return Err(Error::InvalidArgument(format!("tau {t} outside (0, 100]")));
    }
    let mut sorted = taus.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    Ok(sorted)
}

/// Weighted share of responses whose rank percentile is at most each τ.
/// `items` are `(percentile, weight)`.
pub fn cpr_from_percentiles(items: &[(f64, f64)], taus: &[f64]) -> Result<Vec<CprPoint>> {
    if items.is_empty() {
        return Err(Error::InsufficientData(
            "CPR needs at least one ranked response".into(),
        ));
    }
    if items.iter().any(|(_, w)| w.is_nan() || *w <= 0.0) {
        return Err(Error::InvalidArgument(
            "CPR weights must be positive".into(),
        ));
    }
    let taus = check_taus(taus)?;
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    Ok(taus
        .into_iter()
        .map(|tau| {
            let hit: f64 = items
                .iter()
                .filter(|(p, _)| *p <= tau)
                .fold(0.0, |acc, (_, w)| acc + w);
            CprPoint {
                tau,
                proportion: hit / total,
            }
        })
        .collect())
}

/// CPR over `(rank, weight)` pairs sharing one effective vocabulary size.
pub fn cpr(ranks: &[(usize, f64)], v_effective: usize, taus: &[f64]) -> Result<Vec<CprPoint>> {
    if let Some((r, _)) = ranks.iter().find(|(r, _)| *r < 1 || *r > v_effective) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside [1, {v_effective}]"
        )));
    }
    let items: Vec<(f64, f64)> = ranks
        .iter()
        .map(|(r, w)| (percentile(*r, v_effective), *w))
        .collect();
    cpr_from_percentiles(&items, taus)
}

/// Weighted mean rank with a normal-approximation 95% interval, treating
/// weights as frequency counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanRank {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub weight: f64,
}

pub fn mean_rank(ranks: &[(usize, f64)]) -> Option<MeanRank> {
    let w: f64 = ranks.iter().map(|(_, w)| w).sum();
    if ranks.is_empty() || w <= 0.0 {
        return None;
    }
    let mean = ranks.iter().map(|(r, wt)| *r as f64 * wt).sum::<f64>() / w;
    let half = if w > 1.0 {
        let var = ranks
            .iter()
            .map(|(r, wt)| wt * (*r as f64 - mean).powi(2))
            .sum::<f64>()
            / (w - 1.0);
        Z_975 * (var / w).sqrt()
    } else {
        0.0
    };
    Some(MeanRank {
        mean,
        ci_low: mean - half,
        ci_high: mean + half,
        weight: w,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MetricOptions {
    /// Average constituent vectors for multi-word completions.
    pub multiword: bool,
}

/// Embedding of a completion: its unit row, or the mean of constituent rows
/// for multi-word completions when enabled.
pub fn completion_vector(
    store: &EmbeddingStore,
    word: &str,
    opts: MetricOptions,
) -> Option<Vec<f64>> {
    match store.id(word) {
        Some(id) => Some(store.vector_f64(id)),
        None if opts.multiword => store.phrase_vector(word),
        None => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Centroid {
    pub values: Vec<f64>,
    pub n_used: usize,
    pub n_oov: usize,
}

/// c = Σ f_r v_r over in-vocabulary responses, f_r renormalized over them.
pub fn weighted_centroid(
    store: &EmbeddingStore,
    dist: &ResponseDistribution,
    opts: MetricOptions,
) -> Result<Centroid> {
    let mut used: Vec<(Vec<f64>, u64)> = Vec::new();
    let mut n_oov = 0;
    for (word, count) in &dist.entries {
        match completion_vector(store, word, opts) {
            Some(v) => used.push((v, *count)),
            None => n_oov += 1,
        }
    }
    if used.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no in-vocabulary responses for stem {:?}, system {:?}",
            dist.stem_id, dist.system
        )));
    }
    let total: u64 = used.iter().map(|(_, c)| c).sum();
    let mut values = vec![0.0; store.dim()];
    for (v, c) in &used {
        let f = *c as f64 / total as f64;
        for (acc, x) in values.iter_mut().zip(v) {
            *acc += f * x;
        }
    }
    Ok(Centroid {
        values,
        n_used: used.len(),
        n_oov,
    })
}

/// Cosine of two f64 vectors; errors when either has (near-)zero norm.
pub fn cosine_f64(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let (na, nb) = (aa.sqrt(), bb.sqrt());
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return None;
    }
    Some((ab / (na * nb)).clamp(-1.0, 1.0))
}

pub fn centroid_convergence(
    store: &EmbeddingStore,
    d1: &ResponseDistribution,
    d2: &ResponseDistribution,
    opts: MetricOptions,
) -> Result<f64> {
    let c1 = weighted_centroid(store, d1, opts)?;
    let c2 = weighted_centroid(store, d2, opts)?;
    cosine_f64(&c1.values, &c2.values).ok_or(Error::DegenerateQuery)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedRating {
    pub mean: f64,
    pub n_rated: usize,
    pub n_unrated: usize,
}

/// Σ count·rating / Σ count over rated completions.
pub fn weighted_mean_rating(
    dist: &ResponseDistribution,
    ratings: &RatingTable,
) -> Result<WeightedRating> {
    let (mut num, mut den) = (0.0, 0.0);
    let (mut n_rated, mut n_unrated) = (0, 0);
    for (word, count) in &dist.entries {
        match ratings.rating(&dist.stem_id, word) {
            Some(r) => {
                num += *count as f64 * r;
                den += *count as f64;
                n_rated += 1;
            }
            None => n_unrated += 1,
        }
    }
    if n_rated == 0 {
        return Err(Error::InsufficientData(format!(
            "no rated completions for stem {:?}, system {:?}",
            dist.stem_id, dist.system
        )));
    }
    Ok(WeightedRating {
        mean: num / den,
        n_rated,
        n_unrated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictorSet {
    pub parallelogram_alignment: f64,
    pub cd_similarity: f64,
    pub nn_score: f64,
    pub log_freq: f64,
}

impl PredictorSet {
    pub const NAMES: [&'static str; 4] = ["parallelogram", "cd", "nn", "log_freq"];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "parallelogram" => Some(self.parallelogram_alignment),
            "cd" => Some(self.cd_similarity),
            "nn" => Some(self.nn_score),
            "log_freq" => Some(self.log_freq),
            _ => None,
        }
    }
}

/// cos(B − A, D − C) from raw vectors.
pub fn parallelogram_alignment(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<f64> {
    let ab: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let cd: Vec<f64> = d.iter().zip(c).map(|(x, y)| x - y).collect();
    cosine_f64(&ab, &cd).ok_or(Error::DegenerateRelation(
        "zero relation vector in parallelogram alignment",
    ))
}

/// The four predictors for completion `d_term` of `stem`.
pub fn predictors(
    store: &EmbeddingStore,
    freq: &FrequencyTable,
    stem: &AnalogyStem,
    d_term: &str,
    opts: MetricOptions,
) -> Result<PredictorSet> {
    let a = store.require(&stem.a)?;
    let b = store.require(&stem.b)?;
    let c = store.require(&stem.c)?;
    let d = completion_vector(store, d_term, opts).ok_or_else(|| Error::Oov(d_term.to_string()))?;
    let (va, vb, vc) = (
        store.vector_f64(a),
        store.vector_f64(b),
        store.vector_f64(c),
    );
    let alignment = parallelogram_alignment(&va, &vb, &vc, &d)?;
    let degenerate = Error::DegenerateRelation("zero-norm completion vector");
    let cd = cosine_f64(&vc, &d).ok_or(degenerate)?;
    let nn = if nn_targets_c(store, a, b, c) {
        cd
    } else {
        cosine_f64(&vb, &d).ok_or(Error::DegenerateRelation("zero-norm completion vector"))?
    };
    Ok(PredictorSet {
        parallelogram_alignment: alignment,
        cd_similarity: cd,
        nn_score: nn,
        log_freq: freq.log_frequency(d_term),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionStatus {
    Ok,
    Oov,
    Degenerate,
}

impl CompletionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CompletionStatus::Ok => "ok",
            CompletionStatus::Oov => "oov",
            CompletionStatus::Degenerate => "degenerate",
        }
    }
}

/// Predictors for one produced completion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionPredictors {
    pub stem_id: String,
    pub system: String,
    pub d_term: String,
    pub count: u64,
    pub status: CompletionStatus,
    pub predictors: Option<PredictorSet>,
    pub freq_listed: bool,
}

/// Predictors for every completion of a distribution, classifying failures.
/// Errors only when a stem word is out of vocabulary.
pub fn distribution_predictors(
    store: &EmbeddingStore,
    freq: &FrequencyTable,
    stem: &AnalogyStem,
    dist: &ResponseDistribution,
    opts: MetricOptions,
) -> Result<Vec<CompletionPredictors>> {
    for w in stem.words() {
        store.require(w)?;
    }
    Ok(dist
        .entries
        .iter()
        .map(|(word, count)| {
            let (status, predictors) = match predictors(store, freq, stem, word, opts) {
                Ok(p) => (CompletionStatus::Ok, Some(p)),
                Err(Error::Oov(_)) => (CompletionStatus::Oov, None),
                Err(_) => (CompletionStatus::Degenerate, None),
            };
            CompletionPredictors {
                stem_id: dist.stem_id.clone(),
                system: dist.system.clone(),
                d_term: word.clone(),
                count: *count,
                status,
                predictors,
                freq_listed: freq.contains(word),
            }
        })
        .collect())
}

/// Count-weighted mean of each predictor over usable completions.
pub fn weighted_predictor_means(rows: &[CompletionPredictors]) -> Option<PredictorSet> {
    let mut acc = [0.0f64; 4];
    let mut w = 0.0;
    for row in rows {
        if let Some(p) = &row.predictors {
            let c = row.count as f64;
            acc[0] += c * p.parallelogram_alignment;
            acc[1] += c * p.cd_similarity;
            acc[2] += c * p.nn_score;
            acc[3] += c * p.log_freq;
            w += c;
        }
    }
    (w > 0.0).then(|| PredictorSet {
        parallelogram_alignment: acc[0] / w,
        cd_similarity: acc[1] / w,
        nn_score: acc[2] / w,
        log_freq: acc[3] / w,
    })
}

/// Per-stem comparison of one system against the baseline (human) system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisRow {
    pub stem_id: String,
    pub system: String,
    pub relation_category: Option<String>,
    pub weighted_rating_human: f64,
    pub weighted_rating_llm: f64,
    pub human: PredictorSet,
    pub llm: PredictorSet,
    pub delta_parallelogram: f64,
    pub delta_cd: f64,
    pub delta_nn: f64,
    pub delta_log_freq: f64,
    pub delta_rating: f64,
}

impl AnalysisRow {
    pub fn delta(&self, name: &str) -> Option<f64> {
        match name {
            "parallelogram" => Some(self.delta_parallelogram),
            "cd" => Some(self.delta_cd),
            "nn" => Some(self.delta_nn),
            "log_freq" => Some(self.delta_log_freq),
            "rating" => Some(self.delta_rating),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DeltaSkips {
    /// (stem, system) pairs with no baseline or no system distribution.
    pub missing_side: usize,
    /// Pairs where one side had no usable (in-vocabulary, non-degenerate) completion.
    pub no_usable_predictors: usize,
    /// Pairs where one side had no rated completion.
    pub no_ratings: usize,
    /// Stems whose A, B or C is out of vocabulary.
    pub stem_oov: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaReport {
    pub rows: Vec<AnalysisRow>,
    pub candidates: usize,
    pub skipped: DeltaSkips,
}

fn find<'a>(
    dists: &'a [ResponseDistribution],
    stem: &str,
    system: &str,
) -> Option<&'a ResponseDistribution> {
    dists
        .iter()
        .find(|d| d.stem_id == stem && d.system == system && !d.is_empty())
}

/// One row per (stem, non-baseline system): frequency-weighted means of each
/// predictor and of ratings per side, deltas as system − baseline.
pub fn delta_rows(
    store: &EmbeddingStore,
    freq: &FrequencyTable,
    ratings: &RatingTable,
    stems: &[AnalogyStem],
    dists: &[ResponseDistribution],
    baseline: &str,
    opts: MetricOptions,
) -> DeltaReport {
    let mut systems: Vec<&str> = dists
        .iter()
        .map(|d| d.system.as_str())
        .filter(|s| *s != baseline)
        .collect();
    systems.sort_unstable();
    systems.dedup();

    let mut rows = Vec::new();
    let mut skipped = DeltaSkips::default();
    let mut candidates = 0;
    for stem in stems {
        for system in &systems {
            candidates += 1;
            let (Some(h), Some(l)) = (
                find(dists, &stem.id, baseline),
                find(dists, &stem.id, system),
            ) else {
                skipped.missing_side += 1;
                continue;
            };
            let (Ok(hp), Ok(lp)) = (
                distribution_predictors(store, freq, stem, h, opts),
                distribution_predictors(store, freq, stem, l, opts),
            ) else {
                skipped.stem_oov += 1;
                continue;
            };
            let (Some(hm), Some(lm)) =
                (weighted_predictor_means(&hp), weighted_predictor_means(&lp))
            else {
                skipped.no_usable_predictors += 1;
                continue;
            };
            let (Ok(hr), Ok(lr)) = (
                weighted_mean_rating(h, ratings),
                weighted_mean_rating(l, ratings),
            ) else {
                skipped.no_ratings += 1;
                continue;
            };
            rows.push(AnalysisRow {
                stem_id: stem.id.clone(),
                system: system.to_string(),
                relation_category: stem.relation_category.clone(),
                weighted_rating_human: hr.mean,
                weighted_rating_llm: lr.mean,
                human: hm,
                llm: lm,
                delta_parallelogram: lm.parallelogram_alignment - hm.parallelogram_alignment,
                delta_cd: lm.cd_similarity - hm.cd_similarity,
                delta_nn: lm.nn_score - hm.nn_score,
                delta_log_freq: lm.log_freq - hm.log_freq,
                delta_rating: lr.mean - hr.mean,
            });
        }
    }
    DeltaReport {
        rows,
        candidates,
        skipped,
    }
}
