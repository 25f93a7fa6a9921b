//! End-to-end analysis pipeline: input preparation, ranking, CPR, centroid
//! convergence, predictors, deltas, regressions and t-tests, with writers for
//! every report file.
//!
//! Ranking runs in parallel across stems; every aggregation walks sorted
//! intermediate results on one thread so outputs are reproducible
//! byte-for-byte.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::dataset::{
    self, filter_min_producers, modal_responses, modal_share, FrequencyTable, RatingTable,
    ResponseDistribution,
};
use crate::embedding::{EmbeddingStore, LoadOptions};
use crate::error::{Error, Result};
use crate::metrics::{
    self, AnalysisRow, CompletionPredictors, CompletionStatus, CprCurve, DeltaReport, MeanRank,
    MetricOptions, PredictorSet,
};
use crate::rules::{percentile, AnalogyStem, RuleKind, RuleOptions, RuleScores};
use crate::stats::{self, PairedTestResult, RegressionResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BASELINE: &str = "human";

/// A regression specification over delta columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub label: String,
    pub predictors: Vec<String>,
}

impl ModelSpec {
    /// Parallelogram + C:D similarity + log frequency.
    pub fn model_a() -> Self {
        Self {
            label: "A".into(),
            predictors: vec!["parallelogram".into(), "cd".into(), "log_freq".into()],
        }
    }

    /// Parallelogram + NN + log frequency.
    pub fn model_b() -> Self {
        Self {
            label: "B".into(),
            predictors: vec!["parallelogram".into(), "nn".into(), "log_freq".into()],
        }
    }

    pub fn custom(predictors: Vec<String>) -> Result<Self> {
        if predictors.is_empty() {
            return Err(Error::InvalidArgument(
                "custom model needs predictors".into(),
            ));
        }
        for p in &predictors {
            if !PredictorSet::NAMES.contains(&p.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "unknown predictor {p:?}; expected one of {:?}",
                    PredictorSet::NAMES
                )));
            }
        }
        Ok(Self {
            label: "custom".into(),
            predictors,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub embeddings: PathBuf,
    pub stems: PathBuf,
    pub responses: PathBuf,
    pub ratings: Option<PathBuf>,
    pub wordfreq: Option<PathBuf>,
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub lowercase: bool,
    pub use_cache: bool,
    pub min_count: u64,
    pub min_count_by_system: BTreeMap<String, u64>,
    pub modal_only: bool,
    pub taus: Vec<f64>,
    pub oov_floor: f64,
    pub baseline: String,
    pub multiword: bool,
    pub raw_offset: bool,
    pub models: Vec<ModelSpec>,
    #[serde(skip)]
    pub deterministic: bool,
}

impl RunConfig {
    pub fn new(embeddings: PathBuf, stems: PathBuf, responses: PathBuf, out_dir: PathBuf) -> Self {
        Self {
            embeddings,
            stems,
            responses,
            ratings: None,
            wordfreq: None,
            out_dir,
            lowercase: false,
            use_cache: true,
            min_count: 2,
            min_count_by_system: BTreeMap::new(),
            modal_only: false,
            taus: metrics::DEFAULT_TAUS.to_vec(),
            oov_floor: dataset::DEFAULT_OOV_FLOOR,
            baseline: DEFAULT_BASELINE.into(),
            multiword: false,
            raw_offset: false,
            models: vec![ModelSpec::model_a(), ModelSpec::model_b()],
            deterministic: false,
        }
    }

    pub fn prep_options(&self) -> PrepOptions {
        PrepOptions {
            min_count: self.min_count,
            min_count_by_system: self.min_count_by_system.clone(),
            modal_only: self.modal_only,
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            expected_dim: None,
            lowercase: self.lowercase,
        }
    }

    /// Checks every path and option before any computation. Ratings and word
    /// frequencies are required for the full report.
    pub fn validate_for_report(&self) -> Result<()> {
        self.validate_inputs(true, true)
    }

    /// Checks that every input file exists (ratings and word frequencies only
    /// when `need_ratings` / `need_wordfreq`) and that options are in range.
    pub fn validate_inputs(&self, need_ratings: bool, need_wordfreq: bool) -> Result<()> {
        let must_exist = |what: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{what} file not found: {}",
                    p.display()
                )))
            }
        };
        must_exist("embeddings", &self.embeddings)?;
        must_exist("stems", &self.stems)?;
        must_exist("responses", &self.responses)?;
        for (what, path, needed) in [
            ("ratings", &self.ratings, need_ratings),
            ("wordfreq", &self.wordfreq, need_wordfreq),
        ] {
            match path {
                Some(p) => must_exist(what, p)?,
                None if needed => {
                    return Err(Error::InvalidArgument(format!(
                        "this analysis requires --{what}"
                    )))
                }
                None => {}
            }
        }
        self.validate_options()
    }

    pub fn validate_options(&self) -> Result<()> {
        if self.min_count < 1 || self.min_count_by_system.values().any(|&m| m < 1) {
            return Err(Error::InvalidArgument(
                "min-count must be at least 1".into(),
            ));
        }
        if self.taus.is_empty() || self.taus.iter().any(|t| !(*t > 0.0 && *t <= 100.0)) {
            return Err(Error::InvalidArgument("taus must lie in (0, 100]".into()));
        }
        if !(self.oov_floor > 0.0 && self.oov_floor <= 1.0) {
            return Err(Error::InvalidArgument(
                "oov floor must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

pub fn open_store(path: &Path, options: LoadOptions, use_cache: bool) -> Result<EmbeddingStore> {
    if use_cache {
        EmbeddingStore::open_cached(path, options)
    } else {
        EmbeddingStore::open(path, options)
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn read_stems(path: &Path) -> Result<Vec<AnalogyStem>> {
    dataset::load_stems(open_reader(path)?)
}

pub fn read_responses(path: &Path) -> Result<Vec<ResponseDistribution>> {
    dataset::load_responses(open_reader(path)?)
}

pub fn read_ratings(path: &Path) -> Result<RatingTable> {
    dataset::load_ratings(open_reader(path)?)
}

pub fn read_frequencies(path: &Path, oov_floor: f64) -> Result<FrequencyTable> {
    dataset::load_frequencies(open_reader(path)?, oov_floor)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PrepOptions {
    pub min_count: u64,
    pub min_count_by_system: BTreeMap<String, u64>,
    pub modal_only: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PrepStats {
    pub distributions_in: usize,
    pub entries_in: usize,
    pub productions_in: u64,
    pub unknown_stem_distributions: usize,
    pub entries_removed_min_count: usize,
    pub productions_removed_min_count: u64,
    pub distributions_emptied: usize,
    /// Modal share per system after min-count filtering.
    pub modal_share: BTreeMap<String, f64>,
    pub entries_removed_modal: usize,
    pub productions_removed_modal: u64,
    pub distributions_out: usize,
    pub entries_out: usize,
    pub productions_out: u64,
}

/// Cleaned distributions ordered by stem (input order) then system name.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dists: Vec<ResponseDistribution>,
    pub stats: PrepStats,
}

pub fn prepare_distributions(
    raw: Vec<ResponseDistribution>,
    stems: &[AnalogyStem],
    opts: &PrepOptions,
) -> Prepared {
    let stem_pos: HashMap<&str, usize> = stems
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let mut stats = PrepStats {
        distributions_in: raw.len(),
        entries_in: raw.iter().map(|d| d.entries.len()).sum(),
        productions_in: raw.iter().map(|d| d.total()).sum(),
        ..Default::default()
    };
    let mut filtered = Vec::new();
    for d in raw {
        if !stem_pos.contains_key(d.stem_id.as_str()) {
            stats.unknown_stem_distributions += 1;
            continue;
        }
        let min = opts
            .min_count_by_system
            .get(&d.system)
            .copied()
            .unwrap_or(opts.min_count);
        let f = filter_min_producers(&d, min);
        stats.entries_removed_min_count += d.entries.len() - f.entries.len();
        stats.productions_removed_min_count += d.total() - f.total();
        if f.is_empty() {
            stats.distributions_emptied += 1;
            continue;
        }
        filtered.push(f);
    }
    let mut systems: Vec<&str> = filtered.iter().map(|d| d.system.as_str()).collect();
    systems.sort_unstable();
    systems.dedup();
    for s in systems {
        if let Some(share) = modal_share(filtered.iter().filter(|d| d.system == s)) {
            stats.modal_share.insert(s.to_string(), share);
        }
    }
    let mut dists: Vec<ResponseDistribution> = if opts.modal_only {
        filtered
            .iter()
            .map(|d| {
                let m = modal_responses(d).expect("empty distributions were removed");
                stats.entries_removed_modal += d.entries.len() - m.entries.len();
                stats.productions_removed_modal += d.total() - m.total();
                m
            })
            .collect()
    } else {
        filtered
    };
    dists.sort_by(|x, y| {
        stem_pos[x.stem_id.as_str()]
            .cmp(&stem_pos[y.stem_id.as_str()])
            .then_with(|| x.system.cmp(&y.system))
    });
    stats.distributions_out = dists.len();
    stats.entries_out = dists.iter().map(|d| d.entries.len()).sum();
    stats.productions_out = dists.iter().map(|d| d.total()).sum();
    Prepared { dists, stats }
}

/// One ranked completion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRecord {
    pub stem_id: String,
    pub system: String,
    pub rule: RuleKind,
    pub d_term: String,
    pub count: u64,
    pub rank: usize,
    pub percentile: f64,
    pub v_effective: usize,
    pub exclude_stem: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nn_target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopKRecord {
    pub stem_id: String,
    pub rule: RuleKind,
    pub exclude_stem: bool,
    pub top: Vec<(String, f64)>,
}

/// Production counts per (rule, system, exclusion mode); `total` equals
/// `ranked` plus the skip columns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RankTally {
    pub total: u64,
    pub ranked: u64,
    pub oov_completion: u64,
    pub stem_oov: u64,
    pub excluded_stem_word: u64,
    pub degenerate_query: u64,
}

impl RankTally {
    pub fn skipped(&self) -> u64 {
        self.oov_completion + self.stem_oov + self.excluded_stem_word + self.degenerate_query
    }

    fn merge(&mut self, o: &RankTally) {
        self.total += o.total;
        self.ranked += o.ranked;
        self.oov_completion += o.oov_completion;
        self.stem_oov += o.stem_oov;
        self.excluded_stem_word += o.excluded_stem_word;
        self.degenerate_query += o.degenerate_query;
    }
}

pub type TallyKey = (RuleKind, String, bool);

#[derive(Debug, Clone, Default)]
pub struct RankStage {
    pub records: Vec<RankRecord>,
    pub top_k: Vec<TopKRecord>,
    pub tallies: BTreeMap<TallyKey, RankTally>,
}

/// Distributions grouped by stem position.
fn group_by_stem<'a>(
    stems: &[AnalogyStem],
    dists: &'a [ResponseDistribution],
) -> Vec<Vec<&'a ResponseDistribution>> {
    let pos: HashMap<&str, usize> = stems
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let mut grouped = vec![Vec::new(); stems.len()];
    for d in dists {
        if let Some(&i) = pos.get(d.stem_id.as_str()) {
            grouped[i].push(d);
        }
    }
    grouped
}

#[allow(clippy::too_many_arguments)]
fn rank_one_stem(
    store: &EmbeddingStore,
    stem: &AnalogyStem,
    dists: &[&ResponseDistribution],
    rules: &[RuleKind],
    modes: &[bool],
    options: RuleOptions,
    top_k: Option<usize>,
) -> RankStage {
    let mut out = RankStage::default();
    let stem_ok = stem.words().iter().all(|w| store.contains(w));
    for &rule in rules {
        let scores = if stem_ok {
            Some(RuleScores::compute(store, stem, rule, options))
        } else {
            None
        };
        if let (Some(Ok(s)), Some(k)) = (&scores, top_k) {
            for &mode in modes {
                out.top_k.push(TopKRecord {
                    stem_id: stem.id.clone(),
                    rule,
                    exclude_stem: mode,
                    top: s.top_k(store, k, mode),
                });
            }
        }
        for dist in dists {
            for &mode in modes {
                let tally = out
                    .tallies
                    .entry((rule, dist.system.clone(), mode))
                    .or_default();
                for (word, count) in &dist.entries {
                    tally.total += count;
                    let scores = match &scores {
                        None => {
                            tally.stem_oov += count;
                            continue;
                        }
                        Some(Err(_)) => {
                            tally.degenerate_query += count;
                            continue;
                        }
                        Some(Ok(s)) => s,
                    };
                    let Some(d) = store.id(word) else {
                        tally.oov_completion += count;
                        continue;
                    };
                    match scores.rank(store, d, mode) {
                        Ok((rank, v_effective)) => {
                            tally.ranked += count;
                            out.records.push(RankRecord {
                                stem_id: stem.id.clone(),
                                system: dist.system.clone(),
                                rule,
                                d_term: word.clone(),
                                count: *count,
                                rank,
                                percentile: percentile(rank, v_effective),
                                v_effective,
                                exclude_stem: mode,
                                nn_target: scores.nn_target.clone(),
                            });
                        }
                        Err(_) => tally.excluded_stem_word += count,
                    }
                }
            }
        }
    }
    out
}

/// Ranks every produced completion under each rule and exclusion mode.
pub fn rank_stage(
    store: &EmbeddingStore,
    stems: &[AnalogyStem],
    dists: &[ResponseDistribution],
    rules: &[RuleKind],
    modes: &[bool],
    options: RuleOptions,
    top_k: Option<usize>,
) -> RankStage {
    let grouped = group_by_stem(stems, dists);
    let per_stem: Vec<RankStage> = stems
        .par_iter()
        .zip(grouped.par_iter())
        .map(|(stem, ds)| rank_one_stem(store, stem, ds, rules, modes, options, top_k))
        .collect();
    let mut out = RankStage::default();
    for s in per_stem {
        out.records.extend(s.records);
        out.top_k.extend(s.top_k);
        for (k, t) in s.tallies {
            out.tallies.entry(k).or_default().merge(&t);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CprGroup {
    pub curve: CprCurve,
    pub mean_rank: MeanRank,
    pub mean_percentile: f64,
}

/// CPR curve and mean-rank summary per (rule, system, mode) with at least one
/// ranked response.
pub fn cpr_stage(stage: &RankStage, taus: &[f64]) -> Result<Vec<CprGroup>> {
    let mut groups: BTreeMap<TallyKey, Vec<&RankRecord>> = BTreeMap::new();
    for r in &stage.records {
        groups
            .entry((r.rule, r.system.clone(), r.exclude_stem))
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for (key, recs) in groups {
        let items: Vec<(f64, f64)> = recs
            .iter()
            .map(|r| (r.percentile, r.count as f64))
            .collect();
        let ranks: Vec<(usize, f64)> = recs.iter().map(|r| (r.rank, r.count as f64)).collect();
        let points = metrics::cpr_from_percentiles(&items, taus)?;
        let tally = stage.tallies.get(&key).copied().unwrap_or_default();
        let w: f64 = items.iter().map(|(_, w)| w).sum();
        out.push(CprGroup {
            curve: CprCurve {
                rule: key.0,
                system: key.1,
                exclude_stem: key.2,
                points,
                n_responses: tally.ranked,
                n_oov_skipped: tally.skipped(),
            },
            mean_rank: metrics::mean_rank(&ranks).expect("non-empty group"),
            mean_percentile: items.iter().map(|(p, w)| p * w).sum::<f64>() / w,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentroidRow {
    pub stem_id: String,
    pub relation_category: Option<String>,
    pub system: String,
    pub convergence: Option<f64>,
    pub status: &'static str,
    pub baseline_used: usize,
    pub baseline_oov: usize,
    pub system_used: usize,
    pub system_oov: usize,
}

fn systems_other_than<'a>(dists: &'a [ResponseDistribution], baseline: &str) -> Vec<&'a str> {
    let mut s: Vec<&str> = dists
        .iter()
        .map(|d| d.system.as_str())
        .filter(|s| *s != baseline)
        .collect();
    s.sort_unstable();
    s.dedup();
    s
}

/// Baseline-vs-system centroid convergence for every stem and system.
pub fn centroid_stage(
    store: &EmbeddingStore,
    stems: &[AnalogyStem],
    dists: &[ResponseDistribution],
    baseline: &str,
    opts: MetricOptions,
) -> Vec<CentroidRow> {
    let systems = systems_other_than(dists, baseline);
    let grouped = group_by_stem(stems, dists);
    let mut rows = Vec::new();
    for (stem, ds) in stems.iter().zip(&grouped) {
        let base = ds.iter().find(|d| d.system == baseline);
        for system in &systems {
            let mut row = CentroidRow {
                stem_id: stem.id.clone(),
                relation_category: stem.relation_category.clone(),
                system: system.to_string(),
                convergence: None,
                status: "ok",
                baseline_used: 0,
                baseline_oov: 0,
                system_used: 0,
                system_oov: 0,
            };
            let other = ds.iter().find(|d| d.system == *system);
            let (Some(h), Some(l)) = (base, other) else {
                row.status = "missing_side";
                rows.push(row);
                continue;
            };
            let hc = metrics::weighted_centroid(store, h, opts);
            let lc = metrics::weighted_centroid(store, l, opts);
            if let Ok(c) = &hc {
                row.baseline_used = c.n_used;
                row.baseline_oov = c.n_oov;
            } else {
                row.baseline_oov = h.entries.len();
            }
            if let Ok(c) = &lc {
                row.system_used = c.n_used;
                row.system_oov = c.n_oov;
            } else {
                row.system_oov = l.entries.len();
            }
            match (hc, lc) {
                (Ok(a), Ok(b)) => match metrics::cosine_f64(&a.values, &b.values) {
                    Some(c) => row.convergence = Some(c),
                    None => row.status = "degenerate",
                },
                _ => row.status = "all_oov",
            }
            rows.push(row);
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentroidSummary {
    pub mean_by_system: BTreeMap<String, f64>,
    pub n_by_system: BTreeMap<String, usize>,
    pub mean_by_system_category: BTreeMap<String, BTreeMap<String, f64>>,
    /// Pearson correlation between two systems' per-category mean convergence.
    pub category_correlations: Vec<(String, String, Option<f64>)>,
    pub mean_pairwise_category_correlation: Option<f64>,
}

pub fn summarize_centroids(rows: &[CentroidRow]) -> CentroidSummary {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut cat: BTreeMap<String, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        if let Some(c) = r.convergence {
            let e = sums.entry(r.system.clone()).or_default();
            e.0 += c;
            e.1 += 1;
            if let Some(k) = &r.relation_category {
                let e = cat
                    .entry(r.system.clone())
                    .or_default()
                    .entry(k.clone())
                    .or_default();
                e.0 += c;
                e.1 += 1;
            }
        }
    }
    let mean_by_system_category: BTreeMap<String, BTreeMap<String, f64>> = cat
        .into_iter()
        .map(|(s, m)| {
            (
                s,
                m.into_iter().map(|(k, (t, n))| (k, t / n as f64)).collect(),
            )
        })
        .collect();
    let systems: Vec<&String> = mean_by_system_category.keys().collect();
    let mut category_correlations = Vec::new();
    for i in 0..systems.len() {
        for j in i + 1..systems.len() {
            let (a, b) = (
                &mean_by_system_category[systems[i]],
                &mean_by_system_category[systems[j]],
            );
            let shared: Vec<(f64, f64)> = a
                .iter()
                .filter_map(|(k, x)| b.get(k).map(|y| (*x, *y)))
                .collect();
            let xs: Vec<f64> = shared.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = shared.iter().map(|p| p.1).collect();
            category_correlations.push((
                systems[i].clone(),
                systems[j].clone(),
                stats::pearson(&xs, &ys).ok(),
            ));
        }
    }
    let valid: Vec<f64> = category_correlations.iter().filter_map(|c| c.2).collect();
    CentroidSummary {
        mean_by_system: sums
            .iter()
            .map(|(k, (t, n))| (k.clone(), t / *n as f64))
            .collect(),
        n_by_system: sums.iter().map(|(k, (_, n))| (k.clone(), *n)).collect(),
        mean_by_system_category,
        category_correlations,
        mean_pairwise_category_correlation: (!valid.is_empty())
            .then(|| valid.iter().sum::<f64>() / valid.len() as f64),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PredictorTally {
    pub total: usize,
    pub ok: usize,
    pub oov: usize,
    pub degenerate: usize,
    pub stem_oov: usize,
    pub freq_floor_used: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PredictorStage {
    pub rows: Vec<CompletionPredictors>,
    pub tally: PredictorTally,
}

pub fn predictor_stage(
    store: &EmbeddingStore,
    freq: &FrequencyTable,
    stems: &[AnalogyStem],
    dists: &[ResponseDistribution],
    opts: MetricOptions,
) -> PredictorStage {
    let grouped = group_by_stem(stems, dists);
    let mut out = PredictorStage::default();
    for (stem, ds) in stems.iter().zip(&grouped) {
        for d in ds {
            out.tally.total += d.entries.len();
            match metrics::distribution_predictors(store, freq, stem, d, opts) {
                Ok(rows) => {
                    for r in rows {
                        match r.status {
                            CompletionStatus::Ok => out.tally.ok += 1,
                            CompletionStatus::Oov => out.tally.oov += 1,
                            CompletionStatus::Degenerate => out.tally.degenerate += 1,
                        }
                        if r.status == CompletionStatus::Ok && !r.freq_listed {
                            out.tally.freq_floor_used += 1;
                        }
                        out.rows.push(r);
                    }
                }
                Err(_) => out.tally.stem_oov += d.entries.len(),
            }
        }
    }
    out
}

/// Runs each model on the pooled rows and, when several systems are
/// present, per system. Failures are recorded rather than propagated.
pub fn regression_stage(rows: &[AnalysisRow], models: &[ModelSpec]) -> Vec<RegressionEntry> {
    let mut systems: Vec<&str> = rows.iter().map(|r| r.system.as_str()).collect();
    systems.sort_unstable();
    systems.dedup();
    let mut scopes: Vec<Option<&str>> = vec![None];
    if systems.len() > 1 {
        scopes.extend(systems.iter().map(|s| Some(*s)));
    }
    let mut out = Vec::new();
    for model in models {
        for scope in &scopes {
            let subset: Vec<&AnalysisRow> = rows
                .iter()
                .filter(|r| scope.is_none_or(|s| r.system == s))
                .collect();
            out.push(RegressionEntry {
                model: model.clone(),
                system: scope.unwrap_or("all").to_string(),
                outcome: regress(&subset, model).into(),
            });
        }
    }
    out
}

pub fn regress(rows: &[&AnalysisRow], model: &ModelSpec) -> Result<RegressionResult> {
    let columns: Vec<Vec<f64>> = model
        .predictors
        .iter()
        .map(|p| {
            rows.iter()
                .map(|r| {
                    r.delta(p)
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown predictor {p:?}")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let names: Vec<String> = model
        .predictors
        .iter()
        .map(|p| format!("delta_{p}"))
        .collect();
    let cols: Vec<(&str, &[f64])> = names
        .iter()
        .zip(&columns)
        .map(|(n, c)| (n.as_str(), c.as_slice()))
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| r.delta_rating).collect();
    stats::ols_standardized(&model.label, &cols, &y)
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome<T> {
    Result(T),
    Error { kind: String, message: String },
}

impl<T> From<Result<T>> for Outcome<T> {
    fn from(r: Result<T>) -> Self {
        match r {
            Ok(v) => Outcome::Result(v),
            Err(e) => Outcome::Error {
                kind: e.kind().into(),
                message: e.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressionEntry {
    pub model: ModelSpec,
    pub system: String,
    pub outcome: Outcome<RegressionResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TTestEntry {
    pub system: String,
    pub outcome: Outcome<PairedTestResult>,
}

/// Paired t-tests of system vs baseline weighted ratings across stems.
pub fn ttest_stage(rows: &[AnalysisRow], by_system: bool) -> Vec<TTestEntry> {
    let mut systems: Vec<&str> = rows.iter().map(|r| r.system.as_str()).collect();
    systems.sort_unstable();
    systems.dedup();
    let scopes: Vec<Option<&str>> = if by_system {
        systems.into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    scopes
        .into_iter()
        .map(|scope| {
            let (x, y): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| scope.is_none_or(|s| r.system == s))
                .map(|r| (r.weighted_rating_llm, r.weighted_rating_human))
                .unzip();
            TTestEntry {
                system: scope.unwrap_or("all").to_string(),
                outcome: stats::paired_t_test(&x, &y).into(),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Writers

fn schema_line(name: &str) -> String {
    format!("# analogylab {name} schema_version={SCHEMA_VERSION}\n")
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_ranks_jsonl<W: Write>(
    mut w: W,
    records: &[RankRecord],
    top_k: &[TopKRecord],
) -> Result<()> {
    serde_json::to_writer(
        &mut w,
        &json!({"schema": "analogylab/ranks", "schema_version": SCHEMA_VERSION}),
    )?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    for t in top_k {
        let mut v = serde_json::to_value(t)?;
        v["kind"] = json!("top_k");
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn csv_writer<W: Write>(mut w: W, name: &str) -> Result<csv::Writer<W>> {
    w.write_all(schema_line(name).as_bytes())?;
    Ok(csv::Writer::from_writer(w))
}

pub fn write_cpr_csv<W: Write>(w: W, groups: &[CprGroup]) -> Result<()> {
    let mut c = csv_writer(w, "cpr.csv")?;
    c.write_record([
        "rule",
        "system",
        "exclude_stem",
        "tau",
        "proportion",
        "n_responses",
        "n_skipped",
    ])?;
    for g in groups {
        for p in &g.curve.points {
            c.write_record([
                g.curve.rule.as_str(),
                &g.curve.system,
                &g.curve.exclude_stem.to_string(),
                &p.tau.to_string(),
                &p.proportion.to_string(),
                &g.curve.n_responses.to_string(),
                &g.curve.n_oov_skipped.to_string(),
            ])?;
        }
    }
    c.flush()?;
    Ok(())
}

pub fn write_centroids_csv<W: Write>(w: W, rows: &[CentroidRow]) -> Result<()> {
    let mut c = csv_writer(w, "centroids.csv")?;
    c.write_record([
        "stem_id",
        "relation_category",
        "system",
        "convergence",
        "status",
        "baseline_used",
        "baseline_oov",
        "system_used",
        "system_oov",
    ])?;
    for r in rows {
        c.write_record([
            r.stem_id.as_str(),
            r.relation_category.as_deref().unwrap_or(""),
            &r.system,
            &opt_f64(r.convergence),
            r.status,
            &r.baseline_used.to_string(),
            &r.baseline_oov.to_string(),
            &r.system_used.to_string(),
            &r.system_oov.to_string(),
        ])?;
    }
    c.flush()?;
    Ok(())
}

pub fn write_predictors_csv<W: Write>(
    w: W,
    rows: &[CompletionPredictors],
    ratings: Option<&RatingTable>,
) -> Result<()> {
    let mut c = csv_writer(w, "predictors.csv")?;
    c.write_record([
        "stem_id",
        "system",
        "d_term",
        "count",
        "status",
        "parallelogram",
        "cd",
        "nn",
        "log_freq",
        "rating",
    ])?;
    for r in rows {
        let p = r.predictors;
        let rating = ratings.and_then(|t| t.rating(&r.stem_id, &r.d_term));
        c.write_record([
            r.stem_id.as_str(),
            &r.system,
            &r.d_term,
            &r.count.to_string(),
            r.status.as_str(),
            &opt_f64(p.map(|p| p.parallelogram_alignment)),
            &opt_f64(p.map(|p| p.cd_similarity)),
            &opt_f64(p.map(|p| p.nn_score)),
            &opt_f64(p.map(|p| p.log_freq)),
            &opt_f64(rating),
        ])?;
    }
    c.flush()?;
    Ok(())
}

const DELTA_HEADER: [&str; 17] = [
    "stem_id",
    "system",
    "relation_category",
    "rating_human",
    "rating_llm",
    "human_parallelogram",
    "human_cd",
    "human_nn",
    "human_log_freq",
    "llm_parallelogram",
    "llm_cd",
    "llm_nn",
    "llm_log_freq",
    "delta_parallelogram",
    "delta_cd",
    "delta_nn",
    "delta_log_freq",
];

pub fn write_deltas_csv<W: Write>(w: W, rows: &[AnalysisRow]) -> Result<()> {
    let mut c = csv_writer(w, "deltas.csv")?;
    let mut header: Vec<&str> = DELTA_HEADER.to_vec();
    header.push("delta_rating");
    c.write_record(&header)?;
    for r in rows {
        let f = |x: f64| x.to_string();
        c.write_record([
            r.stem_id.clone(),
            r.system.clone(),
            r.relation_category.clone().unwrap_or_default(),
            f(r.weighted_rating_human),
            f(r.weighted_rating_llm),
            f(r.human.parallelogram_alignment),
            f(r.human.cd_similarity),
            f(r.human.nn_score),
            f(r.human.log_freq),
            f(r.llm.parallelogram_alignment),
            f(r.llm.cd_similarity),
            f(r.llm.nn_score),
            f(r.llm.log_freq),
            f(r.delta_parallelogram),
            f(r.delta_cd),
            f(r.delta_nn),
            f(r.delta_log_freq),
            f(r.delta_rating),
        ])?;
    }
    c.flush()?;
    Ok(())
}

/// Reads a `deltas.csv` written by [`write_deltas_csv`].
pub fn read_deltas_csv<R: Read>(source: R) -> Result<Vec<AnalysisRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let idx = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("deltas file lacks column {name:?}"),
            })
    };
    let cols: Vec<usize> = DELTA_HEADER
        .iter()
        .chain(std::iter::once(&"delta_rating"))
        .map(|n| idx(n))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let num = |i: usize| -> Result<f64> {
            let raw = rec.get(cols[i]).unwrap_or("");
            raw.parse().map_err(|_| Error::Parse {
                line,
                message: format!("{:?} is not a number in column {}", raw, &headers[cols[i]]),
            })
        };
        let set = |o: usize| -> Result<PredictorSet> {
            Ok(PredictorSet {
                parallelogram_alignment: num(o)?,
                cd_similarity: num(o + 1)?,
                nn_score: num(o + 2)?,
                log_freq: num(o + 3)?,
            })
        };
        let category = rec.get(cols[2]).unwrap_or("");
        rows.push(AnalysisRow {
            stem_id: rec.get(cols[0]).unwrap_or("").to_string(),
            system: rec.get(cols[1]).unwrap_or("").to_string(),
            relation_category: (!category.is_empty()).then(|| category.to_string()),
            weighted_rating_human: num(3)?,
            weighted_rating_llm: num(4)?,
            human: set(5)?,
            llm: set(9)?,
            delta_parallelogram: num(13)?,
            delta_cd: num(14)?,
            delta_nn: num(15)?,
            delta_log_freq: num(16)?,
            delta_rating: num(17)?,
        });
    }
    Ok(rows)
}

pub fn write_json<W: Write, T: Serialize>(mut w: W, schema: &str, body: &T) -> Result<()> {
    let mut v = json!({"schema": format!("analogylab/{schema}"), "schema_version": SCHEMA_VERSION});
    if let (Value::Object(m), Value::Object(b)) = (&mut v, serde_json::to_value(body)?) {
        m.extend(b);
    }
    serde_json::to_writer_pretty(&mut w, &v)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

// ---------------------------------------------------------------------------
// Full report

pub const REPORT_FILES: [&str; 8] = [
    "ranks.jsonl",
    "cpr.csv",
    "centroids.csv",
    "predictors.csv",
    "deltas.csv",
    "regression.json",
    "ttests.json",
    "summary.json",
];

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub tool_version: &'static str,
    pub config: RunConfig,
    pub embeddings: StoreInfo,
    pub inputs: InputInfo,
    pub preparation: PrepStats,
    pub ranking: Vec<TallyRow>,
    pub cpr: Vec<CprSummaryRow>,
    pub centroids: CentroidSummary,
    pub centroid_status: BTreeMap<String, usize>,
    pub predictors: PredictorTally,
    pub deltas: DeltaSummary,
    pub files: Vec<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at_unix: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StoreInfo {
    pub vocabulary: usize,
    pub dim: usize,
    pub dropped: crate::embedding::DropCounts,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputInfo {
    pub stems: usize,
    pub stems_oov: usize,
    pub rated_completions: usize,
    pub frequency_words: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TallyRow {
    pub rule: RuleKind,
    pub system: String,
    pub exclude_stem: bool,
    #[serde(flatten)]
    pub tally: RankTally,
}

#[derive(Debug, Clone, Serialize)]
pub struct CprSummaryRow {
    pub rule: RuleKind,
    pub system: String,
    pub exclude_stem: bool,
    pub mean_rank: MeanRank,
    pub mean_percentile: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaSummary {
    pub candidates: usize,
    pub rows: usize,
    pub skipped: metrics::DeltaSkips,
}

/// Loaded, validated inputs shared by every stage.
pub struct Inputs {
    pub store: EmbeddingStore,
    pub stems: Vec<AnalogyStem>,
    pub prepared: Prepared,
    pub ratings: Option<RatingTable>,
    pub freq: FrequencyTable,
}

pub fn load_inputs(config: &RunConfig) -> Result<Inputs> {
    let stems = read_stems(&config.stems)?;
    let raw = read_responses(&config.responses)?;
    let ratings = config.ratings.as_deref().map(read_ratings).transpose()?;
    let freq = match &config.wordfreq {
        Some(p) => read_frequencies(p, config.oov_floor)?,
        None => FrequencyTable::new(config.oov_floor)?,
    };
    let store = open_store(
        &config.embeddings,
        config.load_options(),
        config.use_cache && !config.raw_offset,
    )?;
    if config.raw_offset && !store.has_raw_norms() {
        return Err(Error::InvalidArgument(
            "raw offsets need input norms; load the text embedding file, not the cache".into(),
        ));
    }
    let prepared = prepare_distributions(raw, &stems, &config.prep_options());
    Ok(Inputs {
        store,
        stems,
        prepared,
        ratings,
        freq,
    })
}

/// Runs every analysis and writes the report bundle into `config.out_dir`.
pub fn run_report(config: &RunConfig) -> Result<ReportSummary> {
    config.validate_for_report()?;
    let inputs = load_inputs(config)?;
    fs::create_dir_all(&config.out_dir)?;
    let dir = config.out_dir.as_path();
    let Inputs {
        store,
        stems,
        prepared,
        ratings,
        freq,
    } = &inputs;
    let ratings = ratings.as_ref().expect("validated");
    let dists = &prepared.dists;
    let rule_opts = RuleOptions {
        raw_offset: config.raw_offset,
    };
    let metric_opts = MetricOptions {
        multiword: config.multiword,
    };

    let ranks = rank_stage(
        store,
        stems,
        dists,
        &RuleKind::ALL,
        &[false, true],
        rule_opts,
        None,
    );
    write_ranks_jsonl(create(dir, "ranks.jsonl")?, &ranks.records, &ranks.top_k)?;
    let cpr = cpr_stage(&ranks, &config.taus)?;
    write_cpr_csv(create(dir, "cpr.csv")?, &cpr)?;

    let centroids = centroid_stage(store, stems, dists, &config.baseline, metric_opts);
    write_centroids_csv(create(dir, "centroids.csv")?, &centroids)?;

    let preds = predictor_stage(store, freq, stems, dists, metric_opts);
    write_predictors_csv(create(dir, "predictors.csv")?, &preds.rows, Some(ratings))?;

    let deltas: DeltaReport = metrics::delta_rows(
        store,
        freq,
        ratings,
        stems,
        dists,
        &config.baseline,
        metric_opts,
    );
    write_deltas_csv(create(dir, "deltas.csv")?, &deltas.rows)?;

    let regressions = regression_stage(&deltas.rows, &config.models);
    write_json(
        create(dir, "regression.json")?,
        "regression",
        &json!({ "outcome": "delta_rating", "n_rows": deltas.rows.len(), "models": regressions }),
    )?;
    let ttests = ttest_stage(&deltas.rows, true);
    write_json(
        create(dir, "ttests.json")?,
        "ttests",
        &json!({ "baseline": config.baseline, "measure": "weighted_rating", "tests": ttests }),
    )?;

    let mut centroid_status: BTreeMap<String, usize> = BTreeMap::new();
    for r in &centroids {
        *centroid_status.entry(r.status.to_string()).or_default() += 1;
    }
    let summary = ReportSummary {
        tool_version: env!("CARGO_PKG_VERSION"),
        config: config.clone(),
        embeddings: StoreInfo {
            vocabulary: store.len(),
            dim: store.dim(),
            dropped: store.dropped(),
        },
        inputs: InputInfo {
            stems: stems.len(),
            stems_oov: stems
                .iter()
                .filter(|s| s.words().iter().any(|w| !store.contains(w)))
                .count(),
            rated_completions: ratings.len(),
            frequency_words: freq.len(),
        },
        preparation: prepared.stats.clone(),
        ranking: ranks
            .tallies
            .iter()
            .map(|((rule, system, mode), t)| TallyRow {
                rule: *rule,
                system: system.clone(),
                exclude_stem: *mode,
                tally: *t,
            })
            .collect(),
        cpr: cpr
            .iter()
            .map(|g| CprSummaryRow {
                rule: g.curve.rule,
                system: g.curve.system.clone(),
                exclude_stem: g.curve.exclude_stem,
                mean_rank: g.mean_rank,
                mean_percentile: g.mean_percentile,
            })
            .collect(),
        centroids: summarize_centroids(&centroids),
        centroid_status,
        predictors: preds.tally,
        deltas: DeltaSummary {
            candidates: deltas.candidates,
            rows: deltas.rows.len(),
            skipped: deltas.skipped,
        },
        files: REPORT_FILES.to_vec(),
        generated_at_unix: (!config.deterministic).then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        }),
    };
    write_json(create(dir, "summary.json")?, "summary", &summary)?;
    Ok(summary)
}
