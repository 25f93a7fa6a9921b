//! Completion rules for an analogy stem A:B::C:?, each inducing a ranking of
//! the whole vocabulary.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingStore, QueryVector, ScoreTable, WordId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalogyStem {
    pub id: String,
    pub a: String,
    pub b: String,
    pub c: String,
    #[serde(default)]
    pub relation_category: Option<String>,
    #[serde(default)]
    pub relation_subtype: Option<String>,
}

impl AnalogyStem {
    pub fn new(id: impl Into<String>, a: &str, b: &str, c: &str) -> Self {
        Self {
            id: id.into(),
            a: a.to_string(),
            b: b.to_string(),
            c: c.to_string(),
            relation_category: None,
            relation_subtype: None,
        }
    }

    pub fn words(&self) -> [&str; 3] {
        [&self.a, &self.b, &self.c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleKind {
    #[serde(rename = "parallelogram")]
    Parallelogram,
    #[serde(rename = "cd")]
    CDSimilarity,
    #[serde(rename = "nn")]
    NearestNeighbor,
}

impl RuleKind {
    pub const ALL: [RuleKind; 3] = [
        RuleKind::Parallelogram,
        RuleKind::CDSimilarity,
        RuleKind::NearestNeighbor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::Parallelogram => "parallelogram",
            RuleKind::CDSimilarity => "cd",
            RuleKind::NearestNeighbor => "nn",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallelogram" => Ok(RuleKind::Parallelogram),
            "cd" => Ok(RuleKind::CDSimilarity),
            "nn" => Ok(RuleKind::NearestNeighbor),
            other => Err(Error::InvalidArgument(format!("unknown rule {other:?}"))),
        }
    }
}

/// Knobs for query construction.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleOptions {
    /// Build the parallelogram offset from the vectors as they appeared in
    /// the input file rather than from unit rows.
    pub raw_offset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankResult {
    pub stem_id: String,
    pub rule: RuleKind,
    pub d_term: String,
    pub rank: usize,
    pub percentile: f64,
    pub v_effective: usize,
    pub exclude_stem: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nn_target: Option<String>,
}

pub fn percentile(rank: usize, v_effective: usize) -> f64 {
    100.0 * rank as f64 / v_effective as f64
}

struct StemIds {
    a: WordId,
    b: WordId,
    c: WordId,
}

fn resolve(store: &EmbeddingStore, stem: &AnalogyStem) -> Result<StemIds> {
    Ok(StemIds {
        a: store.require(&stem.a)?,
        b: store.require(&stem.b)?,
        c: store.require(&stem.c)?,
    })
}

/// Query for v(B) − v(A) + v(C), normalized.
pub fn parallelogram_query(
    store: &EmbeddingStore,
    stem: &AnalogyStem,
    options: RuleOptions,
) -> Result<QueryVector> {
    let ids = resolve(store, stem)?;
    if ids.a == ids.b && !options.raw_offset {
        // The offset cancels exactly; reuse the stored row rather than
        // renormalizing it, which could move it by one ulp.
        return Ok(store.query_for(ids.c));
    }
    let row = |id: WordId| -> Result<Vec<f64>> {
        if options.raw_offset {
            store.raw_vector_f64(id).ok_or_else(|| {
                Error::InvalidArgument(
                    "raw offsets need input norms; load the text embedding file, not the cache"
                        .into(),
                )
            })
        } else {
            Ok(store.vector_f64(id))
        }
    };
    let (va, vb, vc) = (row(ids.a)?, row(ids.b)?, row(ids.c)?);
    let offset: Vec<f64> = vb
        .iter()
        .zip(&va)
        .zip(&vc)
        .map(|((b, a), c)| b - a + c)
        .collect();
    QueryVector::unit_from_f64(&offset)
}

pub fn cd_query(store: &EmbeddingStore, stem: &AnalogyStem) -> Result<QueryVector> {
    Ok(store.query_for(store.require(&stem.c)?))
}

/// True when A is strictly closer to B than to C, i.e. the NN heuristic
/// retrieves near C. Equality falls to B.
pub fn nn_targets_c(store: &EmbeddingStore, a: WordId, b: WordId, c: WordId) -> bool {
    store.cosine_ids(a, b) > store.cosine_ids(a, c)
}

pub fn nn_query(store: &EmbeddingStore, stem: &AnalogyStem) -> Result<(QueryVector, String)> {
    let ids = resolve(store, stem)?;
    let (target, word) = if nn_targets_c(store, ids.a, ids.b, ids.c) {
        (ids.c, &stem.c)
    } else {
        (ids.b, &stem.b)
    };
    Ok((store.query_for(target), word.clone()))
}

/// Scores of the whole vocabulary under one rule for one stem, reusable for
/// ranking any number of completions in either exclusion mode.
pub struct RuleScores {
    pub rule: RuleKind,
    pub nn_target: Option<String>,
    table: ScoreTable,
    stem_ids: [WordId; 3],
}

impl RuleScores {
    pub fn compute(
        store: &EmbeddingStore,
        stem: &AnalogyStem,
        rule: RuleKind,
        options: RuleOptions,
    ) -> Result<Self> {
        let ids = resolve(store, stem)?;
        let (query, nn_target) = match rule {
            RuleKind::Parallelogram => (parallelogram_query(store, stem, options)?, None),
            RuleKind::CDSimilarity => (cd_query(store, stem)?, None),
            RuleKind::NearestNeighbor => {
                let (q, t) = nn_query(store, stem)?;
                (q, Some(t))
            }
        };
        Ok(Self {
            rule,
            nn_target,
            table: store.score_all(&query)?,
            stem_ids: [ids.a, ids.b, ids.c],
        })
    }

    pub fn table(&self) -> &ScoreTable {
        &self.table
    }

    fn exclusions(&self, exclude_stem: bool) -> &[WordId] {
        if exclude_stem {
            &self.stem_ids
        } else {
            &[]
        }
    }

    /// `(rank, v_effective)` of an in-vocabulary completion.
    pub fn rank(
        &self,
        store: &EmbeddingStore,
        d: WordId,
        exclude_stem: bool,
    ) -> Result<(usize, usize)> {
        let excluded = self.exclusions(exclude_stem);
        if excluded.contains(&d) {
            return Err(Error::Excluded(store.word(d).to_string()));
        }
        Ok((self.table.rank(d, excluded), store.effective_size(excluded)))
    }

    pub fn top_k(
        &self,
        store: &EmbeddingStore,
        k: usize,
        exclude_stem: bool,
    ) -> Vec<(String, f64)> {
        self.table
            .top_k(k, self.exclusions(exclude_stem))
            .into_iter()
            .map(|(id, s)| (store.word(id).to_string(), (s as f64).clamp(-1.0, 1.0)))
            .collect()
    }
}

/// Ranks completion `d_term` for `stem` under `rule`.
pub fn rank_completion(
    store: &EmbeddingStore,
    stem: &AnalogyStem,
    d_term: &str,
    rule: RuleKind,
    exclude_stem: bool,
    options: RuleOptions,
) -> Result<RankResult> {
    let d = store.require(d_term)?;
    let scores = RuleScores::compute(store, stem, rule, options)?;
    let (rank, v_effective) = scores.rank(store, d, exclude_stem)?;
    Ok(RankResult {
        stem_id: stem.id.clone(),
        rule,
        d_term: d_term.to_string(),
        rank,
        percentile: percentile(rank, v_effective),
        v_effective,
        exclude_stem,
        nn_target: scores.nn_target,
    })
}
