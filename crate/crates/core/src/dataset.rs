//! Loaders for stems, response distributions, ratings and word frequencies,
//! plus the cleaning and modal-extraction rules applied to distributions.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Read};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rules::AnalogyStem;

pub const RATING_MIN: f64 = 1.0;
pub const RATING_MAX: f64 = 7.0;
pub const DEFAULT_OOV_FLOOR: f64 = 1e-9;

/// Completions produced by one system for one stem, with production counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResponseDistribution {
    pub stem_id: String,
    pub system: String,
    /// Unique completions in first-seen order.
    pub entries: Vec<(String, u64)>,
}

impl ResponseDistribution {
    pub fn new(stem_id: impl Into<String>, system: impl Into<String>) -> Self {
        Self {
            stem_id: stem_id.into(),
            system: system.into(),
            entries: Vec::new(),
        }
    }

    /// Adds `count` productions of `d_term`, merging with an existing entry.
    pub fn add(&mut self, d_term: &str, count: u64) {
        match self.entries.iter_mut().find(|(w, _)| w == d_term) {
            Some((_, c)) => *c += count,
            None => self.entries.push((d_term.to_string(), count)),
        }
    }

    pub fn with_entries<S: Into<String>>(
        stem_id: &str,
        system: &str,
        entries: impl IntoIterator<Item = (S, u64)>,
    ) -> Self {
        let mut d = Self::new(stem_id, system);
        for (w, c) in entries {
            d.add(&w.into(), c);
        }
        d
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|(_, c)| c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_count(&self) -> Option<u64> {
        self.entries.iter().map(|(_, c)| *c).max()
    }

    /// `(d_term, count / total)` for each entry.
    pub fn relative_frequencies(&self) -> Vec<(&str, f64)> {
        let total = self.total() as f64;
        self.entries
            .iter()
            .map(|(w, c)| (w.as_str(), *c as f64 / total))
            .collect()
    }
}

/// Drops entries produced fewer than `min_count` times.
pub fn filter_min_producers(dist: &ResponseDistribution, min_count: u64) -> ResponseDistribution {
    ResponseDistribution {
        stem_id: dist.stem_id.clone(),
        system: dist.system.clone(),
        entries: dist
            .entries
            .iter()
            .filter(|(_, c)| *c >= min_count)
            .cloned()
            .collect(),
    }
}

/// Keeps every entry whose count equals the maximum, with counts retained.
pub fn modal_responses(dist: &ResponseDistribution) -> Result<ResponseDistribution> {
    let max = dist
        .max_count()
        .ok_or_else(|| Error::EmptyDistribution(dist.stem_id.clone()))?;
    Ok(ResponseDistribution {
        stem_id: dist.stem_id.clone(),
        system: dist.system.clone(),
        entries: dist
            .entries
            .iter()
            .filter(|(_, c)| *c == max)
            .cloned()
            .collect(),
    })
}

/// Pooled share of productions that are modal: Σ modal counts / Σ counts over
/// all non-empty distributions given.
pub fn modal_share<'a>(dists: impl IntoIterator<Item = &'a ResponseDistribution>) -> Option<f64> {
    let (mut modal, mut total) = (0u64, 0u64);
    for d in dists {
        if let Some(max) = d.max_count() {
            modal += d
                .entries
                .iter()
                .filter(|(_, c)| *c == max)
                .map(|(_, c)| c)
                .sum::<u64>();
            total += d.total();
        }
    }
    (total > 0).then(|| modal as f64 / total as f64)
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn required_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    column(headers, name).ok_or_else(|| Error::Parse {
        line: 1,
        message: format!("missing column {name:?}"),
    })
}

fn field<'r>(record: &'r csv::StringRecord, idx: usize, name: &str) -> Result<&'r str> {
    match record.get(idx) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(Error::Parse {
            line: line_of(record),
            message: format!("missing value for {name:?}"),
        }),
    }
}

fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source)
}

/// Reads `stem_id,system,d_term,count` rows. Without a `count` column every
/// row is one production. Duplicate (stem, system, d_term) rows are summed.
pub fn load_responses<R: Read>(source: R) -> Result<Vec<ResponseDistribution>> {
    let mut reader = csv_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let i_stem = required_column(&headers, "stem_id")?;
    let i_system = required_column(&headers, "system")?;
    let i_term = required_column(&headers, "d_term")?;
    let i_count = column(&headers, "count");

    let mut order: HashMap<(String, String), usize> = HashMap::new();
    let mut out: Vec<ResponseDistribution> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let stem = field(&record, i_stem, "stem_id")?;
        let system = field(&record, i_system, "system")?;
        let term = field(&record, i_term, "d_term")?;
        let count = match i_count {
            Some(i) => {
                let raw = field(&record, i, "count")?;
                let n: i64 = raw.trim().parse().map_err(|_| Error::Parse {
                    line: line_of(&record),
                    message: format!("count {raw:?} is not an integer"),
                })?;
                if n <= 0 {
                    return Err(Error::Parse {
                        line: line_of(&record),
                        message: format!("count must be positive, got {n}"),
                    });
                }
                n as u64
            }
            None => 1,
        };
        let key = (stem.to_string(), system.to_string());
        let idx = *order.entry(key).or_insert_with(|| {
            out.push(ResponseDistribution::new(stem, system));
            out.len() - 1
        });
        out[idx].add(term, count);
    }
    Ok(out)
}

/// Reads `stem_id,a,b,c[,relation_category,relation_subtype]`.
pub fn load_stems<R: Read>(source: R) -> Result<Vec<AnalogyStem>> {
    let mut reader = csv_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let i_id = required_column(&headers, "stem_id")?;
    let i_a = required_column(&headers, "a")?;
    let i_b = required_column(&headers, "b")?;
    let i_c = required_column(&headers, "c")?;
    let i_cat = column(&headers, "relation_category");
    let i_sub = column(&headers, "relation_subtype");
    let optional = |r: &csv::StringRecord, i: Option<usize>| {
        i.and_then(|i| r.get(i))
            .filter(|v| !v.is_empty())
            .map(str::to_string)
    };

    let mut seen = HashMap::new();
    let mut stems = Vec::new();
    for record in reader.records() {
        let record = record?;
        let stem = AnalogyStem {
            id: field(&record, i_id, "stem_id")?.to_string(),
            a: field(&record, i_a, "a")?.to_string(),
            b: field(&record, i_b, "b")?.to_string(),
            c: field(&record, i_c, "c")?.to_string(),
            relation_category: optional(&record, i_cat),
            relation_subtype: optional(&record, i_sub),
        };
        if seen.insert(stem.id.clone(), line_of(&record)).is_some() {
            return Err(Error::Parse {
                line: line_of(&record),
                message: format!("duplicate stem_id {:?}", stem.id),
            });
        }
        stems.push(stem);
    }
    Ok(stems)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatingRow {
    pub stem_id: String,
    pub d_term: String,
    pub rating: f64,
    pub rater_id: Option<String>,
}

/// Relational-similarity ratings on the 1–7 scale.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingTable {
    rows: Vec<RatingRow>,
    means: BTreeMap<(String, String), f64>,
}

impl RatingTable {
    pub fn from_rows(rows: Vec<RatingRow>) -> Result<Self> {
        let mut sums: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
        for row in &rows {
            if !(RATING_MIN..=RATING_MAX).contains(&row.rating) {
                return Err(Error::InvalidArgument(format!(
                    "rating {} for ({}, {}) outside [1, 7]",
                    row.rating, row.stem_id, row.d_term
                )));
            }
            let e = sums
                .entry((row.stem_id.clone(), row.d_term.clone()))
                .or_insert((0.0, 0));
            e.0 += row.rating;
            e.1 += 1;
        }
        let means = sums
            .into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect();
        Ok(Self { rows, means })
    }

    pub fn rows(&self) -> &[RatingRow] {
        &self.rows
    }

    /// Mean rating of a completion across raters.
    pub fn rating(&self, stem_id: &str, d_term: &str) -> Option<f64> {
        self.means
            .get(&(stem_id.to_string(), d_term.to_string()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Reads `stem_id,d_term,rating[,rater_id]`; per-rater rows are averaged.
pub fn load_ratings<R: Read>(source: R) -> Result<RatingTable> {
    let mut reader = csv_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Ok(RatingTable::default());
    }
    let i_stem = required_column(&headers, "stem_id")?;
    let i_term = required_column(&headers, "d_term")?;
    let i_rating = required_column(&headers, "rating")?;
    let i_rater = column(&headers, "rater_id");
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let raw = field(&record, i_rating, "rating")?;
        let rating: f64 = raw.trim().parse().map_err(|_| Error::Parse {
            line: line_of(&record),
            message: format!("rating {raw:?} is not a number"),
        })?;
        if !(RATING_MIN..=RATING_MAX).contains(&rating) {
            return Err(Error::Parse {
                line: line_of(&record),
                message: format!("rating {rating} outside [1, 7]"),
            });
        }
        rows.push(RatingRow {
            stem_id: field(&record, i_stem, "stem_id")?.to_string(),
            d_term: field(&record, i_term, "d_term")?.to_string(),
            rating,
            rater_id: i_rater
                .and_then(|i| record.get(i))
                .filter(|v| !v.is_empty())
                .map(str::to_string),
        });
    }
    RatingTable::from_rows(rows)
}

/// Relative word frequencies with a floor for unlisted words.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    freqs: HashMap<String, f64>,
    oov_floor: f64,
}

impl FrequencyTable {
    pub fn new(oov_floor: f64) -> Result<Self> {
        if !(oov_floor > 0.0 && oov_floor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "oov floor must be positive, got {oov_floor}"
            )));
        }
        Ok(Self {
            freqs: HashMap::new(),
            oov_floor,
        })
    }

    pub fn insert(&mut self, word: &str, freq: f64) -> Result<()> {
        if !(freq > 0.0 && freq <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "frequency of {word:?} must be in (0, 1], got {freq}"
            )));
        }
        self.freqs.insert(word.to_string(), freq);
        Ok(())
    }

    pub fn oov_floor(&self) -> f64 {
        self.oov_floor
    }

    pub fn contains(&self, word: &str) -> bool {
        self.freqs.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Natural log of the word's frequency, or of the floor when unlisted.
    pub fn log_frequency(&self, word: &str) -> f64 {
        self.freqs.get(word).copied().unwrap_or(self.oov_floor).ln()
    }
}

/// Reads `word<TAB>frequency` lines; a non-numeric first line is a header.
pub fn load_frequencies<R: BufRead>(source: R, oov_floor: f64) -> Result<FrequencyTable> {
    let mut table = FrequencyTable::new(oov_floor)?;
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (word, value) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected word<TAB>frequency".into(),
        })?;
        let freq: f64 = match value.trim().parse() {
            Ok(f) => f,
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("frequency {value:?} is not a number"),
                })
            }
        };
        table.insert(word, freq).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
    }
    Ok(table)
}
