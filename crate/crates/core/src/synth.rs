//! Seeded synthetic datasets with planted parallelogram completions and
//! controlled modal-response shares, for end-to-end self-tests.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dataset::{RatingRow, ResponseDistribution};
use crate::error::{Error, Result};
use crate::metrics::parallelogram_alignment;
use crate::rules::AnalogyStem;

pub const HUMAN: &str = "human";
pub const LLM: &str = "llm";

#[derive(Debug, Clone, Serialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_stems: usize,
    pub vocab_size: usize,
    pub dim: usize,
    pub human_modal_share: f64,
    pub llm_modal_share: f64,
    pub responses_per_stem: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_stems: 100,
            vocab_size: 500,
            dim: 16,
            human_modal_share: 0.64,
            llm_modal_share: 0.85,
            responses_per_stem: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    /// (word, f32 components) in file order.
    pub vectors: Vec<(String, Vec<f32>)>,
    pub stems: Vec<AnalogyStem>,
    pub responses: Vec<ResponseDistribution>,
    pub ratings: Vec<RatingRow>,
    pub frequencies: Vec<(String, f64)>,
    /// (stem_id, planted completion)
    pub planted: Vec<(String, String)>,
}

/// Splits `rest` productions into counts in [2, modal − 1] so the modal entry
/// stays unique and every entry survives a min-count-2 filter.
fn split_remainder(rng: &mut ChaCha8Rng, modal: u64, rest: u64) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    let mut left = rest;
    while left > 0 {
        let hi = (modal - 1).min(left);
        if hi < 2 {
            return Err(Error::Infeasible(format!(
                "cannot split {rest} non-modal productions below modal count {modal} with counts ≥ 2"
            )));
        }
        let mut c = rng.gen_range(2..=hi);
        if left - c == 1 {
            if c < hi {
                c += 1;
            } else if c > 2 {
                c -= 1;
            } else {
                return Err(Error::Infeasible(format!(
                    "cannot split {rest} non-modal productions below modal count {modal}"
                )));
            }
        }
        out.push(c);
        left -= c;
    }
    Ok(out)
}

fn modal_count(share: f64, total: u64) -> Result<u64> {
    if !(share > 0.0 && share <= 1.0) {
        return Err(Error::Infeasible(format!(
            "modal share {share} outside (0, 1]"
        )));
    }
    let m = (share * total as f64).round() as u64;
    if m == 0 {
        return Err(Error::Infeasible(format!(
            "modal share {share} rounds to zero of {total} responses"
        )));
    }
    Ok(m)
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.vocab_size < 10 {
        return Err(Error::InvalidArgument(
            "vocab_size must be at least 10".into(),
        ));
    }
    if cfg.dim < 2 {
        return Err(Error::InvalidArgument("dim must be at least 2".into()));
    }
    if cfg.n_stems == 0 || cfg.responses_per_stem == 0 {
        return Err(Error::InvalidArgument(
            "need at least one stem and one response".into(),
        ));
    }
    let total = cfg.responses_per_stem;
    let shares = [
        (HUMAN, modal_count(cfg.human_modal_share, total)?),
        (LLM, modal_count(cfg.llm_modal_share, total)?),
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = (cfg.vocab_size.max(cfg.n_stems) as f64).log10().floor() as usize + 1;
    let base: Vec<(String, Vec<f32>)> = (0..cfg.vocab_size)
        .map(|i| (format!("w{i:0width$}"), unit_gaussian(&mut rng, cfg.dim)))
        .collect();

    let max_triples = cfg.vocab_size * (cfg.vocab_size - 1) * (cfg.vocab_size - 2);
    if cfg.n_stems > max_triples / 2 {
        return Err(Error::Infeasible(format!(
            "{} stems need more distinct triples than {} words provide",
            cfg.n_stems, cfg.vocab_size
        )));
    }
    let mut seen = std::collections::HashSet::new();
    let mut stems = Vec::with_capacity(cfg.n_stems);
    let mut planted_vecs = Vec::with_capacity(cfg.n_stems);
    while stems.len() < cfg.n_stems {
        let picks: Vec<usize> = rand::seq::index::sample(&mut rng, cfg.vocab_size, 3).into_vec();
        let (a, b, c) = (picks[0], picks[1], picks[2]);
        if !seen.insert((a, b, c)) {
            continue;
        }
        let offset: Vec<f64> = (0..cfg.dim)
            .map(|k| base[b].1[k] as f64 - base[a].1[k] as f64 + base[c].1[k] as f64)
            .collect();
        let n = offset.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-3 {
            continue;
        }
        let i = stems.len();
        let mut stem =
            AnalogyStem::new(format!("s{i:0width$}"), &base[a].0, &base[b].0, &base[c].0);
        stem.relation_category = Some(format!("rel{}", i % 4));
        stem.relation_subtype = Some(format!("sub{}", i % 8));
        stems.push((stem, [a, b, c]));
        planted_vecs.push((
            format!("x{i:0width$}"),
            offset.iter().map(|x| (x / n) as f32).collect::<Vec<f32>>(),
        ));
    }

    // Zipf-like frequencies: base words by a random rank permutation, planted
    // words rarer than most base words.
    let mut order: Vec<usize> = (0..cfg.vocab_size).collect();
    order.shuffle(&mut rng);
    let mut frequencies: Vec<(String, f64)> = vec![(String::new(), 0.0); cfg.vocab_size];
    for (rank, &w) in order.iter().enumerate() {
        frequencies[w] = (base[w].0.clone(), 0.05 / (rank as f64 + 1.0));
    }
    for (word, _) in &planted_vecs {
        let f = 10f64.powf(rng.gen_range(-8.0..-5.0));
        frequencies.push((word.clone(), f));
    }

    let mut responses = Vec::new();
    let mut rated: Vec<(String, String)> = Vec::new();
    for ((stem, ids), (planted, _)) in stems.iter().zip(&planted_vecs) {
        let others: Vec<usize> = (0..cfg.vocab_size).filter(|w| !ids.contains(w)).collect();
        for (system, modal) in shares {
            let p_planted = if system == LLM { 0.8 } else { 0.5 };
            let mut pool: Vec<usize> = others.clone();
            pool.shuffle(&mut rng);
            let modal_word = if rng.gen_bool(p_planted) {
                planted.clone()
            } else {
                base[pool.pop().expect("pool non-empty")].0.clone()
            };
            let mut dist = ResponseDistribution::new(&stem.id, system);
            dist.add(&modal_word, modal);
            for c in split_remainder(&mut rng, modal, total - modal)? {
                let w = pool.pop().ok_or_else(|| {
                    Error::Infeasible("vocabulary too small for the requested responses".into())
                })?;
                dist.add(&base[w].0, c);
            }
            for (w, _) in &dist.entries {
                rated.push((stem.id.clone(), w.clone()));
            }
            responses.push(dist);
        }
    }

    let lookup: std::collections::HashMap<&str, &[f32]> = base
        .iter()
        .chain(planted_vecs.iter())
        .map(|(w, v)| (w.as_str(), v.as_slice()))
        .collect();
    let freq_of: std::collections::HashMap<&str, f64> =
        frequencies.iter().map(|(w, f)| (w.as_str(), *f)).collect();
    rated.sort();
    rated.dedup();
    let stem_by_id: std::collections::HashMap<&str, &AnalogyStem> =
        stems.iter().map(|(s, _)| (s.id.as_str(), s)).collect();
    let mut ratings = Vec::with_capacity(rated.len());
    for (stem_id, d) in rated {
        let s = stem_by_id[stem_id.as_str()];
        let v = |w: &str| to_f64(lookup[w]);
        let align = parallelogram_alignment(&v(&s.a), &v(&s.b), &v(&s.c), &v(&d)).unwrap_or(0.0);
        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
        let raw = 4.0 + 2.5 * align - 0.1 * (freq_of[d.as_str()].ln() + 10.0) + noise;
        let rating = (raw.clamp(1.0, 7.0) * 100.0).round() / 100.0;
        ratings.push(RatingRow {
            stem_id,
            d_term: d,
            rating,
            rater_id: None,
        });
    }

    let planted = stems
        .iter()
        .zip(&planted_vecs)
        .map(|((s, _), (x, _))| (s.id.clone(), x.clone()))
        .collect();
    let mut vectors = base;
    vectors.extend(planted_vecs);
    Ok(SynthData {
        vectors,
        stems: stems.into_iter().map(|(s, _)| s).collect(),
        responses,
        ratings,
        frequencies,
        planted,
    })
}

impl SynthData {
    pub fn embeddings_text(&self) -> String {
        let mut out = String::new();
        for (w, v) in &self.vectors {
            out.push_str(w);
            for x in v {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Writes `embeddings.txt`, `stems.csv`, `responses.csv`, `ratings.csv`,
    /// `wordfreq.tsv` and `planted.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("embeddings.txt"), self.embeddings_text())?;

        let mut w = csv::Writer::from_path(dir.join("stems.csv"))?;
        w.write_record([
            "stem_id",
            "a",
            "b",
            "c",
            "relation_category",
            "relation_subtype",
        ])?;
        for s in &self.stems {
            w.write_record([
                s.id.as_str(),
                &s.a,
                &s.b,
                &s.c,
                s.relation_category.as_deref().unwrap_or(""),
                s.relation_subtype.as_deref().unwrap_or(""),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("responses.csv"))?;
        w.write_record(["stem_id", "system", "d_term", "count"])?;
        for d in &self.responses {
            for (term, count) in &d.entries {
                w.write_record([d.stem_id.as_str(), &d.system, term, &count.to_string()])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("ratings.csv"))?;
        w.write_record(["stem_id", "d_term", "rating"])?;
        for r in &self.ratings {
            w.write_record([r.stem_id.as_str(), &r.d_term, &format!("{:.2}", r.rating)])?;
        }
        w.flush()?;

        let mut freq = String::from("word\tfrequency\n");
        for (word, f) in &self.frequencies {
            writeln!(freq, "{word}\t{f:e}").unwrap();
        }
        fs::write(dir.join("wordfreq.tsv"), freq)?;

        let mut w = csv::Writer::from_path(dir.join("planted.csv"))?;
        w.write_record(["stem_id", "d_term"])?;
        for (s, x) in &self.planted {
            w.write_record([s, x])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::modal_share;

    #[test]
    fn split_keeps_counts_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (modal, rest) in [(64, 36), (85, 15), (3, 2), (10, 3), (50, 0)] {
            let parts = split_remainder(&mut rng, modal, rest).unwrap();
            assert_eq!(parts.iter().sum::<u64>(), rest);
            assert!(parts.iter().all(|&c| c >= 2 && c < modal));
        }
        assert!(split_remainder(&mut rng, 50, 1).is_err());
        assert!(split_remainder(&mut rng, 2, 4).is_err());
    }

    #[test]
    fn shares_match_targets() {
        let data = generate(&SynthConfig {
            n_stems: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        let human: Vec<_> = data
            .responses
            .iter()
            .filter(|d| d.system == HUMAN)
            .collect();
        let llm: Vec<_> = data.responses.iter().filter(|d| d.system == LLM).collect();
        assert_eq!(modal_share(human.iter().copied()), Some(0.64));
        assert_eq!(modal_share(llm.iter().copied()), Some(0.85));
        assert!(data.responses.iter().all(|d| d.total() == 100));
    }

    #[test]
    fn infeasible_shares_error() {
        let cfg = SynthConfig {
            human_modal_share: 0.0,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Infeasible(_))));
        let cfg = SynthConfig {
            llm_modal_share: 0.99,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Infeasible(_))));
        let cfg = SynthConfig {
            vocab_size: 9,
            ..SynthConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = SynthConfig {
            n_stems: 10,
            vocab_size: 50,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.embeddings_text(), b.embeddings_text());
        assert_eq!(a.responses, b.responses);
        assert_eq!(a.ratings, b.ratings);
        let c = generate(&SynthConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(a.embeddings_text(), c.embeddings_text());
    }
}
