//! Word-embedding store with exact cosine ranking over the full vocabulary.
//!
//! Rows are L2-normalized at load time and kept as a row-major `f32` matrix.
//! Every similarity query is a brute-force scan; scores for a single row are
//! accumulated in a fixed lane order so results do not depend on how many
//! threads participate in a scan.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

pub type WordId = usize;

/// Magic prefix of the binary cache format.
pub const CACHE_MAGIC: &[u8; 6] = b"ALAB1\0";

const NORM_TOLERANCE: f64 = 1e-6;
const DEGENERATE_NORM: f64 = 1e-10;
/// Rows per parallel work item during a scan.
const SCAN_CHUNK_ROWS: usize = 4096;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DropCounts {
    pub zero_norm: usize,
    pub non_finite: usize,
    pub duplicate: usize,
    pub parse_failure: usize,
}

impl DropCounts {
    pub fn total(&self) -> usize {
        self.zero_norm + self.non_finite + self.duplicate + self.parse_failure
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub expected_dim: Option<usize>,
    pub lowercase: bool,
}

/// Immutable vocabulary plus unit-normalized vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    words: Vec<String>,
    index: HashMap<String, WordId>,
    matrix: Vec<f32>,
    /// Pre-normalization L2 norms; absent when loaded from the binary cache.
    norms: Option<Vec<f64>>,
    dim: usize,
    dropped: DropCounts,
    lowercased: bool,
}

/// A query direction with the store's dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryVector {
    values: Vec<f32>,
    normalized: bool,
}

impl QueryVector {
    /// Wraps raw values without normalizing them.
    pub fn raw(values: Vec<f32>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    /// Builds a unit query from `values`, normalizing in f64.
    pub fn unit_from_f64(values: &[f64]) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < DEGENERATE_NORM {
            return Err(Error::DegenerateQuery);
        }
        Ok(Self {
            values: values.iter().map(|v| (v / norm) as f32).collect(),
            normalized: true,
        })
    }

    /// Wraps a row that is already unit norm (a stored embedding row).
    pub(crate) fn from_unit_row(row: &[f32]) -> Self {
        Self {
            values: row.to_vec(),
            normalized: true,
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Returns a unit-norm copy (or self if already normalized).
    pub fn normalized(&self) -> Result<Self> {
        if self.normalized {
            return Ok(self.clone());
        }
        let as_f64: Vec<f64> = self.values.iter().map(|&v| v as f64).collect();
        Self::unit_from_f64(&as_f64)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}

/// Dot product with a fixed accumulation order: eight interleaved lanes,
/// reduced pairwise, then the tail.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Cosine scores of every vocabulary row against one query.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    scores: Vec<f32>,
}

impl ScoreTable {
    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn score(&self, id: WordId) -> f32 {
        self.scores[id]
    }

    /// Competition rank of `target` among non-excluded words. `excluded` need
    /// not be sorted or unique; it must not contain `target`.
    pub fn rank(&self, target: WordId, excluded: &[WordId]) -> usize {
        let st = self.scores[target];
        let mut better = 0usize;
        for (id, &s) in self.scores.iter().enumerate() {
            better += (s > st || (s == st && id < target)) as usize;
        }
        let mut seen: Vec<WordId> = excluded.to_vec();
        seen.sort_unstable();
        seen.dedup();
        for &e in &seen {
            debug_assert_ne!(e, target);
            let s = self.scores[e];
            if s > st || (s == st && e < target) {
                better -= 1;
            }
        }
        better + 1
    }

    /// Best `k` non-excluded ids by descending score, ties by ascending id.
    pub fn top_k(&self, k: usize, excluded: &[WordId]) -> Vec<(WordId, f32)> {
        let mut ids: Vec<WordId> = (0..self.scores.len())
            .filter(|id| !excluded.contains(id))
            .collect();
        let order = |a: &WordId, b: &WordId| {
            self.scores[*b]
                .total_cmp(&self.scores[*a])
                .then_with(|| a.cmp(b))
        };
        let k = k.min(ids.len());
        if k == 0 {
            return Vec::new();
        }
        if k < ids.len() {
            ids.select_nth_unstable_by(k - 1, order);
            ids.truncate(k);
        }
        ids.sort_unstable_by(order);
        ids.into_iter().map(|id| (id, self.scores[id])).collect()
    }
}

impl EmbeddingStore {
    /// Builds a store from in-memory rows with the same policies as the text
    /// loader (first occurrence wins, degenerate rows dropped and counted).
    pub fn from_rows<S, I>(rows: I, options: LoadOptions) -> Result<Self>
    where
        S: Into<String>,
        I: IntoIterator<Item = (S, Vec<f64>)>,
    {
        let mut builder = Builder::new(options);
        for (line, (word, values)) in rows.into_iter().enumerate() {
            builder.push(line + 1, word.into(), values)?;
        }
        builder.finish()
    }

    /// Parses GloVe-style text: one `word f1 ... fd` record per line.
    pub fn load_text<R: BufRead>(mut reader: R, options: LoadOptions) -> Result<Self> {
        let mut builder = Builder::new(options);
        let mut line = String::new();
        let mut line_no = 0usize;
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            line_no += 1;
            let record = line.trim_end_matches(['\n', '\r', ' ']);
            if record.is_empty() {
                continue;
            }
            builder.push_text(line_no, record)?;
        }
        builder.finish()
    }

    /// Opens either format, sniffing the binary cache magic.
    pub fn open(path: &Path, options: LoadOptions) -> Result<Self> {
        let mut file = File::open(path)?;
        let mut head = [0u8; 6];
        let n = read_up_to(&mut file, &mut head)?;
        drop(file);
        if n == head.len() && &head == CACHE_MAGIC {
            let store = Self::read_cache(BufReader::new(File::open(path)?))?;
            if let Some(d) = options.expected_dim {
                if d != store.dim {
                    return Err(Error::BadCache(format!(
                        "cache dimension {} does not match expected {d}",
                        store.dim
                    )));
                }
            }
            if options.lowercase && !store.lowercased {
                return store.relowercased();
            }
            return Ok(store);
        }
        Self::load_text(
            BufReader::with_capacity(1 << 20, File::open(path)?),
            options,
        )
    }

    /// Opens a text file through a binary cache stored next to it, building
    /// the cache when missing or older than the text file.
    pub fn open_cached(path: &Path, options: LoadOptions) -> Result<Self> {
        let cache = cache_path_for(path, options.lowercase);
        if is_cache_file(path)? {
            return Self::open(path, options);
        }
        if let (Ok(src), Ok(dst)) = (std::fs::metadata(path), std::fs::metadata(&cache)) {
            if let (Ok(ts), Ok(tc)) = (src.modified(), dst.modified()) {
                if tc >= ts {
                    if let Ok(store) = Self::open(&cache, options) {
                        return Ok(store);
                    }
                }
            }
        }
        let store = Self::open(path, options)?;
        // The cache is an optimization; failing to write it is not fatal.
        let _ = store.write_cache_file(&cache);
        Ok(store)
    }

    fn relowercased(self) -> Result<Self> {
        let options = LoadOptions {
            expected_dim: Some(self.dim),
            lowercase: true,
        };
        let mut builder = Builder::new(options);
        for (id, word) in self.words.iter().enumerate() {
            let row = self.vector(id).iter().map(|&v| v as f64).collect();
            builder.push(id + 1, word.clone(), row)?;
        }
        builder.finish()
    }

    pub fn write_cache_file(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("alab.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_cache(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn write_cache<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.words.len() as u64).to_le_bytes())?;
        for word in &self.words {
            w.write_all(&(word.len() as u32).to_le_bytes())?;
            w.write_all(word.as_bytes())?;
        }
        for v in &self.matrix {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::BadCache("magic mismatch".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        if dim == 0 || n == 0 {
            return Err(Error::BadCache(format!("invalid header: d={dim}, |V|={n}")));
        }
        let mut words = Vec::with_capacity(n);
        let mut index = HashMap::with_capacity(n);
        for id in 0..n {
            r.read_exact(&mut b4)?;
            let len = u32::from_le_bytes(b4) as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            let word = String::from_utf8(buf)
                .map_err(|_| Error::BadCache(format!("word {id} is not UTF-8")))?;
            if index.insert(word.clone(), id).is_some() {
                return Err(Error::BadCache(format!("duplicate word {word:?}")));
            }
            words.push(word);
        }
        let mut bytes = vec![0u8; n * dim * 4];
        r.read_exact(&mut bytes)?;
        let matrix: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::BadCache("trailing bytes after matrix".into()));
        }
        for (id, row) in matrix.chunks_exact(dim).enumerate() {
            let norm = row
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::BadCache(format!("row {id} is not unit norm")));
            }
        }
        let lowercased = words.iter().all(|w| w.to_lowercase() == *w);
        Ok(Self {
            words,
            index,
            matrix,
            norms: None,
            dim,
            dropped: DropCounts::default(),
            lowercased,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dropped(&self) -> DropCounts {
        self.dropped
    }

    pub fn norms_dropped(&self) -> usize {
        self.dropped.total()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id]
    }

    /// Looks up a word, folding case first when the store was lowercased.
    pub fn id(&self, word: &str) -> Option<WordId> {
        if self.lowercased {
            if let Some(&id) = self.index.get(word) {
                return Some(id);
            }
            return self.index.get(&word.to_lowercase()).copied();
        }
        self.index.get(word).copied()
    }

    pub fn require(&self, word: &str) -> Result<WordId> {
        self.id(word).ok_or_else(|| Error::Oov(word.to_string()))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.id(word).is_some()
    }

    pub fn vector(&self, id: WordId) -> &[f32] {
        &self.matrix[id * self.dim..(id + 1) * self.dim]
    }

    pub fn vector_f64(&self, id: WordId) -> Vec<f64> {
        self.vector(id).iter().map(|&v| v as f64).collect()
    }

    /// The row as it appeared in the input file (unit row times its original
    /// norm), when norms are available.
    pub fn raw_vector_f64(&self, id: WordId) -> Option<Vec<f64>> {
        let norm = self.norms.as_ref()?[id];
        Some(self.vector(id).iter().map(|&v| v as f64 * norm).collect())
    }

    pub fn has_raw_norms(&self) -> bool {
        self.norms.is_some()
    }

    /// Mean of the unit rows of whitespace-separated constituents, if all
    /// are in vocabulary and there are at least two of them.
    pub fn phrase_vector(&self, phrase: &str) -> Option<Vec<f64>> {
        let parts: Vec<&str> = phrase.split_whitespace().collect();
        if parts.len() < 2 {
            return None;
        }
        let mut acc = vec![0.0f64; self.dim];
        for p in &parts {
            let id = self.id(p)?;
            for (a, &v) in acc.iter_mut().zip(self.vector(id)) {
                *a += v as f64;
            }
        }
        let n = parts.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Some(acc)
    }

    pub fn query_for(&self, id: WordId) -> QueryVector {
        QueryVector::from_unit_row(self.vector(id))
    }

    /// Cosine of two in-vocabulary words, clamped to [-1, 1].
    pub fn cosine(&self, w1: &str, w2: &str) -> Result<f64> {
        let a = self.require(w1)?;
        let b = self.require(w2)?;
        Ok(self.cosine_ids(a, b))
    }

    pub fn cosine_ids(&self, a: WordId, b: WordId) -> f64 {
        (dot(self.vector(a), self.vector(b)) as f64).clamp(-1.0, 1.0)
    }

    fn check_query(&self, q: &QueryVector) -> Result<QueryVector> {
        if q.dim() != self.dim {
            return Err(Error::QueryDimension {
                expected: self.dim,
                found: q.dim(),
            });
        }
        q.normalized()
    }

    /// Scores every row against `q` (normalized first if needed).
    pub fn score_all(&self, q: &QueryVector) -> Result<ScoreTable> {
        let q = self.check_query(q)?;
        let qv = q.values();
        let dim = self.dim;
        let mut scores = vec![0.0f32; self.len()];
        scores
            .par_chunks_mut(SCAN_CHUNK_ROWS)
            .zip(self.matrix.par_chunks(SCAN_CHUNK_ROWS * dim))
            .for_each(|(out, rows)| {
                for (s, row) in out.iter_mut().zip(rows.chunks_exact(dim)) {
                    *s = dot(row, qv);
                }
            });
        Ok(ScoreTable { scores })
    }

    fn resolve_all(&self, words: &[&str]) -> Result<Vec<WordId>> {
        words.iter().filter_map(|w| self.id(w)).map(Ok).collect()
    }

    /// 1-based competition rank of `target` under `q`, ties broken by WordId.
    pub fn rank_of(&self, q: &QueryVector, target: &str, exclusions: &[&str]) -> Result<usize> {
        let t = self.require(target)?;
        let excluded = self.resolve_all(exclusions)?;
        if excluded.contains(&t) {
            return Err(Error::Excluded(target.to_string()));
        }
        Ok(self.score_all(q)?.rank(t, &excluded))
    }

    /// First `k` words by descending cosine (ties by ascending WordId).
    pub fn top_k(
        &self,
        q: &QueryVector,
        k: usize,
        exclusions: &[&str],
    ) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let excluded = self.resolve_all(exclusions)?;
        let table = self.score_all(q)?;
        Ok(table
            .top_k(k, &excluded)
            .into_iter()
            .map(|(id, s)| (self.words[id].clone(), (s as f64).clamp(-1.0, 1.0)))
            .collect())
    }

    /// Number of vocabulary words remaining after removing `exclusions`.
    pub fn effective_size(&self, exclusions: &[WordId]) -> usize {
        let mut e = exclusions.to_vec();
        e.sort_unstable();
        e.dedup();
        self.len() - e.len()
    }
}

fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

fn is_cache_file(path: &Path) -> Result<bool> {
    let mut head = [0u8; 6];
    let n = read_up_to(&mut File::open(path)?, &mut head)?;
    Ok(n == 6 && &head == CACHE_MAGIC)
}

/// Location of the auto-built binary cache for a text embedding file.
pub fn cache_path_for(path: &Path, lowercase: bool) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(if lowercase { ".lower.alab" } else { ".alab" });
    PathBuf::from(name)
}

struct Builder {
    options: LoadOptions,
    dim: Option<usize>,
    words: Vec<String>,
    index: HashMap<String, WordId>,
    matrix: Vec<f32>,
    norms: Vec<f64>,
    dropped: DropCounts,
}

impl Builder {
    fn new(options: LoadOptions) -> Self {
        Self {
            options,
            dim: options.expected_dim,
            words: Vec::new(),
            index: HashMap::new(),
            matrix: Vec::new(),
            norms: Vec::new(),
            dropped: DropCounts::default(),
        }
    }

    fn push_text(&mut self, line: usize, record: &str) -> Result<()> {
        let dim = match self.dim {
            Some(d) => d,
            None => {
                let fields = record.split(' ').count();
                if fields < 2 {
                    return Err(Error::DimensionMismatch {
                        line,
                        expected: 1,
                        found: 0,
                    });
                }
                fields - 1
            }
        };
        // Split from the right: some crawled vocabularies contain words with
        // embedded spaces, which stay part of the word.
        let mut fields = record.rsplitn(dim + 1, ' ');
        let mut values = Vec::with_capacity(dim);
        let mut parse_failed = false;
        for _ in 0..dim {
            match fields.next() {
                Some(tok) => match tok.parse::<f64>() {
                    Ok(v) => values.push(v),
                    Err(_) => parse_failed = true,
                },
                None => {
                    return Err(Error::DimensionMismatch {
                        line,
                        expected: dim,
                        found: values.len(),
                    })
                }
            }
        }
        let word = match fields.next() {
            Some(w) if !w.is_empty() => w,
            _ => {
                return Err(Error::DimensionMismatch {
                    line,
                    expected: dim,
                    found: dim.saturating_sub(1),
                })
            }
        };
        // A numeric token right before the values means the row is too long,
        // not a spaced word.
        if let Some((_, last)) = word.rsplit_once(' ') {
            if last.parse::<f64>().is_ok() {
                return Err(Error::DimensionMismatch {
                    line,
                    expected: dim,
                    found: dim + word.split(' ').count() - 1,
                });
            }
        }
        if parse_failed {
            self.dim.get_or_insert(dim);
            self.dropped.parse_failure += 1;
            return Ok(());
        }
        values.reverse();
        self.push(line, word.to_string(), values)
    }

    fn push(&mut self, line: usize, word: String, values: Vec<f64>) -> Result<()> {
        let dim = *self.dim.get_or_insert(values.len());
        if values.len() != dim || dim == 0 {
            return Err(Error::DimensionMismatch {
                line,
                expected: dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            self.dropped.non_finite += 1;
            return Ok(());
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < DEGENERATE_NORM {
            self.dropped.zero_norm += 1;
            return Ok(());
        }
        let word = if self.options.lowercase {
            word.to_lowercase()
        } else {
            word
        };
        if self.index.contains_key(&word) {
            self.dropped.duplicate += 1;
            return Ok(());
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.matrix.extend(values.iter().map(|v| (v / norm) as f32));
        self.norms.push(norm);
        Ok(())
    }

    fn finish(self) -> Result<EmbeddingStore> {
        if self.words.is_empty() {
            return Err(Error::NoVectors);
        }
        Ok(EmbeddingStore {
            dim: self.dim.unwrap_or(0),
            words: self.words,
            index: self.index,
            matrix: self.matrix,
            norms: Some(self.norms),
            dropped: self.dropped,
            lowercased: self.options.lowercase,
        })
    }
}
