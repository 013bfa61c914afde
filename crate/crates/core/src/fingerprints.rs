//! Behavioral fingerprints: files touched, time-zone profile and commit
//! message text.
//!
//! * Files: a file touched by `k` distinct authors has weight `1/k`; the
//!   similarity of two authors is the summed weight of their shared files.
//! * Time zone: per-author commit counts per zone divided by the number of
//!   authors seen in that zone, compared by cosine. Zones with fewer than
//!   two authors are dropped.
//! * Text: per-author document embeddings compared by cosine. The default
//!   backend is TF-IDF reduced to `d` dimensions by a seeded sign
//!   projection (see [`HashProjection`]).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CommitRecord, IdentityId, IdentityTable};

#[derive(Debug, Error)]
pub enum FingerprintError {
    #[error("vector length mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("fingerprint store: {0}")]
    Store(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// File → distinct authors, and author → files.
#[derive(Clone, Debug, Default)]
pub struct FileAuthorIndex {
    files: Vec<String>,
    file_ids: HashMap<String, u32>,
    /// Sorted, distinct author ids per file.
    file_authors: Vec<Vec<IdentityId>>,
    /// Sorted, distinct file ids per author.
    author_files: Vec<Vec<u32>>,
}

impl FileAuthorIndex {
    /// File ids follow first-seen commit order.
    pub fn build(commits: &[CommitRecord], table: &IdentityTable) -> Self {
        let mut idx = Self {
            author_files: vec![Vec::new(); table.len()],
            ..Self::default()
        };
        let mut file_sets: Vec<BTreeSet<IdentityId>> = Vec::new();
        for c in commits {
            let Some(author) = table.id_of(&c.author) else {
                continue;
            };
            for f in &c.files {
                let fid = match idx.file_ids.get(f) {
                    Some(&id) => id,
                    None => {
                        let id = idx.files.len() as u32;
                        idx.files.push(f.clone());
                        idx.file_ids.insert(f.clone(), id);
                        file_sets.push(BTreeSet::new());
                        id
                    }
                };
                file_sets[fid as usize].insert(author);
            }
        }
        for (fid, authors) in file_sets.iter().enumerate() {
            for &a in authors {
                idx.author_files[a as usize].push(fid as u32);
            }
        }
        idx.file_authors = file_sets.into_iter().map(|s| s.into_iter().collect()).collect();
        idx
    }

    /// Rebuilds the index from file names and each author's file ids.
    pub fn from_parts(files: Vec<String>, author_files: Vec<Vec<u32>>) -> Result<Self, FingerprintError> {
        let mut file_authors = vec![Vec::new(); files.len()];
        let mut author_files = author_files;
        for (a, fs) in author_files.iter_mut().enumerate() {
            fs.sort_unstable();
            fs.dedup();
            for &f in fs.iter() {
                file_authors
                    .get_mut(f as usize)
                    .ok_or_else(|| FingerprintError::Store(format!("author {a} references file {f}")))?
                    .push(a as IdentityId);
            }
        }
        let file_ids = files.iter().enumerate().map(|(i, f)| (f.clone(), i as u32)).collect();
        Ok(Self {
            files,
            file_ids,
            file_authors,
            author_files,
        })
    }

    pub fn file_count(&self) -> usize {
        self.files.len()
    }

    pub fn file_name(&self, fid: u32) -> &str {
        &self.files[fid as usize]
    }

    pub fn file_id(&self, path: &str) -> Option<u32> {
        self.file_ids.get(path).copied()
    }

    pub fn authors_of(&self, fid: u32) -> &[IdentityId] {
        &self.file_authors[fid as usize]
    }

    /// Files touched by `author`; empty for unknown or inactive authors.
    pub fn files_of(&self, author: IdentityId) -> &[u32] {
        self.author_files
            .get(author as usize)
            .map_or(&[][..], Vec::as_slice)
    }

    /// `1 / |A_f|`.
    pub fn weight(&self, fid: u32) -> f64 {
        1.0 / self.file_authors[fid as usize].len() as f64
    }

    /// Summed weight of files touched by both authors.
    pub fn similarity(&self, a1: IdentityId, a2: IdentityId) -> f64 {
        let (f1, f2) = (self.files_of(a1), self.files_of(a2));
        let (mut i, mut j) = (0, 0);
        let mut sum = 0.0;
        while i < f1.len() && j < f2.len() {
            match f1[i].cmp(&f2[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    sum += self.weight(f1[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        sum
    }

    /// Share of a file set's total weight that `author` also touched. Paths
    /// unknown to the index are ignored.
    pub fn overlap_share(&self, paths: &[String], author: IdentityId) -> f64 {
        let mine = self.files_of(author);
        let mut total = 0.0;
        let mut shared = 0.0;
        let fids: BTreeSet<u32> = paths.iter().filter_map(|p| self.file_id(p)).collect();
        for fid in fids {
            let w = self.weight(fid);
            total += w;
            if mine.binary_search(&fid).is_ok() {
                shared += w;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            shared / total
        }
    }
}

/// Files-touched similarity of two authors.
pub fn file_similarity(a1: IdentityId, a2: IdentityId, index: &FileAuthorIndex) -> f64 {
    index.similarity(a1, a2)
}

/// Canonicalizes a zone string to `+HHMM`/`-HHMM` where recognizable;
/// anything else is returned trimmed and verbatim.
pub fn normalize_zone(raw: &str) -> String {
    let s = raw.trim();
    match s.to_ascii_uppercase().as_str() {
        "Z" | "UTC" | "GMT" | "UT" => return "+0000".to_string(),
        _ => {}
    }
    let (sign, rest) = match s.as_bytes().first() {
        Some(b'+') => ('+', &s[1..]),
        Some(b'-') => ('-', &s[1..]),
        _ => ('+', s),
    };
    let digits: String = rest.chars().filter(|c| *c != ':').collect();
    let ok_shape = rest.len() <= 5 && digits.chars().all(|c| c.is_ascii_digit());
    let (hh, mm) = match (ok_shape, digits.len()) {
        (true, 4) => (&digits[..2], &digits[2..]),
        (true, 3) => (&digits[..1], &digits[1..]),
        (true, 1 | 2) if !rest.contains(':') => (digits.as_str(), "00"),
        _ => return s.to_string(),
    };
    let (h, m): (u32, u32) = (hh.parse().unwrap_or(99), mm.parse().unwrap_or(99));
    if h > 14 || m >= 60 {
        return s.to_string();
    }
    format!("{sign}{h:02}{m:02}")
}

/// Per-author zone vectors over the surviving zone axes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimezoneVectors {
    /// Surviving canonical zones, sorted.
    pub axes: Vec<String>,
    /// Indexed by identity id; length = `axes.len()`.
    pub vectors: Vec<Vec<f64>>,
}

impl TimezoneVectors {
    /// Zones with fewer than `min_authors` distinct authors are dropped
    /// (`build` uses 2).
    pub fn build_with(commits: &[CommitRecord], table: &IdentityTable, min_authors: usize) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<IdentityId, u32>> = BTreeMap::new();
        for c in commits {
            if let Some(id) = table.id_of(&c.author) {
                *counts
                    .entry(normalize_zone(&c.tz))
                    .or_default()
                    .entry(id)
                    .or_insert(0) += 1;
            }
        }
        counts.retain(|_, authors| authors.len() >= min_authors);
        let axes: Vec<String> = counts.keys().cloned().collect();
        let mut vectors = vec![vec![0.0; axes.len()]; table.len()];
        for (t, authors) in counts.values().enumerate() {
            let a_t = authors.len() as f64;
            for (&id, &c) in authors {
                vectors[id as usize][t] = c as f64 / a_t;
            }
        }
        Self { axes, vectors }
    }

    pub fn build(commits: &[CommitRecord], table: &IdentityTable) -> Self {
        Self::build_with(commits, table, 2)
    }

    pub fn vector(&self, id: IdentityId) -> &[f64] {
        &self.vectors[id as usize]
    }

    pub fn axis(&self, raw_zone: &str) -> Option<usize> {
        self.axes.binary_search(&normalize_zone(raw_zone)).ok()
    }
}

/// Cosine similarity; 0 if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, FingerprintError> {
    if a.len() != b.len() {
        return Err(FingerprintError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

pub fn timezone_similarity(v1: &[f64], v2: &[f64]) -> Result<f64, FingerprintError> {
    cosine(v1, v2)
}

pub fn text_similarity(e1: &[f64], e2: &[f64]) -> Result<f64, FingerprintError> {
    cosine(e1, e2)
}

/// A fitted text embedding backend.
pub trait TextEmbedder: Send + Sync {
    fn backend(&self) -> &str;
    fn dimension(&self) -> usize;
    fn seed(&self) -> u64;
    /// Embeds a document; the zero vector if it has no tokens.
    fn embed(&self, doc: &str) -> Vec<f64>;
    /// Fitted corpus size and document frequencies, persisted with the store.
    fn document_frequencies(&self) -> (usize, BTreeMap<String, u32>) {
        (0, BTreeMap::new())
    }
}

/// Lower-cased alphanumeric runs.
pub fn tokenize(doc: &str) -> impl Iterator<Item = String> + '_ {
    doc.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// The ±1 projection row of a token: bit `j` of the ChaCha8 stream seeded
/// with `seed ^ fnv1a(token)` picks the sign of component `j`.
pub fn token_signs(token: &str, seed: u64, d: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(token.as_bytes()));
    let mut out = Vec::with_capacity(d);
    let mut bits = 0u64;
    for j in 0..d {
        if j % 64 == 0 {
            bits = rng.next_u64();
        }
        out.push(if bits & (1 << (j % 64)) != 0 { 1.0 } else { -1.0 });
    }
    out
}

/// TF-IDF token weights projected onto `d` seeded random sign vectors.
///
/// For a document with raw token counts `tf`, the embedding is
/// `sum_t tf(t) * idf(t) * signs(t) / sqrt(d)`, summed in lexicographic
/// token order, where `idf(t) = ln((1 + N) / (1 + df(t))) + 1` over the
/// `N` fitted documents.
#[derive(Clone, Debug)]
pub struct HashProjection {
    d: usize,
    seed: u64,
    n_docs: usize,
    df: HashMap<String, u32>,
}

impl HashProjection {
    pub const BACKEND: &'static str = "tfidf-sign-projection";

    pub fn fit(docs: &[String], d: usize, seed: u64) -> Result<Self, FingerprintError> {
        if d < 2 {
            return Err(FingerprintError::Dimension(d));
        }
        let mut df: HashMap<String, u32> = HashMap::new();
        for doc in docs {
            let distinct: BTreeSet<String> = tokenize(doc).collect();
            for t in distinct {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        Ok(Self {
            d,
            seed,
            n_docs: docs.len(),
            df,
        })
    }

    pub fn from_parts(d: usize, seed: u64, n_docs: usize, df: BTreeMap<String, u32>) -> Result<Self, FingerprintError> {
        if d < 2 {
            return Err(FingerprintError::Dimension(d));
        }
        Ok(Self {
            d,
            seed,
            n_docs,
            df: df.into_iter().collect(),
        })
    }

    pub fn idf(&self, token: &str) -> f64 {
        let df = self.df.get(token).copied().unwrap_or(0) as f64;
        ((1.0 + self.n_docs as f64) / (1.0 + df)).ln() + 1.0
    }
}

impl TextEmbedder for HashProjection {
    fn backend(&self) -> &str {
        Self::BACKEND
    }

    fn dimension(&self) -> usize {
        self.d
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn embed(&self, doc: &str) -> Vec<f64> {
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokenize(doc) {
            *tf.entry(t).or_insert(0) += 1;
        }
        let scale = 1.0 / (self.d as f64).sqrt();
        let mut v = vec![0.0; self.d];
        for (token, count) in &tf {
            let w = *count as f64 * self.idf(token) * scale;
            for (x, s) in v.iter_mut().zip(token_signs(token, self.seed, self.d)) {
                *x += w * s;
            }
        }
        v
    }

    fn document_frequencies(&self) -> (usize, BTreeMap<String, u32>) {
        (self.n_docs, self.df.iter().map(|(k, v)| (k.clone(), *v)).collect())
    }
}

/// Each author's commit messages joined by newlines, in commit order.
pub fn author_documents(commits: &[CommitRecord], table: &IdentityTable) -> Vec<String> {
    let mut docs = vec![String::new(); table.len()];
    for c in commits {
        if let Some(id) = table.id_of(&c.author) {
            let d = &mut docs[id as usize];
            if !d.is_empty() {
                d.push('\n');
            }
            d.push_str(&c.msg);
        }
    }
    docs
}

/// Fits the default backend on per-author documents and embeds every
/// author. Returns the fitted model and vectors indexed by identity id.
pub fn build_text_embeddings(
    commits: &[CommitRecord],
    table: &IdentityTable,
    d: usize,
    seed: u64,
) -> Result<(HashProjection, Vec<Vec<f64>>), FingerprintError> {
    let docs = author_documents(commits, table);
    let model = HashProjection::fit(&docs, d, seed)?;
    let vectors = crate::par::map(&docs, |doc| model.embed(doc));
    Ok((model, vectors))
}

/// All three fingerprints for one corpus.
pub struct Fingerprints {
    pub files: FileAuthorIndex,
    pub timezones: TimezoneVectors,
    pub embeddings: Vec<Vec<f64>>,
    pub text_model: Box<dyn TextEmbedder>,
}

impl Fingerprints {
    pub fn build(
        commits: &[CommitRecord],
        table: &IdentityTable,
        d: usize,
        seed: u64,
    ) -> Result<Self, FingerprintError> {
        let (model, embeddings) = build_text_embeddings(commits, table, d, seed)?;
        Ok(Self {
            files: FileAuthorIndex::build(commits, table),
            timezones: TimezoneVectors::build(commits, table),
            embeddings,
            text_model: Box::new(model),
        })
    }

    /// `[sim_files, sim_tz, sim_text]` for a pair.
    pub fn pair_similarities(&self, a1: IdentityId, a2: IdentityId) -> [f64; 3] {
        let tz = cosine(self.timezones.vector(a1), self.timezones.vector(a2)).unwrap_or(0.0);
        let text = cosine(&self.embeddings[a1 as usize], &self.embeddings[a2 as usize])
            .unwrap_or(0.0);
        [self.files.similarity(a1, a2), tz, text]
    }
}

/// Weights of the files, zone and text terms in commit matching.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub files: f64,
    pub timezone: f64,
    pub text: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            files: 1.0 / 3.0,
            timezone: 1.0 / 3.0,
            text: 1.0 / 3.0,
        }
    }
}

/// Ranks candidate authors for a single commit, best first.
///
/// Per candidate the score is `w_files * share + w_tz * zone + w_text * text`
/// where `share` is the fraction of the commit's file weight the candidate
/// touched, `zone` is the cosine between the commit's one-hot zone and the
/// candidate's zone vector, and `text` is the cosine between the embedded
/// commit message and the candidate's embedding. Ties go to the lower id.
pub fn commit_fingerprint_match(
    commit: &CommitRecord,
    candidates: &[IdentityId],
    fp: &Fingerprints,
    weights: MatchWeights,
) -> Vec<(IdentityId, f64)> {
    let zone_axis = fp.timezones.axis(&commit.tz);
    let msg_vec = fp.text_model.embed(&commit.msg);
    let mut ranked: Vec<(IdentityId, f64)> = candidates
        .iter()
        .map(|&id| {
            let share = fp.files.overlap_share(&commit.files, id);
            let zone = match zone_axis {
                Some(t) => {
                    let v = fp.timezones.vector(id);
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        0.0
                    } else {
                        v[t] / norm
                    }
                }
                None => 0.0,
            };
            let text = cosine(&msg_vec, &fp.embeddings[id as usize]).unwrap_or(0.0);
            (
                id,
                weights.files * share + weights.timezone * zone + weights.text * text,
            )
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.dedup_by_key(|r| r.0);
    ranked
}

/// Header line of a fingerprint store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub format: String,
    pub backend: String,
    pub d: usize,
    pub seed: u64,
    pub zones: Vec<String>,
    pub files: Vec<String>,
    pub n_docs: usize,
    /// Document frequency per token, so the text model can be rebuilt.
    pub df: BTreeMap<String, u32>,
}

/// One author line of a fingerprint store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub id: IdentityId,
    pub files: Vec<u32>,
    /// Sparse `(zone index, value)` pairs.
    pub tz: Vec<(usize, f64)>,
    pub emb: Vec<f64>,
}

pub const STORE_FORMAT: &str = "idforge-fingerprints/1";

/// Writes the NDJSON fingerprint store: a header line, then one line per
/// author in id order.
pub fn write_store<W: Write>(fp: &Fingerprints, mut out: W) -> Result<(), FingerprintError> {
    let header = StoreHeader {
        format: STORE_FORMAT.to_string(),
        backend: fp.text_model.backend().to_string(),
        d: fp.text_model.dimension(),
        seed: fp.text_model.seed(),
        zones: fp.timezones.axes.clone(),
        files: (0..fp.files.file_count() as u32)
            .map(|f| fp.files.file_name(f).to_string())
            .collect(),
        n_docs: 0,
        df: BTreeMap::new(),
    };
    let (n_docs, df) = fp.text_model.document_frequencies();
    let header = StoreHeader { n_docs, df, ..header };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (id, emb) in fp.embeddings.iter().enumerate() {
        let id = id as IdentityId;
        let rec = StoreRecord {
            id,
            files: fp.files.files_of(id).to_vec(),
            tz: fp
                .timezones
                .vector(id)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
            emb: emb.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

impl Fingerprints {
    /// Rebuilds fingerprints from a store; records must cover ids `0..n`.
    pub fn from_store(header: StoreHeader, records: Vec<StoreRecord>) -> Result<Self, FingerprintError> {
        if header.backend != HashProjection::BACKEND {
            return Err(FingerprintError::Store(format!("unknown backend {}", header.backend)));
        }
        let n = records.len();
        let mut author_files = vec![Vec::new(); n];
        let mut vectors = vec![vec![0.0; header.zones.len()]; n];
        let mut embeddings = vec![Vec::new(); n];
        for r in records {
            let i = r.id as usize;
            if i >= n || !embeddings[i].is_empty() {
                return Err(FingerprintError::Store(format!("ids are not dense at {}", r.id)));
            }
            for (z, v) in r.tz {
                *vectors[i]
                    .get_mut(z)
                    .ok_or_else(|| FingerprintError::Store(format!("author {i} references zone {z}")))? = v;
            }
            author_files[i] = r.files;
            embeddings[i] = r.emb;
        }
        Ok(Self {
            files: FileAuthorIndex::from_parts(header.files, author_files)?,
            timezones: TimezoneVectors {
                axes: header.zones,
                vectors,
            },
            embeddings,
            text_model: Box::new(HashProjection::from_parts(header.d, header.seed, header.n_docs, header.df)?),
        })
    }
}

/// Reads a fingerprint store back into its header and per-author records.
pub fn read_store<R: BufRead>(input: R) -> Result<(StoreHeader, Vec<StoreRecord>), FingerprintError> {
    let mut lines = input.lines();
    let header: StoreHeader = match lines.next() {
        Some(l) => serde_json::from_str(&l?)?,
        None => return Err(FingerprintError::Store("empty store".into())),
    };
    if header.format != STORE_FORMAT {
        return Err(FingerprintError::Store(format!("unsupported format {}", header.format)));
    }
    let mut recs = Vec::new();
    for l in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let r: StoreRecord = serde_json::from_str(&l)?;
        if r.emb.len() != header.d {
            return Err(FingerprintError::Store(format!(
                "author {} has embedding of length {}",
                r.id,
                r.emb.len()
            )));
        }
        recs.push(r);
    }
    Ok((header, recs))
}
