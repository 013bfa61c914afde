//! Disagreement-driven labeling.
//!
//! `m` forests are trained on disjoint stratified parts of the labeled
//! pairs. Unlabeled pairs on which their votes are not unanimous form the
//! confusion region, which is queued for a human (or an oracle) and fed
//! back as training data.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{self, label_from_match, ForestError, ForestModel, Hyperparameters};
use crate::ingest::{Activity, IdentityId, IdentityTable};
use crate::pairgen::{ordered, PairFeatures};
use crate::par;

#[derive(Debug, Error)]
pub enum ActiveError {
    #[error("need at least {needed} labeled pairs of each class, have {positives} positive and {negatives} negative")]
    InsufficientSeed {
        needed: usize,
        positives: usize,
        negatives: usize,
    },
    #[error("classifier count must be at least 2, got {0}")]
    ClassifierCount(usize),
    #[error("unknown pair {0}")]
    UnknownPair(String),
    #[error("match value {0} outside [0, 1]")]
    InvalidMatch(f64),
    #[error("identity {0} does not exist")]
    UnknownIdentity(IdentityId),
    #[error("malformed pair id `{0}`")]
    PairId(String),
    #[error("journal line {line}: {source}")]
    Journal { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type PairKey = (IdentityId, IdentityId);

/// `"id1-id2"` with `id1 < id2`.
pub fn pair_id(key: PairKey) -> String {
    let (a, b) = ordered(key.0, key.1);
    format!("{a}-{b}")
}

pub fn parse_pair_id(s: &str) -> Result<PairKey, ActiveError> {
    let bad = || ActiveError::PairId(s.to_string());
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    let a: IdentityId = a.parse().map_err(|_| bad())?;
    let b: IdentityId = b.parse().map_err(|_| bad())?;
    if a == b {
        return Err(bad());
    }
    Ok(ordered(a, b))
}

/// A pair is confused iff its votes are not unanimous.
pub fn is_confused(votes: &[bool]) -> bool {
    votes.iter().any(|&v| v != votes[0])
}

/// Forests trained on disjoint stratified parts of the labeled data.
#[derive(Clone, Debug)]
pub struct FoldEnsemble {
    pub models: Vec<ForestModel>,
}

impl FoldEnsemble {
    pub fn train(
        rows: &[&[f64]],
        labels: &[bool],
        feature_names: &[String],
        m: usize,
        hp: &Hyperparameters,
    ) -> Result<Self, ActiveError> {
        if m < 2 {
            return Err(ActiveError::ClassifierCount(m));
        }
        let positives = labels.iter().filter(|l| **l).count();
        let negatives = labels.len() - positives;
        if positives < m || negatives < m {
            return Err(ActiveError::InsufficientSeed {
                needed: m,
                positives,
                negatives,
            });
        }
        let part = forest::stratified_folds(labels, m, hp.seed)?;
        let mut models = Vec::with_capacity(m);
        for k in 0..m {
            let idx: Vec<usize> = (0..rows.len()).filter(|&i| part[i] == k).collect();
            let r: Vec<&[f64]> = idx.iter().map(|&i| rows[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            let hp_k = Hyperparameters {
                seed: hp.seed.wrapping_add(1000 + k as u64),
                ..hp.clone()
            };
            models.push(forest::train_forest(&r, &l, feature_names, &hp_k)?);
        }
        Ok(Self { models })
    }

    pub fn votes(&self, row: &[f64]) -> Result<Vec<bool>, ActiveError> {
        self.models
            .iter()
            .map(|m| Ok(m.predict(row)?.link))
            .collect()
    }

    pub fn mean_probability(&self, row: &[f64]) -> Result<f64, ActiveError> {
        let mut s = 0.0;
        for m in &self.models {
            s += m.probability(row)?;
        }
        Ok(s / self.models.len() as f64)
    }
}

/// Votes and mean probability for every scanned pair, plus the indices of
/// the confused ones.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionScan {
    pub votes: Vec<Vec<bool>>,
    pub probabilities: Vec<f64>,
    pub region: Vec<usize>,
}

pub fn scan(ensemble: &FoldEnsemble, pool: &[&[f64]]) -> Result<RegionScan, ActiveError> {
    let per = par::map(pool, |r| -> Result<(Vec<bool>, f64), ActiveError> {
        Ok((ensemble.votes(r)?, ensemble.mean_probability(r)?))
    });
    let mut votes = Vec::with_capacity(pool.len());
    let mut probabilities = Vec::with_capacity(pool.len());
    let mut region = Vec::new();
    for (i, p) in per.into_iter().enumerate() {
        let (v, prob) = p?;
        if is_confused(&v) {
            region.push(i);
        }
        votes.push(v);
        probabilities.push(prob);
    }
    Ok(RegionScan {
        votes,
        probabilities,
        region,
    })
}

/// Trains `m` fold classifiers on the labeled rows and scans the pool.
pub fn confusion_region(
    pool: &[&[f64]],
    labeled_rows: &[&[f64]],
    labels: &[bool],
    feature_names: &[String],
    m: usize,
    hp: &Hyperparameters,
) -> Result<RegionScan, ActiveError> {
    let e = FoldEnsemble::train(labeled_rows, labels, feature_names, m, hp)?;
    scan(&e, pool)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityView {
    pub id: IdentityId,
    pub author: String,
    pub name: String,
    pub email: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub affiliation: Option<String>,
    pub first_commit: Option<String>,
    pub last_commit: Option<String>,
}

fn iso_date(ts: Option<i64>) -> Option<String> {
    ts.and_then(|t| time::OffsetDateTime::from_unix_timestamp(t).ok())
        .map(|d| d.date().to_string())
}

/// What the queue shows about each identity.
pub struct DisplayContext<'a> {
    pub table: &'a IdentityTable,
    pub activity: &'a [Activity],
    pub affiliations: &'a BTreeMap<IdentityId, String>,
    pub feature_names: &'a [String],
}

impl DisplayContext<'_> {
    pub fn view(&self, id: IdentityId) -> Result<IdentityView, ActiveError> {
        let a = self.table.get(id).ok_or(ActiveError::UnknownIdentity(id))?;
        let act = self.activity.get(id as usize).copied().unwrap_or_default();
        Ok(IdentityView {
            id,
            author: a.author.clone(),
            name: a.name.clone(),
            email: a.email.clone(),
            affiliation: self.affiliations.get(&id).cloned(),
            first_commit: iso_date(act.first_ts),
            last_commit: iso_date(act.last_ts),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub pair_id: String,
    pub a1: IdentityView,
    pub a2: IdentityView,
    pub features: BTreeMap<String, f64>,
    pub votes: Vec<bool>,
    pub probability: f64,
}

impl QueueEntry {
    pub fn key(&self) -> PairKey {
        (self.a1.id, self.a2.id)
    }
}

/// Pairs awaiting judgment, most uncertain first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelQueue {
    pub entries: Vec<QueueEntry>,
}

impl LabelQueue {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: PairKey) -> bool {
        let key = ordered(key.0, key.1);
        self.entries.iter().any(|e| e.key() == key)
    }

    pub fn remove(&mut self, key: PairKey) -> bool {
        let key = ordered(key.0, key.1);
        let before = self.entries.len();
        self.entries.retain(|e| e.key() != key);
        before != self.entries.len()
    }

    pub fn head(&self, limit: usize) -> &[QueueEntry] {
        &self.entries[..limit.min(self.entries.len())]
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<(), serde_json::Error> {
        serde_json::to_writer(out, self)
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self, serde_json::Error> {
        serde_json::from_reader(input)
    }
}

/// One confused pair with its fold votes and current probability.
pub struct Candidate<'a> {
    pub pair: &'a PairFeatures,
    pub votes: Vec<bool>,
    pub probability: f64,
}

/// Orders candidates by `|p - 0.5|` ascending (ties by pair key) and drops
/// duplicates, keeping the first occurrence.
pub fn enqueue_for_labeling(candidates: &[Candidate<'_>], ctx: &DisplayContext<'_>) -> Result<LabelQueue, ActiveError> {
    let mut seen = HashSet::new();
    let mut picked: Vec<&Candidate<'_>> = candidates.iter().filter(|c| seen.insert(c.pair.key())).collect();
    picked.sort_by(|a, b| {
        (a.probability - 0.5)
            .abs()
            .total_cmp(&(b.probability - 0.5).abs())
            .then(a.pair.key().cmp(&b.pair.key()))
    });
    let mut entries = Vec::with_capacity(picked.len());
    for c in picked {
        let (a, b) = c.pair.key();
        entries.push(QueueEntry {
            pair_id: pair_id((a, b)),
            a1: ctx.view(a)?,
            a2: ctx.view(b)?,
            features: ctx
                .feature_names
                .iter()
                .cloned()
                .zip(c.pair.values.iter().copied())
                .collect(),
            votes: c.votes.clone(),
            probability: c.probability,
        });
    }
    Ok(LabelQueue { entries })
}

/// One journaled judgment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub seq: u64,
    pub id1: IdentityId,
    pub id2: IdentityId,
    #[serde(rename = "match")]
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical: Option<IdentityId>,
    pub rater: String,
}

/// Append-only label journal; the latest judgment per rater wins. A pair's
/// match value is the mean over raters' latest judgments.
#[derive(Debug, Default)]
pub struct LabelStore {
    journal: Vec<LabelRecord>,
    latest: BTreeMap<PairKey, BTreeMap<String, usize>>,
    identity_count: usize,
    path: Option<PathBuf>,
}

impl PartialEq for LabelStore {
    fn eq(&self, o: &Self) -> bool {
        self.journal == o.journal && self.identity_count == o.identity_count
    }
}

impl LabelStore {
    pub fn new(identity_count: usize) -> Self {
        Self {
            identity_count,
            ..Default::default()
        }
    }

    /// Replays a journal file if present; later records are appended to it.
    pub fn open(path: &Path, identity_count: usize) -> Result<Self, ActiveError> {
        let mut s = match File::open(path) {
            Ok(f) => Self::replay(f, identity_count)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Self::new(identity_count),
            Err(e) => return Err(e.into()),
        };
        s.path = Some(path.to_path_buf());
        Ok(s)
    }

    /// Rebuilds a store from NDJSON journal lines. A torn final line (from
    /// an interrupted write) is ignored.
    pub fn replay<R: Read>(input: R, identity_count: usize) -> Result<Self, ActiveError> {
        let mut s = Self::new(identity_count);
        let lines: Vec<String> = BufReader::new(input).lines().collect::<Result<_, _>>()?;
        let n = lines.len();
        for (i, line) in lines.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LabelRecord>(&line) {
                Ok(r) => s.apply(r),
                Err(_) if i + 1 == n => break,
                Err(source) => return Err(ActiveError::Journal { line: i + 1, source }),
            }
        }
        Ok(s)
    }

    fn apply(&mut self, r: LabelRecord) {
        let idx = self.journal.len();
        self.latest
            .entry((r.id1, r.id2))
            .or_default()
            .insert(r.rater.clone(), idx);
        self.journal.push(r);
    }

    fn check_id(&self, id: IdentityId) -> Result<(), ActiveError> {
        if (id as usize) < self.identity_count {
            Ok(())
        } else {
            Err(ActiveError::UnknownIdentity(id))
        }
    }

    /// Validates, journals (durably when file-backed) and applies a label.
    pub fn record(
        &mut self,
        key: PairKey,
        value: f64,
        canonical: Option<IdentityId>,
        rater: &str,
    ) -> Result<&LabelRecord, ActiveError> {
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(ActiveError::InvalidMatch(value));
        }
        let (a, b) = ordered(key.0, key.1);
        if a == b {
            return Err(ActiveError::PairId(pair_id((a, b))));
        }
        self.check_id(a)?;
        self.check_id(b)?;
        if let Some(c) = canonical {
            self.check_id(c)?;
        }
        let r = LabelRecord {
            seq: self.journal.len() as u64,
            id1: a,
            id2: b,
            value,
            canonical,
            rater: rater.to_string(),
        };
        if let Some(p) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(p)?;
            let mut line = serde_json::to_vec(&r).expect("label record serializes");
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        self.apply(r);
        Ok(self.journal.last().expect("just pushed"))
    }

    /// Number of labeled pairs.
    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.is_empty()
    }

    pub fn journal(&self) -> &[LabelRecord] {
        &self.journal
    }

    pub fn contains(&self, key: PairKey) -> bool {
        self.latest.contains_key(&ordered(key.0, key.1))
    }

    pub fn match_value(&self, key: PairKey) -> Option<f64> {
        let by = self.latest.get(&ordered(key.0, key.1))?;
        Some(by.values().map(|&i| self.journal[i].value).sum::<f64>() / by.len() as f64)
    }

    pub fn label(&self, key: PairKey) -> Option<bool> {
        self.match_value(key).map(label_from_match)
    }

    /// Current match value per pair.
    pub fn values(&self) -> BTreeMap<PairKey, f64> {
        self.latest
            .keys()
            .map(|&k| (k, self.match_value(k).expect("present")))
            .collect()
    }

    /// Latest value per pair and rater, for agreement reports.
    pub fn judgments(&self) -> BTreeMap<PairKey, BTreeMap<String, f64>> {
        self.latest
            .iter()
            .map(|(&k, by)| (k, by.iter().map(|(r, &i)| (r.clone(), self.journal[i].value)).collect()))
            .collect()
    }

    /// Human-chosen canonicals, oldest first.
    pub fn canonicals(&self) -> Vec<IdentityId> {
        self.journal.iter().filter_map(|r| r.canonical).collect()
    }

    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<(), ActiveError> {
        for r in &self.journal {
            serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// A labeled pair the current model confidently disagrees with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelabelSuggestion {
    pub pair_id: String,
    pub label: f64,
    pub probability: f64,
}

/// Labeled pairs where the model probability is at least `confidence` on
/// the side opposite the label. Most confident first.
pub fn relabel_suggestions(
    store: &LabelStore,
    pairs: &[PairFeatures],
    model: &ForestModel,
    confidence: f64,
) -> Result<Vec<RelabelSuggestion>, ActiveError> {
    let mut out = Vec::new();
    for p in pairs {
        let Some(label) = store.match_value(p.key()) else {
            continue;
        };
        let prob = model.probability(&p.values)?;
        let model_says = prob >= 0.5;
        let strength = if model_says { prob } else { 1.0 - prob };
        if model_says != label_from_match(label) && strength >= confidence {
            out.push(RelabelSuggestion {
                pair_id: pair_id(p.key()),
                label,
                probability: prob,
            });
        }
    }
    out.sort_by(|a, b| {
        (b.probability - 0.5)
            .abs()
            .total_cmp(&(a.probability - 0.5).abs())
            .then(a.pair_id.cmp(&b.pair_id))
    });
    Ok(out)
}

/// Stratified sample of `fraction` of each class, at least `min_per_class`
/// (or the whole class when smaller). Returned indices are sorted.
pub fn stratified_seed(labels: &[bool], fraction: f64, min_per_class: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = ((idx.len() as f64 * fraction).round() as usize)
            .max(min_per_class)
            .min(idx.len());
        out.extend_from_slice(&idx[..n]);
    }
    out.sort_unstable();
    out
}

/// Source of judgments for [`iterate`]. Returning `None` stops the loop.
pub trait Labeler {
    fn judge(&mut self, pair: &PairFeatures) -> Option<f64>;
}

impl<F: FnMut(&PairFeatures) -> Option<f64>> Labeler for F {
    fn judge(&mut self, pair: &PairFeatures) -> Option<f64> {
        self(pair)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveConfig {
    pub m: usize,
    pub rounds: usize,
    pub hyperparameters: Hyperparameters,
    /// Labels taken per round, most uncertain first; `None` takes the
    /// whole region.
    pub max_per_round: Option<usize>,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        Self {
            m: 3,
            rounds: 10,
            hyperparameters: Hyperparameters::default(),
            max_per_round: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub region_size: usize,
    pub labeled: usize,
    pub total_labels: usize,
}

#[derive(Clone, Debug)]
pub struct IterationOutcome {
    pub labels: BTreeMap<PairKey, f64>,
    pub model: ForestModel,
    pub rounds: Vec<RoundMetrics>,
    pub stopped_by_labeler: bool,
}

/// Confusion region, labeling and retraining until the region is empty,
/// `rounds` is reached, or the labeler stops. The final model is trained on
/// every label gathered.
pub fn iterate(
    pool: &[PairFeatures],
    seed_labels: &BTreeMap<PairKey, f64>,
    labeler: &mut dyn Labeler,
    feature_names: &[String],
    cfg: &ActiveConfig,
) -> Result<IterationOutcome, ActiveError> {
    let by_key: BTreeMap<PairKey, &PairFeatures> = pool.iter().map(|p| (p.key(), p)).collect();
    let mut labels = seed_labels.clone();
    let mut rounds = Vec::new();
    let mut stopped = false;

    let training = |labels: &BTreeMap<PairKey, f64>| -> Result<(Vec<&[f64]>, Vec<bool>), ActiveError> {
        let mut rows = Vec::with_capacity(labels.len());
        let mut ls = Vec::with_capacity(labels.len());
        for (k, &v) in labels {
            let p = by_key
                .get(k)
                .ok_or_else(|| ActiveError::UnknownPair(pair_id(*k)))?;
            rows.push(p.values.as_slice());
            ls.push(label_from_match(v));
        }
        Ok((rows, ls))
    };

    for round in 0..cfg.rounds {
        let (rows, ls) = training(&labels)?;
        let hp = Hyperparameters {
            seed: cfg.hyperparameters.seed.wrapping_add(round as u64 * 7919),
            ..cfg.hyperparameters.clone()
        };
        let ensemble = FoldEnsemble::train(&rows, &ls, feature_names, cfg.m, &hp)?;
        let unlabeled: Vec<&PairFeatures> = pool.iter().filter(|p| !labels.contains_key(&p.key())).collect();
        let unlabeled_rows: Vec<&[f64]> = unlabeled.iter().map(|p| p.values.as_slice()).collect();
        let s = scan(&ensemble, &unlabeled_rows)?;
        let mut region: Vec<usize> = s.region.clone();
        region.sort_by(|&a, &b| {
            (s.probabilities[a] - 0.5)
                .abs()
                .total_cmp(&(s.probabilities[b] - 0.5).abs())
                .then(unlabeled[a].key().cmp(&unlabeled[b].key()))
        });
        let region_size = region.len();
        let take = cfg.max_per_round.unwrap_or(region_size).min(region_size);
        let mut labeled = 0;
        for &i in &region[..take] {
            match labeler.judge(unlabeled[i]) {
                Some(v) => {
                    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                        return Err(ActiveError::InvalidMatch(v));
                    }
                    labels.insert(unlabeled[i].key(), v);
                    labeled += 1;
                }
                None => {
                    stopped = true;
                    break;
                }
            }
        }
        rounds.push(RoundMetrics {
            round,
            region_size,
            labeled,
            total_labels: labels.len(),
        });
        if region_size == 0 || stopped {
            break;
        }
    }

    let (rows, ls) = training(&labels)?;
    let model = forest::train_forest(&rows, &ls, feature_names, &cfg.hyperparameters)?;
    Ok(IterationOutcome {
        labels,
        model,
        rounds,
        stopped_by_labeler: stopped,
    })
}
