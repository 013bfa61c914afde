//! Loading stage artifacts and building label queues.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use idforge_core::active::{
    self, enqueue_for_labeling, ActiveConfig, Candidate, DisplayContext, FoldEnsemble, LabelQueue, LabelStore,
    PairKey, RelabelSuggestion,
};
use idforge_core::evaluate::GoldenTruth;
use idforge_core::fingerprints::{self, Fingerprints};
use idforge_core::forest::{self, label_from_match, ForestModel};
use idforge_core::ingest::{self, Activity, CommitFormat, CommitRecord, IdentityId, IdentityTable};
use idforge_core::pairgen::{self, PairFeatures};
use idforge_core::stats::Stoplist;

use crate::config::PipelineConfig;
use crate::store::Store;

pub const CORPUS: &str = "corpus.ndjson";
pub const GOLDEN: &str = "golden.csv";
pub const HOMONYMS: &str = "homonyms.csv";
pub const COMMITS: &str = "commits.ndjson";
pub const IDENTITIES: &str = "identities.csv";
pub const STOPLIST: &str = "stoplist.txt";
pub const FINGERPRINTS: &str = "fingerprints.ndjson";
pub const PAIRS: &str = "pairs.csv";
pub const MODEL: &str = "model.json";
pub const PREDICTIONS: &str = "predictions.csv";
pub const LABELS: &str = "labels.ndjson";
pub const QUEUE: &str = "queue.json";
pub const PARTITION: &str = "partition.csv";
pub const SPLITS: &str = "splits.ndjson";

/// Commits and the identity table derived from them.
pub struct Corpus {
    pub commits: Vec<CommitRecord>,
    pub table: IdentityTable,
    pub activity: Vec<Activity>,
}

impl Corpus {
    pub fn commit_counts(&self) -> Vec<u64> {
        self.activity.iter().map(|a| u64::from(a.commits)).collect()
    }
}

pub fn load_corpus(store: &Store) -> Result<Corpus> {
    let cp = store.require(COMMITS, "ingest")?;
    let ip = store.require(IDENTITIES, "ingest")?;
    let parsed = ingest::parse_commit_stream(open(&cp)?, CommitFormat::Ndjson)
        .with_context(|| format!("reading {}", cp.display()))?;
    if let Some(e) = parsed.errors.first() {
        bail!("{}: {e}; re-run `idforge ingest`", cp.display());
    }
    let table = IdentityTable::read_csv(open(&ip)?).with_context(|| format!("reading {}", ip.display()))?;
    let activity = table.activity(&parsed.commits);
    Ok(Corpus {
        commits: parsed.commits,
        table,
        activity,
    })
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

/// `stoplist.txt` from the store, else the built-in seed list.
pub fn load_stoplist(store: &Store) -> Result<Stoplist> {
    let p = store.path(STOPLIST);
    if !p.is_file() {
        return Ok(Stoplist::seed());
    }
    Stoplist::parse(open(&p)?).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))
}

pub fn load_fingerprints(store: &Store) -> Result<Fingerprints> {
    let p = store.require(FINGERPRINTS, "fingerprints")?;
    let (header, records) = fingerprints::read_store(open(&p)?).with_context(|| format!("reading {}", p.display()))?;
    Fingerprints::from_store(header, records).with_context(|| format!("reading {}", p.display()))
}

/// Feature rows with a key index.
pub struct PairSet {
    pub names: Vec<String>,
    pub pairs: Vec<PairFeatures>,
    pub index: HashMap<PairKey, usize>,
}

impl PairSet {
    pub fn new(names: Vec<String>, pairs: Vec<PairFeatures>) -> Self {
        let index = pairs.iter().enumerate().map(|(i, p)| (p.key(), i)).collect();
        Self { names, pairs, index }
    }

    pub fn get(&self, key: PairKey) -> Option<&PairFeatures> {
        self.index.get(&key).map(|&i| &self.pairs[i])
    }
}

pub fn load_pairs(store: &Store) -> Result<PairSet> {
    let p = store.require(PAIRS, "pairs")?;
    let (names, pairs) = pairgen::read_pairs_csv(open(&p)?).with_context(|| format!("reading {}", p.display()))?;
    Ok(PairSet::new(names, pairs))
}

fn configured(store: &Store, configured: Option<&PathBuf>, default: &str) -> PathBuf {
    configured.cloned().unwrap_or_else(|| store.path(default))
}

pub fn labels_path(cfg: &PipelineConfig, store: &Store) -> PathBuf {
    configured(store, cfg.paths.labels.as_ref(), LABELS)
}

pub fn model_path(cfg: &PipelineConfig, store: &Store) -> PathBuf {
    configured(store, cfg.paths.model.as_ref(), MODEL)
}

pub fn load_model(cfg: &PipelineConfig, store: &Store) -> Result<ForestModel> {
    let p = model_path(cfg, store);
    if !p.is_file() {
        bail!("missing {}; run `idforge train` first", p.display());
    }
    ForestModel::read_json(open(&p)?).with_context(|| format!("reading {}", p.display()))
}

pub fn load_golden(cfg: &PipelineConfig, store: &Store) -> Result<GoldenTruth> {
    let gp = configured(store, cfg.paths.golden.as_ref(), GOLDEN);
    if !gp.is_file() {
        bail!("missing golden truth {}; run `idforge synth` or set paths.golden", gp.display());
    }
    let hp = configured(store, cfg.paths.homonyms.as_ref(), HOMONYMS);
    let h = if hp.is_file() { Some(open(&hp)?) } else { None };
    GoldenTruth::read_csv(open(&gp)?, h).with_context(|| format!("reading {}", gp.display()))
}

/// `author,affiliation` rows from `paths.affiliations`, keyed by identity.
pub fn load_affiliations(cfg: &PipelineConfig, table: &IdentityTable) -> Result<BTreeMap<IdentityId, String>> {
    let Some(p) = &cfg.paths.affiliations else {
        return Ok(BTreeMap::new());
    };
    let mut out = BTreeMap::new();
    let mut r = csv::Reader::from_reader(open(p)?);
    for rec in r.records() {
        let rec = rec.with_context(|| format!("reading {}", p.display()))?;
        if let (Some(a), Some(aff)) = (rec.get(0), rec.get(1)) {
            if let Some(id) = table.id_of(a) {
                out.insert(id, aff.to_string());
            }
        }
    }
    Ok(out)
}

/// Golden labels for every pair whose identities are both scored.
pub fn golden_labels(golden: &GoldenTruth, table: &IdentityTable, pairs: &PairSet) -> BTreeMap<PairKey, f64> {
    let scored = |id: IdentityId| table.get(id).is_some_and(|a| !golden.is_homonym(&a.author));
    pairs
        .pairs
        .iter()
        .filter(|p| scored(p.id1) && scored(p.id2))
        .filter_map(|p| {
            golden
                .same_developer(table, p.id1, p.id2)
                .map(|s| (p.key(), if s { 1.0 } else { 0.0 }))
        })
        .collect()
}

/// Rows and boolean labels for the labeled pairs present in `pairs`, plus
/// the count of labels whose pair is missing.
pub fn training_set<'a>(pairs: &'a PairSet, labels: &BTreeMap<PairKey, f64>) -> (Vec<&'a [f64]>, Vec<bool>, usize) {
    let mut rows = Vec::with_capacity(labels.len());
    let mut ls = Vec::with_capacity(labels.len());
    let mut missing = 0;
    for (k, &v) in labels {
        match pairs.get(*k) {
            Some(p) => {
                rows.push(p.values.as_slice());
                ls.push(label_from_match(v));
            }
            None => missing += 1,
        }
    }
    (rows, ls, missing)
}

pub struct QueueBuild {
    pub queue: LabelQueue,
    pub region_size: usize,
    pub model: ForestModel,
    pub suggestions: Vec<RelabelSuggestion>,
}

/// Trains fold classifiers on the journal's labels, scans the unlabeled
/// pairs and queues the confused ones. The queue carries the probabilities
/// of a model trained on every label.
pub fn build_queue(
    corpus: &Corpus,
    pairs: &PairSet,
    affiliations: &BTreeMap<IdentityId, String>,
    store: &LabelStore,
    cfg: &ActiveConfig,
    suggestion_confidence: f64,
) -> Result<QueueBuild> {
    let labels = store.values();
    let (rows, ls, _) = training_set(pairs, &labels);
    let ensemble = FoldEnsemble::train(&rows, &ls, &pairs.names, cfg.m, &cfg.hyperparameters)?;
    let model = forest::train_forest(&rows, &ls, &pairs.names, &cfg.hyperparameters)?;
    let unlabeled: Vec<&PairFeatures> = pairs.pairs.iter().filter(|p| !labels.contains_key(&p.key())).collect();
    let unlabeled_rows: Vec<&[f64]> = unlabeled.iter().map(|p| p.values.as_slice()).collect();
    let scan = active::scan(&ensemble, &unlabeled_rows)?;
    let region_rows: Vec<&[f64]> = scan.region.iter().map(|&i| unlabeled_rows[i]).collect();
    let preds = model.predict_all(&region_rows)?;
    let candidates: Vec<Candidate<'_>> = scan
        .region
        .iter()
        .zip(&preds)
        .map(|(&i, p)| Candidate {
            pair: unlabeled[i],
            votes: scan.votes[i].clone(),
            probability: p.probability,
        })
        .collect();
    let ctx = DisplayContext {
        table: &corpus.table,
        activity: &corpus.activity,
        affiliations,
        feature_names: &pairs.names,
    };
    let queue = enqueue_for_labeling(&candidates, &ctx)?;
    let suggestions = active::relabel_suggestions(store, &pairs.pairs, &model, suggestion_confidence)?;
    Ok(QueueBuild {
        region_size: scan.region.len(),
        queue,
        model,
        suggestions,
    })
}
