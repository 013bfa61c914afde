//! Pairwise correctness metrics, partition comparison, rater agreement and
//! the synthetic error-injection corpus.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::ops::Add;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CommitRecord, IdentityId, IdentityTable};
use crate::resolve::Partition;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("partitions cover different identities ({0} vs {1})")]
    UniverseMismatch(usize, usize),
    #[error("no true pairs in the reference partition")]
    NoTruePairs,
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Confusion counts over unordered identity pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairConfusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl PairConfusion {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `None` when nothing was predicted positive.
    pub fn precision(&self) -> Option<f64> {
        (self.tp + self.fp > 0).then(|| self.tp as f64 / (self.tp + self.fp) as f64)
    }

    /// `None` when there are no true pairs.
    pub fn recall(&self) -> Option<f64> {
        (self.tp + self.fn_ > 0).then(|| self.tp as f64 / (self.tp + self.fn_) as f64)
    }

    pub fn f1(&self) -> Option<f64> {
        let d = 2 * self.tp + self.fp + self.fn_;
        (d > 0).then(|| 2.0 * self.tp as f64 / d as f64)
    }

    /// `(fn/(tp+fn), fp/(tp+fn))`.
    pub fn splitting_lumping(&self) -> Result<(f64, f64), EvalError> {
        let t = self.tp + self.fn_;
        if t == 0 {
            return Err(EvalError::NoTruePairs);
        }
        Ok((self.fn_ as f64 / t as f64, self.fp as f64 / t as f64))
    }
}

impl Add for PairConfusion {
    type Output = PairConfusion;
    fn add(self, o: Self) -> Self {
        PairConfusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn precision_recall(c: &PairConfusion) -> (Option<f64>, Option<f64>) {
    (c.precision(), c.recall())
}

pub fn splitting_lumping(c: &PairConfusion) -> Result<(f64, f64), EvalError> {
    c.splitting_lumping()
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Pair confusion from two cluster-label vectors over the same elements,
/// computed from the contingency table in linear time.
pub fn pair_confusion_labels(predicted: &[u32], golden: &[u32]) -> Result<PairConfusion, EvalError> {
    if predicted.len() != golden.len() {
        return Err(EvalError::UniverseMismatch(predicted.len(), golden.len()));
    }
    let mut joint: HashMap<(u32, u32), u64> = HashMap::new();
    let mut pc: HashMap<u32, u64> = HashMap::new();
    let mut gc: HashMap<u32, u64> = HashMap::new();
    for (&p, &g) in predicted.iter().zip(golden) {
        *joint.entry((p, g)).or_default() += 1;
        *pc.entry(p).or_default() += 1;
        *gc.entry(g).or_default() += 1;
    }
    let tp: u64 = joint.values().map(|&n| choose2(n)).sum();
    let pred_pairs: u64 = pc.values().map(|&n| choose2(n)).sum();
    let gold_pairs: u64 = gc.values().map(|&n| choose2(n)).sum();
    let fp = pred_pairs - tp;
    let fn_ = gold_pairs - tp;
    let tn = choose2(predicted.len() as u64) - tp - fp - fn_;
    Ok(PairConfusion { tp, fp, fn_, tn })
}

fn aligned_labels(a: &Partition, b: &Partition) -> Result<(Vec<u32>, Vec<u32>), EvalError> {
    let ua = a.universe();
    if ua.len() != b.universe_len() || ua.iter().any(|&id| !b.contains(id)) {
        return Err(EvalError::UniverseMismatch(ua.len(), b.universe_len()));
    }
    let la = ua.iter().map(|&id| a.cluster_of(id).expect("in universe")).collect();
    let lb = ua.iter().map(|&id| b.cluster_of(id).expect("checked")).collect();
    Ok((la, lb))
}

/// Classifies every unordered pair by co-membership in each partition.
pub fn pair_confusion(predicted: &Partition, golden: &Partition) -> Result<PairConfusion, EvalError> {
    let (p, g) = aligned_labels(predicted, golden)?;
    pair_confusion_labels(&p, &g)
}

/// Metrics of one partition against a reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub splitting: Option<f64>,
    pub lumping: Option<f64>,
    pub confusion: PairConfusion,
    pub entities_a: usize,
    pub entities_b: usize,
    pub samples: Vec<DisagreementSample>,
}

/// A pair placed together by exactly one side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisagreementSample {
    pub id1: IdentityId,
    pub id2: IdentityId,
    /// `"a"` or `"b"`: the side that joins the pair.
    pub joined_by: String,
}

fn disagreements(a: &Partition, b: &Partition, limit: usize) -> Vec<DisagreementSample> {
    let mut out = Vec::new();
    for (x, y, tag) in [(a, b, "a"), (b, a, "b")] {
        let mut n = 0;
        'outer: for c in x.clusters() {
            for (i, &u) in c.members.iter().enumerate() {
                for &v in &c.members[i + 1..] {
                    if n >= limit {
                        break 'outer;
                    }
                    if !y.same_cluster(u, v) {
                        out.push(DisagreementSample {
                            id1: u,
                            id2: v,
                            joined_by: tag.into(),
                        });
                        n += 1;
                    }
                }
            }
        }
    }
    out
}

/// Measures `a` against reference `b`, with up to `sample_limit`
/// disagreement pairs per side.
pub fn metrics_report(a: &Partition, b: &Partition, sample_limit: usize) -> Result<MetricsReport, EvalError> {
    let c = pair_confusion(a, b)?;
    let sl = c.splitting_lumping().ok();
    Ok(MetricsReport {
        precision: c.precision(),
        recall: c.recall(),
        splitting: sl.map(|x| x.0),
        lumping: sl.map(|x| x.1),
        confusion: c,
        entities_a: a.len(),
        entities_b: b.len(),
        samples: disagreements(a, b, sample_limit),
    })
}

/// Both directions of a partition comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a_against_b: MetricsReport,
    pub b_against_a: MetricsReport,
    /// Relative excess of distinct entities in `b` over `a`.
    pub extra_entities_b: f64,
}

pub fn compare_resolutions(a: &Partition, b: &Partition, sample_limit: usize) -> Result<ComparisonReport, EvalError> {
    Ok(ComparisonReport {
        a_against_b: metrics_report(a, b, sample_limit)?,
        b_against_a: metrics_report(b, a, sample_limit)?,
        extra_entities_b: entity_excess(a.len(), b.len()),
    })
}

/// `(b - a) / a`: 6,271 vs 8,840 entities gives about 0.41.
pub fn entity_excess(a: usize, b: usize) -> f64 {
    (b as f64 - a as f64) / a as f64
}

/// Percent agreement between two raters after thresholding at 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaterAgreement {
    pub shared: usize,
    pub agree: usize,
    pub disagree: usize,
    pub percent: Option<f64>,
}

/// `judgments` maps a pair to each rater's latest match value.
pub fn rater_agreement<K: Ord>(
    judgments: &BTreeMap<K, BTreeMap<String, f64>>,
    rater_a: &str,
    rater_b: &str,
) -> RaterAgreement {
    let (mut agree, mut disagree) = (0, 0);
    for by_rater in judgments.values() {
        if let (Some(x), Some(y)) = (by_rater.get(rater_a), by_rater.get(rater_b)) {
            if (*x >= 0.5) == (*y >= 0.5) {
                agree += 1;
            } else {
                disagree += 1;
            }
        }
    }
    let shared = agree + disagree;
    RaterAgreement {
        shared,
        agree,
        disagree,
        percent: (shared > 0).then(|| 100.0 * agree as f64 / shared as f64),
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Per-developer probability of each injected alias class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorRates {
    pub env_switch: f64,
    pub typo: f64,
    pub reorder: f64,
    pub org_alias: f64,
    pub template: f64,
    pub anonymous: f64,
    pub email_domain: f64,
}

impl Default for ErrorRates {
    fn default() -> Self {
        Self {
            env_switch: 0.3,
            typo: 0.3,
            reorder: 0.1,
            org_alias: 0.05,
            template: 0.05,
            anonymous: 0.05,
            email_domain: 0.0,
        }
    }
}

impl ErrorRates {
    pub fn zero() -> Self {
        Self {
            env_switch: 0.0,
            typo: 0.0,
            reorder: 0.0,
            org_alias: 0.0,
            template: 0.0,
            anonymous: 0.0,
            email_domain: 0.0,
        }
    }

    fn all(&self) -> [(&'static str, f64); 7] {
        [
            ("env_switch", self.env_switch),
            ("typo", self.typo),
            ("reorder", self.reorder),
            ("org_alias", self.org_alias),
            ("template", self.template),
            ("anonymous", self.anonymous),
            ("email_domain", self.email_domain),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpusSpec {
    pub developers: usize,
    pub rates: ErrorRates,
    pub seed: u64,
    /// Developers per project (shared file pool and company domain).
    pub project_size: usize,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            developers: 300,
            rates: ErrorRates::default(),
            seed: 7,
            project_size: 10,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        for (name, r) in self.rates.all() {
            if !(0.0..=1.0).contains(&r) {
                return Err(EvalError::Spec(format!("rate {name} = {r} outside [0, 1]")));
            }
        }
        if self.project_size == 0 {
            return Err(EvalError::Spec("project_size must be positive".into()));
        }
        if self.developers > FIRST_NAMES.len() * LAST_NAMES.len() {
            return Err(EvalError::Spec(format!(
                "at most {} developers",
                FIRST_NAMES.len() * LAST_NAMES.len()
            )));
        }
        Ok(())
    }
}

/// Ground truth for a synthetic corpus at the author-string level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GoldenTruth {
    /// Author string to developer index.
    pub developer_of: BTreeMap<String, u32>,
    /// Author strings shared by several developers.
    pub homonyms: BTreeMap<String, BTreeSet<u32>>,
}

impl GoldenTruth {
    pub fn is_homonym(&self, author: &str) -> bool {
        self.homonyms.contains_key(author)
    }

    /// Identities scored by pairwise metrics: everything except homonyms.
    pub fn scored_ids(&self, table: &IdentityTable) -> Vec<IdentityId> {
        table
            .iter()
            .filter(|a| !self.is_homonym(&a.author))
            .map(|a| a.id)
            .collect()
    }

    /// Golden partition over scored identities. Identities with no golden
    /// developer become singletons.
    pub fn partition(&self, table: &IdentityTable) -> Partition {
        let mut by_dev: BTreeMap<u32, Vec<IdentityId>> = BTreeMap::new();
        let mut loose = Vec::new();
        for id in self.scored_ids(table) {
            let author = &table.get(id).expect("scored id").author;
            match self.developer_of.get(author) {
                Some(&d) => by_dev.entry(d).or_default().push(id),
                None => loose.push(vec![id]),
            }
        }
        let mut groups: Vec<Vec<IdentityId>> = by_dev.into_values().collect();
        groups.extend(loose);
        Partition::from_groups(groups).expect("golden groups are disjoint")
    }

    /// True when both identities belong to the same developer.
    pub fn same_developer(&self, table: &IdentityTable, a: IdentityId, b: IdentityId) -> Option<bool> {
        let da = self.developer_of.get(&table.get(a)?.author)?;
        let db = self.developer_of.get(&table.get(b)?.author)?;
        Some(da == db)
    }

    /// `author,developer` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["author", "developer"])?;
        for (a, d) in &self.developer_of {
            w.write_record([a.as_str(), &d.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// `author,developers` rows, developers separated by `;`.
    pub fn write_homonyms_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["author", "developers"])?;
        for (a, ds) in &self.homonyms {
            let list: Vec<String> = ds.iter().map(u32::to_string).collect();
            w.write_record([a.as_str(), &list.join(";")])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read, H: Read>(golden: R, homonyms: Option<H>) -> Result<Self, EvalError> {
        let mut g = GoldenTruth::default();
        for rec in csv::Reader::from_reader(golden).records() {
            let rec = rec?;
            let d = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| EvalError::Format(format!("bad golden row {rec:?}")))?;
            g.developer_of.insert(rec[0].to_string(), d);
        }
        if let Some(h) = homonyms {
            for rec in csv::Reader::from_reader(h).records() {
                let rec = rec?;
                let ds = rec
                    .get(1)
                    .unwrap_or("")
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| EvalError::Format(format!("bad homonym row {rec:?}"))))
                    .collect::<Result<BTreeSet<u32>, _>>()?;
                g.homonyms.insert(rec[0].to_string(), ds);
            }
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub commits: Vec<CommitRecord>,
    pub golden: GoldenTruth,
}

const FIRST_NAMES: &[&str] = &[
    "James", "Mary", "Wei", "Priya", "Olga", "Carlos", "Fatima", "Hiroshi", "Anna", "David", "Elena",
    "Mohammed", "Sofia", "Ivan", "Li", "Chen", "Aisha", "Pierre", "Ingrid", "Rahul", "Yuki", "Marco",
    "Leila", "Thomas", "Nadia", "Kwame", "Sven", "Julia", "Andrei", "Mei", "Diego", "Hannah", "Omar",
    "Kenji", "Lucia", "Peter", "Tatyana", "Ahmed", "Greta", "Ravi", "Sara", "Jonas", "Chloe", "Bogdan",
    "Ming", "Rosa", "Felix", "Irina", "Arjun", "Paula", "Dmitri", "Noor", "Lars", "Amara", "Viktor",
    "Ines", "Hugo", "Zara", "Nikolai", "Clara",
];

const LAST_NAMES: &[&str] = &[
    "Smith", "Zhang", "Patel", "Ivanova", "Garcia", "Khan", "Tanaka", "Mueller", "Rossi", "Nguyen",
    "Kowalski", "Silva", "Petrov", "Wang", "Okafor", "Johansson", "Dubois", "Leontovich", "Sharma",
    "Yamamoto", "Fernandez", "Novak", "Haddad", "Lindqvist", "Moreau", "Kim", "Papadopoulos", "Chowdhury",
    "Santos", "Schmidt", "Ali", "Horvath", "Brown", "Takahashi", "Costa", "Volkov", "Mensah", "Berg",
    "Lopez", "Huang", "Andersen", "Romano", "Nakamura", "Gupta", "Sokolov", "Reyes", "Fischer", "Liu",
    "Adeyemi", "Eriksson", "Martin", "Kaur", "Popescu", "Ortiz", "Weber", "Sato", "Kovacs", "Jensen",
    "Rahman", "Holt", "Baker", "Dimitrov", "Suzuki", "Castro", "Meyer", "Wu", "Bianchi", "Nilsson",
    "Mendes", "Zhou", "Hughes", "Iqbal", "Lehmann", "Yilmaz", "Varga", "Ito", "Morales", "Keller",
    "Ruiz", "Xu",
];

const COMPANIES: &[&str] = &[
    "mirantis.com", "redhat.com", "ibm.com", "intel.com", "rackspace.com", "hp.com", "cisco.com",
    "suse.de", "canonical.com", "huawei.com", "vmware.com", "nec.co.jp",
];

const HOSTS: &[&str] = &["laptop", "devbox", "ubuntu-vm", "workstation", "mbp", "thinkpad"];

const ZONES: &[&str] = &[
    "-0800", "-0700", "-0500", "-0300", "+0000", "+0100", "+0200", "+0300", "+0530", "+0800", "+0900",
    "+1000",
];

const ORG_ALIASES: &[&str] = &[
    "root <root@localhost>",
    "OpenStack Jenkins <jenkins@review.openstack.org>",
    "admin <admin@example.org>",
    "build <build@ci.local>",
];

const WORDS: &[&str] = &[
    "fix", "add", "remove", "update", "refactor", "test", "tests", "bug", "typo", "docs", "config",
    "driver", "api", "client", "server", "network", "volume", "image", "scheduler", "quota", "auth",
    "token", "endpoint", "migration", "database", "schema", "cache", "logging", "error", "handling",
    "timeout", "retry", "cleanup", "deprecated", "option", "default", "parser", "unit", "functional",
    "gate", "job", "requirements", "bump", "version", "release", "notes", "policy", "rbac", "port",
    "subnet", "router", "floating", "ip", "instance", "flavor", "keypair", "snapshot", "backup",
    "restore", "resize", "rebuild", "console", "metadata", "agent", "plugin", "extension", "hook",
    "event", "notification", "rpc", "queue", "worker", "thread", "lock", "race", "deadlock", "leak",
    "memory", "performance", "benchmark", "profile", "trace", "debug", "warning", "pep8", "lint",
    "style", "hacking", "wrapper", "helper", "util", "common", "base", "model", "view", "controller",
    "template", "translation", "i18n", "locale", "encoding", "unicode", "python3", "compat", "six",
];

const DAY: i64 = 86_400;
const EPOCH_2011: i64 = 1_293_840_000;

struct Developer {
    first: String,
    last: String,
    email: String,
    company: usize,
    zone: &'static str,
    neighborhood: Vec<String>,
    vocab: Vec<&'static str>,
    start: i64,
    end: i64,
}

fn email_local(first: &str, last: &str, style: u32) -> String {
    let (f, l) = (first.to_lowercase(), last.to_lowercase());
    match style {
        0 => format!("{f}.{l}"),
        1 => format!("{}{l}", &f[..1]),
        2 => format!("{f}{l}"),
        _ => format!("{f}_{l}"),
    }
}

/// One or two random character edits on the letters of `s`.
fn typo(s: &str, rng: &mut ChaCha8Rng) -> String {
    loop {
        let t = typo_once(s, rng);
        if t != s {
            return t;
        }
    }
}

fn typo_once(s: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    let edits = rng.random_range(1..=2);
    for _ in 0..edits {
        let letters: Vec<usize> = (0..chars.len()).filter(|&i| chars[i].is_alphabetic()).collect();
        if letters.len() < 2 {
            break;
        }
        let i = *letters.choose(rng).expect("nonempty");
        let c = (b'a' + rng.random_range(0..26u8)) as char;
        match rng.random_range(0..4) {
            0 => chars[i] = c,
            1 => {
                chars.remove(i);
            }
            2 => chars.insert(i + 1, c),
            _ => {
                if i + 1 < chars.len() && chars[i + 1].is_alphabetic() {
                    chars.swap(i, i + 1);
                } else {
                    chars[i] = c;
                }
            }
        }
    }
    chars.into_iter().collect()
}

fn random_sha(rng: &mut ChaCha8Rng) -> String {
    format!("{:016x}{:016x}{:08x}", rng.next_u64(), rng.next_u64(), rng.next_u32())
}

fn make_commits(
    dev: &Developer,
    author: &str,
    n: usize,
    window: (i64, i64),
    rng: &mut ChaCha8Rng,
    out: &mut Vec<CommitRecord>,
) {
    for _ in 0..n {
        let n_files = rng.random_range(1..=3);
        let mut files: Vec<String> = dev
            .neighborhood
            .choose_multiple(rng, n_files)
            .cloned()
            .collect();
        files.sort();
        let tz = if rng.random_bool(0.9) {
            dev.zone
        } else {
            ZONES.choose(rng).expect("nonempty")
        };
        let n_words = rng.random_range(3..=7);
        let msg: Vec<&str> = (0..n_words)
            .map(|_| {
                if rng.random_bool(0.8) {
                    *dev.vocab.choose(rng).expect("nonempty")
                } else {
                    *WORDS.choose(rng).expect("nonempty")
                }
            })
            .collect();
        out.push(CommitRecord {
            sha: random_sha(rng),
            author: author.to_string(),
            ts: rng.random_range(window.0..=window.1),
            tz: tz.to_string(),
            files,
            msg: msg.join(" "),
        });
    }
}

/// Seed-deterministic corpus with injected synonym and homonym errors.
///
/// Each developer gets a base identity plus, per error class, one alias
/// with that class's probability. Org aliases are author strings shared
/// by at least two developers and land in the homonym registry.
pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus, EvalError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut name_pairs: Vec<(usize, usize)> = (0..FIRST_NAMES.len())
        .flat_map(|f| (0..LAST_NAMES.len()).map(move |l| (f, l)))
        .collect();
    name_pairs.shuffle(&mut rng);

    let n_projects = spec.developers.div_ceil(spec.project_size).max(1);
    let project_files: Vec<Vec<String>> = (0..n_projects)
        .map(|p| {
            (0..6)
                .flat_map(|m| (0..10).map(move |f| format!("project{p}/module{m}/file{f}.py")))
                .collect()
        })
        .collect();
    let project_company: Vec<usize> = (0..n_projects).map(|_| rng.random_range(0..COMPANIES.len())).collect();
    let project_words: Vec<Vec<&'static str>> = (0..n_projects)
        .map(|_| WORDS.choose_multiple(&mut rng, 12).copied().collect())
        .collect();

    let mut devs = Vec::with_capacity(spec.developers);
    for (d, &(fi, li)) in name_pairs.iter().take(spec.developers).enumerate() {
        let project = d % n_projects;
        let (first, last) = (FIRST_NAMES[fi].to_string(), LAST_NAMES[li].to_string());
        let company = if rng.random_bool(0.8) {
            project_company[project]
        } else {
            rng.random_range(0..COMPANIES.len())
        };
        let email = format!(
            "{}@{}",
            email_local(&first, &last, rng.random_range(0..4)),
            COMPANIES[company]
        );
        let module = rng.random_range(0..6);
        let files = &project_files[project];
        let mut neighborhood: Vec<String> = files[module * 10..module * 10 + 10].to_vec();
        neighborhood.extend(files.choose_multiple(&mut rng, 6).cloned());
        neighborhood.sort();
        neighborhood.dedup();
        let mut vocab: Vec<&'static str> = WORDS.choose_multiple(&mut rng, 10).copied().collect();
        vocab.extend(project_words[project].iter().copied());
        let start = EPOCH_2011 + rng.random_range(0..4 * 365) * DAY;
        let end = start + rng.random_range(180..3 * 365) * DAY;
        devs.push(Developer {
            first,
            last,
            email,
            company,
            zone: ZONES.choose(&mut rng).expect("nonempty"),
            neighborhood,
            vocab,
            start,
            end,
        });
    }

    let mut golden = GoldenTruth::default();
    let mut commits = Vec::new();
    let mut used: BTreeSet<String> = BTreeSet::new();

    for (d, dev) in devs.iter().enumerate() {
        let d32 = d as u32;
        let name = format!("{} {}", dev.first, dev.last);
        let base = format!("{name} <{}>", dev.email);
        used.insert(base.clone());
        golden.developer_of.insert(base.clone(), d32);
        let n = rng.random_range(15..=40);
        make_commits(dev, &base, n, (dev.start, dev.end), &mut rng, &mut commits);

        let local = dev.email.split('@').next().unwrap_or_default().to_string();
        let r = &spec.rates;
        let mut aliases: Vec<String> = Vec::new();
        if rng.random_bool(r.env_switch) {
            let f = dev.first.to_lowercase();
            let l = dev.last.to_lowercase();
            aliases.push(if rng.random_bool(0.5) {
                format!("{name} <{f}.{l}@{}.(none)>", HOSTS.choose(&mut rng).expect("nonempty"))
            } else {
                format!("{name} <{f}{l}{}@gmail.com>", rng.random_range(1..99))
            });
        }
        if rng.random_bool(r.typo) {
            aliases.push(if rng.random_bool(0.5) {
                format!("{} <{}>", typo(&name, &mut rng), dev.email)
            } else {
                let domain = &dev.email[local.len()..];
                format!("{name} <{}{domain}>", typo(&local, &mut rng))
            });
        }
        if rng.random_bool(r.reorder) {
            let email = if rng.random_bool(0.5) {
                dev.email.clone()
            } else {
                format!("{}@gmail.com", email_local(&dev.first, &dev.last, 2))
            };
            aliases.push(format!("{} {} <{email}>", dev.last, dev.first));
        }
        if rng.random_bool(r.template) {
            aliases.push(format!("Your Name <{}>", dev.email));
        }
        if rng.random_bool(r.anonymous) {
            aliases.push(if rng.random_bool(0.5) {
                format!("unknown <{}>", dev.email)
            } else {
                format!("{name} <>")
            });
        }
        if rng.random_bool(r.email_domain) {
            let other = (dev.company + 1 + rng.random_range(0..COMPANIES.len() - 1)) % COMPANIES.len();
            aliases.push(format!("{name} <{local}@{}>", COMPANIES[other]));
        }
        for alias in aliases {
            if !used.insert(alias.clone()) {
                continue;
            }
            golden.developer_of.insert(alias.clone(), d32);
            let a = dev.start + (dev.end - dev.start) / 3;
            let n = rng.random_range(4..=12);
            make_commits(dev, &alias, n, (a, dev.end), &mut rng, &mut commits);
        }
    }

    // org aliases: each used string ends up shared by at least two developers
    if spec.rates.org_alias > 0.0 && devs.len() >= 2 {
        let mut sharers: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
        for d in 0..devs.len() {
            if rng.random_bool(spec.rates.org_alias) {
                sharers
                    .entry(ORG_ALIASES.choose(&mut rng).expect("nonempty"))
                    .or_default()
                    .insert(d as u32);
            }
        }
        for set in sharers.values_mut() {
            while set.len() < 2 {
                set.insert(rng.random_range(0..devs.len()) as u32);
            }
        }
        for (alias, set) in sharers {
            for &d in &set {
                let dev = &devs[d as usize];
                let n = rng.random_range(2..=6);
                make_commits(dev, alias, n, (dev.start, dev.end), &mut rng, &mut commits);
            }
            golden.homonyms.insert(alias.to_string(), set);
        }
    }

    commits.sort_by(|a, b| a.ts.cmp(&b.ts).then_with(|| a.sha.cmp(&b.sha)));
    Ok(SyntheticCorpus { commits, golden })
}
