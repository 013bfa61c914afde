//! Candidate-pair generation (blocking) and per-pair feature assembly.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprints::Fingerprints;
use crate::ingest::{IdentityId, IdentityTable};
use crate::par;
use crate::stats::{frequency_similarity, Attribute, FrequencyTables, Stoplist};
use crate::strsim::{pair_levenshtein_features, pair_string_features, StringFeatureSet, Winkler};

#[derive(Debug, Error)]
pub enum PairError {
    #[error("all-pairs comparison of {n} identities exceeds the cap of {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("unknown identity id {0}")]
    UnknownId(IdentityId),
    #[error("unknown pair strategy `{0}` (expected all_pairs or blocked)")]
    UnknownStrategy(String),
    #[error("pair file: {0}")]
    Format(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Names of the 14 default features, in vector order.
pub const FEATURE_NAMES: [&str; 14] = [
    "jw_name",
    "jw_email",
    "jw_first",
    "jw_last",
    "jw_user",
    "jw_inverse_first",
    "f_name",
    "f_first",
    "f_last",
    "f_user",
    "f_email",
    "sim_files",
    "sim_tz",
    "sim_text",
];

/// Names of the optional Levenshtein extras, appended after the 14.
pub const LEVENSHTEIN_NAMES: [&str; 2] = ["lev_name", "lev_email"];

/// Frequency features in vector order.
const FREQ_ATTRS: [Attribute; 5] = [
    Attribute::Name,
    Attribute::FirstName,
    Attribute::LastName,
    Attribute::UserName,
    Attribute::Email,
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub winkler: Winkler,
    /// Append Levenshtein similarity of name and email (16 features).
    pub include_levenshtein: bool,
}

impl FeatureConfig {
    pub fn width(&self) -> usize {
        if self.include_levenshtein {
            16
        } else {
            14
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        if self.include_levenshtein {
            v.extend(LEVENSHTEIN_NAMES.iter().map(|s| s.to_string()));
        }
        v
    }
}

/// Feature vector of an identity pair, `id1 < id2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures {
    pub id1: IdentityId,
    pub id2: IdentityId,
    pub values: Vec<f64>,
}

impl PairFeatures {
    pub fn key(&self) -> (IdentityId, IdentityId) {
        (self.id1, self.id2)
    }

    pub fn strings(&self) -> StringFeatureSet {
        let v = &self.values;
        StringFeatureSet {
            jw_name: v[0],
            jw_email: v[1],
            jw_first: v[2],
            jw_last: v[3],
            jw_user: v[4],
            jw_inverse_first: v[5],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .chain(LEVENSHTEIN_NAMES.iter())
            .position(|n| *n == name)
            .and_then(|i| self.values.get(i).copied())
    }
}

/// Orders a pair so the lower id comes first.
pub fn ordered(a: IdentityId, b: IdentityId) -> (IdentityId, IdentityId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStrategy {
    AllPairs,
    Blocked,
}

impl FromStr for PairStrategy {
    type Err = PairError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_pairs" | "all-pairs" => Ok(Self::AllPairs),
            "blocked" => Ok(Self::Blocked),
            other => Err(PairError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockingConfig {
    /// Largest identity count accepted by `all_pairs`.
    pub all_pairs_cap: usize,
    /// Name 3-grams shared by more identities than this are not used as
    /// blocking keys.
    pub max_gram_block: usize,
}

impl Default for BlockingConfig {
    fn default() -> Self {
        Self {
            all_pairs_cap: 20_000,
            max_gram_block: 64,
        }
    }
}

fn name_grams(name: &str) -> HashSet<String> {
    let chars: Vec<char> = name
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric())
        .collect();
    if chars.len() < 3 {
        return if chars.is_empty() {
            HashSet::new()
        } else {
            HashSet::from([chars.iter().collect()])
        };
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

fn add_block(out: &mut HashSet<(IdentityId, IdentityId)>, members: &[IdentityId]) {
    for (i, &a) in members.iter().enumerate() {
        for &b in &members[i + 1..] {
            if a != b {
                out.insert(ordered(a, b));
            }
        }
    }
}

/// Candidate pairs, deduplicated, `id1 < id2`, sorted.
///
/// `AllPairs` enumerates every unordered pair. `Blocked` takes the union
/// of pairs that share a file, share a lower-cased email or user name, or
/// share a name 3-gram whose block is at most `max_gram_block` identities.
pub fn generate_candidate_pairs(
    table: &IdentityTable,
    files: &crate::fingerprints::FileAuthorIndex,
    strategy: PairStrategy,
    config: &BlockingConfig,
) -> Result<Vec<(IdentityId, IdentityId)>, PairError> {
    let n = table.len();
    match strategy {
        PairStrategy::AllPairs => {
            if n > config.all_pairs_cap {
                return Err(PairError::CapExceeded {
                    n,
                    cap: config.all_pairs_cap,
                });
            }
            let n = n as IdentityId;
            Ok((0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .collect())
        }
        PairStrategy::Blocked => {
            let mut out = HashSet::new();
            for fid in 0..files.file_count() as u32 {
                add_block(&mut out, files.authors_of(fid));
            }
            let mut keyed: HashMap<(u8, String), Vec<IdentityId>> = HashMap::new();
            for ident in table.iter() {
                if !ident.email.is_empty() {
                    keyed
                        .entry((0, ident.email.to_lowercase()))
                        .or_default()
                        .push(ident.id);
                }
                if !ident.user_name.is_empty() {
                    keyed
                        .entry((1, ident.user_name.to_lowercase()))
                        .or_default()
                        .push(ident.id);
                }
                for g in name_grams(&ident.name) {
                    keyed.entry((2, g)).or_default().push(ident.id);
                }
            }
            for ((kind, _), members) in &keyed {
                if *kind == 2 && members.len() > config.max_gram_block {
                    continue;
                }
                add_block(&mut out, members);
            }
            let mut v: Vec<_> = out.into_iter().collect();
            v.sort_unstable();
            Ok(v)
        }
    }
}

/// Read-only stores shared by feature assembly.
pub struct FeatureContext<'a> {
    pub identities: &'a IdentityTable,
    pub tables: &'a FrequencyTables,
    pub stoplist: &'a Stoplist,
    pub fingerprints: &'a Fingerprints,
    pub config: FeatureConfig,
}

impl FeatureContext<'_> {
    /// Computes the feature vector of one pair (ids in either order).
    pub fn assemble(&self, a: IdentityId, b: IdentityId) -> Result<PairFeatures, PairError> {
        let (id1, id2) = ordered(a, b);
        let i1 = self.identities.get(id1).ok_or(PairError::UnknownId(id1))?;
        let i2 = self.identities.get(id2).ok_or(PairError::UnknownId(id2))?;
        if id2 as usize >= self.fingerprints.embeddings.len() {
            return Err(PairError::UnknownId(id2));
        }
        let mut values = Vec::with_capacity(self.config.width());
        values.extend(pair_string_features(i1, i2, self.config.winkler).to_array());
        for attr in FREQ_ATTRS {
            values.push(frequency_similarity(i1, i2, attr, self.tables, self.stoplist));
        }
        values.extend(self.fingerprints.pair_similarities(id1, id2));
        if self.config.include_levenshtein {
            values.extend(pair_levenshtein_features(i1, i2));
        }
        Ok(PairFeatures { id1, id2, values })
    }

    /// Assembles every pair in parallel, preserving order.
    pub fn assemble_all(
        &self,
        pairs: &[(IdentityId, IdentityId)],
    ) -> Result<Vec<PairFeatures>, PairError> {
        par::map(pairs, |&(a, b)| self.assemble(a, b))
            .into_iter()
            .collect()
    }
}

/// Writes `id1,id2,<feature columns>`.
pub fn write_pairs_csv<W: Write>(
    pairs: &[PairFeatures],
    names: &[String],
    out: W,
) -> Result<(), PairError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id1".to_string(), "id2".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for p in pairs {
        if p.values.len() != names.len() {
            return Err(PairError::Format(format!(
                "pair ({}, {}) has {} values for {} columns",
                p.id1,
                p.id2,
                p.values.len(),
                names.len()
            )));
        }
        let mut rec = vec![p.id1.to_string(), p.id2.to_string()];
        rec.extend(p.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a pair-features CSV; returns the feature column names and rows.
pub fn read_pairs_csv<R: Read>(input: R) -> Result<(Vec<String>, Vec<PairFeatures>), PairError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < 2 || &header[0] != "id1" || &header[1] != "id2" {
        return Err(PairError::Format("header must start with id1,id2".into()));
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |what: &str| PairError::Format(format!("row {}: bad {what}", line + 2));
        let id1 = rec[0].parse().map_err(|_| parse_err("id1"))?;
        let id2 = rec[1].parse().map_err(|_| parse_err("id2"))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|_| parse_err("value")))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(PairFeatures { id1, id2, values });
    }
    Ok((names, rows))
}

/// Writes one JSON object per pair with named features.
pub fn write_pairs_ndjson<W: Write>(
    pairs: &[PairFeatures],
    names: &[String],
    mut out: W,
) -> Result<(), PairError> {
    for p in pairs {
        write!(out, "{{\"id1\":{},\"id2\":{}", p.id1, p.id2)?;
        for (n, v) in names.iter().zip(&p.values) {
            let key = serde_json::to_string(n).map_err(|e| PairError::Format(e.to_string()))?;
            write!(out, ",{key}:{}", serde_json::json!(v))?;
        }
        out.write_all(b"}\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprints::FileAuthorIndex;
    use crate::ingest::CommitRecord;

    fn commit(i: usize, author: &str, files: &[&str]) -> CommitRecord {
        CommitRecord {
            sha: format!("{i:040x}"),
            author: author.into(),
            ts: i as i64,
            tz: "+0000".into(),
            files: files.iter().map(|s| s.to_string()).collect(),
            msg: "update".into(),
        }
    }

    #[test]
    fn all_pairs_small() {
        let commits = vec![commit(0, "a <a>", &[]), commit(1, "b <b>", &[]), commit(2, "c <c>", &[])];
        let t = IdentityTable::from_commits(&commits);
        let idx = FileAuthorIndex::build(&commits, &t);
        let p = generate_candidate_pairs(&t, &idx, PairStrategy::AllPairs, &BlockingConfig::default())
            .unwrap();
        assert_eq!(p, vec![(0, 1), (0, 2), (1, 2)]);
        let cfg = BlockingConfig {
            all_pairs_cap: 2,
            ..Default::default()
        };
        assert!(matches!(
            generate_candidate_pairs(&t, &idx, PairStrategy::AllPairs, &cfg),
            Err(PairError::CapExceeded { n: 3, cap: 2 })
        ));
    }

    #[test]
    fn sixteen_thousand_identities_pair_count() {
        // 16,007 identities compared with themselves and every other one.
        let n: u64 = 16_007;
        assert_eq!(n * n, 256_224_049);
        assert_eq!(n * (n - 1) / 2, 128_104_021);
    }

    #[test]
    fn blocked_keys() {
        let commits = vec![
            commit(0, "Ann Lee <ann@x.org>", &["f"]),
            commit(1, "Bob Stone <bob@y.org>", &["f"]),
            commit(2, "Carl Park <ann@x.org>", &[]),
            commit(3, "Dora Vick <dora@z.org>", &[]),
            commit(4, "Dorothy Vickers <dv@q.org>", &[]),
            commit(5, "Zed Q <bob@other.org>", &[]),
        ];
        let t = IdentityTable::from_commits(&commits);
        let idx = FileAuthorIndex::build(&commits, &t);
        let p = generate_candidate_pairs(&t, &idx, PairStrategy::Blocked, &BlockingConfig::default())
            .unwrap();
        assert!(p.contains(&(0, 1)), "shared file");
        assert!(p.contains(&(0, 2)), "shared email");
        assert!(p.contains(&(1, 5)), "shared user name");
        assert!(p.contains(&(3, 4)), "shared name gram");
        assert!(!p.contains(&(2, 3)));
        let all = generate_candidate_pairs(&t, &idx, PairStrategy::AllPairs, &BlockingConfig::default())
            .unwrap();
        assert!(p.iter().all(|x| all.contains(x)));
        assert!(p.windows(2).all(|w| w[0] < w[1]));
    }

    fn context_corpus() -> (Vec<CommitRecord>, IdentityTable) {
        let commits = vec![
            commit(0, "Jason Koelker <jason@koelker.net>", &["nova/a.py"]),
            commit(1, "Jason Kölker <jason@koelker.net>", &["nova/a.py"]),
            commit(2, "Other Person <jason@koelker.net>", &["b.py"]),
            commit(3, "Third Person <jason@koelker.net>", &["c.py"]),
            commit(4, "Ann Lee <>", &["c.py"]),
        ];
        let t = IdentityTable::from_commits(&commits);
        (commits, t)
    }

    #[test]
    fn assemble_features() {
        let (commits, t) = context_corpus();
        let tables = FrequencyTables::build(t.as_slice());
        let stop = Stoplist::seed();
        let fp = Fingerprints::build(&commits, &t, 8, 5).unwrap();
        let ctx = FeatureContext {
            identities: &t,
            tables: &tables,
            stoplist: &stop,
            fingerprints: &fp,
            config: FeatureConfig::default(),
        };
        let f = ctx.assemble(1, 0).unwrap();
        assert_eq!((f.id1, f.id2), (0, 1));
        assert_eq!(f.values.len(), 14);
        assert_eq!(f.get("jw_email"), Some(1.0));
        // the email occurs four times in this corpus
        assert_eq!(f.get("f_email"), Some((1.0f64 / (4.0 * 4.0)).log10()));
        assert_eq!(f.get("sim_files"), Some(0.5));

        let self_pair = ctx.assemble(0, 0).unwrap();
        assert!(self_pair.strings().to_array()[..5].iter().all(|v| *v == 1.0));
        assert_eq!(self_pair.get("sim_tz"), Some(1.0));

        let empty = ctx.assemble(0, 4).unwrap();
        assert_eq!(empty.get("jw_email"), Some(-1.0));
        assert_eq!(empty.get("f_email"), Some(-10.0));

        assert!(matches!(ctx.assemble(0, 99), Err(PairError::UnknownId(99))));

        let batch = ctx.assemble_all(&[(0, 1), (3, 2)]).unwrap();
        assert_eq!(batch[0], f);
        assert_eq!(batch[1], ctx.assemble(2, 3).unwrap());

        let wide = FeatureContext {
            config: FeatureConfig {
                include_levenshtein: true,
                ..Default::default()
            },
            ..ctx
        };
        let f16 = wide.assemble(0, 1).unwrap();
        assert_eq!(f16.values.len(), 16);
        assert_eq!(f16.get("lev_email"), Some(1.0));
    }

    #[test]
    fn pair_files_round_trip() {
        let pairs = vec![PairFeatures {
            id1: 0,
            id2: 3,
            values: vec![0.1, -10.0, 1.0 / 3.0],
        }];
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut buf = Vec::new();
        write_pairs_csv(&pairs, &names, &mut buf).unwrap();
        let (n2, p2) = read_pairs_csv(&buf[..]).unwrap();
        assert_eq!(n2, names);
        assert_eq!(p2, pairs);
        let mut nd = Vec::new();
        write_pairs_ndjson(&pairs, &names, &mut nd).unwrap();
        assert!(String::from_utf8(nd).unwrap().starts_with(r#"{"id1":0,"id2":3,"a":0.1"#));
    }
}
