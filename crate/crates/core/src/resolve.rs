//! Transitive closure of predicted links into identity clusters, review of
//! oversized clusters, manual splits and the canonical identity map.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CommitRecord, IdentityId, IdentityTable};
use crate::stats::{Attribute, Stoplist};

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error("identity {0} is not in the universe")]
    UnknownId(IdentityId),
    #[error("identity {0} appears in more than one cluster")]
    Overlap(IdentityId),
    #[error("unknown cluster {0}")]
    UnknownCluster(u32),
    #[error("assignment for cluster {cluster} misses members {missing:?}")]
    IncompleteAssignment { cluster: u32, missing: Vec<IdentityId> },
    #[error("identity {id} is not a member of cluster {cluster}")]
    ForeignMember { cluster: u32, id: IdentityId },
    #[error("report threshold must be at least 2, got {0}")]
    Threshold(usize),
    #[error("canonical {canonical} is not a member of cluster {cluster}")]
    Canonical { cluster: u32, canonical: IdentityId },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Algorithmic,
    ManuallySplit,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Algorithmic => "algorithmic",
            Provenance::ManuallySplit => "manually-split",
        })
    }
}

impl std::str::FromStr for Provenance {
    type Err = ResolveError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "algorithmic" => Ok(Provenance::Algorithmic),
            "manually-split" => Ok(Provenance::ManuallySplit),
            other => Err(ResolveError::Format(format!("unknown provenance `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityCluster {
    pub id: u32,
    /// Sorted ascending.
    pub members: Vec<IdentityId>,
    pub canonical: IdentityId,
    pub provenance: Provenance,
}

impl IdentityCluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Disjoint, exhaustive clustering of an identity universe.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Partition {
    clusters: BTreeMap<u32, IdentityCluster>,
    cluster_of: HashMap<IdentityId, u32>,
    next_id: u32,
}

impl Partition {
    /// Builds a partition from member groups. Groups are numbered in order
    /// of their smallest member; the canonical defaults to that member.
    pub fn from_groups(groups: Vec<Vec<IdentityId>>) -> Result<Self, ResolveError> {
        let mut groups: Vec<Vec<IdentityId>> = groups
            .into_iter()
            .filter(|g| !g.is_empty())
            .map(|mut g| {
                g.sort_unstable();
                g.dedup();
                g
            })
            .collect();
        groups.sort_unstable_by_key(|g| g[0]);
        let mut p = Partition::default();
        for g in groups {
            p.insert(g, None, Provenance::Algorithmic)?;
        }
        Ok(p)
    }

    pub fn singletons(universe: impl IntoIterator<Item = IdentityId>) -> Self {
        let groups = universe.into_iter().map(|id| vec![id]).collect();
        Self::from_groups(groups).expect("distinct singletons")
    }

    fn insert(
        &mut self,
        members: Vec<IdentityId>,
        canonical: Option<IdentityId>,
        provenance: Provenance,
    ) -> Result<u32, ResolveError> {
        let id = self.next_id;
        for &m in &members {
            if self.cluster_of.insert(m, id).is_some() {
                return Err(ResolveError::Overlap(m));
            }
        }
        let canonical = canonical.unwrap_or(members[0]);
        self.clusters.insert(
            id,
            IdentityCluster {
                id,
                members,
                canonical,
                provenance,
            },
        );
        self.next_id += 1;
        Ok(id)
    }

    /// Number of clusters (distinct entities).
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Number of identities covered.
    pub fn universe_len(&self) -> usize {
        self.cluster_of.len()
    }

    /// Covered identities, ascending.
    pub fn universe(&self) -> Vec<IdentityId> {
        let mut u: Vec<IdentityId> = self.cluster_of.keys().copied().collect();
        u.sort_unstable();
        u
    }

    pub fn contains(&self, id: IdentityId) -> bool {
        self.cluster_of.contains_key(&id)
    }

    /// Clusters in id order.
    pub fn clusters(&self) -> impl Iterator<Item = &IdentityCluster> {
        self.clusters.values()
    }

    pub fn cluster(&self, id: u32) -> Option<&IdentityCluster> {
        self.clusters.get(&id)
    }

    pub fn cluster_of(&self, id: IdentityId) -> Option<u32> {
        self.cluster_of.get(&id).copied()
    }

    pub fn same_cluster(&self, a: IdentityId, b: IdentityId) -> bool {
        match (self.cluster_of(a), self.cluster_of(b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }

    /// Canonical identity of the cluster holding `id`.
    pub fn canonical_of(&self, id: IdentityId) -> Option<IdentityId> {
        self.cluster_of(id).map(|c| self.clusters[&c].canonical)
    }

    /// Member groups sorted, for order-insensitive comparison.
    pub fn groups(&self) -> BTreeSet<Vec<IdentityId>> {
        self.clusters.values().map(|c| c.members.clone()).collect()
    }

    /// Drops identities failing `keep`; empty clusters disappear and a
    /// dropped canonical is replaced by the smallest remaining member.
    pub fn restrict(&self, keep: impl Fn(IdentityId) -> bool) -> Partition {
        let mut p = Partition {
            next_id: self.next_id,
            ..Default::default()
        };
        for c in self.clusters.values() {
            let members: Vec<IdentityId> = c.members.iter().copied().filter(|&m| keep(m)).collect();
            if members.is_empty() {
                continue;
            }
            let canonical = if members.contains(&c.canonical) {
                c.canonical
            } else {
                members[0]
            };
            for &m in &members {
                p.cluster_of.insert(m, c.id);
            }
            p.clusters.insert(
                c.id,
                IdentityCluster {
                    id: c.id,
                    members,
                    canonical,
                    provenance: c.provenance,
                },
            );
        }
        p
    }

    pub fn set_canonical(&mut self, cluster: u32, canonical: IdentityId) -> Result<(), ResolveError> {
        let c = self
            .clusters
            .get_mut(&cluster)
            .ok_or(ResolveError::UnknownCluster(cluster))?;
        if c.members.binary_search(&canonical).is_err() {
            return Err(ResolveError::Canonical { cluster, canonical });
        }
        c.canonical = canonical;
        Ok(())
    }

    /// Replaces a cluster by one cluster per distinct tag. The subcluster
    /// holding the old canonical keeps the cluster id; the others get fresh
    /// ids in ascending tag order. Returns the resulting cluster ids.
    pub fn apply_split(
        &mut self,
        cluster: u32,
        assignment: &BTreeMap<IdentityId, u32>,
    ) -> Result<Vec<u32>, ResolveError> {
        let c = self
            .clusters
            .get(&cluster)
            .ok_or(ResolveError::UnknownCluster(cluster))?;
        if let Some((&id, _)) = assignment
            .iter()
            .find(|(id, _)| c.members.binary_search(id).is_err())
        {
            return Err(ResolveError::ForeignMember { cluster, id });
        }
        let missing: Vec<IdentityId> = c
            .members
            .iter()
            .copied()
            .filter(|m| !assignment.contains_key(m))
            .collect();
        if !missing.is_empty() {
            return Err(ResolveError::IncompleteAssignment { cluster, missing });
        }
        let c = self.clusters.remove(&cluster).expect("checked");
        let mut by_tag: BTreeMap<u32, Vec<IdentityId>> = BTreeMap::new();
        for &m in &c.members {
            by_tag.entry(assignment[&m]).or_default().push(m);
        }
        let keep_tag = assignment[&c.canonical];
        let mut ids = Vec::with_capacity(by_tag.len());
        for (tag, members) in by_tag {
            for &m in &members {
                self.cluster_of.remove(&m);
            }
            if tag == keep_tag {
                for &m in &members {
                    self.cluster_of.insert(m, cluster);
                }
                self.clusters.insert(
                    cluster,
                    IdentityCluster {
                        id: cluster,
                        members,
                        canonical: c.canonical,
                        provenance: Provenance::ManuallySplit,
                    },
                );
                ids.push(cluster);
            } else {
                ids.push(self.insert(members, None, Provenance::ManuallySplit)?);
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    /// Writes `cluster_id,identity_id,canonical_flag,provenance`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ResolveError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cluster_id", "identity_id", "canonical_flag", "provenance"])?;
        for c in self.clusters.values() {
            for &m in &c.members {
                w.write_record([
                    c.id.to_string(),
                    m.to_string(),
                    u8::from(m == c.canonical).to_string(),
                    c.provenance.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, ResolveError> {
        let mut r = csv::Reader::from_reader(input);
        let mut rows: BTreeMap<u32, (Vec<IdentityId>, Option<IdentityId>, Provenance)> = BTreeMap::new();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let bad = |what: &str| ResolveError::Format(format!("bad {what} in partition row {:?}", rec));
            let cid: u32 = field(0).parse().map_err(|_| bad("cluster_id"))?;
            let id: IdentityId = field(1).parse().map_err(|_| bad("identity_id"))?;
            let flag = match field(2) {
                "1" => true,
                "0" => false,
                _ => return Err(bad("canonical_flag")),
            };
            let prov: Provenance = field(3).parse()?;
            let e = rows.entry(cid).or_insert((Vec::new(), None, prov));
            e.0.push(id);
            if flag {
                if e.1.is_some() {
                    return Err(ResolveError::Format(format!("cluster {cid} has two canonicals")));
                }
                e.1 = Some(id);
            }
        }
        let mut p = Partition::default();
        for (cid, (mut members, canonical, provenance)) in rows {
            members.sort_unstable();
            let canonical = canonical
                .ok_or_else(|| ResolveError::Format(format!("cluster {cid} has no canonical")))?;
            for &m in &members {
                if p.cluster_of.insert(m, cid).is_some() {
                    return Err(ResolveError::Overlap(m));
                }
            }
            p.clusters.insert(
                cid,
                IdentityCluster {
                    id: cid,
                    members,
                    canonical,
                    provenance,
                },
            );
            p.next_id = p.next_id.max(cid + 1);
        }
        Ok(p)
    }
}

/// Disjoint-set forest over dense indices with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Closure {
    pub partition: Partition,
    /// Distinct unordered links between distinct identities.
    pub direct_links: u64,
    /// Co-clustered pairs that were not directly linked.
    pub closure_added: u64,
}

/// Connected components of the link graph over `universe`.
pub fn transitive_closure(
    links: &[(IdentityId, IdentityId)],
    universe: &[IdentityId],
) -> Result<Closure, ResolveError> {
    let mut ids: Vec<IdentityId> = universe.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let index: HashMap<IdentityId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut uf = UnionFind::new(ids.len());
    let mut distinct: BTreeSet<(IdentityId, IdentityId)> = BTreeSet::new();
    for &(a, b) in links {
        let ia = *index.get(&a).ok_or(ResolveError::UnknownId(a))?;
        let ib = *index.get(&b).ok_or(ResolveError::UnknownId(b))?;
        if a != b {
            distinct.insert((a.min(b), a.max(b)));
            uf.union(ia, ib);
        }
    }
    let mut comps: BTreeMap<usize, Vec<IdentityId>> = BTreeMap::new();
    for (i, &id) in ids.iter().enumerate() {
        comps.entry(uf.find(i)).or_default().push(id);
    }
    let co_clustered: u64 = comps
        .values()
        .map(|g| (g.len() as u64) * (g.len() as u64 - 1) / 2)
        .sum();
    let direct_links = distinct.len() as u64;
    Ok(Closure {
        partition: Partition::from_groups(comps.into_values().collect())?,
        direct_links,
        closure_added: co_clustered - direct_links,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberView {
    pub id: IdentityId,
    pub author: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster_id: u32,
    pub size: usize,
    pub canonical: IdentityId,
    pub provenance: Provenance,
    pub members: Vec<MemberView>,
    /// Every member carries a stoplisted name or user name.
    pub dissolve_suggested: bool,
}

/// Clusters with at least `threshold` members, largest first.
pub fn large_cluster_report(
    partition: &Partition,
    threshold: usize,
    table: &IdentityTable,
    stoplist: &Stoplist,
) -> Result<Vec<ClusterReport>, ResolveError> {
    if threshold < 2 {
        return Err(ResolveError::Threshold(threshold));
    }
    let mut out: Vec<ClusterReport> = partition
        .clusters()
        .filter(|c| c.len() >= threshold)
        .map(|c| {
            let members: Vec<MemberView> = c
                .members
                .iter()
                .map(|&id| MemberView {
                    id,
                    author: table.get(id).map(|a| a.author.clone()).unwrap_or_default(),
                })
                .collect();
            let dissolve_suggested = c.members.iter().all(|&id| {
                table.get(id).is_some_and(|a| {
                    stoplist.contains(Attribute::Name, &a.name.to_lowercase())
                        || stoplist.contains(Attribute::UserName, &a.user_name.to_lowercase())
                })
            });
            ClusterReport {
                cluster_id: c.id,
                size: c.len(),
                canonical: c.canonical,
                provenance: c.provenance,
                members,
                dissolve_suggested,
            }
        })
        .collect();
    out.sort_by(|a, b| b.size.cmp(&a.size).then(a.cluster_id.cmp(&b.cluster_id)));
    Ok(out)
}

/// One manual split, journaled so a resolution session can be replayed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub cluster_id: u32,
    pub assignments: BTreeMap<IdentityId, u32>,
}

pub fn append_split<W: Write>(mut out: W, record: &SplitRecord) -> Result<(), ResolveError> {
    serde_json::to_writer(&mut out, record)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_splits<R: Read>(input: R) -> Result<Vec<SplitRecord>, ResolveError> {
    let mut out = Vec::new();
    for line in BufReader::new(input).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn replay_splits(partition: &mut Partition, splits: &[SplitRecord]) -> Result<(), ResolveError> {
    for s in splits {
        partition.apply_split(s.cluster_id, &s.assignments)?;
    }
    Ok(())
}

/// Canonical for one cluster: the most recent human-chosen canonical among
/// the members if any, else most commits, then longest name, then lowest id.
///
/// `labeled` lists human-chosen canonicals oldest first.
pub fn elect_canonical(
    members: &[IdentityId],
    labeled: &[IdentityId],
    table: &IdentityTable,
    commits: &[u64],
) -> IdentityId {
    if let Some(&c) = labeled.iter().rev().find(|c| members.contains(c)) {
        return c;
    }
    let name_len = |id: IdentityId| table.get(id).map_or(0, |a| a.name.chars().count());
    let n_commits = |id: IdentityId| commits.get(id as usize).copied().unwrap_or(0);
    *members
        .iter()
        .min_by(|&&a, &&b| {
            n_commits(b)
                .cmp(&n_commits(a))
                .then(name_len(b).cmp(&name_len(a)))
                .then(a.cmp(&b))
        })
        .expect("cluster is nonempty")
}

/// Elects a canonical for every cluster.
pub fn elect_all(partition: &mut Partition, labeled: &[IdentityId], table: &IdentityTable, commits: &[u64]) {
    let choices: Vec<(u32, IdentityId)> = partition
        .clusters()
        .map(|c| (c.id, elect_canonical(&c.members, labeled, table, commits)))
        .collect();
    for (cid, canon) in choices {
        partition.set_canonical(cid, canon).expect("elected from members");
    }
}

/// Maps every author string in `table` to its cluster's canonical author
/// string. Identities outside the partition map to themselves.
pub fn export_identity_map(partition: &Partition, table: &IdentityTable) -> BTreeMap<String, String> {
    table
        .iter()
        .map(|a| {
            let canon = partition
                .canonical_of(a.id)
                .and_then(|c| table.get(c))
                .map_or_else(|| a.author.clone(), |c| c.author.clone());
            (a.author.clone(), canon)
        })
        .collect()
}

pub fn write_identity_map<W: Write>(map: &BTreeMap<String, String>, out: W) -> Result<(), ResolveError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["raw_author", "canonical_author"])?;
    for (k, v) in map {
        w.write_record([k, v])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_identity_map<R: Read>(input: R) -> Result<BTreeMap<String, String>, ResolveError> {
    let mut r = csv::Reader::from_reader(input);
    let mut map = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(ResolveError::Format(format!("identity map row has {} fields", rec.len())));
        }
        map.insert(rec[0].to_string(), rec[1].to_string());
    }
    Ok(map)
}

/// Rewrites author strings; unmapped authors are left alone.
pub fn apply_identity_map(commits: &mut [CommitRecord], map: &BTreeMap<String, String>) {
    for c in commits {
        if let Some(canon) = map.get(&c.author) {
            if *canon != c.author {
                c.author = canon.clone();
            }
        }
    }
}
