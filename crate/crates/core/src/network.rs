//! Author-file bipartite graph, collaboration projection, identity merging,
//! node-level measures and the raw-vs-corrected rank comparison.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CommitRecord, IdentityId, IdentityTable};
use crate::par;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("unknown measure `{0}`")]
    UnknownMeasure(String),
    #[error("unknown reduction `{0}`")]
    UnknownReduction(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Author-file touch graph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bipartite {
    /// Authors with at least one touched file, ascending.
    pub authors: Vec<IdentityId>,
    pub files: Vec<String>,
    /// Deduplicated `(author, file index)` edges, sorted.
    pub edges: Vec<(IdentityId, u32)>,
}

/// Edge `(a, f)` iff author `a` modified file `f` in some commit. Commits by
/// authors missing from `table` are skipped.
pub fn build_bipartite(commits: &[CommitRecord], table: &IdentityTable) -> Bipartite {
    let mut files: BTreeMap<&str, u32> = BTreeMap::new();
    for c in commits {
        for f in &c.files {
            let next = files.len() as u32;
            files.entry(f.as_str()).or_insert(next);
        }
    }
    // renumber files in lexicographic order
    let order: Vec<&str> = files.keys().copied().collect();
    let index: HashMap<&str, u32> = order.iter().enumerate().map(|(i, f)| (*f, i as u32)).collect();
    let mut edges: BTreeSet<(IdentityId, u32)> = BTreeSet::new();
    for c in commits {
        if let Some(a) = table.id_of(&c.author) {
            for f in &c.files {
                edges.insert((a, index[f.as_str()]));
            }
        }
    }
    let authors: BTreeSet<IdentityId> = edges.iter().map(|e| e.0).collect();
    Bipartite {
        authors: authors.into_iter().collect(),
        files: order.into_iter().map(str::to_string).collect(),
        edges: edges.into_iter().collect(),
    }
}

/// Simple undirected loop-free graph over labeled nodes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CollaborationGraph {
    nodes: Vec<u32>,
    adj: Vec<Vec<usize>>,
}

impl CollaborationGraph {
    /// Drops self-loops and duplicate edges; endpoints missing from `nodes`
    /// are added.
    pub fn from_edges(nodes: impl IntoIterator<Item = u32>, edges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let edges: Vec<(u32, u32)> = edges.into_iter().collect();
        let mut set: BTreeSet<u32> = nodes.into_iter().collect();
        for &(a, b) in &edges {
            set.insert(a);
            set.insert(b);
        }
        let nodes: Vec<u32> = set.into_iter().collect();
        let index: HashMap<u32, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut adj = vec![Vec::new(); nodes.len()];
        for (a, b) in edges {
            if a != b {
                let (i, j) = (index[&a], index[&b]);
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for l in &mut adj {
            l.sort_unstable();
            l.dedup();
        }
        Self { nodes, adj }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Node labels, ascending; measure vectors follow this order.
    pub fn nodes(&self) -> &[u32] {
        &self.nodes
    }

    pub fn index_of(&self, node: u32) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    /// Neighbor indices of the node at `i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }

    /// Edges as label pairs `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, l) in self.adj.iter().enumerate() {
            for &j in l {
                if i < j {
                    out.push((self.nodes[i], self.nodes[j]));
                }
            }
        }
        out
    }

    /// `node1,node2` edge list.
    pub fn write_edges_csv<W: Write>(&self, out: W) -> Result<(), NetworkError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node1", "node2"])?;
        for (a, b) in self.edges() {
            w.write_record([a.to_string(), b.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Authors are adjacent iff they share at least one file.
pub fn project_collaboration(b: &Bipartite) -> CollaborationGraph {
    let mut by_file: Vec<Vec<u32>> = vec![Vec::new(); b.files.len()];
    for &(a, f) in &b.edges {
        by_file[f as usize].push(a);
    }
    let per_file = par::map(&by_file, |authors| {
        let mut e = Vec::new();
        for (i, &x) in authors.iter().enumerate() {
            for &y in &authors[i + 1..] {
                e.push((x, y));
            }
        }
        e
    });
    CollaborationGraph::from_edges(b.authors.iter().copied(), per_file.into_iter().flatten())
}

/// Quotient graph under `map`; unmapped nodes keep their label.
pub fn merge_identities(g: &CollaborationGraph, map: &BTreeMap<u32, u32>) -> CollaborationGraph {
    let image = |n: u32| map.get(&n).copied().unwrap_or(n);
    CollaborationGraph::from_edges(
        g.nodes.iter().map(|&n| image(n)),
        g.edges().into_iter().map(|(a, b)| (image(a), image(b))),
    )
}

pub fn degree_centrality(g: &CollaborationGraph) -> Vec<f64> {
    g.adj.iter().map(|l| l.len() as f64).collect()
}

/// Local clustering coefficient; 0 when degree < 2.
pub fn clustering_coefficient(g: &CollaborationGraph) -> Vec<f64> {
    par::map_range(g.node_count(), |i| {
        let n = &g.adj[i];
        let k = n.len();
        if k < 2 {
            return 0.0;
        }
        let mut triangles = 0u64;
        for (a, &u) in n.iter().enumerate() {
            for &v in &n[a + 1..] {
                if g.has_edge(u, v) {
                    triangles += 1;
                }
            }
        }
        2.0 * triangles as f64 / (k as f64 * (k as f64 - 1.0))
    })
}

/// Burt's constraint with uniform tie strength `p_ij = 1/deg(i)`.
/// Isolated nodes get 0.
///
/// With uniform strengths `p_ij + Σ_q p_iq p_qj = a_ij / deg(i)` where
/// `a_ij = 1 + Σ_q 1/deg(q)` over common neighbors `q`, so the sum is
/// taken over `a_ij²` and divided once.
pub fn network_constraint(g: &CollaborationGraph) -> Vec<f64> {
    par::map_range(g.node_count(), |i| {
        let n = &g.adj[i];
        if n.is_empty() {
            return 0.0;
        }
        let total: f64 = n
            .iter()
            .map(|&j| {
                let a = 1.0
                    + n.iter()
                        .filter(|&&q| q != j && g.has_edge(q, j))
                        .map(|&q| 1.0 / g.adj[q].len() as f64)
                        .sum::<f64>();
                a * a
            })
            .sum();
        let d = n.len() as f64;
        total / (d * d)
    })
}

fn components(g: &CollaborationGraph) -> Vec<Vec<usize>> {
    let mut seen = vec![false; g.node_count()];
    let mut out = Vec::new();
    for s in 0..g.node_count() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut k = 0;
        while k < comp.len() {
            for &v in &g.adj[comp[k]] {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Principal eigenvector per connected component by power iteration on
/// `A + I`, each component unit-normalized, then the whole vector
/// unit-normalized. Isolated nodes get 0. Stops when
/// `||Av - λv|| <= tol * ||v||` with `λ` the Rayleigh quotient.
pub fn eigenvector_centrality(g: &CollaborationGraph, tol: f64, max_iter: usize) -> Result<Vec<f64>, NetworkError> {
    if g.node_count() == 0 {
        return Err(NetworkError::Empty);
    }
    let comps = components(g);
    let results = par::map(&comps, |comp| -> Result<Vec<(usize, f64)>, NetworkError> {
        if comp.len() == 1 {
            return Ok(vec![(comp[0], 0.0)]);
        }
        let local: HashMap<usize, usize> = comp.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let n = comp.len();
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut av = vec![0.0; n];
        let apply = |v: &[f64], out: &mut [f64]| {
            for (k, &i) in comp.iter().enumerate() {
                out[k] = g.adj[i].iter().map(|j| v[local[j]]).sum();
            }
        };
        for it in 0..=max_iter {
            apply(&v, &mut av);
            let lambda: f64 = v.iter().zip(&av).map(|(a, b)| a * b).sum();
            let residual = v
                .iter()
                .zip(&av)
                .map(|(x, y)| (y - lambda * x).powi(2))
                .sum::<f64>()
                .sqrt();
            if residual <= tol {
                return Ok(comp.iter().copied().zip(v).collect());
            }
            if it == max_iter {
                return Err(NetworkError::NonConvergence {
                    iterations: max_iter,
                    residual,
                });
            }
            // shifted step: (A + I) v
            for (x, y) in v.iter_mut().zip(&av) {
                *x += y;
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut v {
                *x /= norm;
            }
        }
        unreachable!()
    });
    let mut out = vec![0.0; g.node_count()];
    for r in results {
        for (i, x) in r? {
            out[i] = x;
        }
    }
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut out {
            *x /= norm;
        }
    }
    Ok(out)
}

/// Average ranks starting at 1; ties share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>, NetworkError> {
    if x.len() != y.len() {
        return Err(NetworkError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(NetworkError::Empty);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Spearman's rho with tie-aware average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<Option<f64>, NetworkError> {
    if x.len() != y.len() {
        return Err(NetworkError::LengthMismatch(x.len(), y.len()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Degree,
    Clustering,
    Constraint,
    Eigenvector,
}

impl Measure {
    pub const ALL: [Measure; 4] = [
        Measure::Degree,
        Measure::Clustering,
        Measure::Constraint,
        Measure::Eigenvector,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Degree => "degree",
            Measure::Clustering => "clustering",
            Measure::Constraint => "constraint",
            Measure::Eigenvector => "eigenvector",
        }
    }

    /// How raw-node values are carried onto their merged node.
    pub fn default_reduction(self) -> Reduction {
        match self {
            Measure::Degree => Reduction::Sum,
            _ => Reduction::Mean,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = NetworkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Measure::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| NetworkError::UnknownMeasure(s.into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

impl FromStr for Reduction {
    type Err = NetworkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            "max" => Ok(Reduction::Max),
            _ => Err(NetworkError::UnknownReduction(s.into())),
        }
    }
}

impl Reduction {
    fn apply(self, xs: &[f64]) -> f64 {
        match self {
            Reduction::Sum => xs.iter().sum(),
            Reduction::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
            Reduction::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

pub const EIGEN_TOL: f64 = 1e-10;
pub const EIGEN_MAX_ITER: usize = 10_000;
/// Rho below this marks a measure as disrupted.
pub const DISRUPTION_THRESHOLD: f64 = 0.95;

pub fn compute_measure(g: &CollaborationGraph, m: Measure) -> Result<Vec<f64>, NetworkError> {
    Ok(match m {
        Measure::Degree => degree_centrality(g),
        Measure::Clustering => clustering_coefficient(g),
        Measure::Constraint => network_constraint(g),
        Measure::Eigenvector => eigenvector_centrality(g, EIGEN_TOL, EIGEN_MAX_ITER)?,
    })
}

/// `node,degree,clustering,constraint,eigenvector`.
pub fn write_measures_csv<W: Write>(g: &CollaborationGraph, out: W) -> Result<(), NetworkError> {
    let cols: Vec<Vec<f64>> = Measure::ALL
        .iter()
        .map(|&m| compute_measure(g, m))
        .collect::<Result<_, _>>()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "degree", "clustering", "constraint", "eigenvector"])?;
    for (i, n) in g.nodes().iter().enumerate() {
        let mut row = vec![n.to_string()];
        row.extend(cols.iter().map(|c| c[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureImpact {
    pub measure: Measure,
    pub reduction: Reduction,
    /// `None` when a vector has zero variance.
    pub rho: Option<f64>,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub raw_nodes: usize,
    pub raw_edges: usize,
    pub corrected_nodes: usize,
    pub corrected_edges: usize,
    pub measures: Vec<MeasureImpact>,
}

impl ImpactReport {
    pub fn rho(&self, m: Measure) -> Option<f64> {
        self.measures.iter().find(|x| x.measure == m).and_then(|x| x.rho)
    }

    /// Bar data for external plotting: `measure,rho,flagged`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), NetworkError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["measure", "rho", "flagged"])?;
        for m in &self.measures {
            w.write_record([
                m.measure.as_str().to_string(),
                m.rho.map(|r| r.to_string()).unwrap_or_default(),
                m.flagged.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Compares the raw collaboration graph against the graph corrected by
/// `canonical` (raw identity to canonical identity). For each measure the
/// corrected vector is set against raw values reduced onto the canonical
/// node; rho below [`DISRUPTION_THRESHOLD`] is flagged.
pub fn impact_report(
    commits: &[CommitRecord],
    table: &IdentityTable,
    canonical: &BTreeMap<IdentityId, IdentityId>,
    measures: &[(Measure, Reduction)],
) -> Result<ImpactReport, NetworkError> {
    let raw = project_collaboration(&build_bipartite(commits, table));
    let corrected = merge_identities(&raw, canonical);
    let image = |n: u32| canonical.get(&n).copied().unwrap_or(n);
    let mut out = Vec::with_capacity(measures.len());
    for &(m, reduction) in measures {
        let rv = compute_measure(&raw, m)?;
        let cv = compute_measure(&corrected, m)?;
        let mut groups: Vec<Vec<f64>> = vec![Vec::new(); corrected.node_count()];
        for (i, &n) in raw.nodes().iter().enumerate() {
            let j = corrected.index_of(image(n)).expect("image is a corrected node");
            groups[j].push(rv[i]);
        }
        let reduced: Vec<f64> = groups.iter().map(|g| reduction.apply(g)).collect();
        let rho = if cv.is_empty() { None } else { spearman_rho(&reduced, &cv)? };
        out.push(MeasureImpact {
            measure: m,
            reduction,
            rho,
            flagged: rho.is_some_and(|r| r < DISRUPTION_THRESHOLD),
        });
    }
    Ok(ImpactReport {
        raw_nodes: raw.node_count(),
        raw_edges: raw.edge_count(),
        corrected_nodes: corrected.node_count(),
        corrected_edges: corrected.edge_count(),
        measures: out,
    })
}

pub fn default_measures() -> Vec<(Measure, Reduction)> {
    Measure::ALL.iter().map(|&m| (m, m.default_reduction())).collect()
}
