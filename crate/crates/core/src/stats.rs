//! Attribute frequency tables, the fictitious-string stoplist and the
//! frequency-similarity feature.
//!
//! Rare shared values are stronger identity evidence than common ones. For
//! an attribute with counts `f1` and `f2` the feature is
//! `log10(1 / (f1 * f2))`; a value that is empty or stoplisted on either
//! side yields the sentinel [`INVALID_FREQUENCY`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingest::AuthorIdentity;
use crate::par;

/// Score for pairs where either value carries no identity evidence.
pub const INVALID_FREQUENCY: f64 = -10.0;

/// The author attributes that get frequency tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Name,
    FirstName,
    LastName,
    UserName,
    Email,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::Name,
        Attribute::FirstName,
        Attribute::LastName,
        Attribute::UserName,
        Attribute::Email,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Name => "name",
            Attribute::FirstName => "first_name",
            Attribute::LastName => "last_name",
            Attribute::UserName => "user_name",
            Attribute::Email => "email",
        }
    }

    pub fn value(self, ident: &AuthorIdentity) -> &str {
        match self {
            Attribute::Name => &ident.name,
            Attribute::FirstName => &ident.first_name,
            Attribute::LastName => &ident.last_name,
            Attribute::UserName => &ident.user_name,
            Attribute::Email => &ident.email,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown attribute `{s}`"))
    }
}

/// Lower-cased value → count, one table per attribute, counted over
/// distinct identities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrequencyTables {
    tables: [HashMap<String, u32>; 5],
}

impl FrequencyTables {
    /// Count-then-merge over identity chunks.
    pub fn build(identities: &[AuthorIdentity]) -> Self {
        let partials = par::map_chunks(identities, 4096, |chunk| {
            let mut t = Self::default();
            for ident in chunk {
                t.add(ident);
            }
            t
        });
        partials.into_iter().fold(Self::default(), |mut acc, t| {
            acc.merge(t);
            acc
        })
    }

    fn add(&mut self, ident: &AuthorIdentity) {
        for attr in Attribute::ALL {
            let v = attr.value(ident);
            if !v.is_empty() {
                *self.tables[attr.index()].entry(v.to_lowercase()).or_insert(0) += 1;
            }
        }
    }

    fn merge(&mut self, other: Self) {
        for (mine, theirs) in self.tables.iter_mut().zip(other.tables) {
            for (k, v) in theirs {
                *mine.entry(k).or_insert(0) += v;
            }
        }
    }

    pub fn table(&self, attr: Attribute) -> &HashMap<String, u32> {
        &self.tables[attr.index()]
    }

    /// Count of a value (case-insensitive); 0 when absent.
    pub fn count(&self, attr: Attribute, value: &str) -> u32 {
        self.tables[attr.index()]
            .get(&value.to_lowercase())
            .copied()
            .unwrap_or(0)
    }

    /// The `n` most frequent values, count-descending, ties lexicographic.
    pub fn top(&self, attr: Attribute, n: usize) -> Vec<(String, u32)> {
        let mut v: Vec<(String, u32)> = self.tables[attr.index()]
            .iter()
            .map(|(k, c)| (k.clone(), *c))
            .collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.truncate(n);
        v
    }

    /// Writes one attribute table as `value,count`, in [`Self::top`] order.
    pub fn write_csv<W: Write>(&self, attr: Attribute, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["value", "count"])?;
        for (k, c) in self.top(attr, usize::MAX) {
            w.write_record([k, c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ranked top-`n` values for every attribute, for curating a stoplist.
pub fn top_frequent_strings(
    tables: &FrequencyTables,
    n: usize,
) -> Vec<(Attribute, Vec<(String, u32)>)> {
    Attribute::ALL
        .into_iter()
        .map(|a| (a, tables.top(a, n.max(1))))
        .collect()
}

/// Values commonly used as placeholder or shared author identifiers.
pub const SEED_STOPLIST: &[&str] = &[
    "unknown",
    "root",
    "nobody",
    "ubuntu",
    "admin",
    "administrator",
    "(no author)",
    "no author",
    "none",
    "none@none",
    "devnull@localhost",
    "you@example.com",
    "your name",
    "your.name@example.com",
    "user",
    "localhost",
    "jenkins",
    "build",
    "test",
    "anonymous",
    "github",
    "noreply",
    "openstack",
    "vagrant",
];

/// Strings judged fictitious. Global entries apply to every attribute;
/// scoped entries to one attribute.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stoplist {
    global: HashSet<String>,
    scoped: HashMap<Attribute, HashSet<String>>,
}

impl Stoplist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn seed() -> Self {
        let mut s = Self::new();
        for v in SEED_STOPLIST {
            s.insert(None, v);
        }
        s
    }

    pub fn insert(&mut self, attr: Option<Attribute>, value: &str) {
        let v = value.trim().to_lowercase();
        match attr {
            None => self.global.insert(v),
            Some(a) => self.scoped.entry(a).or_default().insert(v),
        };
    }

    /// Exact match on the lower-cased value.
    pub fn contains(&self, attr: Attribute, value: &str) -> bool {
        let v = value.to_lowercase();
        self.global.contains(&v) || self.scoped.get(&attr).is_some_and(|s| s.contains(&v))
    }

    pub fn len(&self) -> usize {
        self.global.len() + self.scoped.values().map(HashSet::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parses the stoplist text format: one value per line, `#` comments,
    /// optional `[attribute]` section headers (`[*]` returns to global).
    pub fn parse<R: BufRead>(input: R) -> Result<Self, String> {
        let mut s = Self::new();
        let mut section: Option<Attribute> = None;
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = match h.trim() {
                    "*" | "global" => None,
                    name => Some(
                        name.parse()
                            .map_err(|e| format!("line {}: {e}", i + 1))?,
                    ),
                };
                continue;
            }
            s.insert(section, line);
        }
        Ok(s)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# fictitious author strings, one lower-cased value per line")?;
        let mut g: Vec<_> = self.global.iter().collect();
        g.sort();
        for v in g {
            writeln!(out, "{v}")?;
        }
        let mut attrs: Vec<_> = self.scoped.keys().copied().collect();
        attrs.sort();
        for a in attrs {
            writeln!(out, "[{a}]")?;
            let mut vs: Vec<_> = self.scoped[&a].iter().collect();
            vs.sort();
            for v in vs {
                writeln!(out, "{v}")?;
            }
        }
        Ok(())
    }
}

/// `log10(1 / (f1 * f2))` for valid values, otherwise `-10`.
pub fn frequency_similarity(
    a1: &AuthorIdentity,
    a2: &AuthorIdentity,
    attr: Attribute,
    tables: &FrequencyTables,
    stop: &Stoplist,
) -> f64 {
    let (v1, v2) = (attr.value(a1), attr.value(a2));
    if v1.is_empty() || v2.is_empty() || stop.contains(attr, v1) || stop.contains(attr, v2) {
        return INVALID_FREQUENCY;
    }
    let f1 = tables.count(attr, v1).max(1) as f64;
    let f2 = tables.count(attr, v2).max(1) as f64;
    (1.0 / (f1 * f2)).log10()
}
