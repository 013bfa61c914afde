//! Commit stream parsing and author-string decomposition.
//!
//! Two input layouts are accepted:
//!
//! * NDJSON, one object per line with the fields `sha`, `author`, `ts`,
//!   `tz`, `files` and `msg`.
//! * A NUL-separated `git log` dump. Records are separated by the ASCII
//!   record separator `0x1e`; inside a record the fields are separated by
//!   NUL bytes in the order `sha`, `author`, `ts`, `tz`, `msg`, followed by
//!   zero or more file paths. It is produced by
//!
//!   ```text
//!   git log --no-renames --name-only -z --date=format:%z \
//!       --format='%x1e%H%x00%an <%ae>%x00%at%x00%ad%x00%B%x00'
//!   ```
//!
//!   Leading newlines on file paths are stripped and empty tokens skipped,
//!   so an empty `tz` or an empty file list are both accepted.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense identity key, assigned in first-seen order.
pub type IdentityId = u32;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("input is not valid UTF-8 (byte offset {offset})")]
    Encoding { offset: usize },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("identity table: {0}")]
    Table(String),
    #[error("unknown commit format `{0}` (expected ndjson or git-log)")]
    UnknownFormat(String),
}

/// A malformed record inside an otherwise readable stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordError {
    /// 1-based line number (NDJSON) or record number (git-log).
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: {}", self.line, self.reason)
    }
}

/// One commit as recorded by the version-control system.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub sha: String,
    /// Raw author string, byte-exact.
    pub author: String,
    /// Seconds since the epoch, UTC.
    pub ts: i64,
    /// Zone string as recorded; may be malformed.
    pub tz: String,
    pub files: Vec<String>,
    pub msg: String,
}

impl CommitRecord {
    /// Removes duplicate paths, keeping first occurrences.
    pub fn dedup_files(&mut self) {
        let mut seen = HashSet::with_capacity(self.files.len());
        self.files.retain(|f| seen.insert(f.clone()));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommitFormat {
    Ndjson,
    GitLog,
}

impl FromStr for CommitFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ndjson" => Ok(Self::Ndjson),
            "git-log" | "gitlog" => Ok(Self::GitLog),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

/// Result of parsing a commit stream: good records in input order plus the
/// per-record failures.
#[derive(Debug, Default)]
pub struct ParsedStream {
    pub commits: Vec<CommitRecord>,
    pub errors: Vec<RecordError>,
}

fn is_sha(s: &str) -> bool {
    s.len() == 40 && s.bytes().all(|b| b.is_ascii_hexdigit())
}

/// Parses a whole commit stream. Undecodable input fails the stream; a bad
/// record is reported in [`ParsedStream::errors`] and parsing continues.
pub fn parse_commit_stream<R: Read>(
    mut input: R,
    format: CommitFormat,
) -> Result<ParsedStream, IngestError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| IngestError::Encoding {
        offset: e.valid_up_to(),
    })?;
    let raw = match format {
        CommitFormat::Ndjson => parse_ndjson(text),
        CommitFormat::GitLog => parse_git_log(text),
    };

    let mut out = ParsedStream::default();
    let mut seen = HashSet::new();
    for (line, rec) in raw {
        match rec {
            Ok(mut c) => {
                if !is_sha(&c.sha) {
                    out.errors.push(RecordError {
                        line,
                        reason: format!("sha `{}` is not a 40-character hex id", c.sha),
                    });
                } else if !seen.insert(c.sha.clone()) {
                    out.errors.push(RecordError {
                        line,
                        reason: format!("duplicate sha {}", c.sha),
                    });
                } else {
                    c.dedup_files();
                    out.commits.push(c);
                }
            }
            Err(reason) => out.errors.push(RecordError { line, reason }),
        }
    }
    Ok(out)
}

fn parse_ndjson(text: &str) -> Vec<(usize, Result<CommitRecord, String>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            (
                i + 1,
                serde_json::from_str::<CommitRecord>(l).map_err(|e| e.to_string()),
            )
        })
        .collect()
}

fn parse_git_log(text: &str) -> Vec<(usize, Result<CommitRecord, String>)> {
    text.split('\u{1e}')
        .filter(|r| !r.trim_matches(|c| c == '\n' || c == '\0').is_empty())
        .enumerate()
        .map(|(i, rec)| (i + 1, parse_git_record(rec)))
        .collect()
}

fn parse_git_record(rec: &str) -> Result<CommitRecord, String> {
    let mut fields = rec.split('\0');
    let mut next = |name: &str| {
        fields
            .next()
            .map(str::to_string)
            .ok_or_else(|| format!("missing field `{name}`"))
    };
    let sha = next("sha")?.trim().to_string();
    let author = next("author")?;
    let ts_raw = next("ts")?;
    let ts = ts_raw
        .trim()
        .parse::<i64>()
        .map_err(|_| format!("invalid timestamp `{}`", ts_raw.trim()))?;
    let tz = next("tz")?.trim().to_string();
    let msg = next("msg")?.trim_end_matches('\n').to_string();
    let files = fields
        .map(|f| f.trim_start_matches('\n').trim_end_matches('\n'))
        .filter(|f| !f.is_empty())
        .map(str::to_string)
        .collect();
    Ok(CommitRecord {
        sha,
        author,
        ts,
        tz,
        files,
        msg,
    })
}

/// Writes commits as NDJSON, one object per line.
pub fn write_ndjson<W: Write>(commits: &[CommitRecord], mut out: W) -> std::io::Result<()> {
    for c in commits {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parsed fields of a raw author string.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorIdentity {
    pub id: IdentityId,
    pub author: String,
    pub name: String,
    pub email: String,
    pub first_name: String,
    pub last_name: String,
    pub user_name: String,
}

fn is_name_delimiter(c: char) -> bool {
    matches!(c, ' ' | '+' | '-' | '_' | ',' | '.') || c.is_whitespace()
}

/// Splits a name into tokens on the delimiter set and on lower-to-upper
/// camel-case boundaries. Digits never delimit.
fn name_tokens(name: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    let mut prev: Option<char> = None;
    for (i, c) in name.char_indices() {
        if is_name_delimiter(c) {
            if let Some(s) = start.take() {
                tokens.push(&name[s..i]);
            }
        } else {
            let camel = matches!(prev, Some(p) if p.is_lowercase()) && c.is_uppercase();
            match start {
                Some(s) if camel => {
                    tokens.push(&name[s..i]);
                    start = Some(i);
                }
                Some(_) => {}
                None => start = Some(i),
            }
        }
        prev = Some(c);
    }
    if let Some(s) = start {
        tokens.push(&name[s..]);
    }
    tokens
}

/// Decomposes `name <email>` into its fields. Total: missing pieces become
/// empty strings. The returned identity has `id` 0; tables assign real ids.
pub fn parse_author_string(author: &str) -> AuthorIdentity {
    let (name, email) = match author.find('<') {
        Some(lt) => {
            let rest = &author[lt + 1..];
            let email = match rest.find('>') {
                Some(gt) => &rest[..gt],
                None => rest,
            };
            (author[..lt].trim(), email.trim())
        }
        None => (author.trim(), ""),
    };
    let tokens = name_tokens(name);
    let (first_name, last_name) = match tokens.as_slice() {
        [] => (name, name),
        [only] if *only == name => (name, name),
        [first, .., last] => (*first, *last),
        [only] => (*only, *only),
    };
    let user_name = email.find('@').map(|at| &email[..at]).unwrap_or("");
    AuthorIdentity {
        id: 0,
        author: author.to_string(),
        name: name.to_string(),
        email: email.to_string(),
        first_name: first_name.to_string(),
        last_name: last_name.to_string(),
        user_name: user_name.to_string(),
    }
}

/// Commit activity of one identity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub commits: u32,
    pub first_ts: Option<i64>,
    pub last_ts: Option<i64>,
}

/// Bijection between raw author strings and dense ids.
#[derive(Clone, Debug, Default)]
pub struct IdentityTable {
    identities: Vec<AuthorIdentity>,
    by_author: HashMap<String, IdentityId>,
}

impl IdentityTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assigns ids in first-seen commit order.
    pub fn from_commits(commits: &[CommitRecord]) -> Self {
        let mut t = Self::new();
        for c in commits {
            t.intern(&c.author);
        }
        t
    }

    pub fn intern(&mut self, author: &str) -> IdentityId {
        if let Some(&id) = self.by_author.get(author) {
            return id;
        }
        let id = self.identities.len() as IdentityId;
        let mut ident = parse_author_string(author);
        ident.id = id;
        self.by_author.insert(author.to_string(), id);
        self.identities.push(ident);
        id
    }

    pub fn id_of(&self, author: &str) -> Option<IdentityId> {
        self.by_author.get(author).copied()
    }

    pub fn get(&self, id: IdentityId) -> Option<&AuthorIdentity> {
        self.identities.get(id as usize)
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AuthorIdentity> {
        self.identities.iter()
    }

    pub fn as_slice(&self) -> &[AuthorIdentity] {
        &self.identities
    }

    /// Maps every commit to its author's id. Unknown authors yield `None`.
    pub fn resolve_commits(&self, commits: &[CommitRecord]) -> Vec<Option<IdentityId>> {
        commits.iter().map(|c| self.id_of(&c.author)).collect()
    }

    /// Commit counts and first/last timestamps per identity.
    pub fn activity(&self, commits: &[CommitRecord]) -> Vec<Activity> {
        let mut out = vec![Activity::default(); self.len()];
        for c in commits {
            if let Some(id) = self.id_of(&c.author) {
                let a = &mut out[id as usize];
                a.commits += 1;
                a.first_ts = Some(a.first_ts.map_or(c.ts, |t| t.min(c.ts)));
                a.last_ts = Some(a.last_ts.map_or(c.ts, |t| t.max(c.ts)));
            }
        }
        out
    }

    /// Writes `id,author,name,email,first_name,last_name,user_name`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "id",
            "author",
            "name",
            "email",
            "first_name",
            "last_name",
            "user_name",
        ])?;
        for i in &self.identities {
            w.write_record([
                i.id.to_string().as_str(),
                &i.author,
                &i.name,
                &i.email,
                &i.first_name,
                &i.last_name,
                &i.user_name,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`IdentityTable::write_csv`]. Ids must be
    /// dense and in order.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, IngestError> {
        let mut r = csv::Reader::from_reader(input);
        let mut t = Self::new();
        for rec in r.deserialize::<AuthorIdentity>() {
            let ident = rec?;
            if ident.id as usize != t.identities.len() {
                return Err(IngestError::Table(format!(
                    "id {} out of sequence (expected {})",
                    ident.id,
                    t.identities.len()
                )));
            }
            if t.by_author.insert(ident.author.clone(), ident.id).is_some() {
                return Err(IngestError::Table(format!(
                    "duplicate author `{}`",
                    ident.author
                )));
            }
            t.identities.push(ident);
        }
        Ok(t)
    }
}
