//! Developer identity resolution for version-control author records.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`ingest`] parses commit streams and splits author strings into fields.
//! - [`stats`] counts attribute frequencies and scores rare-vs-common values.
//! - [`strsim`] holds the Jaro, Jaro-Winkler and Levenshtein kernels.
//! - [`fingerprints`] builds the files, time-zone and commit-text signals.
//! - [`pairgen`] generates candidate pairs and assembles feature vectors.
//! - [`forest`] is the random-forest link predictor.
//! - [`active`] runs the disagreement-driven labeling loop.
//! - [`resolve`] closes links into clusters and exports the identity map.
//! - [`evaluate`] scores partitions and generates synthetic corpora.
//! - [`network`] measures how identity errors distort collaboration graphs.
//!
//! Data-parallel loops use rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise. Both paths
//! produce identical output.

pub mod active;
pub mod evaluate;
pub mod fingerprints;
pub mod forest;
pub mod ingest;
pub mod network;
pub mod pairgen;
pub mod par;
pub mod resolve;
pub mod stats;
pub mod strsim;

pub use ingest::{AuthorIdentity, CommitRecord, IdentityId, IdentityTable};
pub use pairgen::PairFeatures;
pub use resolve::Partition;
