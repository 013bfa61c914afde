//! Pipeline configuration: one TOML file plus flag overrides.

use std::path::{Path, PathBuf};

use idforge_core::active::ActiveConfig;
use idforge_core::evaluate::ErrorRates;
use idforge_core::forest::Hyperparameters;
use idforge_core::network::{Measure, Reduction};
use idforge_core::pairgen::{BlockingConfig, FeatureConfig, PairStrategy};
use idforge_core::strsim::Winkler;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{usage, CliError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every stage derives its randomness from it.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub pairs: PairsConfig,
    pub embedding: EmbeddingConfig,
    pub forest: ForestConfig,
    pub active: ActiveSection,
    pub resolve: ResolveConfig,
    pub network: NetworkConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            pairs: PairsConfig::default(),
            embedding: EmbeddingConfig::default(),
            forest: ForestConfig::default(),
            active: ActiveSection::default(),
            resolve: ResolveConfig::default(),
            network: NetworkConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Store root; `--out` and `IDFORGE_STORE` take precedence.
    pub store: Option<PathBuf>,
    /// Commit stream read by `ingest`; defaults to `corpus.ndjson` in the store.
    pub corpus: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub golden: Option<PathBuf>,
    pub homonyms: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub stoplist: Option<PathBuf>,
    pub affiliations: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub developers: usize,
    pub project_size: usize,
    pub rates: ErrorRates,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            developers: 300,
            project_size: 10,
            rates: ErrorRates::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsConfig {
    pub strategy: String,
    pub all_pairs_cap: usize,
    pub max_gram_block: usize,
    pub include_levenshtein: bool,
    pub winkler_p: f64,
    pub winkler_l_max: usize,
}

impl Default for PairsConfig {
    fn default() -> Self {
        let b = BlockingConfig::default();
        let w = Winkler::default();
        Self {
            strategy: "blocked".into(),
            all_pairs_cap: b.all_pairs_cap,
            max_gram_block: b.max_gram_block,
            include_levenshtein: false,
            winkler_p: w.p,
            winkler_l_max: w.l_max,
        }
    }
}

impl PairsConfig {
    pub fn strategy(&self) -> Result<PairStrategy, CliError> {
        self.strategy.parse().map_err(|e| usage(format!("pairs.strategy: {e}")))
    }

    pub fn blocking(&self) -> BlockingConfig {
        BlockingConfig {
            all_pairs_cap: self.all_pairs_cap,
            max_gram_block: self.max_gram_block,
        }
    }

    pub fn features(&self) -> Result<FeatureConfig, CliError> {
        let winkler =
            Winkler::new(self.winkler_p, self.winkler_l_max).map_err(|e| usage(format!("pairs.winkler_p: {e}")))?;
        Ok(FeatureConfig {
            winkler,
            include_levenshtein: self.include_levenshtein,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub backend: String,
    pub d: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            backend: "tfidf-sign-projection".into(),
            d: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub features_per_split: Option<usize>,
    pub negative_sampling: Option<f64>,
    pub threshold: f64,
    pub folds: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        let h = Hyperparameters::default();
        Self {
            n_trees: h.n_trees,
            max_depth: h.max_depth,
            min_leaf: h.min_leaf,
            features_per_split: h.features_per_split,
            negative_sampling: h.negative_sampling,
            threshold: 0.5,
            folds: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveSection {
    pub m: usize,
    pub rounds: usize,
    pub max_per_round: Option<usize>,
    /// Share of each class drawn as seed labels when simulating.
    pub seed_fraction: f64,
    /// Model confidence at which a disagreeing label is suggested for review.
    pub suggestion_confidence: f64,
}

impl Default for ActiveSection {
    fn default() -> Self {
        Self {
            m: 3,
            rounds: 10,
            max_per_round: None,
            seed_fraction: 0.05,
            suggestion_confidence: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolveConfig {
    pub cluster_threshold: usize,
}

impl Default for ResolveConfig {
    fn default() -> Self {
        Self { cluster_threshold: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub measures: Vec<String>,
    pub degree_reduction: String,
    pub clustering_reduction: String,
    pub constraint_reduction: String,
    pub eigenvector_reduction: String,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            measures: Measure::ALL.iter().map(|m| m.as_str().to_string()).collect(),
            degree_reduction: "sum".into(),
            clustering_reduction: "mean".into(),
            constraint_reduction: "mean".into(),
            eigenvector_reduction: "mean".into(),
        }
    }
}

impl NetworkConfig {
    pub fn measures(&self) -> Result<Vec<(Measure, Reduction)>, CliError> {
        self.measures
            .iter()
            .map(|m| {
                let m: Measure = m.parse().map_err(|e| usage(format!("network.measures: {e}")))?;
                let r = match m {
                    Measure::Degree => &self.degree_reduction,
                    Measure::Clustering => &self.clustering_reduction,
                    Measure::Constraint => &self.constraint_reduction,
                    Measure::Eigenvector => &self.eigenvector_reduction,
                };
                let r: Reduction = r.parse().map_err(|e| usage(format!("network reduction: {e}")))?;
                Ok((m, r))
            })
            .collect()
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("malformed config {}: {e}", path.display())))
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            n_trees: self.forest.n_trees,
            max_depth: self.forest.max_depth,
            min_leaf: self.forest.min_leaf,
            features_per_split: self.forest.features_per_split,
            seed: self.seed,
            negative_sampling: self.forest.negative_sampling,
        }
    }

    pub fn active_config(&self) -> ActiveConfig {
        ActiveConfig {
            m: self.active.m,
            rounds: self.active.rounds,
            hyperparameters: self.hyperparameters(),
            max_per_round: self.active.max_per_round,
        }
    }

    /// SHA-256 of the canonical JSON form, after overrides.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub const DEFAULT_SEED: u64 = 7;

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
