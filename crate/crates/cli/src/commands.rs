use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use anyhow::{bail, Context, Result};
use idforge_core::active::{self, LabelStore, PairKey};
use idforge_core::evaluate::{self, SyntheticCorpusSpec};
use idforge_core::fingerprints::{self, Fingerprints};
use idforge_core::forest::{self, ForestModel};
use idforge_core::ingest::{self, CommitFormat, IdentityId, IdentityTable};
use idforge_core::network::{self, CollaborationGraph};
use idforge_core::pairgen::{self, FeatureContext, PairFeatures};
use idforge_core::resolve::{self, Partition};
use idforge_core::stats::{self, Attribute, FrequencyTables, Stoplist};
use serde::Serialize;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::usage;
use crate::session::{self, Corpus, PairSet};
use crate::store::{atomic_write, store_root, Store};
use crate::{
    ActiveArgs, Cli, Command, CrossvalArgs, EvaluateArgs, Format, ImpactArgs, IngestArgs, LabelSource, MapSource,
    PairsArgs, PredictArgs, ResolveArgs, StatsArgs, TrainArgs,
};

/// Runs one command: loads the config, applies flag overrides, opens the
/// store and dispatches.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    apply_overrides(&mut cfg, &cli.command);
    if cli.format == Some(Format::Ndjson) && !matches!(cli.command, Command::Pairs(_)) {
        return Err(usage("--format ndjson is only offered by `pairs`"));
    }
    let root = store_root(cli.out.as_deref(), cfg.paths.store.as_deref());
    let mut store = Store::open(root, cfg.hash(), cfg.seed)?;
    let fmt = cli.format.unwrap_or(Format::Csv);
    match &cli.command {
        Command::Synth(_) => synth(&cfg, &mut store)?,
        Command::Ingest(a) => ingest_cmd(&cfg, &mut store, a)?,
        Command::Stats(a) => stats_cmd(&mut store, a)?,
        Command::Fingerprints(_) => fingerprints_cmd(&cfg, &mut store)?,
        Command::Pairs(a) => pairs_cmd(&cfg, &mut store, a, fmt)?,
        Command::Train(a) => train(&cfg, &mut store, a)?,
        Command::Crossval(a) => crossval(&cfg, &mut store, a)?,
        Command::Active(a) => active_cmd(&cfg, &mut store, a)?,
        Command::Predict(a) => predict(&cfg, &mut store, a)?,
        Command::Resolve(a) => resolve_cmd(&cfg, &mut store, a)?,
        Command::Evaluate(a) => evaluate_cmd(&cfg, &mut store, a)?,
        Command::Impact(a) => impact(&cfg, &mut store, a)?,
        Command::Serve(a) => return crate::serve::run(cfg, store, a),
    }
    store.save_manifest()
}

fn apply_overrides(cfg: &mut PipelineConfig, cmd: &Command) {
    fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
        if let Some(v) = v {
            *dst = v.clone();
        }
    }
    match cmd {
        Command::Synth(a) => {
            let s = &mut cfg.synth;
            set(&mut s.developers, &a.developers);
            set(&mut s.project_size, &a.project_size);
            set(&mut s.rates.typo, &a.typo);
            set(&mut s.rates.env_switch, &a.env_switch);
            set(&mut s.rates.reorder, &a.reorder);
            set(&mut s.rates.org_alias, &a.org_alias);
            set(&mut s.rates.template, &a.template);
            set(&mut s.rates.anonymous, &a.anonymous);
            set(&mut s.rates.email_domain, &a.email_domain);
        }
        Command::Fingerprints(a) => set(&mut cfg.embedding.d, &a.dim),
        Command::Pairs(a) => {
            set(&mut cfg.pairs.strategy, &a.strategy);
            set(&mut cfg.pairs.all_pairs_cap, &a.cap);
            set(&mut cfg.pairs.max_gram_block, &a.max_gram_block);
            if a.levenshtein {
                cfg.pairs.include_levenshtein = true;
            }
        }
        Command::Train(a) => {
            set(&mut cfg.forest.n_trees, &a.trees);
            set(&mut cfg.forest.threshold, &a.threshold);
        }
        Command::Crossval(a) => {
            set(&mut cfg.forest.n_trees, &a.trees);
            set(&mut cfg.forest.threshold, &a.threshold);
            set(&mut cfg.forest.folds, &a.folds);
        }
        Command::Active(a) => {
            set(&mut cfg.active.rounds, &a.rounds);
            set(&mut cfg.active.m, &a.m);
            set(&mut cfg.forest.n_trees, &a.trees);
        }
        Command::Predict(a) => set(&mut cfg.forest.threshold, &a.threshold),
        Command::Resolve(a) => set(&mut cfg.resolve.cluster_threshold, &a.min_size),
        Command::Impact(a) if !a.measures.is_empty() => cfg.network.measures = a.measures.clone(),
        _ => {}
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(usage(format!("threshold {t} outside [0, 1]")));
    }
    Ok(())
}

fn synth(cfg: &PipelineConfig, store: &mut Store) -> Result<()> {
    let spec = SyntheticCorpusSpec {
        developers: cfg.synth.developers,
        rates: cfg.synth.rates.clone(),
        seed: cfg.seed,
        project_size: cfg.synth.project_size,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let c = evaluate::generate_synthetic_corpus(&spec)?;
    store.write_with(session::CORPUS, "synth", |b| Ok(ingest::write_ndjson(&c.commits, b)?))?;
    store.write_with(session::GOLDEN, "synth", |b| Ok(c.golden.write_csv(b)?))?;
    store.write_with(session::HOMONYMS, "synth", |b| Ok(c.golden.write_homonyms_csv(b)?))?;
    println!(
        "synth: {} developers, {} commits, {} author strings, {} homonyms -> {}",
        spec.developers,
        c.commits.len(),
        c.golden.developer_of.len() + c.golden.homonyms.len(),
        c.golden.homonyms.len(),
        store.root().display()
    );
    Ok(())
}

fn ingest_cmd(cfg: &PipelineConfig, store: &mut Store, a: &IngestArgs) -> Result<()> {
    let format: CommitFormat = a.input_format.parse().map_err(|e: ingest::IngestError| usage(e.to_string()))?;
    let input = a
        .input
        .clone()
        .or_else(|| cfg.paths.corpus.clone())
        .unwrap_or_else(|| store.path(session::CORPUS));
    if !input.is_file() {
        bail!("missing commit stream {}; pass --input or run `idforge synth`", input.display());
    }
    let parsed = ingest::parse_commit_stream(session::open(&input)?, format)
        .with_context(|| format!("reading {}", input.display()))?;
    let table = IdentityTable::from_commits(&parsed.commits);
    store.write_with(session::COMMITS, "ingest", |b| Ok(ingest::write_ndjson(&parsed.commits, b)?))?;
    store.write_with(session::IDENTITIES, "ingest", |b| Ok(table.write_csv(b)?))?;
    let errors: Vec<_> = parsed
        .errors
        .iter()
        .map(|e| json!({"line": e.line, "reason": e.reason}))
        .collect();
    store.write_json(
        "ingest_report.json",
        "ingest",
        &json!({
            "commits": parsed.commits.len(),
            "identities": table.len(),
            "rejected": parsed.errors.len(),
            "errors": errors,
        }),
    )?;
    for e in parsed.errors.iter().take(10) {
        eprintln!("warning: {e}");
    }
    println!(
        "ingest: {} commits, {} identities, {} rejected records",
        parsed.commits.len(),
        table.len(),
        parsed.errors.len()
    );
    Ok(())
}

fn stats_cmd(store: &mut Store, a: &StatsArgs) -> Result<()> {
    let corpus = session::load_corpus(store)?;
    let tables = FrequencyTables::build(corpus.table.as_slice());
    for attr in Attribute::ALL {
        let name = format!("freq_{}.csv", attr.as_str());
        store.write_with(&name, "stats", |b| Ok(tables.write_csv(attr, b)?))?;
    }
    let top: BTreeMap<&str, Vec<(String, u32)>> = stats::top_frequent_strings(&tables, a.top)
        .into_iter()
        .map(|(attr, v)| (attr.as_str(), v))
        .collect();
    store.write_json("top_frequent.json", "stats", &top)?;

    let mut text = Vec::new();
    Stoplist::seed().write(&mut text)?;
    if let Some(p) = &a.stoplist {
        text.extend_from_slice(b"[*]\n");
        text.extend(std::fs::read(p).with_context(|| format!("cannot read stoplist {}", p.display()))?);
        text.push(b'\n');
    }
    let stop = Stoplist::parse(text.as_slice()).map_err(|e| usage(format!("stoplist: {e}")))?;
    store.write_with(session::STOPLIST, "stats", |b| Ok(stop.write(b)?))?;
    println!("stats: {} identities, stoplist of {} entries", corpus.table.len(), stop.len());
    for (attr, vs) in &top {
        let shown: Vec<String> = vs.iter().take(3).map(|(v, n)| format!("{v:?}={n}")).collect();
        println!("  {attr}: {}", shown.join(", "));
    }
    Ok(())
}

fn fingerprints_cmd(cfg: &PipelineConfig, store: &mut Store) -> Result<()> {
    if cfg.embedding.backend != "tfidf-sign-projection" {
        return Err(usage(format!(
            "unknown embedding backend `{}` (available: tfidf-sign-projection)",
            cfg.embedding.backend
        )));
    }
    let corpus = session::load_corpus(store)?;
    let fp = Fingerprints::build(&corpus.commits, &corpus.table, cfg.embedding.d, cfg.seed)
        .map_err(|e| usage(e.to_string()))?;
    store.write_with(session::FINGERPRINTS, "fingerprints", |b| Ok(fingerprints::write_store(&fp, b)?))?;
    println!(
        "fingerprints: {} identities, {} files, d={}",
        corpus.table.len(),
        fp.files.file_count(),
        cfg.embedding.d
    );
    Ok(())
}

fn pairs_cmd(cfg: &PipelineConfig, store: &mut Store, _a: &PairsArgs, fmt: Format) -> Result<()> {
    let strategy = cfg.pairs.strategy()?;
    let features = cfg.pairs.features()?;
    let corpus = session::load_corpus(store)?;
    let stoplist = session::load_stoplist(store)?;
    let fp = session::load_fingerprints(store)?;
    let tables = FrequencyTables::build(corpus.table.as_slice());
    let keys = pairgen::generate_candidate_pairs(&corpus.table, &fp.files, strategy, &cfg.pairs.blocking())
        .map_err(|e| match e {
            pairgen::PairError::CapExceeded { .. } => {
                anyhow::anyhow!("{e}; use --strategy blocked or raise --cap")
            }
            e => e.into(),
        })?;
    let ctx = FeatureContext {
        identities: &corpus.table,
        tables: &tables,
        stoplist: &stoplist,
        fingerprints: &fp,
        config: features,
    };
    let pairs = ctx.assemble_all(&keys)?;
    let names = features.names();
    store.write_with(session::PAIRS, "pairs", |b| Ok(pairgen::write_pairs_csv(&pairs, &names, b)?))?;
    if fmt == Format::Ndjson {
        store.write_with("pairs.ndjson", "pairs", |b| Ok(pairgen::write_pairs_ndjson(&pairs, &names, b)?))?;
    }
    println!(
        "pairs: {} candidate pairs over {} identities ({})",
        pairs.len(),
        corpus.table.len(),
        cfg.pairs.strategy
    );
    Ok(())
}

/// Labels keyed by pair, from the journal or from golden truth.
fn labels_for(
    cfg: &PipelineConfig,
    store: &Store,
    table: &IdentityTable,
    pairs: &PairSet,
    source: LabelSource,
) -> Result<BTreeMap<PairKey, f64>> {
    match source {
        LabelSource::Journal => {
            let p = session::labels_path(cfg, store);
            if !p.is_file() {
                bail!(
                    "no label journal at {}; label pairs through `idforge serve` or use --labels-from golden",
                    p.display()
                );
            }
            Ok(LabelStore::open(&p, table.len())?.values())
        }
        LabelSource::Golden => {
            let g = session::load_golden(cfg, store)?;
            Ok(session::golden_labels(&g, table, pairs))
        }
    }
}

fn write_model(cfg: &PipelineConfig, store: &mut Store, name: &str, model: &ForestModel, command: &str) -> Result<()> {
    if name == session::MODEL {
        if let Some(p) = &cfg.paths.model {
            let mut b = Vec::new();
            model.write_json(&mut b)?;
            return atomic_write(p, &b);
        }
    }
    store.write_with(name, command, |b| Ok(model.write_json(b)?))?;
    Ok(())
}

fn train(cfg: &PipelineConfig, store: &mut Store, a: &TrainArgs) -> Result<()> {
    check_threshold(cfg.forest.threshold)?;
    let corpus = session::load_corpus(store)?;
    let pairs = session::load_pairs(store)?;
    let labels = labels_for(cfg, store, &corpus.table, &pairs, a.labels_from)?;
    let (rows, ls, missing) = session::training_set(&pairs, &labels);
    if missing > 0 {
        eprintln!("warning: {missing} labeled pairs are not among the candidate pairs and were skipped");
    }
    let model = forest::train_forest(&rows, &ls, &pairs.names, &cfg.hyperparameters())?
        .with_threshold(cfg.forest.threshold);
    write_model(cfg, store, session::MODEL, &model, "train")?;
    let imp = model.feature_importance();
    store.write_with("importance.csv", "train", |b| {
        writeln!(b, "feature,importance")?;
        for (n, v) in &imp {
            writeln!(b, "{n},{v}")?;
        }
        Ok(())
    })?;
    let pos = ls.iter().filter(|l| **l).count();
    println!(
        "train: {} trees on {} labeled pairs ({} matches); top feature {}",
        model.trees.len(),
        ls.len(),
        pos,
        imp.first().map_or("-", |x| x.0.as_str())
    );
    Ok(())
}

fn write_predictions(
    store: &mut Store,
    command: &str,
    pairs: &[PairFeatures],
    probs: &[(f64, &str)],
    threshold: f64,
) -> Result<()> {
    store.write_with(session::PREDICTIONS, command, |b| {
        writeln!(b, "id1,id2,probability,link,source")?;
        for (p, (prob, src)) in pairs.iter().zip(probs) {
            writeln!(b, "{},{},{prob},{},{src}", p.id1, p.id2, *prob >= threshold)?;
        }
        Ok(())
    })?;
    Ok(())
}

fn crossval(cfg: &PipelineConfig, store: &mut Store, a: &CrossvalArgs) -> Result<()> {
    check_threshold(cfg.forest.threshold)?;
    let corpus = session::load_corpus(store)?;
    let pairs = session::load_pairs(store)?;
    let labels = labels_for(cfg, store, &corpus.table, &pairs, a.labels_from)?;
    let labeled: Vec<usize> = (0..pairs.pairs.len())
        .filter(|&i| labels.contains_key(&pairs.pairs[i].key()))
        .collect();
    let rows: Vec<&[f64]> = labeled.iter().map(|&i| pairs.pairs[i].values.as_slice()).collect();
    let ls: Vec<bool> = labeled
        .iter()
        .map(|&i| forest::label_from_match(labels[&pairs.pairs[i].key()]))
        .collect();
    let hp = cfg.hyperparameters();
    let cv = forest::cross_validate(&rows, &ls, &pairs.names, cfg.forest.folds, &hp, cfg.forest.threshold)?;

    let mut probs: Vec<(f64, &str)> = vec![(0.0, ""); pairs.pairs.len()];
    for (j, &i) in labeled.iter().enumerate() {
        probs[i] = (cv.probabilities[j], "oof");
    }
    if labeled.len() < pairs.pairs.len() {
        let model = forest::train_forest(&rows, &ls, &pairs.names, &hp)?;
        let is_labeled: BTreeSet<usize> = labeled.iter().copied().collect();
        let rest: Vec<usize> = (0..pairs.pairs.len()).filter(|i| !is_labeled.contains(i)).collect();
        let rest_rows: Vec<&[f64]> = rest.iter().map(|&i| pairs.pairs[i].values.as_slice()).collect();
        for (&i, p) in rest.iter().zip(model.predict_all(&rest_rows)?) {
            probs[i] = (p.probability, "model");
        }
    }
    write_predictions(store, "crossval", &pairs.pairs, &probs, cfg.forest.threshold)?;

    let sl = cv.aggregate.splitting_lumping().ok();
    store.write_json(
        "crossval.json",
        "crossval",
        &json!({
            "k": cfg.forest.folds,
            "labeled_pairs": ls.len(),
            "threshold": cfg.forest.threshold,
            "precision": cv.precision(),
            "recall": cv.recall(),
            "splitting": sl.map(|x| x.0),
            "lumping": sl.map(|x| x.1),
            "aggregate": cv.aggregate,
            "folds": cv.folds,
        }),
    )?;
    println!(
        "crossval: {}-fold over {} labeled pairs: precision={} recall={}",
        cfg.forest.folds,
        ls.len(),
        fmt_opt(cv.precision()),
        fmt_opt(cv.recall())
    );
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

#[derive(Serialize)]
struct SimulationReport {
    pool: usize,
    seed_labels: usize,
    labels_used: usize,
    label_share: f64,
    stopped_by_labeler: bool,
    rounds: Vec<active::RoundMetrics>,
}

fn active_cmd(cfg: &PipelineConfig, store: &mut Store, a: &ActiveArgs) -> Result<()> {
    let corpus = session::load_corpus(store)?;
    let pairs = session::load_pairs(store)?;
    let acfg = cfg.active_config();
    if a.oracle {
        let golden = session::load_golden(cfg, store)?;
        let truth = session::golden_labels(&golden, &corpus.table, &pairs);
        let pool: Vec<PairFeatures> = pairs
            .pairs
            .iter()
            .filter(|p| truth.contains_key(&p.key()))
            .cloned()
            .collect();
        let pool_labels: Vec<bool> = pool.iter().map(|p| truth[&p.key()] >= 0.5).collect();
        let seed_idx = active::stratified_seed(&pool_labels, cfg.active.seed_fraction, acfg.m, cfg.seed);
        let seed_labels: BTreeMap<PairKey, f64> = seed_idx.iter().map(|&i| (pool[i].key(), truth[&pool[i].key()])).collect();
        let mut oracle = |p: &PairFeatures| truth.get(&p.key()).copied();
        let out = active::iterate(&pool, &seed_labels, &mut oracle, &pairs.names, &acfg)?;

        let mut journal = LabelStore::new(corpus.table.len());
        for (&k, &v) in &out.labels {
            journal.record(k, v, None, "oracle")?;
        }
        store.write_with("active_labels.ndjson", "active", |b| Ok(journal.write_ndjson(b)?))?;
        write_model(cfg, store, "active_model.json", &out.model, "active")?;
        let report = SimulationReport {
            pool: pool.len(),
            seed_labels: seed_labels.len(),
            labels_used: out.labels.len(),
            label_share: out.labels.len() as f64 / pool.len().max(1) as f64,
            stopped_by_labeler: out.stopped_by_labeler,
            rounds: out.rounds,
        };
        store.write_json("active_rounds.json", "active", &report)?;
        let sizes: Vec<String> = report.rounds.iter().map(|r| r.region_size.to_string()).collect();
        println!(
            "active: {} of {} pairs labeled ({:.1}%); region sizes by round: {}",
            report.labels_used,
            report.pool,
            100.0 * report.label_share,
            sizes.join(" ")
        );
        return Ok(());
    }

    let labels = LabelStore::open(&session::labels_path(cfg, store), corpus.table.len())?;
    let affiliations = session::load_affiliations(cfg, &corpus.table)?;
    let built = session::build_queue(
        &corpus,
        &pairs,
        &affiliations,
        &labels,
        &acfg,
        cfg.active.suggestion_confidence,
    )
    .map_err(|e| match e.downcast_ref::<active::ActiveError>() {
        Some(active::ActiveError::InsufficientSeed { .. }) => {
            e.context("label more pairs of each class (POST /api/labels) or run `idforge active --oracle`")
        }
        _ => e,
    })?;
    store.write_with(session::QUEUE, "active", |b| Ok(built.queue.write_json(b)?))?;
    store.write_json("suggestions.json", "active", &built.suggestions)?;
    println!(
        "active: confusion region of {} pairs queued; {} relabel suggestions",
        built.region_size,
        built.suggestions.len()
    );
    Ok(())
}

fn predict(cfg: &PipelineConfig, store: &mut Store, _a: &PredictArgs) -> Result<()> {
    check_threshold(cfg.forest.threshold)?;
    let pairs = session::load_pairs(store)?;
    let model = session::load_model(cfg, store)?;
    if model.feature_names != pairs.names {
        bail!(
            "model features {:?} do not match pair features {:?}; retrain or regenerate pairs",
            model.feature_names,
            pairs.names
        );
    }
    let rows: Vec<&[f64]> = pairs.pairs.iter().map(|p| p.values.as_slice()).collect();
    let preds = model.predict_all(&rows)?;
    let probs: Vec<(f64, &str)> = preds.iter().map(|p| (p.probability, "model")).collect();
    write_predictions(store, "predict", &pairs.pairs, &probs, cfg.forest.threshold)?;
    let links = probs.iter().filter(|p| p.0 >= cfg.forest.threshold).count();
    println!("predict: {} pairs scored, {} links", probs.len(), links);
    Ok(())
}

/// Predicted links from `predictions.csv`.
fn read_links(store: &Store) -> Result<BTreeSet<PairKey>> {
    let p = store.require(session::PREDICTIONS, "predict` or `idforge crossval")?;
    let mut r = csv::Reader::from_reader(session::open(&p)?);
    let mut out = BTreeSet::new();
    for rec in r.records() {
        let rec = rec.with_context(|| format!("reading {}", p.display()))?;
        let bad = || anyhow::anyhow!("{}: malformed row {:?}", p.display(), rec);
        let a: IdentityId = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let b: IdentityId = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if rec.get(3) == Some("true") {
            out.insert(pairgen::ordered(a, b));
        }
    }
    Ok(out)
}

fn resolve_cmd(cfg: &PipelineConfig, store: &mut Store, _a: &ResolveArgs) -> Result<()> {
    if cfg.resolve.cluster_threshold < 2 {
        return Err(usage(format!(
            "cluster threshold must be at least 2, got {}",
            cfg.resolve.cluster_threshold
        )));
    }
    let corpus = session::load_corpus(store)?;
    let mut links = read_links(store)?;
    let lp = session::labels_path(cfg, store);
    let (canonicals, labels_applied) = if lp.is_file() {
        let labels = LabelStore::open(&lp, corpus.table.len())?;
        let values = labels.values();
        for (k, v) in &values {
            if forest::label_from_match(*v) {
                links.insert(*k);
            } else {
                links.remove(k);
            }
        }
        (labels.canonicals(), values.len())
    } else {
        (Vec::new(), 0)
    };
    let links: Vec<PairKey> = links.into_iter().collect();
    let universe: Vec<IdentityId> = (0..corpus.table.len() as IdentityId).collect();
    let closure = resolve::transitive_closure(&links, &universe)?;
    let mut partition = closure.partition;

    let (mut replayed, mut failed) = (0, 0);
    let sp = store.path(session::SPLITS);
    if sp.is_file() {
        for s in resolve::read_splits(session::open(&sp)?)? {
            match partition.apply_split(s.cluster_id, &s.assignments) {
                Ok(_) => replayed += 1,
                Err(e) => {
                    eprintln!("warning: journaled split of cluster {} no longer applies: {e}", s.cluster_id);
                    failed += 1;
                }
            }
        }
    }
    resolve::elect_all(&mut partition, &canonicals, &corpus.table, &corpus.commit_counts());

    let stoplist = session::load_stoplist(store)?;
    let report = resolve::large_cluster_report(&partition, cfg.resolve.cluster_threshold, &corpus.table, &stoplist)?;
    let map = resolve::export_identity_map(&partition, &corpus.table);
    store.write_with(session::PARTITION, "resolve", |b| Ok(partition.write_csv(b)?))?;
    store.write_with("identity_map.csv", "resolve", |b| Ok(resolve::write_identity_map(&map, b)?))?;
    store.write_json("clusters.json", "resolve", &report)?;
    store.write_json(
        "resolve_report.json",
        "resolve",
        &json!({
            "identities": corpus.table.len(),
            "entities": partition.len(),
            "direct_links": closure.direct_links,
            "closure_added": closure.closure_added,
            "labels_applied": labels_applied,
            "splits_replayed": replayed,
            "splits_failed": failed,
            "large_clusters": report.len(),
        }),
    )?;
    println!(
        "resolve: {} identities -> {} entities; {} links, {} pairs added by closure; {} clusters of size >= {}",
        corpus.table.len(),
        partition.len(),
        closure.direct_links,
        closure.closure_added,
        report.len(),
        cfg.resolve.cluster_threshold
    );
    Ok(())
}

fn read_partition(path: &std::path::Path) -> Result<Partition> {
    Partition::read_csv(session::open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn evaluate_cmd(cfg: &PipelineConfig, store: &mut Store, a: &EvaluateArgs) -> Result<()> {
    let predicted = read_partition(&store.require(session::PARTITION, "resolve")?)?;
    if let Some(other) = &a.against {
        let b = read_partition(other)?;
        let r = evaluate::compare_resolutions(&predicted, &b, a.samples)?;
        store.write_json("comparison.json", "evaluate", &r)?;
        println!(
            "evaluate: {} vs {} entities ({:+.1}%); precision={} recall={}",
            r.a_against_b.entities_a,
            r.a_against_b.entities_b,
            100.0 * r.extra_entities_b,
            fmt_opt(r.a_against_b.precision),
            fmt_opt(r.a_against_b.recall)
        );
        return Ok(());
    }
    let corpus = session::load_corpus(store)?;
    let golden = session::load_golden(cfg, store)?;
    let reference = golden.partition(&corpus.table);
    let scored: BTreeSet<IdentityId> = golden.scored_ids(&corpus.table).into_iter().collect();
    let predicted = predicted.restrict(|id| scored.contains(&id));
    let r = evaluate::metrics_report(&predicted, &reference, a.samples)?;
    store.write_json("metrics.json", "evaluate", &r)?;
    println!(
        "evaluate: precision={} recall={} splitting={} lumping={} ({} entities vs {} golden)",
        fmt_opt(r.precision),
        fmt_opt(r.recall),
        fmt_opt(r.splitting),
        fmt_opt(r.lumping),
        r.entities_a,
        r.entities_b
    );
    Ok(())
}

/// Raw identity to canonical identity.
fn canonical_map(cfg: &PipelineConfig, store: &Store, corpus: &Corpus, src: MapSource) -> Result<BTreeMap<IdentityId, IdentityId>> {
    Ok(match src {
        MapSource::Identity => BTreeMap::new(),
        MapSource::Partition => {
            let p = read_partition(&store.require(session::PARTITION, "resolve")?)?;
            p.universe()
                .into_iter()
                .filter_map(|id| p.canonical_of(id).map(|c| (id, c)))
                .collect()
        }
        MapSource::Golden => {
            let g = session::load_golden(cfg, store)?.partition(&corpus.table);
            g.clusters()
                .flat_map(|c| c.members.iter().map(move |&m| (m, c.members[0])))
                .collect()
        }
    })
}

fn graph_csv(store: &mut Store, name: &str, g: &CollaborationGraph) -> Result<()> {
    store.write_with(name, "impact", |b| Ok(g.write_edges_csv(b)?))?;
    Ok(())
}

fn impact(cfg: &PipelineConfig, store: &mut Store, a: &ImpactArgs) -> Result<()> {
    let measures = cfg.network.measures()?;
    let corpus = session::load_corpus(store)?;
    let map = canonical_map(cfg, store, &corpus, a.map_from)?;
    let report = network::impact_report(&corpus.commits, &corpus.table, &map, &measures)?;
    let raw = network::project_collaboration(&network::build_bipartite(&corpus.commits, &corpus.table));
    let corrected = network::merge_identities(&raw, &map);
    graph_csv(store, "graph_raw.csv", &raw)?;
    graph_csv(store, "graph_corrected.csv", &corrected)?;
    store.write_with("measures_raw.csv", "impact", |b| Ok(network::write_measures_csv(&raw, b)?))?;
    store.write_with("measures_corrected.csv", "impact", |b| {
        Ok(network::write_measures_csv(&corrected, b)?)
    })?;
    store.write_json("impact.json", "impact", &report)?;
    store.write_with("impact.csv", "impact", |b| Ok(report.write_csv(b)?))?;
    println!(
        "impact: raw {} nodes / {} edges, corrected {} nodes / {} edges",
        report.raw_nodes, report.raw_edges, report.corrected_nodes, report.corrected_edges
    );
    for m in &report.measures {
        println!(
            "  {:<12} rho={}{}",
            m.measure.as_str(),
            fmt_opt(m.rho),
            if m.flagged { "  (disrupted)" } else { "" }
        );
    }
    Ok(())
}
