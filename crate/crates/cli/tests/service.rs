use std::collections::BTreeMap;
use std::path::Path;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use idforge_cli::serve::{self, ServiceData, SharedState};
use idforge_cli::session::{self, Corpus, PairSet};
use idforge_core::active::{ActiveConfig, LabelQueue, LabelStore};
use idforge_core::evaluate::{generate_synthetic_corpus, GoldenTruth, SyntheticCorpusSpec};
use idforge_core::fingerprints::Fingerprints;
use idforge_core::forest::Hyperparameters;
use idforge_core::pairgen::{self, BlockingConfig, FeatureConfig, FeatureContext, PairStrategy};
use idforge_core::resolve::Partition;
use idforge_core::stats::{FrequencyTables, Stoplist};
use idforge_core::IdentityTable;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    state: SharedState,
    golden: GoldenTruth,
    dir: tempfile::TempDir,
}

fn fixture_with(partition: impl FnOnce(usize) -> Partition) -> Fixture {
    let spec = SyntheticCorpusSpec {
        developers: 40,
        seed: 11,
        ..Default::default()
    };
    let c = generate_synthetic_corpus(&spec).unwrap();
    let table = IdentityTable::from_commits(&c.commits);
    let activity = table.activity(&c.commits);
    let fp = Fingerprints::build(&c.commits, &table, 32, 1).unwrap();
    let tables = FrequencyTables::build(table.as_slice());
    let stoplist = Stoplist::seed();
    let keys = pairgen::generate_candidate_pairs(&table, &fp.files, PairStrategy::Blocked, &BlockingConfig::default())
        .unwrap();
    let features = FeatureConfig::default();
    let ctx = FeatureContext {
        identities: &table,
        tables: &tables,
        stoplist: &stoplist,
        fingerprints: &fp,
        config: features,
    };
    let pairs = PairSet::new(features.names(), ctx.assemble_all(&keys).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let labels = LabelStore::open(&dir.path().join(session::LABELS), table.len()).unwrap();
    let n = table.len();
    let data = ServiceData {
        corpus: Corpus {
            commits: c.commits,
            table,
            activity,
        },
        pairs,
        affiliations: BTreeMap::new(),
        stoplist,
        active: ActiveConfig {
            hyperparameters: Hyperparameters {
                n_trees: 15,
                ..Default::default()
            },
            ..Default::default()
        },
        suggestion_confidence: 0.9,
        cluster_threshold: 10,
        snapshot_dir: Some(dir.path().to_path_buf()),
    };
    let queue = serve::cold_queue(&data, &labels, None).unwrap();
    let state = serve::new_state(data, labels, None, partition(n), queue);
    Fixture {
        state,
        golden: c.golden,
        dir,
    }
}

fn fixture() -> Fixture {
    fixture_with(|n| Partition::singletons(0..n as u32))
}

async fn call(state: &SharedState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_app(serve::router(state.clone()), method, uri, body).await
}

async fn call_app(app: axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, v)
}

#[tokio::test]
async fn queue_entries_carry_the_display_bundle() {
    let f = fixture();
    let (st, v) = call(&f.state, "GET", "/api/queue?limit=5", None).await;
    assert_eq!(st, StatusCode::OK);
    let entries = v.as_array().unwrap();
    assert_eq!(entries.len(), 5);
    let e = &entries[0];
    for k in ["pair_id", "a1", "a2", "features", "votes", "probability"] {
        assert!(e.get(k).is_some(), "missing {k}");
    }
    for k in ["author", "name", "email", "first_commit", "last_commit"] {
        assert!(e["a1"].get(k).is_some(), "missing a1.{k}");
    }
    assert_eq!(e["features"].as_object().unwrap().len(), 14);
    let p: Vec<f64> = entries.iter().map(|e| e["probability"].as_f64().unwrap()).collect();
    for w in p.windows(2) {
        assert!((w[0] - 0.5).abs() <= (w[1] - 0.5).abs());
    }
}

#[tokio::test]
async fn label_submission_journals_and_dequeues() {
    let f = fixture();
    let (_, v) = call(&f.state, "GET", "/api/queue?limit=1", None).await;
    let pair_id = v[0]["pair_id"].as_str().unwrap().to_string();
    let a1 = v[0]["a1"]["id"].as_u64().unwrap();
    let before = f.state.session.read().await.queue.len();

    let (st, r) = call(
        &f.state,
        "POST",
        "/api/labels",
        Some(json!({"pair_id": pair_id, "match": 1, "canonical_id": a1, "rater": "ann"})),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{r}");
    assert_eq!(r["store_size"], 1);
    assert_eq!(r["queue_size"].as_u64().unwrap() as usize, before - 1);
    let (_, v) = call(&f.state, "GET", "/api/queue?limit=1000000", None).await;
    assert!(v.as_array().unwrap().iter().all(|e| e["pair_id"] != pair_id.as_str()));

    // re-judging the same pair is allowed; the latest judgment wins
    let (st, _) = call(
        &f.state,
        "POST",
        "/api/labels",
        Some(json!({"pair_id": pair_id, "match": 0.25, "rater": "ann"})),
    )
    .await;
    assert_eq!(st, StatusCode::OK);

    let journal = f.dir.path().join(session::LABELS);
    let n = f.state.session.read().await.labels.journal().len();
    assert_eq!(n, 2);
    let replayed = LabelStore::open(&journal, f.state.data.corpus.table.len()).unwrap();
    let key = idforge_core::active::parse_pair_id(&pair_id).unwrap();
    assert_eq!(replayed.match_value(key), Some(0.25));
    assert_eq!(replayed.canonicals(), vec![a1 as u32]);
    let snap = LabelQueue::read_json(std::fs::File::open(f.dir.path().join(session::QUEUE)).unwrap()).unwrap();
    assert!(!snap.contains(key));
}

#[tokio::test]
async fn label_validation() {
    let f = fixture();
    let (_, v) = call(&f.state, "GET", "/api/queue?limit=1", None).await;
    let pair_id = v[0]["pair_id"].as_str().unwrap().to_string();
    let n = f.state.data.corpus.table.len() as u32;
    let unknown = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .find(|k| f.state.data.pairs.get(*k).is_none())
        .unwrap();

    let cases = [
        (json!({"pair_id": format!("{}-{}", unknown.0, unknown.1), "match": 1, "rater": "r"}), StatusCode::NOT_FOUND),
        (json!({"pair_id": pair_id, "match": 1.5, "rater": "r"}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"pair_id": pair_id, "match": -0.1, "rater": "r"}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"pair_id": pair_id, "match": 1, "canonical_id": n + 5, "rater": "r"}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"pair_id": "7-7", "match": 1, "rater": "r"}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"pair_id": "x", "match": 1, "rater": "r"}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"pair_id": pair_id, "match": 1, "rater": " "}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"pair_id": pair_id, "rater": "r"}), StatusCode::UNPROCESSABLE_ENTITY),
    ];
    for (body, want) in cases {
        let (st, r) = call(&f.state, "POST", "/api/labels", Some(body.clone())).await;
        assert_eq!(st, want, "{body} -> {r}");
    }
    assert!(f.state.session.read().await.labels.is_empty());
}

async fn label_from_golden(f: &Fixture, per_class: usize) {
    let data = &f.state.data;
    let labels = session::golden_labels(&f.golden, &data.corpus.table, &data.pairs);
    let pos = labels.iter().filter(|(_, v)| **v == 1.0).take(per_class);
    let neg = labels.iter().filter(|(_, v)| **v == 0.0).take(per_class);
    for (k, v) in pos.chain(neg) {
        let (st, _) = call(
            &f.state,
            "POST",
            "/api/labels",
            Some(json!({"pair_id": format!("{}-{}", k.0, k.1), "match": v, "rater": "oracle"})),
        )
        .await;
        assert_eq!(st, StatusCode::OK);
    }
}

#[tokio::test]
async fn retrain_swaps_model_and_queue() {
    let f = fixture();
    let (st, _) = call(&f.state, "POST", "/api/retrain", None).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY, "no labels yet");

    label_from_golden(&f, 12).await;
    let (st, r) = call(&f.state, "POST", "/api/retrain", None).await;
    assert_eq!(st, StatusCode::OK, "{r}");
    assert_eq!(r["round"], 1);
    assert_eq!(r["labels"], 24);
    assert_eq!(r["region_size"], r["queue_size"]);
    assert!(!f.state.retraining.load(std::sync::atomic::Ordering::Acquire));

    let s = f.state.session.read().await;
    assert!(s.model.is_some());
    assert!(s.queue.entries.iter().all(|e| e.votes.len() == 3 && !s.labels.contains(e.key())));
    assert!(s
        .queue
        .entries
        .iter()
        .all(|e| e.votes.iter().any(|v| *v) && e.votes.iter().any(|v| !*v)));
    drop(s);
    assert!(f.dir.path().join(session::MODEL).is_file());

    let (st, v) = call(&f.state, "GET", "/api/suggestions", None).await;
    assert_eq!(st, StatusCode::OK);
    assert!(v.is_array());
}

#[tokio::test]
async fn retrain_in_flight_conflicts() {
    let f = fixture();
    f.state.retraining.store(true, std::sync::atomic::Ordering::Release);
    let (st, _) = call(&f.state, "POST", "/api/retrain", None).await;
    assert_eq!(st, StatusCode::CONFLICT);
    // the rejected request must not clear the other retrain's flag
    assert!(f.state.retraining.load(std::sync::atomic::Ordering::Acquire));
}

const BIG: [u32; 11] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

fn with_big_cluster(n: usize) -> Partition {
    let mut groups = vec![BIG.to_vec()];
    groups.extend((11..n as u32).map(|i| vec![i]));
    Partition::from_groups(groups).unwrap()
}

#[tokio::test]
async fn cluster_listing_and_split() {
    let f = fixture_with(with_big_cluster);
    let (st, v) = call(&f.state, "GET", "/api/clusters?min_size=2", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 1);
    assert_eq!(v[0]["size"], 11);
    let (st, _) = call(&f.state, "GET", "/api/clusters?min_size=1", None).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, v) = call(&f.state, "GET", "/api/clusters", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 1, "default threshold is 10");

    let cid = v[0]["cluster_id"].as_u64().unwrap();
    let tags: BTreeMap<String, u32> = BIG.iter().map(|&m| (m.to_string(), m % 3 + 1)).collect();

    let mut partial = tags.clone();
    partial.remove("4");
    let (st, _) = call(&f.state, "POST", &format!("/api/clusters/{cid}/split"), Some(json!({"assignments": partial}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, _) = call(&f.state, "POST", "/api/clusters/999999/split", Some(json!({"assignments": tags}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let (st, r) = call(&f.state, "POST", &format!("/api/clusters/{cid}/split"), Some(json!({"assignments": tags}))).await;
    assert_eq!(st, StatusCode::OK, "{r}");
    assert_eq!(r["clusters"].as_array().unwrap().len(), 3);

    let mut direct = with_big_cluster(f.state.data.corpus.table.len());
    let numeric: BTreeMap<u32, u32> = BIG.iter().map(|&m| (m, m % 3 + 1)).collect();
    direct.apply_split(cid as u32, &numeric).unwrap();
    let served = f.state.session.read().await.partition.clone();
    assert_eq!(served.groups(), direct.groups());
    for c in served.clusters() {
        assert!(c.members.contains(&c.canonical));
    }

    let splits = std::fs::read_to_string(f.dir.path().join(session::SPLITS)).unwrap();
    assert_eq!(splits.lines().count(), 1);
    let on_disk = Partition::read_csv(std::fs::File::open(f.dir.path().join(session::PARTITION)).unwrap()).unwrap();
    assert_eq!(on_disk, served);
}

#[tokio::test]
async fn static_ui_is_served_beside_the_api() {
    let f = fixture();
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<h1>labeler</h1>").unwrap();
    let app = serve::app(f.state.clone(), Some(Path::new(ui.path())));
    let (st, v) = call_app(app.clone(), "GET", "/index.html", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v, Value::String("<h1>labeler</h1>".into()));
    let (st, _) = call_app(app, "GET", "/api/queue?limit=1", None).await;
    assert_eq!(st, StatusCode::OK);
}
