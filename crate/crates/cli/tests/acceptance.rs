//! Acceptance criteria for the pipeline, one result line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the summary is printed even
//! when every criterion passes.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use idforge_cli::session::{golden_labels, PairSet};
use idforge_core::active::{is_confused, iterate, scan, stratified_seed, ActiveConfig, FoldEnsemble};
use idforge_core::evaluate::{
    pair_confusion, precision_recall, splitting_lumping, GoldenTruth, PairConfusion,
};
use idforge_core::fingerprints::{cosine, file_similarity, FileAuthorIndex, TimezoneVectors};
use idforge_core::forest::{label_from_match, train_forest, Hyperparameters};
use idforge_core::ingest::{parse_author_string, CommitRecord, IdentityTable};
use idforge_core::network::{
    clustering_coefficient, degree_centrality, eigenvector_centrality, network_constraint, spearman_rho,
    CollaborationGraph,
};
use idforge_core::pairgen::read_pairs_csv;
use idforge_core::resolve::{transitive_closure, Partition};
use idforge_core::stats::{frequency_similarity, Attribute, FrequencyTables, Stoplist, INVALID_FREQUENCY};
use idforge_core::strsim::{jaro, jaro_winkler, levenshtein};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_idforge");

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

// ---------------------------------------------------------------- oracles

fn naive_jaro(s1: &str, s2: &str) -> f64 {
    let a: Vec<char> = s1.chars().collect();
    let b: Vec<char> = s2.chars().collect();
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut used = vec![false; b.len()];
    let mut a_matched = Vec::new();
    for (i, &c) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(b.len() - 1);
        if lo > hi {
            continue;
        }
        if let Some(j) = (lo..=hi).find(|&j| !used[j] && b[j] == c) {
            used[j] = true;
            a_matched.push(c);
        }
    }
    let m = a_matched.len();
    if m == 0 {
        return 0.0;
    }
    let b_matched = b.iter().zip(&used).filter(|(_, u)| **u).map(|(c, _)| *c);
    let half = a_matched.iter().zip(b_matched).filter(|(x, y)| **x != *y).count();
    let (m, t) = (m as f64, half as f64 / 2.0);
    (m / a.len() as f64 + m / b.len() as f64 + (m - t) / m) / 3.0
}

fn naive_jw(s1: &str, s2: &str) -> f64 {
    let j = naive_jaro(s1, s2);
    let l = s1.chars().zip(s2.chars()).take(4).take_while(|(a, b)| a == b).count();
    j + l as f64 * 0.1 * (1.0 - j)
}

fn naive_levenshtein(s1: &str, s2: &str) -> usize {
    let a: Vec<char> = s1.chars().collect();
    let b: Vec<char> = s2.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            cur[j] = (prev[j - 1] + usize::from(a[i - 1] != b[j - 1]))
                .min(prev[j] + 1)
                .min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

fn kernel_mismatch(a: &str, b: &str) -> Option<String> {
    let (j, nj) = (jaro(a, b), naive_jaro(a, b));
    let (w, nw) = (jaro_winkler(a, b, 0.1, 4).ok()?, naive_jw(a, b));
    let (l, nl) = (levenshtein(a, b), naive_levenshtein(a, b));
    if (j - nj).abs() > 1e-12 || (w - nw).abs() > 1e-12 || l != nl {
        Some(format!("{a:?} {b:?}: jaro {j}/{nj} jw {w}/{nw} lev {l}/{nl}"))
    } else {
        None
    }
}

fn groups_of(labels: &[u32]) -> Vec<Vec<u32>> {
    let mut by: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by.entry(l).or_default().push(i as u32);
    }
    by.into_values().collect()
}

fn reachability(n: usize, links: &[(u32, u32)]) -> BTreeSet<Vec<u32>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in links {
        adj[a as usize].push(b as usize);
        adj[b as usize].push(a as usize);
    }
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut group = vec![s];
        let mut k = 0;
        while k < group.len() {
            for &v in &adj[group[k]] {
                if !seen[v] {
                    seen[v] = true;
                    group.push(v);
                }
            }
            k += 1;
        }
        let mut g: Vec<u32> = group.into_iter().map(|v| v as u32).collect();
        g.sort_unstable();
        out.insert(g);
    }
    out
}

fn rank_pearson(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

// ------------------------------------------------------------- pipeline

fn idforge(store: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(store)
        .env_remove("IDFORGE_STORE")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn store_digest(store: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(store).expect("store exists") {
        let p = e.expect("entry").path();
        if p.is_file() {
            let bytes = std::fs::read(&p).expect("readable");
            let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), hex);
        }
    }
    out
}

const STAGES: &[&[&str]] = &[
    &["synth", "--developers", "300"],
    &["ingest"],
    &["stats"],
    &["fingerprints"],
    &["pairs"],
    &["crossval", "--labels-from", "golden"],
    &["resolve"],
    &["evaluate"],
    &["impact"],
    &["train", "--labels-from", "golden"],
    &["active", "--oracle"],
];

/// One full run: store root, time from synth through evaluate, and the
/// store digest after every stage.
struct Run {
    root: PathBuf,
    to_evaluate: Duration,
    stages: Vec<BTreeMap<String, String>>,
}

fn run_pipeline(root: PathBuf) -> Result<Run, String> {
    let start = Instant::now();
    let mut to_evaluate = Duration::ZERO;
    let mut stages = Vec::new();
    for args in STAGES {
        idforge(&root, args)?;
        if args[0] == "evaluate" {
            to_evaluate = start.elapsed();
        }
        stages.push(store_digest(&root));
    }
    Ok(Run {
        root,
        to_evaluate,
        stages,
    })
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_golden(root: &Path) -> GoldenTruth {
    let g = std::fs::File::open(root.join("golden.csv")).expect("golden.csv");
    let h = std::fs::File::open(root.join("homonyms.csv")).expect("homonyms.csv");
    GoldenTruth::read_csv(g, Some(h)).expect("golden parses")
}

// ------------------------------------------------------------ criteria

fn c1_string_kernels() -> Outcome {
    let start = Instant::now();
    ensure!((jaro("MARTHA", "MARHTA") - 0.944444).abs() <= 1e-6, "jaro anchor");
    ensure!(
        (jaro_winkler("MARTHA", "MARHTA", 0.1, 4).unwrap() - 0.961111).abs() <= 1e-6,
        "jaro-winkler anchor"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let letters = ['a', 'b', 'c', 'd'];
    let word = |rng: &mut ChaCha8Rng| -> String {
        let len = rng.random_range(0..=12);
        (0..len).map(|_| letters[rng.random_range(0..4)]).collect()
    };
    const SMALL: usize = 1_000_000;
    for _ in 0..SMALL {
        let (a, b) = (word(&mut rng), word(&mut rng));
        if let Some(m) = kernel_mismatch(&a, &b) {
            return Err(m);
        }
    }
    let ranges = [(0x20u32, 0x7e), (0xa0, 0x17f), (0x400, 0x4ff), (0x4e00, 0x4fff), (0x1f600, 0x1f64f)];
    let utf8 = |rng: &mut ChaCha8Rng| -> String {
        let len = rng.random_range(0..=80);
        (0..len)
            .map(|_| {
                let (lo, hi) = ranges[rng.random_range(0..ranges.len())];
                char::from_u32(rng.random_range(lo..=hi)).expect("valid scalar")
            })
            .collect()
    };
    const WIDE: usize = 10_000;
    for _ in 0..WIDE {
        let a = utf8(&mut rng);
        // half the pairs are mutations of each other so matches occur
        let b = if rng.random_bool(0.5) {
            let mut cs: Vec<char> = a.chars().collect();
            if cs.len() > 1 {
                let i = rng.random_range(0..cs.len() - 1);
                cs.swap(i, i + 1);
                cs.remove(rng.random_range(0..cs.len()));
            }
            cs.into_iter().collect()
        } else {
            utf8(&mut rng)
        };
        if let Some(m) = kernel_mismatch(&a, &b) {
            return Err(m);
        }
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(60), "took {t:?}");
    Ok(format!("{SMALL} 4-letter and {WIDE} UTF-8 pairs exact, {:.1}s", t.as_secs_f64()))
}

fn c2_frequency_feature() -> Outcome {
    let authors = [
        "Ann Lee <ann@a.org>",
        "Ann Lee <lee@b.org>",
        "ann lee <ann@c.org>",
        "Bob Ray <bob@a.org>",
        "root <root@host>",
        "Nameless <>",
    ];
    let ids: Vec<_> = authors.iter().map(|a| parse_author_string(a)).collect();
    let tables = FrequencyTables::build(&ids);
    let stop = Stoplist::seed();
    let f = |i: usize, j: usize, attr| frequency_similarity(&ids[i], &ids[j], attr, &tables, &stop);

    // name "ann lee" occurs 3 times, "bob ray" once
    ensure!(f(0, 3, Attribute::Name) == (1.0f64 / 3.0).log10(), "3 x 1 name");
    ensure!((f(0, 3, Attribute::Name) - -0.47712125471966244).abs() < 1e-15, "log10(1/3)");
    ensure!(f(0, 1, Attribute::Name) == (1.0f64 / 9.0).log10(), "3 x 3 name");
    ensure!(f(3, 5, Attribute::Name) == 0.0, "1 x 1 name");
    ensure!(f(0, 4, Attribute::Name) == INVALID_FREQUENCY, "stoplisted name");
    ensure!(f(0, 5, Attribute::Email) == INVALID_FREQUENCY, "empty email");
    ensure!(f(5, 5, Attribute::UserName) == INVALID_FREQUENCY, "empty user name");
    ensure!(INVALID_FREQUENCY == -10.0, "sentinel");
    Ok("constructed tables exact; stoplisted and empty give -10".into())
}

fn commit(author: &str, tz: &str, files: &[&str]) -> CommitRecord {
    CommitRecord {
        sha: format!("{:040}", 0),
        author: author.into(),
        ts: 0,
        tz: tz.into(),
        files: files.iter().map(|f| f.to_string()).collect(),
        msg: String::new(),
    }
}

fn c3_fingerprints() -> Outcome {
    let (a, b, c, d) = ("A <a@x>", "B <b@x>", "C <c@x>", "D <d@x>");
    let commits = vec![
        commit(a, "+0100", &["f0", "f1"]),
        commit(a, "+0100", &["f1"]),
        commit(a, "+02:00", &[]),
        commit(b, "+0100", &["f0", "f1", "f2"]),
        commit(c, "+0200", &["f1", "f3"]),
        commit(c, "-0500", &[]),
        commit(d, "+0200", &["f4"]),
    ];
    let table = IdentityTable::from_commits(&commits);
    let id = |s| table.id_of(s).unwrap();
    let idx = FileAuthorIndex::build(&commits, &table);

    // f0 {A,B} weight 1/2; f1 {A,B,C} weight 1/3; f2, f3, f4 single author
    let cases = [
        (a, b, 1.0 / 2.0 + 1.0 / 3.0),
        (a, c, 1.0 / 3.0),
        (b, c, 1.0 / 3.0),
        (a, d, 0.0),
    ];
    for (x, y, want) in cases {
        let got = file_similarity(id(x), id(y), &idx);
        ensure!((got - want).abs() <= 1e-12, "file_similarity({x}, {y}) = {got}, want {want}");
        ensure!(got == file_similarity(id(y), id(x), &idx), "symmetry {x} {y}");
    }

    // +0100 {A:2, B:1}, +0200 {A:1, C:1, D:1}; -0500 has one author and is dropped
    let tz = TimezoneVectors::build(&commits, &table);
    ensure!(tz.axes == ["+0100", "+0200"], "axes {:?}", tz.axes);
    let want = [
        (a, [1.0, 1.0 / 3.0]),
        (b, [0.5, 0.0]),
        (c, [0.0, 1.0 / 3.0]),
        (d, [0.0, 1.0 / 3.0]),
    ];
    for (x, v) in want {
        let got = tz.vector(id(x));
        ensure!(
            got.iter().zip(v).all(|(g, w)| (g - w).abs() <= 1e-12),
            "tz vector {x} = {got:?}, want {v:?}"
        );
    }
    let cos = |x, y| cosine(tz.vector(id(x)), tz.vector(id(y))).unwrap();
    // A . B = 0.5, |A| = sqrt(10/9), |B| = 0.5
    let want_ab = 0.5 / ((10.0f64 / 9.0).sqrt() * 0.5);
    ensure!((cos(a, b) - want_ab).abs() <= 1e-12, "cos(A,B) = {}", cos(a, b));
    ensure!((cos(c, d) - 1.0).abs() <= 1e-12, "cos(C,D)");
    ensure!(cos(b, c) == 0.0, "cos(B,C)");
    ensure!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap() == 0.0, "zero vector");
    ensure!((cosine(&[3.0, 4.0], &[4.0, 3.0]).unwrap() - 0.96).abs() <= 1e-12, "3-4-5 cosine");
    Ok("4-author toy corpus exact".into())
}

fn c4_closure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    const GRAPHS: usize = 1000;
    for g in 0..GRAPHS {
        let n = rng.random_range(1..=200usize);
        let m = rng.random_range(0..=2 * n);
        let links: Vec<(u32, u32)> = (0..m)
            .map(|_| (rng.random_range(0..n as u32), rng.random_range(0..n as u32)))
            .collect();
        let universe: Vec<u32> = (0..n as u32).collect();
        let c = transitive_closure(&links, &universe).map_err(|e| e.to_string())?;
        ensure!(c.partition.groups() == reachability(n, &links), "graph {g} (n={n}, m={m}) differs");
    }
    Ok(format!("{GRAPHS} random graphs exact"))
}

fn c5_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    const PAIRS: usize = 1000;
    for t in 0..PAIRS {
        let n = rng.random_range(1..=50usize);
        let k = rng.random_range(1..=n as u32);
        let pred: Vec<u32> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let gold: Vec<u32> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let mut brute = PairConfusion::default();
        for i in 0..n {
            for j in i + 1..n {
                brute.record(pred[i] == pred[j], gold[i] == gold[j]);
            }
        }
        let p = Partition::from_groups(groups_of(&pred)).map_err(|e| e.to_string())?;
        let g = Partition::from_groups(groups_of(&gold)).map_err(|e| e.to_string())?;
        let c = pair_confusion(&p, &g).map_err(|e| e.to_string())?;
        ensure!(c == brute, "trial {t}: {c:?} vs {brute:?}");
        let (prec, rec) = precision_recall(&c);
        let div = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
        ensure!(prec == div(brute.tp, brute.tp + brute.fp), "precision trial {t}");
        ensure!(rec == div(brute.tp, brute.tp + brute.fn_), "recall trial {t}");
        let true_pairs = brute.tp + brute.fn_;
        match splitting_lumping(&c) {
            Ok((s, l)) => {
                ensure!(s == brute.fn_ as f64 / true_pairs as f64, "splitting trial {t}");
                ensure!(l == brute.fp as f64 / true_pairs as f64, "lumping trial {t}");
            }
            Err(_) => ensure!(true_pairs == 0, "splitting/lumping refused with {true_pairs} true pairs"),
        }
    }
    Ok(format!(
        "{PAIRS} random partition pairs exact; published cross-validation anchor not reproducible without its labeled set"
    ))
}

fn c6_end_to_end(run: &Run) -> Outcome {
    let m = read_json(&run.root.join("metrics.json"))?;
    let p = m["precision"].as_f64().ok_or("metrics.json lacks precision")?;
    let r = m["recall"].as_f64().ok_or("metrics.json lacks recall")?;
    let t = run.to_evaluate;
    ensure!(p >= 0.95, "precision {p:.4} < 0.95");
    ensure!(r >= 0.90, "recall {r:.4} < 0.90");
    ensure!(t < Duration::from_secs(300), "took {t:?}");
    Ok(format!("precision {p:.4} recall {r:.4}, {:.1}s", t.as_secs_f64()))
}

fn f1(model: &idforge_core::forest::ForestModel, rows: &[&[f64]], truth: &[bool]) -> f64 {
    let preds = model.predict_all(rows).expect("width matches");
    let mut c = PairConfusion::default();
    for (p, &t) in preds.iter().zip(truth) {
        c.record(p.link, t);
    }
    let (p, r) = precision_recall(&c);
    let (p, r) = (p.unwrap_or(0.0), r.unwrap_or(0.0));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn c7_active_learning(run: &Run) -> Outcome {
    let root = &run.root;
    let table = IdentityTable::read_csv(std::fs::File::open(root.join("identities.csv")).unwrap())
        .map_err(|e| e.to_string())?;
    let (names, pairs) =
        read_pairs_csv(std::fs::File::open(root.join("pairs.csv")).unwrap()).map_err(|e| e.to_string())?;
    let set = PairSet::new(names, pairs);
    let labels = golden_labels(&read_golden(root), &table, &set);
    let labeled: Vec<_> = set.pairs.iter().filter(|p| labels.contains_key(&p.key())).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for p in labeled {
        if rng.random_bool(0.7) {
            train.push(p.clone());
        } else {
            test.push(p);
        }
    }
    let truth = |p: &idforge_core::pairgen::PairFeatures| label_from_match(labels[&p.key()]);
    let test_rows: Vec<&[f64]> = test.iter().map(|p| p.values.as_slice()).collect();
    let test_truth: Vec<bool> = test.iter().map(|p| truth(p)).collect();
    let hp = Hyperparameters {
        seed: 7,
        ..Hyperparameters::default()
    };

    let train_rows: Vec<&[f64]> = train.iter().map(|p| p.values.as_slice()).collect();
    let train_truth: Vec<bool> = train.iter().map(truth).collect();
    let full = train_forest(&train_rows, &train_truth, &set.names, &hp).map_err(|e| e.to_string())?;
    let f1_full = f1(&full, &test_rows, &test_truth);

    let seed_idx = stratified_seed(&train_truth, 0.05, 3, 7);
    let seed: BTreeMap<_, _> = seed_idx.iter().map(|&i| (train[i].key(), labels[&train[i].key()])).collect();
    let mut oracle = |p: &idforge_core::pairgen::PairFeatures| labels.get(&p.key()).copied();
    let cfg = ActiveConfig {
        hyperparameters: hp,
        ..ActiveConfig::default()
    };
    let out = iterate(&train, &seed, &mut oracle, &set.names, &cfg).map_err(|e| e.to_string())?;
    let f1_active = f1(&out.model, &test_rows, &test_truth);
    let share = out.labels.len() as f64 / train.len() as f64;

    ensure!(share < 0.20, "used {:.1}% of candidate labels", share * 100.0);
    ensure!(
        f1_full - f1_active <= 0.02,
        "F1 {f1_active:.4} vs full {f1_full:.4}"
    );
    Ok(format!(
        "{} of {} labels ({:.1}%), F1 {:.4} vs full {:.4}",
        out.labels.len(),
        train.len(),
        share * 100.0,
        f1_active,
        f1_full
    ))
}

fn c8_confusion_region() -> Outcome {
    let mut included = 0;
    for bits in 0u8..8 {
        let votes: Vec<bool> = (0..3).map(|k| bits >> k & 1 == 1).collect();
        let unanimous = bits == 0 || bits == 7;
        ensure!(is_confused(&votes) == !unanimous, "pattern {votes:?}");
        included += usize::from(!unanimous);
    }
    ensure!(included == 6, "{included} patterns included");

    // a trained ensemble's region is exactly its non-unanimous pairs
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let labels: Vec<bool> = data.iter().map(|r| r[0] + 0.3 * r[1] > 0.6).collect();
    let rows: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let names = vec!["x".to_string(), "y".to_string()];
    let hp = Hyperparameters {
        n_trees: 5,
        seed: 8,
        ..Hyperparameters::default()
    };
    let e = FoldEnsemble::train(&rows, &labels, &names, 3, &hp).map_err(|e| e.to_string())?;
    let pool: Vec<Vec<f64>> = (0..2000).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let pool_rows: Vec<&[f64]> = pool.iter().map(Vec::as_slice).collect();
    let s = scan(&e, &pool_rows).map_err(|e| e.to_string())?;
    let expect: Vec<usize> = (0..pool.len()).filter(|&i| is_confused(&s.votes[i])).collect();
    ensure!(s.region == expect, "scan region differs from non-unanimity");
    ensure!(s.votes.iter().all(|v| v.len() == 3), "vote width");
    Ok(format!("6 of 8 patterns included; region of {} on a trained ensemble", s.region.len()))
}

fn c9_network_measures() -> Outcome {
    let path = CollaborationGraph::from_edges(0..3, [(0, 1), (1, 2)]);
    ensure!(degree_centrality(&path) == [1.0, 2.0, 1.0], "path degree");
    ensure!(clustering_coefficient(&path) == [0.0, 0.0, 0.0], "path clustering");
    ensure!(network_constraint(&path)[0] == 1.0, "single-neighbor constraint");

    let star = CollaborationGraph::from_edges(0..5, (1..5).map(|i| (0, i)));
    ensure!(degree_centrality(&star)[0] == 4.0, "star degree");
    ensure!((network_constraint(&star)[0] - 0.25).abs() <= 1e-12, "star constraint 1/k");
    let e = eigenvector_centrality(&star, 1e-12, 100_000).map_err(|e| e.to_string())?;
    ensure!((e[0] / e[1] - 2.0).abs() <= 1e-9, "star eigenvector ratio {}", e[0] / e[1]);

    let tri = CollaborationGraph::from_edges(0..3, [(0, 1), (1, 2), (0, 2)]);
    ensure!(clustering_coefficient(&tri) == [1.0; 3], "triangle clustering");
    ensure!(
        network_constraint(&tri).iter().all(|c| (c - 1.125).abs() <= 1e-12),
        "triangle constraint {:?}",
        network_constraint(&tri)
    );
    let e = eigenvector_centrality(&tri, 1e-12, 100_000).map_err(|e| e.to_string())?;
    ensure!(e.iter().all(|x| (x - 1.0 / 3f64.sqrt()).abs() <= 1e-9), "triangle eigenvector");

    // 4-cycle 0-1-2-3 with chord 0-2
    let c4 = CollaborationGraph::from_edges(0..4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]);
    ensure!(degree_centrality(&c4) == [3.0, 2.0, 3.0, 2.0], "chorded degree");
    let cc = clustering_coefficient(&c4);
    ensure!(cc == [2.0 / 3.0, 1.0, 2.0 / 3.0, 1.0], "chorded clustering {cc:?}");
    // node 1: p = 1/2 to each of 0 and 2, indirect 1/2 * 1/3 via the other
    let c1 = 2.0 * (0.5f64 + 0.5 / 3.0).powi(2);
    // node 0: neighbors 1, 2, 3 with p = 1/3; 2 reaches via 1 and 3 (1/3 * 1/2 each),
    // 1 and 3 reach only via 2 (1/3 * 1/3)
    let c0 = (1.0f64 / 3.0 + 2.0 * (1.0 / 3.0) * 0.5).powi(2) + 2.0 * (1.0f64 / 3.0 + 1.0 / 9.0).powi(2);
    let nc = network_constraint(&c4);
    ensure!((nc[1] - c1).abs() <= 1e-12 && (nc[0] - c0).abs() <= 1e-12, "chorded constraint {nc:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for t in 0..500 {
        let n = rng.random_range(3..120);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..15) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.3 + rng.random_range(0..10) as f64).collect();
        let want = rank_pearson(&x, &y);
        match spearman_rho(&x, &y).map_err(|e| e.to_string())? {
            Some(r) => ensure!((r - want).abs() <= 1e-12, "spearman trial {t}: {r} vs {want}"),
            None => ensure!(want.is_nan(), "spearman trial {t} undefined but oracle {want}"),
        }
    }
    Ok("path, star, triangle and chorded 4-cycle exact; Spearman equals rank-Pearson".into())
}

fn c10_network_impact(run: &Run) -> Outcome {
    let root = &run.root;
    let golden = read_golden(root);
    let mut per_dev: BTreeMap<u32, usize> = BTreeMap::new();
    for (author, d) in &golden.developer_of {
        if !golden.is_homonym(author) {
            *per_dev.entry(*d).or_default() += 1;
        }
    }
    let split = per_dev.values().filter(|&&k| k >= 2).count() as f64 / per_dev.len() as f64;
    ensure!(split >= 0.30, "only {:.1}% of developers have aliases", split * 100.0);

    let rhos = |file: &str| -> Result<Vec<(String, f64)>, String> {
        let v = read_json(&root.join(file))?;
        v["measures"]
            .as_array()
            .ok_or("no measures")?
            .iter()
            .map(|m| {
                let name = m["measure"].as_str().unwrap_or("?").to_string();
                let rho = m["rho"].as_f64().ok_or_else(|| format!("{name}: rho undefined"))?;
                Ok((name, rho))
            })
            .collect()
    };
    idforge(root, &["impact", "--map-from", "golden"])?;
    std::fs::rename(root.join("impact.json"), root.join("impact_golden.json")).map_err(|e| e.to_string())?;
    idforge(root, &["impact", "--map-from", "identity"])?;
    std::fs::rename(root.join("impact.json"), root.join("impact_identity.json")).map_err(|e| e.to_string())?;

    let golden_rhos = rhos("impact_golden.json")?;
    let identity_rhos = rhos("impact_identity.json")?;
    ensure!(golden_rhos.len() == 4 && identity_rhos.len() == 4, "expected four measures");
    ensure!(
        golden_rhos.iter().any(|(_, r)| *r < 0.95),
        "no measure disrupted: {golden_rhos:?}"
    );
    ensure!(
        identity_rhos.iter().all(|(_, r)| *r == 1.0),
        "identity map changed ranks: {identity_rhos:?}"
    );
    let list: Vec<String> = golden_rhos.iter().map(|(m, r)| format!("{m} {r:.3}")).collect();
    Ok(format!("{:.0}% of developers aliased; rho {}", split * 100.0, list.join(", ")))
}

fn c11_determinism(a: &Run, b: &Run) -> Outcome {
    for (i, (x, y)) in a.stages.iter().zip(&b.stages).enumerate() {
        if x != y {
            let differing: Vec<&String> = x.keys().filter(|k| x.get(*k) != y.get(*k)).collect();
            return Err(format!("stage {:?} differs in {differing:?}", STAGES[i]));
        }
    }
    let files = a.stages.last().map_or(0, BTreeMap::len);
    Ok(format!("{} stages, {files} files byte-identical", STAGES.len()))
}

// ---------------------------------------------------------------- main

fn check(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let res = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match res {
        Ok(detail) => {
            println!("PASS {name}: {detail} [{secs:.1}s]");
            true
        }
        Err(why) => {
            println!("FAIL {name}: {why} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    // `cargo test -- --list` and friends expect no work
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let dir = tempfile::tempdir().expect("tempdir");
    let runs = [dir.path().join("a"), dir.path().join("b")].map(run_pipeline);
    let pipeline = |i: usize| -> Result<&Run, String> { runs[i].as_ref().map_err(Clone::clone) };

    let results = [
        check("1 string kernels", c1_string_kernels),
        check("2 frequency feature", c2_frequency_feature),
        check("3 fingerprint formulas", c3_fingerprints),
        check("4 closure oracle", c4_closure),
        check("5 metric oracle", c5_metrics),
        check("6 end-to-end synthetic", || c6_end_to_end(pipeline(0)?)),
        check("7 active-learning efficiency", || c7_active_learning(pipeline(0)?)),
        check("8 confusion-region semantics", c8_confusion_region),
        check("9 network measures", c9_network_measures),
        check("10 network-impact disruption", || c10_network_impact(pipeline(0)?)),
        check("11 determinism", || c11_determinism(pipeline(0)?, pipeline(1)?)),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
