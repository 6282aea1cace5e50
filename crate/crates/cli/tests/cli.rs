use std::fs;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use simuser_core::discriminator::{DecisionTree, Discriminator, ForestConfig, ModelTags, Standardizer};
use simuser_core::fingerprint::{extract_fingerprint, FeatureConfig, FeatureVector, LexiconSet};
use simuser_core::metrics::{dice, NormalizationBounds};
use simuser_core::transcript::{episode_to_line, load_corpus, Episode, Role, Source, Split};

fn simuser(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simuser")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = simuser(args);
    assert!(
        out.status.success(),
        "simuser {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Data rows of a table written with a `# simuser <kind> v1` line.
fn table(path: &Path, kind: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let (first, body) = text.split_once('\n').unwrap();
    assert_eq!(first, format!("# simuser {kind} v1"));
    let mut lines = body.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

fn write_corpus(path: &Path, episodes: &[Episode]) {
    let text: String = episodes.iter().map(|e| episode_to_line(e) + "\n").collect();
    fs::write(path, text).unwrap();
}

fn three_episodes() -> Vec<Episode> {
    let conv = |id: &str, user: [&str; 2]| {
        Episode::from_turns(
            id,
            "t1",
            Source::Human,
            [
                (Role::User, user[0]),
                (Role::Agent, "Sure, what is the order number?"),
                (Role::User, user[1]),
            ],
        )
    };
    vec![
        conv("a", ["hi i need to return my order", "its #W1234567 thanks"]),
        conv("b", ["Hello, could you please help me with a refund?", "Certainly. The number is #W7654321."]),
        conv("c", ["refund now", "this is ridiculous, why is it so slow"]),
    ]
}

fn demo(dir: &Path) -> PathBuf {
    let d = dir.join("demo");
    ok(&["demo-data", "--out", s(&d), "--human", "80", "--base", "80", "--tasks", "6", "--validation-tasks", "2"]);
    d
}

fn train(d: &Path, extra: &[&str]) -> String {
    let (human, sim, out) = (d.join("human.jsonl"), d.join("base_sim.jsonl"), d.join("discriminator.json"));
    let mut args = vec!["train-disc", "--human", s(&human), "--sim", s(&sim), "--out", s(&out), "--trees", "60"];
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn fingerprint_table_is_one_row_per_episode_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("three.jsonl");
    let mut eps = three_episodes();
    eps.push(Episode::from_turns("agent_only", "t1", Source::Human, [(Role::Agent, "hello?")]));
    write_corpus(&input, &eps);
    let out = dir.path().join("fp.csv");
    ok(&["fingerprint", "--transcripts", s(&input), "--out", s(&out)]);
    let (header, rows) = table(&out, "fingerprints");
    assert_eq!(header.len(), 4 + 19);
    assert_eq!(header[4], "words_per_turn");
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fp.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fingerprint");
    assert_eq!(manifest["skipped"], serde_json::json!(["agent_only"]));

    let first = fs::read(&out).unwrap();
    let first_manifest = fs::read(dir.path().join("fp.csv.manifest.json")).unwrap();
    ok(&["fingerprint", "--transcripts", s(&input), "--out", s(&out)]);
    assert_eq!(fs::read(&out).unwrap(), first);
    assert_eq!(fs::read(dir.path().join("fp.csv.manifest.json")).unwrap(), first_manifest);
}

#[test]
fn missing_lexicon_is_an_io_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("three.jsonl");
    write_corpus(&input, &three_episodes());
    let missing = dir.path().join("no_such_lexicon.toml");
    let out = simuser(&["fingerprint", "--transcripts", s(&input), "--lexicon", s(&missing), "--out", "/dev/null"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_lexicon.toml"));
}

#[test]
fn unknown_config_keys_are_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "backend = \"mock\"\n[evolve]\nislandz = 3\n").unwrap();
    let out = simuser(&["evolve", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("islandz"));
}

#[test]
fn train_disc_reports_held_out_metrics_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = demo(dir.path());
    let (th, ts) = (d.join("human_test.jsonl"), d.join("base_sim_test.jsonl"));
    let test = ["--test-human", s(&th), "--test-sim", s(&ts)];
    train(&d, &test);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("discriminator.json.metrics.json")).unwrap()).unwrap();
    assert!(metrics["roc_auc"].as_f64().unwrap() >= 0.99, "{metrics}");
    let first = fs::read(d.join("discriminator.json")).unwrap();
    let first_manifest = fs::read(d.join("discriminator.json.manifest.json")).unwrap();
    train(&d, &test);
    assert_eq!(fs::read(d.join("discriminator.json")).unwrap(), first);
    assert_eq!(fs::read(d.join("discriminator.json.manifest.json")).unwrap(), first_manifest);
    let model = Discriminator::load(&d.join("discriminator.json")).unwrap();
    assert_eq!(model.tags.domain.as_deref(), Some("retail"));
}

#[test]
fn corpus_domain_mismatch_is_a_manifest_warning() {
    let dir = tempfile::tempdir().unwrap();
    let d = demo(dir.path());
    let mut sim = load_corpus(d.join("base_sim.jsonl"), Split::Train).unwrap().episodes;
    for e in &mut sim {
        e.metadata.insert("domain".into(), "airline".into());
    }
    write_corpus(&d.join("base_sim.jsonl"), &sim);
    train(&d, &[]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("discriminator.json.manifest.json")).unwrap()).unwrap();
    let warnings = manifest["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("airline")), "{manifest}");
}

fn constant_model(p: f64, domain: Option<&str>) -> Discriminator {
    Discriminator {
        config: ForestConfig { n_estimators: 1, ..ForestConfig::default() },
        standardizer: Standardizer::identity(),
        trees: vec![DecisionTree::leaf(p)],
        class_weights: [1.0, 1.0],
        seed: 0,
        tags: ModelTags { domain: domain.map(String::from), simulator_model: None },
        importances: [1.0 / 19.0; 19],
    }
}

fn score_rows(args: &[&str], out: &Path) -> Vec<Vec<String>> {
    let mut full = vec!["score"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", s(out)]);
    ok(&full);
    let (header, rows) = table(out, "scores");
    assert_eq!(header, ["group", "n", "hl", "coverage", "score", "d1", "d2", "d3", "d4", "usi"]);
    rows
}

fn f(v: &str) -> f64 {
    v.parse().unwrap()
}

#[test]
fn score_constant_model_and_self_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let d = demo(dir.path());
    let model = dir.path().join("half.json");
    constant_model(0.5, None).save(&model).unwrap();
    let human = d.join("human.jsonl");
    let rows = score_rows(
        &["--transcripts", s(&human), "--model", s(&model), "--reference", s(&human)],
        &dir.path().join("self.csv"),
    );
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(r[0], "human");
    assert_eq!(f(&r[2]), 0.5);
    assert!(f(&r[3]) > 0.5, "self coverage {}", r[3]);
    for v in &r[5..10] {
        assert!((f(v) - 1.0).abs() < 1e-12, "dice {v}");
    }
    assert!((f(&r[4]) - (0.5 * f(&r[2]) + 0.5 * f(&r[3]))).abs() < 1e-12);
}

#[test]
fn score_tag_mismatch_needs_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = demo(dir.path());
    let model = dir.path().join("airline.json");
    constant_model(0.5, Some("airline")).save(&model).unwrap();
    let human = d.join("human.jsonl");
    let out = dir.path().join("x.csv");
    let args = ["score", "--transcripts", s(&human), "--model", s(&model), "--reference", s(&human), "--out", s(&out)];
    let res = simuser(&args);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("airline"));
    let mut allowed = args.to_vec();
    allowed.push("--allow-tag-mismatch");
    ok(&allowed);
}

fn dist(x: &FeatureVector, y: &FeatureVector) -> f64 {
    x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn naive_chamfer(a: &[FeatureVector], b: &[FeatureVector]) -> f64 {
    let one = |from: &[FeatureVector], to: &[FeatureVector]| {
        from.iter().map(|x| to.iter().map(|y| dist(x, y)).fold(f64::INFINITY, f64::min)).sum::<f64>() / from.len() as f64
    };
    one(a, b) + one(b, a)
}

#[test]
fn score_rows_match_an_independent_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let d = demo(dir.path());
    train(&d, &[]);
    let lex = LexiconSet::default_set();
    let cfg = FeatureConfig::default();
    let fp = |e: &Episode| extract_fingerprint(e, &lex, &cfg).unwrap().0;

    let human: Vec<Episode> = load_corpus(d.join("human.jsonl"), Split::Train).unwrap().episodes;
    let reference: Vec<FeatureVector> = human.iter().map(fp).collect();
    let mut methods: Vec<Episode> = load_corpus(d.join("base_sim_test.jsonl"), Split::Test).unwrap().episodes;
    for (i, e) in methods.iter_mut().enumerate() {
        let m = if i % 2 == 0 { "method_a" } else { "method_b" };
        e.metadata.insert("method".into(), m.into());
        e.task_id = format!("task_{}", i % 3);
    }
    let mixed = dir.path().join("methods.jsonl");
    write_corpus(&mixed, &methods);
    let (model_path, human_path) = (d.join("discriminator.json"), d.join("human.jsonl"));
    let rows = score_rows(
        &[
            "--transcripts",
            s(&mixed),
            "--model",
            s(&model_path),
            "--reference",
            s(&human_path),
            "--group-by",
            "meta:method",
        ],
        &dir.path().join("methods.csv"),
    );
    assert_eq!(rows.len(), 2);

    let model = Discriminator::load(&d.join("discriminator.json")).unwrap();
    let n = reference.len();
    let mut pair_sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            pair_sum += dist(&reference[i], &reference[j]);
        }
    }
    let d_ref = pair_sum / (n * (n - 1) / 2) as f64;
    let bounds = NormalizationBounds::fit(&reference).unwrap();
    let mu_h: FeatureVector = std::array::from_fn(|k| reference.iter().map(|r| r[k]).sum::<f64>() / n as f64);

    for (row, name) in rows.iter().zip(["method_a", "method_b"]) {
        assert_eq!(row[0], name);
        let group: Vec<&Episode> = methods.iter().filter(|e| e.metadata["method"] == name).collect();
        let feats: Vec<FeatureVector> = group.iter().map(|e| fp(e)).collect();
        let hl = feats.iter().map(|x| model.predict_human_prob(x)).sum::<f64>() / feats.len() as f64;
        let mut cov = 0.0;
        let mut tasks: Vec<&str> = group.iter().map(|e| e.task_id.as_str()).collect();
        tasks.sort();
        tasks.dedup();
        for t in &tasks {
            let pts: Vec<FeatureVector> =
                group.iter().zip(&feats).filter(|(e, _)| e.task_id == *t).map(|(_, x)| *x).collect();
            let err = naive_chamfer(&pts, &reference);
            cov += (1.0 - (err / (2.0 * d_ref)).min(1.0)).max(0.0);
        }
        cov /= tasks.len() as f64;
        let mean: FeatureVector = std::array::from_fn(|k| feats.iter().map(|r| r[k]).sum::<f64>() / feats.len() as f64);
        let (x, y) = (bounds.normalize(&mean), bounds.normalize(&mu_h));
        let ranges = [0..8, 8..11, 11..16, 16..19];
        let dims: Vec<f64> = ranges.iter().map(|r| dice(&x[r.clone()], &y[r.clone()])).collect();

        assert_eq!(row[1], group.len().to_string());
        assert!((f(&row[2]) - hl).abs() < 1e-12);
        assert!((f(&row[3]) - cov).abs() < 1e-9, "{} vs {cov}", row[3]);
        assert!((f(&row[4]) - (0.5 * hl + 0.5 * cov)).abs() < 1e-9);
        for (k, dk) in dims.iter().enumerate() {
            assert!((f(&row[5 + k]) - dk).abs() < 1e-12);
        }
        assert!((f(&row[9]) - dims.iter().sum::<f64>() / 4.0).abs() < 1e-12);
    }
}

#[test]
fn pca_rows_carry_source_labels() {
    let dir = tempfile::tempdir().unwrap();
    let d = demo(dir.path());
    let mut persona: Vec<Episode> = load_corpus(d.join("base_sim_test.jsonl"), Split::Test).unwrap().episodes;
    for e in &mut persona {
        e.source = Source::PersonaSim;
        e.episode_id = format!("p_{}", e.episode_id);
    }
    let p = dir.path().join("persona.jsonl");
    write_corpus(&p, &persona);
    let out = dir.path().join("pca.csv");
    let (th, ts) = (d.join("human_test.jsonl"), d.join("base_sim_test.jsonl"));
    let stdout = ok(&[
        "plot",
        "--pca",
        "--transcripts",
        s(&th),
        s(&ts),
        s(&p),
        "--out",
        s(&out),
    ]);
    assert!(stdout.contains("explained variance"));
    let (header, rows) = table(&out, "pca");
    assert_eq!(header, ["episode_id", "label", "pc1", "pc2"]);
    let mut labels: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    labels.dedup();
    assert_eq!(labels, ["human", "base_sim", "persona_sim"]);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().is_ok() && r[3].parse::<f64>().is_ok()));
}

#[test]
fn mocked_evolve_plot_select_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let d = demo(dir.path());
    train(&d, &[]);
    let cfg = d.join("simuser.toml");
    let run3 = dir.path().join("run3");
    ok(&["evolve", "--config", s(&cfg), "--iterations", "3", "--out", s(&run3)]);
    let history = fs::read_to_string(run3.join("history.jsonl")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], r#"{"format":"simuser-history","format_version":1}"#);
    assert_eq!(lines.len(), 1 + 3);
    for name in ["best_genome.txt", "validation.jsonl", "calls.jsonl", "manifest.json"] {
        assert!(run3.join(name).exists(), "{name}");
    }

    let curve = dir.path().join("curve.csv");
    let history_path = run3.join("history.jsonl");
    ok(&["plot", "--history", s(&history_path), "--out", s(&curve)]);
    let (header, rows) = table(&curve, "curve");
    assert_eq!(header, ["iter", "score", "hl", "coverage"]);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["0", "1", "2"]);

    // Refuses to overwrite; replaying from the first checkpoint rewrites identical rows.
    assert_eq!(simuser(&["evolve", "--config", s(&cfg), "--iterations", "3", "--out", s(&run3)]).status.code(), Some(2));
    let first = run3.join("checkpoints/iter_0001");
    ok(&["evolve", "--config", s(&cfg), "--iterations", "3", "--out", s(&run3), "--resume", s(&first)]);
    assert_eq!(fs::read_to_string(run3.join("history.jsonl")).unwrap(), history);

    // A longer budget would shift the derived curriculum epoch.
    let moved = simuser(&["evolve", "--config", s(&cfg), "--iterations", "5", "--out", s(&run3), "--resume"]);
    assert_eq!(moved.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&moved.stderr).contains("epoch_length"));

    // With a pinned epoch, extending 3 -> 5 equals a fresh 5-iteration run.
    let pinned = d.join("pinned.toml");
    fs::write(&pinned, fs::read_to_string(&cfg).unwrap().replace("[evolve]\n", "[evolve]\nepoch_length = 2\n")).unwrap();
    let ext = dir.path().join("ext");
    ok(&["evolve", "--config", s(&pinned), "--iterations", "3", "--out", s(&ext)]);
    ok(&["evolve", "--config", s(&pinned), "--iterations", "5", "--out", s(&ext), "--resume"]);
    let run5 = dir.path().join("run5");
    ok(&["evolve", "--config", s(&pinned), "--iterations", "5", "--out", s(&run5)]);
    let extended = fs::read_to_string(ext.join("history.jsonl")).unwrap();
    assert_eq!(extended, fs::read_to_string(run5.join("history.jsonl")).unwrap());
    assert_eq!(extended.lines().count(), 6);
    assert_eq!(
        fs::read(ext.join("checkpoints/iter_0005/state.json")).unwrap(),
        fs::read(run5.join("checkpoints/iter_0005/state.json")).unwrap()
    );

    let stdout = ok(&["select", "--config", s(&pinned), "--out", s(&run5)]);
    let sel: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run5.join("selection.json")).unwrap()).unwrap();
    let label = sel["report"]["label"].as_str().unwrap();
    assert!(stdout.contains(&format!("selected {label}")));
    assert_eq!(sel["report"]["means"].as_array().unwrap().len(), 5);
    assert!(run5.join("selected_genome.txt").exists());
}

#[test]
fn rejected_credentials_exit_with_the_dependency_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = demo(dir.path());
    train(&d, &[]);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut buf = [0u8; 65536];
            let _ = stream.read(&mut buf);
            let body = r#"{"error":{"message":"invalid api key"}}"#;
            let _ = write!(
                stream,
                "HTTP/1.1 401 Unauthorized\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    let text = fs::read_to_string(d.join("simuser.toml")).unwrap().replace(
        "backend = \"mock\"",
        &format!("backend = \"http\"\n\n[gateway]\nendpoint = \"http://127.0.0.1:{port}/v1\"\nmax_workers = 2"),
    );
    let cfg = d.join("http.toml");
    fs::write(&cfg, text).unwrap();
    let r = dir.path().join("r");
    let out = simuser(&["evolve", "--config", s(&cfg), "--iterations", "1", "--out", s(&r)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
