use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

fn psa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psa"))
        .args(args)
        .output()
        .expect("run psa")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn synth(dir: &Path, paired_fraction: &str) {
    let out = dir.to_str().unwrap();
    let o = psa(&[
        "synth", "--blobs", "4", "--per-blob", "60", "--dim", "12", "--sep", "6", "--sigma", "1",
        "--paired-fraction", paired_fraction, "--seed", "5", "--out", out,
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
}

fn labels(dir: &Path) -> HashMap<String, usize> {
    psa::io::read_labels(&dir.join("labels.csv")).unwrap()
}

#[test]
fn synth_build_query_explain() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    synth(&corpus, "0.25");
    let manifest = corpus.join("manifest.json");
    let space = tmp.path().join("space.psas");
    let o = psa(&[
        "build", "--manifest", manifest.to_str().unwrap(), "--out", space.to_str().unwrap(),
        "--subclusters", "8", "--seed", "3",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("surrogate labels (N)  4"));

    let responses = tmp.path().join("responses.psae");
    let o = psa(&[
        "query", "--space", space.to_str().unwrap(), "--queries", corpus.join("queries.psae").to_str().unwrap(),
        "--topk", "3", "--out", responses.to_str().unwrap(), "--explain",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));

    let stdout = text(&o.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("query\trank\tlabel\tsub\tsource\tsimilarity\tweight"));

    let corpus_data: psa::Corpus = psa::io::read_corpus(&manifest).unwrap();
    let blob = labels(&corpus);
    let mut sums: HashMap<usize, f64> = HashMap::new();
    for line in lines {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 7, "{line}");
        let q: usize = cols[0].parse().unwrap();
        *sums.entry(q).or_default() += cols[6].parse::<f64>().unwrap();
        if cols[1] == "0" {
            let query_id = &corpus_data.image_only[q].id;
            assert_eq!(blob[cols[4]], blob[query_id], "query {q} top-1 from another blob");
        }
    }
    assert_eq!(sums.len(), corpus_data.image_only.len());
    assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-6));

    let written = psa::io::read_embeddings::<f64>(&responses).unwrap();
    assert_eq!(written.rows.len(), corpus_data.image_only.len());

    let o = psa(&["inspect", "--space", space.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(text(&o.stdout).contains("total prototypes"));
}

#[test]
fn build_with_oversized_min_cluster_size_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "0.1");
    let o = psa(&[
        "build", "--manifest", tmp.path().join("manifest.json").to_str().unwrap(), "--out",
        tmp.path().join("s.psas").to_str().unwrap(), "--min-cluster-size", "1000",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("no surrogate labels"));
}

#[test]
fn corrupted_archive_reports_code() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("s.psas");
    std::fs::write(&path, b"PSAS\x07\0\0\0").unwrap();
    let o = psa(&["inspect", "--space", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("[version-mismatch]"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(psa(&[]).status.code(), Some(1));
    assert_eq!(psa(&["query", "--space", "x"]).status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_psa"))
        .args(["inspect", "--space", "x"])
        .env("PSA_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_identical_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let masks = tmp.path().join("masks");
    std::fs::create_dir(&masks).unwrap();
    std::fs::write(masks.join("a.pbm"), "P1\n3 2\n1 0 1\n0 1 1\n").unwrap();
    std::fs::write(masks.join("b.pbm"), "P1\n2 2\n0 0\n0 0\n").unwrap();
    let m = masks.to_str().unwrap();
    let o = psa(&["eval", "--pred", m, "--gt", m]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("mean\t1.000000\t1.000000"));
}

#[test]
fn eval_half_overlap() {
    let tmp = tempfile::tempdir().unwrap();
    let (pred, gt) = (tmp.path().join("pred"), tmp.path().join("gt"));
    std::fs::create_dir(&pred).unwrap();
    std::fs::create_dir(&gt).unwrap();
    std::fs::write(pred.join("m.pbm"), "1 6\n1 1 1 1 0 0\n").unwrap();
    std::fs::write(gt.join("m.pbm"), "1 6\n0 0 1 1 1 1\n").unwrap();
    let o = psa(&["eval", "--pred", pred.to_str().unwrap(), "--gt", gt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("mean\t0.500000\t0.333333"));

    std::fs::remove_file(pred.join("m.pbm")).unwrap();
    let o = psa(&["eval", "--pred", pred.to_str().unwrap(), "--gt", gt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_and_bench_run() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "0.5");
    let manifest = tmp.path().join("manifest.json");
    let labels = tmp.path().join("labels.csv");
    let o = psa(&[
        "sweep", "--param", "topk", "--values", "1,3", "--manifest", manifest.to_str().unwrap(), "--labels",
        labels.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.starts_with("topk\tprototypes\ttop1_accuracy"));
    assert_eq!(out.lines().count(), 3);

    let space = tmp.path().join("s.psas");
    let o = psa(&["build", "--manifest", manifest.to_str().unwrap(), "--out", space.to_str().unwrap()]);
    assert!(o.status.success());
    let report = tmp.path().join("bench.txt");
    let o = psa(&[
        "bench", "--space", space.to_str().unwrap(), "--queries", tmp.path().join("queries.psae").to_str().unwrap(),
        "--repetitions", "30", "--per-token-cost-us", "100", "--tokens", "1,2,4", "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let kv = std::fs::read_to_string(&report).unwrap();
    assert!(kv.contains("query.p50_us="));
    assert!(kv.contains("llm.r_squared="));

    let o = psa(&[
        "bench", "--space", space.to_str().unwrap(), "--queries", tmp.path().join("queries.psae").to_str().unwrap(),
        "--repetitions", "5",
    ]);
    assert_eq!(o.status.code(), Some(1));
}
