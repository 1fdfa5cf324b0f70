use std::path::Path;
use std::process::{Command, Output};

fn bsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsc")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bsc(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let stdout = ok(&[
        "run", "--strategy", "sub-batch", "--order", "bts", "--batches", "3", "--m", "2", "--depth", "30",
        "--backend", "sim:exact", "--seed", "4", "--concurrency", "2", "--out", p(&out),
    ]);
    assert!(stdout.contains("NDCG@10 1.0000"), "{stdout}");
    for f in ["metrics.csv", "manifest.json", "rankings.run", "judgments.csv", "bias_in_call.csv", "bias_initial_rank.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["ordering"], "bts");
    assert_eq!(manifest["config"]["concurrency"], 2);
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    std::fs::write(
        &config,
        "strategy = \"all-in-one\"\norder = \"shuffled\"\nm = 3\ndepth = 20\nbackend = \"sim:uniform\"\n\n\
         [dataset]\nsource = \"synthetic\"\nnum_queries = 3\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let stdout = ok(&["run", "--config", p(&config), "--m", "2", "--out", p(&out)]);
    assert!(stdout.contains("all-in-one/shuffled"), "{stdout}");
    assert!(stdout.contains("3/3 queries complete, 6 calls"), "{stdout}");
}

#[test]
fn simulate_then_run_on_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--num-queries", "3", "--depth", "12", "--seed", "9", "--out", p(&data)]);
    let config = dir.path().join("exp.toml");
    std::fs::write(
        &config,
        format!(
            "depth = 12\n\n[dataset]\nsource = \"files\"\nqueries = {:?}\ncorpus = {:?}\nqrels = {:?}\nrun = {:?}\n",
            data.join("queries.tsv"),
            data.join("corpus.tsv"),
            data.join("qrels.txt"),
            data.join("run.txt")
        ),
    )
    .unwrap();
    let stdout = ok(&["run", "--config", p(&config), "--strategy", "listwise", "--order", "init", "--m", "2", "--out", p(&dir.path().join("lw"))]);
    assert!(stdout.contains("3/3 queries complete, 6 calls"), "{stdout}");
}

#[test]
fn sweep_and_bias_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let sw = dir.path().join("sweep");
    ok(&["sweep", "--depth", "30", "--backend", "sim:tail-decay", "--m-values", "1,2", "--methods", "sub-batch:stb,one-by-one", "--out", p(&sw)]);
    let csv = std::fs::read_to_string(sw.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "strategy,ordering,batch_size,m,auc_pr,ndcg_at_10,calls");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("sub-batch,stb,10,1,"));
    assert!(lines[4].starts_with("one-by-one,none,1,2,") && lines[4].ends_with(",3000"));

    let run = dir.path().join("run");
    let base = dir.path().join("base");
    ok(&["run", "--strategy", "sub-batch", "--order", "init", "--depth", "30", "--backend", "sim:junction-peak", "--out", p(&run)]);
    ok(&["run", "--strategy", "one-by-one", "--order", "init", "--depth", "30", "--backend", "sim:junction-peak", "--out", p(&base)]);
    let bias = dir.path().join("bias");
    ok(&["analyze-bias", "--run", p(&run), "--baseline", p(&base), "--out", p(&bias)]);
    let overlay = std::fs::read_to_string(bias.join("overlay_initial_rank.csv")).unwrap();
    assert_eq!(overlay.lines().count(), 31);
    assert_eq!(std::fs::read_to_string(bias.join("bias_in_call.csv")).unwrap().lines().count(), 11);
}

#[test]
fn bad_input_is_reported() {
    let out = bsc(&["run", "--strategy", "one-by-one", "--order", "stb", "--out", "/tmp/unused"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = bsc(&["run", "--backend", "gpt", "--out", "/tmp/unused"]);
    assert!(!out.status.success());

    let out = bsc(&["record", "--backend", "sim", "--cache", "/tmp/unused.tsv", "--out", "/tmp/unused"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("live backend"));

    let out = bsc(&["run", "--backend", "live:nothing", "--out", "/tmp/unused"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no adapter"));
}
