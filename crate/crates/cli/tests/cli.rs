use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use terrapatch::ingest::read_meta;

fn terrapatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_terrapatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn default_config_prints_and_reloads() {
    let out = ok(terrapatch(&["--print-default-config"]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("kernel: 31"));
    assert!(text.contains("train_fraction: 0.805"));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.yaml");
    fs::write(&cfg, &text).unwrap();
    ok(terrapatch(&[
        "--config",
        p(&cfg),
        "synth",
        "--output",
        p(&dir.path().join("s")),
        "--samples",
        "1",
    ]));
}

#[test]
fn bad_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.yaml");
    fs::write(&cfg, "fill:\n  kernal: 31\n").unwrap();
    let out = terrapatch(&[
        "--config",
        p(&cfg),
        "synth",
        "--output",
        p(&dir.path().join("s")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    fs::write(&cfg, "patch:\n  patch_size: 0\n").unwrap();
    let out = terrapatch(&[
        "--config",
        p(&cfg),
        "synth",
        "--output",
        p(&dir.path().join("s")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let out = terrapatch(&["--threads", "0", "stats", "--output", p(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    let out = terrapatch(&["process", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn synth_process_split_stats_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (input, out) = (dir.path().join("in"), dir.path().join("out"));
    ok(terrapatch(&[
        "--seed",
        "7",
        "synth",
        "--output",
        p(&input),
        "--samples",
        "2",
    ]));
    let first = ok(terrapatch(&[
        "--threads",
        "2",
        "process",
        "--input",
        p(&input),
        "--output",
        p(&out),
    ]));
    assert!(String::from_utf8_lossy(&first.stdout).contains("2 samples (0 resumed)"));
    let manifest = fs::read(out.join("dataset-manifest.csv")).unwrap();
    let again = ok(terrapatch(&[
        "process",
        "--input",
        p(&input),
        "--output",
        p(&out),
    ]));
    assert!(String::from_utf8_lossy(&again.stdout).contains("2 samples (2 resumed)"));
    assert_eq!(
        fs::read(out.join("dataset-manifest.csv")).unwrap(),
        manifest
    );
    ok(terrapatch(&["--seed", "7", "split", "--output", p(&out)]));
    ok(terrapatch(&["split", "--output", p(&out), "--verify"]));
    ok(terrapatch(&["--seed", "7", "stats", "--output", p(&out)]));
    for f in [
        "clusters.json",
        "rejections.csv",
        "stats/patches.csv",
        "stats/summary.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn unreadable_sample_exits_1_but_keeps_others() {
    let dir = tempfile::tempdir().unwrap();
    let (input, out) = (dir.path().join("in"), dir.path().join("out"));
    ok(terrapatch(&[
        "synth",
        "--output",
        p(&input),
        "--samples",
        "1",
    ]));
    fs::create_dir_all(input.join("zz-broken")).unwrap();
    let res = terrapatch(&["process", "--input", p(&input), "--output", p(&out)]);
    assert_eq!(res.status.code(), Some(1));
    let manifest = fs::read_to_string(out.join("dataset-manifest.csv")).unwrap();
    assert!(manifest.lines().count() > 1);
}

#[test]
fn hand_edited_cross_split_overlap_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (input, out) = (dir.path().join("in"), dir.path().join("out"));
    ok(terrapatch(&[
        "synth",
        "--output",
        p(&input),
        "--samples",
        "2",
    ]));
    // Give the second sample the first one's footprints so the two overlap.
    let meta0 = read_meta(&input.join("synth0000")).unwrap();
    let mut meta1 = read_meta(&input.join("synth0001")).unwrap();
    meta1.left = meta0.left;
    meta1.right = meta0.right;
    fs::write(
        input.join("synth0001/meta.json"),
        serde_json::to_string(&meta1).unwrap(),
    )
    .unwrap();

    ok(terrapatch(&[
        "process",
        "--input",
        p(&input),
        "--output",
        p(&out),
    ]));
    ok(terrapatch(&["split", "--output", p(&out)]));
    let clusters = fs::read_to_string(out.join("clusters.json")).unwrap();
    assert_eq!(clusters.matches("cluster_id").count(), 1);

    let forged = r#"[
  {"cluster_id": 0, "members": ["synth0000"], "patch_count": 1, "split": "train"},
  {"cluster_id": 1, "members": ["synth0001"], "patch_count": 1, "split": "val"}
]"#;
    fs::write(out.join("clusters.json"), forged).unwrap();
    let res = terrapatch(&["split", "--output", p(&out), "--verify"]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(
        err.contains("synth0000") && err.contains("synth0001"),
        "{err}"
    );
}

#[test]
fn eval_of_ground_truth_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (input, out, pred) = (
        dir.path().join("in"),
        dir.path().join("out"),
        dir.path().join("pred"),
    );
    ok(terrapatch(&[
        "synth",
        "--output",
        p(&input),
        "--samples",
        "1",
    ]));
    ok(terrapatch(&[
        "process",
        "--input",
        p(&input),
        "--output",
        p(&out),
    ]));
    let manifest = fs::read_to_string(out.join("dataset-manifest.csv")).unwrap();
    for line in manifest.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let name = format!("{}_{}_{}", f[0], f[1], f[2]);
        let target = pred.join(&name);
        fs::create_dir_all(&target).unwrap();
        fs::copy(
            out.join(f[3]).join(&name).join("dem.mgrd"),
            target.join("pred.mgrd"),
        )
        .unwrap();
    }
    let res = ok(terrapatch(&[
        "eval",
        "--input",
        p(&pred),
        "--dataset",
        p(&out),
    ]));
    assert!(String::from_utf8_lossy(&res.stdout).contains("RMSE 0.0000 MAE 0.0000"));
    let metrics = fs::read_to_string(pred.join("metrics.csv")).unwrap();
    let agg = metrics.lines().last().unwrap();
    assert!(agg.starts_with("aggregate,,,all,0.0,0.0,0.0,0.0,"), "{agg}");
}
