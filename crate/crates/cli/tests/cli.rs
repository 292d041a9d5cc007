use std::path::Path;
use std::process::{Command, Output};

fn nsb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsb")).args(args).env_remove("NSB_DATA_DIR").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    serde_json::from_str(lines[0]).unwrap()
}

fn gen(dir: &Path, n: &str, seed: &str) {
    let out = nsb(&["gen-data", "--n", n, "--seed", seed, "--out", p(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn argument_errors_have_distinct_codes_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("never");
    let cases: [(&[&str], i32, &str); 4] = [
        (&["gen-data", "--n", "2", "--out", p(&out_dir), "--bogus"], 2, "bad_argument"),
        (&["gen-data", "--n", "x", "--out", p(&out_dir)], 2, "bad_argument"),
        (&["frobnicate", "--out", p(&out_dir)], 3, "unknown_subcommand"),
        (&["gen-data", "--n", "2"], 4, "missing_argument"),
    ];
    for (args, code, kind) in cases {
        let out = nsb(args);
        assert_eq!(out.status.code(), Some(code), "{args:?}");
        assert_eq!(error_json(&out)["error"], kind);
        assert!(!out_dir.exists(), "{args:?} created output");
    }
}

#[test]
fn data_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nsb"))
        .args(["gen-data", "--n", "1"])
        .env("NSB_DATA_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("manifest.csv").is_file());
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen(a.path(), "2", "9");
    gen(b.path(), "2", "9");
    let mut files = 0;
    for sub in ["images", "masks"] {
        for entry in std::fs::read_dir(a.path().join(sub)).unwrap() {
            let name = entry.unwrap().file_name();
            let x = std::fs::read(a.path().join(sub).join(&name)).unwrap();
            let y = std::fs::read(b.path().join(sub).join(&name)).unwrap();
            assert_eq!(x, y, "{name:?}");
            files += 1;
        }
    }
    assert_eq!(files, 8);
    assert_eq!(std::fs::read(a.path().join("manifest.csv")).unwrap(), std::fs::read(b.path().join("manifest.csv")).unwrap());
}

#[test]
fn oracle_evaluation_is_perfect() {
    let data = tempfile::tempdir().unwrap();
    gen(data.path(), "3", "4");
    let out_dir = data.path().join("eval");
    let out = nsb(&["evaluate", "--manifest", p(data.path()), "--oracle", "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["dice"], 1.0);
    assert_eq!(summary["n_images"], 6);
    let csv = std::fs::read_to_string(out_dir.join("per_image.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(out_dir.join("summary.txt").is_file());
    assert!(String::from_utf8(out.stdout).unwrap().contains("Dice score"));
}

#[test]
fn input_errors_exit_5() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    let out = nsb(&["evaluate", "--manifest", p(&missing), "--oracle", "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(error_json(&out)["error"], "input");
    assert!(!tmp.path().join("o").exists());

    let out = nsb(&["segment", p(&missing), "--weights", p(tmp.path()), "--out", p(&tmp.path().join("s"))]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn one_class_training_exits_6() {
    let data = tempfile::tempdir().unwrap();
    gen(data.path(), "2", "5");
    let manifest = std::fs::read_to_string(data.path().join("manifest.csv")).unwrap();
    let kept: Vec<&str> = manifest.lines().filter(|l| !l.contains(",glioma,")).collect();
    std::fs::write(data.path().join("manifest.csv"), kept.join("\n") + "\n").unwrap();
    let out_dir = data.path().join("w");
    let out = nsb(&["train-classifier", "--manifest", p(data.path()), "--epochs", "1", "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(6));
    assert_eq!(error_json(&out)["error"], "training");
    assert!(!out_dir.exists());
}

#[test]
fn bad_hyperparameters_exit_2() {
    let data = tempfile::tempdir().unwrap();
    gen(data.path(), "1", "5");
    let out = nsb(&["train-detector", "--manifest", p(data.path()), "--lr", "-1", "--out", p(&data.path().join("w"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = nsb(&[
        "train-detector", "--manifest", p(data.path()), "--fold", "3", "--folds", "2", "--out", p(&data.path().join("w")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_segment_and_stimuli_end_to_end() {
    let data = tempfile::tempdir().unwrap();
    gen(data.path(), "4", "8");
    let w1 = data.path().join("w1");
    let w2 = data.path().join("w2");
    for w in [&w1, &w2] {
        for cmd in ["train-classifier", "train-detector"] {
            let out = nsb(&[cmd, "--manifest", p(data.path()), "--epochs", "1", "--seed", "3", "--out", p(w)]);
            assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
            let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
            assert_eq!(report["images"], 8);
        }
    }
    for f in ["classifier.nsb", "detector.nsb"] {
        assert_eq!(std::fs::read(w1.join(f)).unwrap(), std::fs::read(w2.join(f)).unwrap(), "{f} differs");
    }

    let fold = data.path().join("wf");
    let out = nsb(&[
        "train-classifier", "--manifest", p(data.path()), "--epochs", "1", "--fold", "0", "--folds", "2", "--out", p(&fold),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["images"], 4);

    let seg = data.path().join("seg");
    let image = data.path().join("images").join(std::fs::read_dir(data.path().join("images")).unwrap().next().unwrap().unwrap().file_name());
    let out = nsb(&["segment", p(&image), "--weights", p(&w1), "--out", p(&seg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["mask.pgm", "overlay.pgm", "result.json"] {
        assert!(seg.join(f).is_file(), "{f}");
    }

    let stim = data.path().join("stim");
    let out = nsb(&[
        "make-stimuli", "--manifest", p(data.path()), "--weights", p(&w1), "--genuine", "2", "--decoys", "1", "--out",
        p(&stim),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let listing = std::fs::read_to_string(stim.join("stimuli.csv")).unwrap();
    assert_eq!(listing.lines().count(), 7);
    assert_eq!(listing.lines().filter(|l| l.ends_with(",true")).count(), 2);
}

#[test]
fn serve_failures() {
    let data = tempfile::tempdir().unwrap();
    let store = data.path().join("store");
    let out = nsb(&["serve", "--stimuli", p(&data.path().join("none")), "--store", p(&store), "--port", "0"]);
    assert_eq!(out.status.code(), Some(5));

    gen(data.path(), "3", "2");
    let stim = data.path().join("stim");
    let out = nsb(&["make-stimuli", "--manifest", p(data.path()), "--oracle", "--genuine", "2", "--decoys", "1", "--out", p(&stim)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = nsb(&["serve", "--stimuli", p(&stim), "--store", p(&store), "--port", &port]);
    assert_eq!(out.status.code(), Some(8));
    assert_eq!(error_json(&out)["error"], "server");
}
