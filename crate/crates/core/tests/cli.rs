use std::path::Path;
use std::process::{Command, Output};

fn pollenfuse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pollenfuse"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("POLLENFUSE_CACHE")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    stderr.lines().find(|l| l.starts_with("error:")).expect("an error: line").to_string()
}

const RUN: &str = r#"
manifest = "data/manifest.csv"
output_dir = "run"
seed = 3
architectures = ["compact-a", "compact-b"]
input_sizes = [224, 260]

[train]
epochs = 1
batch_size = 8

[tta]
repeats = 2
"#;

fn mtimes(dir: &Path) -> Vec<(String, std::time::SystemTime)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), e.metadata().unwrap().modified().unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn split_train_fuse_evaluate_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&pollenfuse(&["synth", "--out", "data", "--per-class", "5", "--seed", "1"], d));

    ok(&pollenfuse(&["split", "--manifest", "data/manifest.csv", "--k", "5", "--seed", "7", "--out", "f1.csv"], d));
    ok(&pollenfuse(&["split", "--manifest", "data/manifest.csv", "--k", "5", "--seed", "7", "--out", "f2.csv"], d));
    let f1 = std::fs::read(d.join("f1.csv")).unwrap();
    assert_eq!(f1, std::fs::read(d.join("f2.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&f1).lines().count(), 21);
    let usage = pollenfuse(&["split", "--manifest", "data/manifest.csv", "--k", "1", "--out", "f3.csv"], d);
    assert_eq!(usage.status.code(), Some(2));

    std::fs::write(d.join("run.toml"), RUN).unwrap();
    ok(&pollenfuse(&["train", "--config", "run.toml", "--folds", "f1.csv"], d));
    let ckpts = d.join("run/checkpoints");
    let before = mtimes(&ckpts);
    assert_eq!(before.len(), 20);
    assert_eq!(mtimes(&d.join("run/predictions")).len(), 20);
    let log = std::fs::read_to_string(d.join("run/logs/compact-a_224_fold0.csv")).unwrap();
    assert!(log.starts_with("epoch,lr,train_loss\n0,1e-3,"), "{log}");

    // Resume: only the deleted cell is trained again.
    std::thread::sleep(std::time::Duration::from_millis(20));
    std::fs::remove_file(ckpts.join("compact-b_260_fold3.pfck")).unwrap();
    ok(&pollenfuse(&["train", "--config", "run.toml", "--folds", "f1.csv"], d));
    let after = mtimes(&ckpts);
    assert_eq!(after.len(), 20);
    for (b, a) in before.iter().zip(&after) {
        assert_eq!(b.0, a.0);
        assert_eq!(b.1 == a.1, a.0 != "compact-b_260_fold3.pfck", "{}", a.0);
    }

    ok(&pollenfuse(&["fuse", "--predictions", "run/predictions", "--out", "fused.csv"], d));
    let fused = std::fs::read_to_string(d.join("fused.csv")).unwrap();
    assert_eq!(fused.lines().count(), 21);
    assert!(fused.starts_with("sample_id,p0,p1,p2,p3,label"));

    let eval = ok(&pollenfuse(&["evaluate", "--predictions", "fused.csv", "--manifest", "data/manifest.csv"], d));
    assert!(eval.contains("weighted F1-score"));
    let raw = ok(&pollenfuse(&["evaluate", "--predictions", "run/oof_predictions.csv", "--manifest", "data/manifest.csv"], d));
    let row = |s: &str| s.lines().nth(3).unwrap().split_whitespace().skip(2).collect::<Vec<_>>().join(" ");
    assert_eq!(row(&eval), row(&raw));

    let report = ok(&pollenfuse(
        &["report", "--predictions", "run/predictions", "--manifest", "data/manifest.csv", "--out", "report"],
        d,
    ));
    assert!(report.contains("compact-b  260x260"));
    assert!(report.contains("all networks"));
    assert!(d.join("report/per_size.csv").is_file() && d.join("report/fused.csv").is_file());

    ok(&pollenfuse(
        &["predict", "--checkpoint", "run/checkpoints/compact-a_224_fold0.pfck", "--manifest", "data/manifest.csv", "--config", "run.toml", "--out", "p.csv"],
        d,
    ));
    let p = std::fs::read_to_string(d.join("p.csv")).unwrap();
    assert_eq!(p.lines().count(), 21);
    assert!(p.lines().nth(1).unwrap().contains(",compact-a,224,0,"));
}

#[test]
fn perfect_predictions_evaluate_to_100() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&pollenfuse(&["synth", "--out", "data", "--per-class", "2"], d));
    let manifest = std::fs::read_to_string(d.join("data/manifest.csv")).unwrap();
    let mut fused = String::from("sample_id,p0,p1,p2,p3,label\n");
    for line in manifest.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let mut p = ["0", "0", "0", "0"];
        let idx = ["normal", "anomalous", "alnus", "debris"].iter().position(|n| *n == cols[2]).unwrap();
        p[idx] = "1";
        fused.push_str(&format!("{},{},{}\n", cols[0], p.join(","), cols[2]));
    }
    std::fs::write(d.join("perfect.csv"), fused).unwrap();
    let out = ok(&pollenfuse(&["evaluate", "--predictions", "perfect.csv", "--manifest", "data/manifest.csv"], d));
    assert_eq!(out.lines().nth(3).unwrap().matches("100.00").count(), 3, "{out}");
}

#[test]
fn failures_print_an_error_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&pollenfuse(&["synth", "--out", "data", "--per-class", "2"], d));
    std::fs::write(d.join("bad.toml"), RUN.replace("[224, 260]", "[224, 256]")).unwrap();
    let line = error_line(&pollenfuse(&["train", "--config", "bad.toml"], d));
    assert!(line.contains("256"), "{line}");
    assert_eq!(pollenfuse(&["train", "--config", "bad.toml"], d).status.code(), Some(1));

    let line = error_line(&pollenfuse(&["split", "--manifest", "missing.csv", "--out", "f.csv"], d));
    assert!(line.contains("missing.csv"), "{line}");
}
