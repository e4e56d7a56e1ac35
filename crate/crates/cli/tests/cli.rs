use std::path::Path;
use std::process::{Command, Output};

fn egoact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egoact")).args(args).output().expect("spawn egoact")
}

fn ok(args: &[&str]) -> String {
    let out = egoact(args);
    assert!(
        out.status.success(),
        "egoact {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap().lines().skip(1).map(str::to_string).collect()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn extract_emits_one_window_per_frame_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = tmp.path().join("clip");
    ok(&["synth", "--action", "stir:31", "--seed", "3", "--out", s(&clip)]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["extract", "--frames", s(&clip), "--out", s(&a)]);
    ok(&["extract", "--frames", s(&clip), "--out", s(&b)]);
    assert_eq!(csv_rows(&a.join("windows.csv")).len(), 31);
    assert_eq!(files(&a), files(&b));
}

#[test]
fn input_and_config_errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = egoact(&["extract", "--frames", s(tmp.path()), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let out = egoact(&["--set", "window.span=7", "extract", "--frames", s(tmp.path()), "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));
    let out = egoact(&["--set", "no.such_key=1", "extract", "--frames", s(tmp.path()), "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));
    let out = egoact(&["synth", "--action", "juggle:10", "--out", s(&tmp.path().join("y"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn class_only_near_boundaries_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = tmp.path().join("clip");
    ok(&["synth", "--action", "stir:40", "--action", "pour:10", "--out", s(&clip)]);
    let feats = tmp.path().join("f");
    ok(&["extract", "--frames", s(&clip), "--out", s(&feats)]);
    let out = egoact(&[
        "--set",
        "encoding.k=4",
        "train",
        "--features",
        s(&feats),
        "--annotations",
        s(&clip.join("annotations.csv")),
        "--out",
        s(&tmp.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("has no usable samples"));
}

#[test]
fn train_predict_segment_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n);
    let cfg = p("small.ini");
    std::fs::write(&cfg, "[encoding]\nk = 8\n[svm]\nc_grid = 1,10\nfolds = 3\n").unwrap();
    let mut train_args = vec!["--config".to_string(), s(&cfg).to_string(), "train".into()];
    for (i, class) in ["translate-right", "stir", "pour"].iter().enumerate() {
        for v in 0..2 {
            let name = format!("{class}_{v}");
            let clip = p(&format!("clip_{name}"));
            let feats = p(&format!("feat_{name}"));
            let action = format!("{class}:34");
            let seed = (10 * i + v).to_string();
            ok(&["synth", "--action", &action, "--seed", &seed, "--out", s(&clip)]);
            ok(&["--config", s(&cfg), "extract", "--frames", s(&clip), "--out", s(&feats)]);
            train_args.extend(["--features".into(), s(&feats).to_string()]);
            train_args.extend(["--annotations".into(), s(&clip.join("annotations.csv")).to_string()]);
        }
    }
    train_args.extend(["--out".into(), s(&p("model")).to_string()]);
    train_args.extend(["--features-csv".into(), s(&p("train.csv")).to_string()]);
    let stdout = ok(&train_args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(stdout.starts_with("3 classes"), "{stdout}");
    let rows = csv_rows(&p("train.csv"));
    assert!(!rows.is_empty());
    assert!(["translate-right", "stir", "pour"].contains(&rows[0].rsplit(',').next().unwrap()));

    let test_clip = p("test_clip");
    ok(&["synth", "--action", "stir:34", "--seed", "99", "--out", s(&test_clip)]);
    let (pred, hof) = (p("pred.csv"), p("hof.csv"));
    ok(&[
        "predict",
        "--model",
        s(&p("model")),
        "--frames",
        s(&test_clip),
        "--out",
        s(&pred),
        "--hof-out",
        s(&hof),
    ]);
    let rows = csv_rows(&pred);
    assert_eq!(rows.len(), 34);
    let pred2 = p("pred2.csv");
    ok(&["predict", "--model", s(&p("model")), "--frames", s(&test_clip), "--out", s(&pred2)]);
    assert_eq!(std::fs::read(&pred).unwrap(), std::fs::read(&pred2).unwrap());

    let seg0 = p("seg0.csv");
    ok(&["segment", "--predictions", s(&pred), "--hof", s(&hof), "--lambda", "0", "--out", s(&seg0)]);
    for (r, q) in csv_rows(&seg0).iter().zip(&rows) {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!(cols[1], cols[2]);
        assert_eq!(cols[1], q.split(',').nth(1).unwrap());
    }
    let seg = p("seg.csv");
    let stdout = ok(&["segment", "--predictions", s(&pred), "--hof", s(&hof), "--lambda", "1e6", "--out", s(&seg)]);
    assert!(stdout.starts_with("energy"));
    let smoothed: std::collections::BTreeSet<String> =
        csv_rows(&seg).iter().map(|r| r.rsplit(',').next().unwrap().to_string()).collect();
    assert_eq!(smoothed.len(), 1);

    let report = p("report.txt");
    let stdout = ok(&[
        "eval",
        "--predictions",
        s(&seg),
        "--annotations",
        s(&test_clip.join("annotations.csv")),
        "--out",
        s(&report),
    ]);
    assert!(stdout.contains("frames=34"));
    assert_eq!(std::fs::read_to_string(&report).unwrap(), stdout);

    let out = egoact(&["segment", "--predictions", s(&pred), "--hof", s(&test_clip.join("camera.csv")), "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}
