use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn wx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wxclass"))
        .args(args)
        .env_remove("WXCLASS_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(o: Output) -> Output {
    assert_eq!(
        code(&o),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn rows(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count() - 1
}

/// Tiny synthetic dataset at `dir`.
fn synth(dir: &Path, per_class: usize) {
    ok(wx(&[
        "--out",
        s(dir),
        "synth",
        "--per-class",
        &per_class.to_string(),
        "--size",
        "16",
    ]));
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let manifest = data.join("manifest.csv");
    let mut args = vec!["--out", s(out), "train", "--train", s(&manifest)];
    args.extend_from_slice(extra);
    wx(&args)
}

#[test]
fn split_counts_and_reruns_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("path,label\n");
    for i in 0..10 {
        csv.push_str(&format!("r{i}.ppm,rain\ns{i}.ppm,snow\n"));
    }
    let manifest = tmp.path().join("m.csv");
    std::fs::write(&manifest, csv).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(wx(&[
            "--out",
            s(out),
            "split",
            "--manifest",
            s(&manifest),
            "--seed",
            "7",
        ]));
    }
    assert_eq!(
        (
            rows(&a.join("train.csv")),
            rows(&a.join("val.csv")),
            rows(&a.join("test.csv"))
        ),
        (12, 2, 6)
    );
    for f in ["train.csv", "val.csv", "test.csv", "split_summary.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(rows(&a.join("split_summary.csv")), 33);
}

#[test]
fn missing_manifest_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wx(&[
        "--out",
        s(tmp.path()),
        "split",
        "--manifest",
        s(&tmp.path().join("nope.csv")),
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&wx(&["split", "--bogus-flag"])), 2);
    let manifest = tmp.path().join("m.csv");
    std::fs::write(&manifest, "path,label\na.ppm,rain\n").unwrap();
    let o = wx(&[
        "--out",
        s(tmp.path()),
        "split",
        "--manifest",
        s(&manifest),
        "--test-fraction",
        "1.5",
    ]);
    assert_eq!(code(&o), 2);
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "unknown_key = 1\n").unwrap();
    assert_eq!(
        code(&wx(&[
            "--config",
            s(&cfg),
            "split",
            "--manifest",
            s(&manifest)
        ])),
        2
    );
}

#[test]
fn bad_manifest_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("m.csv");
    std::fs::write(&manifest, "path,label\na.ppm,drizzle\n").unwrap();
    let o = wx(&["--out", s(tmp.path()), "split", "--manifest", s(&manifest)]);
    assert_eq!(code(&o), 4);
}

#[test]
fn config_file_and_env_set_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("m.csv");
    std::fs::write(
        &manifest,
        "path,label\na.ppm,rain\nb.ppm,rain\nc.ppm,rain\nd.ppm,rain\n",
    )
    .unwrap();
    let cfg = tmp.path().join("c.toml");
    let from_file = tmp.path().join("from_file");
    std::fs::write(
        &cfg,
        format!("out = {:?}\n[split]\nseed = 3\n", s(&from_file)),
    )
    .unwrap();
    ok(wx(&[
        "--config",
        s(&cfg),
        "split",
        "--manifest",
        s(&manifest),
    ]));
    assert!(from_file.join("train.csv").exists());

    let from_flag = tmp.path().join("from_flag");
    ok(wx(&[
        "--config",
        s(&cfg),
        "--out",
        s(&from_flag),
        "split",
        "--manifest",
        s(&manifest),
    ]));
    assert!(from_flag.join("train.csv").exists());

    let from_env = tmp.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_wxclass"))
        .args(["split", "--manifest", s(&manifest)])
        .env("WXCLASS_OUT", &from_env)
        .output()
        .unwrap();
    ok(o);
    assert!(from_env.join("val.csv").exists());
}

#[test]
fn hierarchical_train_writes_five_models_and_histories() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3);
    let out = tmp.path().join("run");
    let o = ok(train(
        &data,
        &out,
        &["--input-size", "8", "--epochs", "1", "--strict"],
    ));
    assert!(String::from_utf8_lossy(&o.stdout).contains("final validation accuracy"));
    let models: Vec<_> = std::fs::read_dir(out.join("model"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".wxm"))
        .collect();
    assert_eq!(models.len(), 5);
    for role in ["primary", "rainy", "dusty", "cold_fine", "cold_safety"] {
        let h = std::fs::read_to_string(out.join(format!("history_{role}.csv"))).unwrap();
        assert!(
            h.starts_with("epoch,train_loss,train_acc,val_acc\n"),
            "{role}"
        );
    }
}

#[test]
fn training_is_reproducible_across_job_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(train(
        &data,
        &a,
        &["--input-size", "8", "--epochs", "2", "--strict"],
    ));
    let o = Command::new(env!("CARGO_BIN_EXE_wxclass"))
        .args([
            "--out",
            s(&b),
            "--jobs",
            "4",
            "train",
            "--train",
            s(&data.join("manifest.csv")),
        ])
        .args(["--input-size", "8", "--epochs", "2"])
        .output()
        .unwrap();
    ok(o);
    for f in [
        "bundle.toml",
        "primary.wxm",
        "cold_safety.wxm",
        "stats.toml",
    ] {
        assert_eq!(
            std::fs::read(a.join("model").join(f)).unwrap(),
            std::fs::read(b.join("model").join(f)).unwrap()
        );
    }
    assert_eq!(
        std::fs::read(a.join("history_rainy.csv")).unwrap(),
        std::fs::read(b.join("history_rainy.csv")).unwrap()
    );
}

#[test]
fn missing_class_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2);
    let full = std::fs::read_to_string(data.join("manifest.csv")).unwrap();
    let without_hail: String = full
        .lines()
        .filter(|l| !l.contains(",hail,"))
        .map(|l| format!("{l}\n"))
        .collect();
    let manifest = data.join("no_hail.csv");
    std::fs::write(&manifest, without_hail).unwrap();
    let o = wx(&[
        "--out",
        s(&tmp.path().join("o")),
        "train",
        "--train",
        s(&manifest),
        "--input-size",
        "8",
    ]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("hail"));
}

#[test]
fn predict_emits_json_lines_and_isolates_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3);
    let out = tmp.path().join("run");
    ok(train(&data, &out, &["--input-size", "8", "--epochs", "1"]));
    let model = out.join("model");
    let bad = tmp.path().join("bad.ppm");
    std::fs::write(&bad, b"not an image").unwrap();
    let images: Vec<String> = std::fs::read_dir(data.join("images"))
        .unwrap()
        .map(|e| e.unwrap().path().to_string_lossy().into_owned())
        .collect();
    let mut args = vec!["predict", "--model", s(&model), s(&bad)];
    args.extend(images.iter().map(String::as_str));
    let o = ok(wx(&args));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).expect("valid json line"))
        .collect();
    assert_eq!(lines.len(), images.len() + 1);
    assert_eq!(lines[0]["path"], s(&bad));
    assert!(lines[0]["error"].is_string());
    for v in &lines[1..] {
        assert!(v.get("error").is_none());
        for key in [
            "group",
            "group_probs",
            "leaf",
            "leaf_probs",
            "safety",
            "safety_source",
        ] {
            assert!(v.get(key).is_some(), "{key} missing in {v}");
        }
        let leaf_sum: f64 = v["leaf_probs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p.as_f64().unwrap())
            .sum();
        assert!((leaf_sum - 1.0).abs() < 1e-4);
        if v["group"] == "Cold" {
            assert_eq!(v["safety_source"], "cold_model");
            assert_eq!(v["safety_probs"].as_array().unwrap().len(), 2);
            assert!(v["leaf"].is_string() && v["safety"].is_string());
        } else {
            assert_eq!(v["safety_source"], "taxonomy");
        }
    }

    let o = wx(&["predict", "--model", s(&model), s(&bad)]);
    assert_eq!(code(&o), 4);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1);
}

#[test]
fn evaluate_reports_bundle_hash_and_memorizes_training_data() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 5);
    let out = tmp.path().join("run");
    let o = ok(train(
        &data,
        &out,
        &[
            "--preset",
            "softmax-flat",
            "--input-size",
            "8",
            "--epochs",
            "200",
            "--batch-size",
            "8",
        ],
    ));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let hash = stdout
        .split("sha256 ")
        .nth(1)
        .unwrap()
        .split(')')
        .next()
        .unwrap()
        .to_string();
    let ev = tmp.path().join("ev");
    ok(wx(&[
        "--out",
        s(&ev),
        "evaluate",
        "--model",
        s(&out.join("model")),
        "--manifest",
        s(&data.join("manifest.csv")),
    ]));
    let metrics: Value =
        serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["bundle_hash"], hash.as_str());
    assert!(
        metrics["accuracy"].as_f64().unwrap() > 0.95,
        "{}",
        metrics["accuracy"]
    );
    let leaf = std::fs::read_to_string(ev.join("confusion_leaf.csv")).unwrap();
    assert_eq!(leaf.lines().count(), 12);
    assert!(ev.join("confusion_group.csv").exists() && ev.join("confusion_safety.csv").exists());
}

#[test]
fn compare_four_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2);
    let presets = [
        ("softmax-flat", "8"),
        ("basic-cnn", "16"),
        ("vgg-style", "32"),
        ("hierarchical", "8"),
    ];
    let mut args = vec![
        "--out".to_string(),
        s(&tmp.path().join("cmp")).to_string(),
        "compare".into(),
    ];
    for (p, size) in presets {
        let out = tmp.path().join(p);
        ok(train(
            &data,
            &out,
            &["--preset", p, "--input-size", size, "--epochs", "1"],
        ));
        args.push("--model".into());
        args.push(format!("{p}={}", s(&out.join("model"))));
    }
    args.extend([
        "--manifest".into(),
        s(&data.join("manifest.csv")).to_string(),
    ]);
    let o = ok(wx(&args.iter().map(String::as_str).collect::<Vec<_>>()));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 4);
    let csv = std::fs::read_to_string(tmp.path().join("cmp/comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("model,accuracy,bundle_hash\n"));
    let json: Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("cmp/comparison.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json.as_array().unwrap().len(), 4);
    assert_eq!(json[3]["model"], "hierarchical");
    assert_eq!(json[3]["bundle_hash"].as_str().unwrap().len(), 64);

    let one = wx(&[
        "compare",
        "--model",
        &format!("x={}", s(&tmp.path().join("hierarchical/model"))),
        "--manifest",
        s(&data.join("manifest.csv")),
    ]);
    assert_eq!(code(&one), 2);
}

#[test]
fn stats_and_preprocess_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 1);
    let out = tmp.path().join("pp");
    ok(wx(&[
        "--out",
        s(&out),
        "stats",
        "--manifest",
        s(&data.join("manifest.csv")),
        "--input-size",
        "8",
    ]));
    let stats = std::fs::read_to_string(out.join("stats.toml")).unwrap();
    assert!(stats.contains("mode = \"global\"") && stats.contains("sample_count = 2112"));
    ok(wx(&[
        "--out",
        s(&out),
        "preprocess",
        "--manifest",
        s(&data.join("manifest.csv")),
        "--input-size",
        "8",
        "--stats",
        s(&out.join("stats.toml")),
    ]));
    assert_eq!(rows(&out.join("tensors/index.csv")), 11);
    let t =
        wxclass::tensor_file::decode_tensor(&std::fs::read(out.join("tensors/00000.wxt")).unwrap())
            .unwrap();
    assert_eq!(t.shape(), &[8, 8, 3]);
}
