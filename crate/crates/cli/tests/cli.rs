use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn icad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icad"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sorted_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn generate_writes_global_corpus_with_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = icad(&[
        "generate",
        "--kind",
        "global",
        "--datasets",
        "25",
        "--rows",
        "300",
        "--seed",
        "7",
        "--out",
        arg(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = sorted_files(&out);
    let sidecars: Vec<_> = files.iter().filter(|p| p.extension().unwrap() == "json").collect();
    assert_eq!(files.len(), 50);
    assert_eq!(sidecars.len(), 25);
    for s in sidecars {
        let meta: serde_json::Value = serde_json::from_slice(&fs::read(s).unwrap()).unwrap();
        assert_eq!(meta["kind"], "global");
        assert_eq!(meta["samples"], 300);
        assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn identical_command_lines_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let data = dir.path().join(format!("{name}-data"));
        let rep = dir.path().join(format!("{name}-rep"));
        let g = icad(&[
            "generate",
            "--kind",
            "cluster",
            "--datasets",
            "3",
            "--rows",
            "200",
            "--seed",
            "3",
            "--out",
            arg(&data),
        ]);
        assert!(g.status.success());
        let b = icad(&[
            "bench",
            "--datasets",
            arg(&data),
            "--methods",
            "knn,pca,iforest",
            "--seeds",
            "2",
            "--threads",
            "2",
            "--out",
            arg(&rep),
        ]);
        assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
        (data, rep)
    };
    let (da, ra) = run("a");
    let (db, rb) = run("b");
    for (a, b) in sorted_files(&da).iter().zip(sorted_files(&db)) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{}", a.display());
    }
    for name in ["report.csv", "report.svg"] {
        assert_eq!(
            fs::read(ra.join(name)).unwrap(),
            fs::read(rb.join(name)).unwrap(),
            "{name}"
        );
    }
    let strip = |p: PathBuf| {
        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(p).unwrap()).unwrap();
        v["timestamp"] = 0.into();
        v
    };
    assert_eq!(strip(ra.join("report.json")), strip(rb.join("report.json")));

    let agg = dir.path().join("agg");
    let r = icad(&["report", "--input", arg(&ra.join("report.json")), "--out", arg(&agg)]);
    assert!(r.status.success());
    let table = fs::read_to_string(agg.join("aggregates.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(fs::read_to_string(agg.join("report.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    assert_eq!(icad(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        icad(&["generate", "--kind", "global", "--bogus"]).status.code(),
        Some(2)
    );
    let o = icad(&["generate", "--kind", "sideways"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(icad(&["--config", arg(&cfg), "pretrain"]).status.code(), Some(2));
    let data = dir.path().join("data");
    assert!(icad(&[
        "generate",
        "--kind",
        "local",
        "--datasets",
        "1",
        "--rows",
        "100",
        "--out",
        arg(&data)
    ])
    .status
    .success());
    let o = icad(&[
        "bench",
        "--datasets",
        arg(&data),
        "--methods",
        "tactic",
        "--out",
        arg(&dir.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(2), "tactic without a checkpoint");
}

#[test]
fn failing_cells_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let mut body = String::from("x0,label\n");
    for i in 0..80 {
        body.push_str(&format!("{},{}\n", i as f64 * 0.1, u8::from(i % 5 == 0)));
    }
    fs::write(data.join("one_feature.csv"), body).unwrap();
    let o = icad(&[
        "bench",
        "--datasets",
        arg(&data),
        "--methods",
        "knn,pca",
        "--seeds",
        "1",
        "--out",
        arg(&dir.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("r/report.csv")).unwrap();
    let pca: Vec<&str> = csv
        .lines()
        .find(|l| l.starts_with("one_feature,pca"))
        .unwrap()
        .split(',')
        .collect();
    assert!(pca[3].is_empty() && !pca[5].is_empty(), "{pca:?}");
}

#[test]
fn detect_flags_a_far_outlier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{
  "seed": 1,
  "prior": {"prob_gmm": 1.0, "prob_classification": 0.0, "dim_range": {"lo": 2, "hi": 20},
            "episode_rows_range": {"lo": 100, "hi": 250}, "query_size": 64},
  "train": {"steps": 300, "lr0": 0.0005, "batch_episodes": 4, "grad_accum": 1, "log_every": 100}
}"#,
    )
    .unwrap();
    let model = dir.path().join("model");
    let o = icad(&["--config", arg(&cfg), "pretrain", "--out", arg(&model)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["final.ckpt", "train_log.csv", "run.json"] {
        assert!(model.join(f).exists(), "{f}");
    }

    let mut ctx = String::from("a,b,c\n");
    for i in 0..200 {
        let t = i as f64 * 0.61803;
        ctx.push_str(&format!(
            "{},{},{}\n",
            (t * 7.0).sin(),
            (t * 3.0).cos(),
            (t * 5.0).sin() * 0.5
        ));
    }
    fs::write(dir.path().join("ctx.csv"), ctx).unwrap();
    fs::write(
        dir.path().join("q.csv"),
        "a,b,c\n0.1,0.2,0.0\n25.0,-30.0,40.0\n-0.3,0.5,0.1\n",
    )
    .unwrap();
    let det = dir.path().join("det");
    let o = icad(&[
        "detect",
        "--checkpoint",
        arg(&model.join("final.ckpt")),
        "--context",
        arg(&dir.path().join("ctx.csv")),
        "--query",
        arg(&dir.path().join("q.csv")),
        "--out",
        arg(&det),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<Vec<String>> = fs::read_to_string(det.join("detections.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][2], "1", "far outlier flagged: {rows:?}");
    assert!(rows.iter().all(|r| r[3].len() == 64));
}

#[test]
fn generate_matches_library_output() {
    use icad_core::io::dataset_csv_string;
    use icad_core::priors::{corpus_seed, generate_dataset, AnomalyKind, RealRange};
    use icad_core::RunConfig;

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = icad(&[
        "generate",
        "--kind",
        "classification",
        "--datasets",
        "2",
        "--rows",
        "150",
        "--seed",
        "5",
        "--out",
        arg(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = RunConfig::default().with_seed(5);
    for i in 0..2u64 {
        let ds = generate_dataset(
            &cfg.prior,
            AnomalyKind::ClassBased,
            150,
            RealRange::new(0.05, 0.25),
            corpus_seed(5, i),
        )
        .unwrap();
        let written = fs::read_to_string(out.join(format!("classbased_{i:03}.csv"))).unwrap();
        assert_eq!(written, dataset_csv_string(&ds));
    }
}
