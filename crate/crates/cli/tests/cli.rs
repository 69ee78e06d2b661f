use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn slotaug(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slotaug"))
        .args(args)
        .env_remove("SLOTAUG_ENDPOINT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_corpus(dir: &Path, rows: &[(&str, &str, &str)]) {
    fs::create_dir_all(dir).unwrap();
    let col = |k: usize| {
        rows.iter()
            .map(|r| format!("{}\n", [r.0, r.1, r.2][k]))
            .collect::<String>()
    };
    fs::write(dir.join("seq.in"), col(0)).unwrap();
    fs::write(dir.join("seq.out"), col(1)).unwrap();
    fs::write(dir.join("label"), col(2)).unwrap();
}

fn toy(dir: &Path, n: usize) {
    let cities = ["boston", "denver", "new york", "san diego", "paris"];
    let rows: Vec<(String, String, String)> = (0..n)
        .map(|i| {
            let city = cities[i % cities.len()];
            let words = city.split(' ').count();
            let city_tags: Vec<&str> = (0..words)
                .map(|k| if k == 0 { "B-city" } else { "I-city" })
                .collect();
            (
                format!("flights to {city} on day{i}"),
                format!("O O {} O O", city_tags.join(" ")),
                "atis_flight".to_string(),
            )
        })
        .collect();
    let refs: Vec<(&str, &str, &str)> = rows
        .iter()
        .map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str()))
        .collect();
    write_corpus(dir, &refs);
}

#[test]
fn augment_writes_corpus_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("run");
    toy(&data, 20);
    let lexicon = tmp.path().join("lexicon.tsv");
    fs::write(&lexicon, "city\tzurich\ncity\tlake tahoe\ncity\tquito\n").unwrap();
    let o = slotaug(&[
        "augment",
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--lexicon",
        lexicon.to_str().unwrap(),
        "--seed",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("accepted 20 of 20"), "{}", stdout(&o));
    for f in ["filter_report.tsv", "diversity_report.tsv", "run_manifest"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    for f in ["seq.in", "seq.out", "label", "provenance.tsv"] {
        let text = fs::read_to_string(out.join("augmented").join(f)).unwrap();
        assert_eq!(text.lines().count(), 20, "{f}");
    }
    let v = slotaug(&[
        "validate",
        "--data-dir",
        out.join("augmented").to_str().unwrap(),
    ]);
    assert!(v.status.success(), "{}", stderr(&v));
}

#[test]
fn augment_reads_a_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    toy(&data, 6);
    let cfg = tmp.path().join("run.conf");
    fs::write(&cfg, "mode = context\nratio = 0.5\nseed = 2\n").unwrap();
    let out = tmp.path().join("run");
    let o = slotaug(&[
        "augment",
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(out.join("run_manifest")).unwrap();
    assert!(manifest.contains("mode = context"));
    assert!(manifest.contains("quota = 3"));
}

#[test]
fn shortfall_warns_but_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    toy(&data, 5);
    let o = slotaug(&[
        "augment",
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("run").to_str().unwrap(),
        "--backend",
        "echo",
    ]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("accepted 0 of 5"), "{}", stderr(&o));
}

#[test]
fn unreachable_backend_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    toy(&data, 2);
    let o = Command::new(env!("CARGO_BIN_EXE_slotaug"))
        .args(["augment", "--data-dir", data.to_str().unwrap(), "--out-dir"])
        .arg(tmp.path().join("run"))
        .args(["--backend", "http", "--timeout", "2"])
        .env("SLOTAUG_ENDPOINT", "http://127.0.0.1:1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn missing_data_dir_is_a_usage_error() {
    let o = slotaug(&["augment", "--out-dir", "/tmp/nowhere"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_of_range_epsilon_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    toy(&data, 3);
    let o = slotaug(&[
        "augment",
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("run").to_str().unwrap(),
        "--epsilon",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epsilon"));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn split_keeps_the_floor_of_the_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    toy(&data, 4478);
    let out = tmp.path().join("small");
    let o = slotaug(&[
        "split",
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--fraction",
        "1/40",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(out.join("seq.in"))
            .unwrap()
            .lines()
            .count(),
        111
    );
    assert!(stdout(&o).contains("kept 111 of 4478"));
}

#[test]
fn split_rejects_a_zero_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    toy(&data, 10);
    for fraction in ["0", "0/5", "1.5", "abc"] {
        let o = slotaug(&[
            "split",
            "--data-dir",
            data.to_str().unwrap(),
            "--out-dir",
            tmp.path().join("s").to_str().unwrap(),
            "--fraction",
            fraction,
        ]);
        assert_eq!(o.status.code(), Some(2), "{fraction}");
    }
}

#[test]
fn eval_of_gold_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    toy(&data, 8);
    let tsv = tmp.path().join("f1.tsv");
    let o = slotaug(&[
        "eval",
        "--pred-dir",
        data.to_str().unwrap(),
        "--gold-dir",
        data.to_str().unwrap(),
        "--out",
        tsv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let overall = stdout(&o)
        .lines()
        .find(|l| l.starts_with("overall"))
        .unwrap()
        .to_string();
    assert_eq!(overall.matches("1.0000").count(), 3, "{overall}");
    assert!(fs::read_to_string(tsv).unwrap().contains("f1\t1.000000"));
}

#[test]
fn validate_reports_line_and_position() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_corpus(
        &data,
        &[
            ("fly to boston", "O O B-city", "flight"),
            ("fly to denver", "O O X-city", "flight"),
        ],
    );
    let o = slotaug(&["validate", "--data-dir", data.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    let err = stderr(&o);
    assert!(
        err.contains("line 2") && err.contains("position 3"),
        "{err}"
    );
}

#[test]
fn diversity_of_a_corpus_against_itself_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    toy(&data, 8);
    let o = slotaug(&[
        "diversity",
        "--augmented-dir",
        data.to_str().unwrap(),
        "--original-dir",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let scores: Vec<&str> = text.lines().filter(|l| l.contains("(%)")).collect();
    assert_eq!(scores.len(), 2, "{text}");
    for line in scores {
        let value: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
        assert_eq!(value, 0.0, "{line}");
    }
}

#[test]
fn mix_concatenates_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    toy(&a, 3);
    toy(&b, 5);
    let out = tmp.path().join("mixed");
    let joined = format!("{},{}", a.display(), b.display());
    let o = slotaug(&["mix", "--in", &joined, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(out.join("label"))
            .unwrap()
            .lines()
            .count(),
        8
    );
}

#[test]
fn pairs_exports_the_training_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    toy(&data, 4);
    let out = tmp.path().join("pairs");
    let o = slotaug(&[
        "pairs",
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let inputs = fs::read_to_string(out.join("inputs.txt")).unwrap();
    assert!(inputs
        .lines()
        .next()
        .unwrap()
        .starts_with("flights to _ city _ on"));
    assert_eq!(
        fs::read_to_string(out.join("spans.tsv"))
            .unwrap()
            .lines()
            .next(),
        Some("0\t2\t3\tvalue")
    );
}

#[test]
fn loss_probe() {
    let tmp = tempfile::tempdir().unwrap();
    let probe = tmp.path().join("probe.json");
    fs::write(
        &probe,
        r#"{"target_ids": [0, 1], "vocab_size": 2, "probs": [[0.5, 0.5], [0.25, 0.75]]}"#,
    )
    .unwrap();
    let o = slotaug(&["loss", "--input", probe.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let want = -(0.5f64.ln()) - 0.75f64.ln();
    assert!((v["loss"].as_f64().unwrap() - want).abs() < 1e-12);
    let bad = slotaug(&[
        "loss",
        "--input",
        probe.to_str().unwrap(),
        "--epsilon",
        "1.0",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}
