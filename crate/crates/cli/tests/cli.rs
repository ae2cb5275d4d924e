use std::path::Path;
use std::process::{Command, Output};

fn gfv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfv"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_kind(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    let v: serde_json::Value = serde_json::from_str(line).expect("json error line");
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn pipeline_and_verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (root, out) = (dir.path().join("corpus"), dir.path().join("out"));
    let common = ["--root", s(&root), "--out", s(&out), "--resolution", "16"];

    let synth = gfv(&["synth", "--root", s(&root), "--country", "fin,svk", "--docs", "6", "--size", "96"]);
    assert!(synth.status.success(), "{synth:?}");
    for (cmd, extra) in [
        ("forge", vec!["--block-size", "32"]),
        ("train", vec!["--epochs", "1", "--n-similar", "4", "--n-dissimilar", "4"]),
        ("calibrate", vec!["--n-similar", "4", "--n-dissimilar", "4"]),
        ("eval", vec!["--n-similar", "2", "--n-dissimilar", "2"]),
    ] {
        let mut args = vec![cmd];
        args.extend(common);
        args.extend(extra);
        let o = gfv(&args);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["manifest.jsonl", "forge_report.json", "checkpoint.gfv", "loss_trace.csv", "thresholds.json", "run.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let metrics = std::fs::read_to_string(out.join("eval/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let doc = root.join("fin/templates/00.png");
    let other = root.join("fin/templates/01.png");
    assert!(doc.is_file(), "synthetic layout changed");
    let ckpt = out.join("checkpoint.gfv");
    let verify = |query: &Path, thresholds: &Path, country: &str| {
        gfv(&[
            "verify",
            "--reference",
            s(&doc),
            "--query",
            s(query),
            "--country",
            country,
            "--thresholds",
            s(thresholds),
            "--checkpoint",
            s(&ckpt),
            "--resolution",
            "16",
        ])
    };

    // A document against itself has distance 0, below any positive threshold.
    let thresholds = out.join("thresholds.json");
    let same = verify(&doc, &thresholds, "fin");
    let line = String::from_utf8_lossy(&same.stdout).trim().to_string();
    let lambda: f64 = line
        .split_whitespace()
        .find_map(|f| f.strip_prefix("lambda="))
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("no lambda in {line:?}: {}", String::from_utf8_lossy(&same.stderr)));
    assert!(line.contains("distance=0 "), "{line}");
    if lambda > 0.0 {
        assert_eq!(same.status.code(), Some(0));
        assert!(line.starts_with("GENUINE"), "{line}");
    }

    // With lambda 0 nothing is accepted.
    let strict = dir.path().join("strict.json");
    std::fs::write(
        &strict,
        r#"{"format": "gfv-thresholds/1", "entries": [{"country": "fin", "lambda": 0.0, "range": [0.0, 0.0], "overlap": false}]}"#,
    )
    .unwrap();
    let forged = verify(&other, &strict, "fin");
    assert_eq!(forged.status.code(), Some(2), "{}", String::from_utf8_lossy(&forged.stderr));
    assert!(String::from_utf8_lossy(&forged.stdout).starts_with("FORGED"));

    let unknown = verify(&other, &strict, "grc");
    assert_eq!(unknown.status.code(), Some(1));
    assert_eq!(error_kind(&unknown), "UnknownCountry");

    let bad_ckpt = dir.path().join("bad.gfv");
    std::fs::write(&bad_ckpt, b"not a checkpoint").unwrap();
    let o = gfv(&[
        "verify", "--reference", s(&doc), "--query", s(&doc), "--country", "fin", "--thresholds", s(&thresholds),
        "--checkpoint", s(&bad_ckpt), "--resolution", "16",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_kind(&o), "CorruptCheckpoint");
}

#[test]
fn missing_corpus_is_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = gfv(&["forge", "--root", s(&dir.path().join("nope")), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!error_kind(&o).is_empty());
}
