use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dohdetect"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn csv_column(path: &Path, col: usize) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().to_string())
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn synth_writes_two_packet_dga_mc_flows() {
    let tmp = TempDir::new().unwrap();
    ok(
        tmp.path(),
        &["--seed", "4", "synth", "--profile", "dga-mc", "--count", "100", "--out", "f.csv", "--packets", "p.csv"],
    );
    let flows = fs::read_to_string(tmp.path().join("f.csv")).unwrap();
    assert_eq!(flows.lines().count(), 101);
    let packets = fs::read_to_string(tmp.path().join("p.csv")).unwrap();
    assert_eq!(packets.lines().count(), 1 + 200);
    for key in csv_column(&tmp.path().join("f.csv"), 0) {
        assert_eq!(packets.lines().filter(|l| l.starts_with(&format!("{key},"))).count(), 2);
    }
}

#[test]
fn unknown_profile_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["synth", "--profile", "dga-xx", "--count", "3", "--out", "f.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dga-scrw"), "{}", stderr(&out));
    assert!(!tmp.path().join("f.csv").exists());
}

#[test]
fn same_seed_same_bytes() {
    let tmp = TempDir::new().unwrap();
    for name in ["a.csv", "b.csv"] {
        ok(tmp.path(), &["--seed", "77", "synth", "--profile", "iodine", "--count", "30", "--out", name]);
    }
    ok(tmp.path(), &["--seed", "78", "synth", "--profile", "iodine", "--count", "30", "--out", "c.csv"]);
    let a = fs::read(tmp.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b.csv")).unwrap());
    assert_ne!(a, fs::read(tmp.path().join("c.csv")).unwrap());
}

#[test]
fn train_then_score_and_sigma_thresholds() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["--seed", "5", "synth", "--profile", "benign", "--count", "1200", "--out", "benign.csv"]);
    ok(dir, &["--seed", "5", "train", "--input", "benign.csv", "--model", "m.json"]);
    ok(dir, &["score", "--model", "m.json", "--input", "benign.csv", "--sigma", "3", "--out", "v3.csv"]);

    let scores: Vec<f64> = csv_column(&dir.join("v3.csv"), 1).iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(scores.len(), 1200);
    assert!(median(scores.clone()) < 0.01, "median training MSE {}", median(scores.clone()));

    let model: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("m.json")).unwrap()).unwrap();
    let stats = &model["training"];
    let (mu, sigma) = (stats["mse_mean"].as_f64().unwrap(), stats["mse_std"].as_f64().unwrap());

    let mut previous: Option<Vec<String>> = None;
    for s in 1..=5u32 {
        let name = format!("v{s}.csv");
        ok(dir, &["score", "--model", "m.json", "--input", "benign.csv", "--sigma", &s.to_string(), "--out", &name]);
        let verdicts = csv_column(&dir.join(&name), 2);
        let t = mu + f64::from(s) * sigma;
        for (v, sc) in verdicts.iter().zip(&scores) {
            assert_eq!(v == "malicious", *sc > t);
        }
        if let Some(prev) = &previous {
            // raising the threshold can only clear flows, never flag new ones
            for (p, v) in prev.iter().zip(&verdicts) {
                assert!(!(p == "benign" && v == "malicious"));
            }
        }
        previous = Some(verdicts);
    }
}

#[test]
fn model_file_round_trips_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["--seed", "6", "synth", "--profile", "benign", "--count", "200", "--out", "b.csv"]);
    ok(dir, &["--seed", "6", "train", "--input", "b.csv", "--epochs", "2", "--model", "a.json"]);
    ok(dir, &["--seed", "6", "train", "--input", "b.csv", "--epochs", "2", "--model", "b.json"]);
    assert_eq!(fs::read(dir.join("a.json")).unwrap(), fs::read(dir.join("b.json")).unwrap());
    ok(dir, &["--seed", "6", "train", "--vae", "--input", "b.csv", "--epochs", "2", "--model", "vae.json"]);
    ok(dir, &["score", "--model", "vae.json", "--input", "b.csv", "--sigma", "2", "--out", "v.csv"]);
}

#[test]
fn malformed_flow_csv_reports_the_row() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["--seed", "7", "synth", "--profile", "benign", "--count", "10", "--out", "b.csv"]);
    let text = fs::read_to_string(dir.join("b.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // file line 5: replace the last feature with text
    lines[4] = format!("{},abc", lines[4].rsplit_once(',').unwrap().0);
    fs::write(dir.join("bad.csv"), lines.join("\n") + "\n").unwrap();
    let out = run(dir, &["train", "--input", "bad.csv", "--model", "m.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("row 5") || stderr(&out).contains("line 5"), "{}", stderr(&out));
}

#[test]
fn missing_inputs_and_outputs_exit_2() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["--seed", "8", "synth", "--profile", "benign", "--count", "10", "--out", "b.csv"]);
    let out = run(dir, &["score", "--model", "nope.json", "--input", "b.csv", "--out", "v.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir, &["synth", "--profile", "benign", "--count", "5", "--out", "no/such/dir/f.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir, &["train", "--input", "b.csv", "--arch", "16,20", "--model", "m.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn help_on_every_subcommand() {
    let tmp = TempDir::new().unwrap();
    for sub in ["synth", "ingest", "train", "score", "eval", "sweep"] {
        let out = run(tmp.path(), &[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(!out.stdout.is_empty());
    }
    assert_eq!(run(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(run(tmp.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn ingest_packets_matches_synth_features() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["--seed", "9", "synth", "--profile", "dns2tcp", "--count", "20", "--out", "f.csv", "--packets", "p.csv"]);
    fs::write(dir.join("allow.cfg"), "1.1.1.1 = cloudflare\n").unwrap();
    ok(dir, &["ingest", "--packets", "p.csv", "--allow", "allow.cfg", "--label", "dns2tcp", "--out", "i.csv"]);
    assert_eq!(csv_column(&dir.join("i.csv"), 0), csv_column(&dir.join("f.csv"), 0));
    assert_eq!(csv_column(&dir.join("i.csv"), 1), vec!["dns2tcp"; 20]);
}

#[test]
fn small_eval_and_sweep() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let data = [
        "--benign-per-server", "100", "--pool", "50", "--servers", "google", "--malware", "iodine,dga-sc",
        "--epochs", "2",
    ];
    let mut args = vec!["--seed", "10", "--jobs", "2", "eval", "--detectors", "ae,iforest", "--out-dir", "ev"];
    args.extend(data);
    ok(dir, &args);
    for f in ["report_ae.csv", "report_iforest.csv", "heatmap_ae.csv", "heatmap_iforest.csv", "summary.csv"] {
        assert!(dir.join("ev").join(f).is_file(), "{f}");
    }
    let report = fs::read_to_string(dir.join("ev/report_ae.csv")).unwrap();
    assert!(report.starts_with("server,malware,fold,f1,"));
    assert_eq!(report.lines().count(), 1 + 2 * 5);
    assert_eq!(fs::read_to_string(dir.join("ev/summary.csv")).unwrap().lines().count(), 1 + 4);

    let mut args = vec!["--seed", "10", "sweep", "--archs", "16,62,9;16,9", "--out", "sw.csv"];
    args.extend(data);
    ok(dir, &args);
    assert_eq!(fs::read_to_string(dir.join("sw.csv")).unwrap().lines().count(), 3);

    fs::write(dir.join("bad.cfg"), "fodls = 3\n").unwrap();
    let mut args = vec!["--config", "bad.cfg", "eval", "--out-dir", "ev2"];
    args.extend(data);
    assert_eq!(run(dir, &args).status.code(), Some(2));
}
