use std::path::PathBuf;
use std::process::{Command, Output};

use ffmxu::hlo::{adversarial_fuse, build_module, MutationProbs};
use ffmxu::scheduler::{co_schedule, form_batches, ClassCaps, GroupingPolicy, Request, WorkloadClass};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ffmxu")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("ffmxu-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn module_json(mutate: bool) -> String {
    let reqs: Vec<Request> = [(WorkloadClass::Bn254, 200), (WorkloadClass::Dilithium, 300), (WorkloadClass::Bn254, 100)]
        .iter()
        .enumerate()
        .map(|(i, &(c, d))| Request::random(i as u64, c, d, i as f64, 0))
        .collect();
    let b = form_batches(&reqs, ClassCaps::uniform(1), GroupingPolicy::DegreeBucket).unwrap();
    let m = build_module(&co_schedule(b, 2).unwrap());
    if mutate { adversarial_fuse(&m, 1, MutationProbs::ALL).0.to_json() } else { m.to_json() }
}

#[test]
fn ntt_agrees_for_each_field() {
    for (field, d) in [("f17", "4"), ("dilithium", "512"), ("bn254-lane", "256"), ("bn254", "8")] {
        let o = run(&["ntt", "--field", field, "--degree", d, "--seed", "5"]);
        assert_eq!(o.status.code(), Some(0), "{field}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("agree=true"));
    }
}

#[test]
fn staging_flag_controls_pass_count() {
    let o = run(&["ntt", "--field", "bn254-lane", "--degree", "1024", "--seed", "2"]);
    assert!(stdout(&o).contains("passes=8"));
    let o = run(&["ntt", "--field", "bn254-lane", "--degree", "1024", "--seed", "2", "--staging", "off"]);
    assert!(stdout(&o).contains("passes=1"));
    let o = run(&["ntt", "--field", "dilithium", "--degree", "512", "--seed", "2", "--accumulator", "int32"]);
    assert!(stdout(&o).contains("passes=1 "));
    assert_eq!(run(&["ntt", "--field", "bn254", "--degree", "8", "--seed", "2", "--limbs", "4"]).status.code(), Some(3));
}

#[test]
fn ntt_reads_polynomial_file() {
    let dir = scratch("poly");
    let p = dir.join("p.json");
    std::fs::write(&p, r#"{"coeffs": [1, 2, 3, 4]}"#).unwrap();
    let o = run(&["ntt", "--field", "f17", "--input", p.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let res: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("ntt.json")).unwrap()).unwrap();
    // ω = 4 over F17
    let want: Vec<serde_json::Value> = [10u64, 7, 15, 6].iter().map(|&v| v.to_string().into()).collect();
    let got: Vec<String> = res["oracle"].as_array().unwrap().iter().map(|v| v.to_string().trim_matches('"').to_string()).collect();
    assert_eq!(got, want.iter().map(|v| v.as_str().unwrap().to_string()).collect::<Vec<_>>());
    std::fs::write(&p, r#"{"coeffs": [1, 2, 17]}"#).unwrap();
    assert_eq!(run(&["ntt", "--field", "f17", "--input", p.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn usage_errors_exit_3() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(3));
    assert_eq!(run(&["ntt", "--field", "f17", "--degree", "4"]).status.code(), Some(3));
    assert_eq!(run(&["ntt", "--field", "nope", "--degree", "4", "--seed", "1"]).status.code(), Some(3));
    assert_eq!(run(&["ntt", "--field", "f17"]).status.code(), Some(3));
    assert_eq!(run(&["cost-report", "--perturb-price", "-150"]).status.code(), Some(3));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn bench_accumulator_grid() {
    let o = run(&["bench-accumulator"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.lines().any(|l| l.starts_with("16777216 ") && l.contains(" exact ")));
    assert!(s.lines().any(|l| l.starts_with("16777217 ") && l.contains("inexact")));
}

#[test]
fn validate_hlo_exit_codes() {
    let dir = scratch("hlo");
    let good = dir.join("good.json");
    let bad = dir.join("bad.json");
    std::fs::write(&good, module_json(false)).unwrap();
    std::fs::write(&bad, module_json(true)).unwrap();
    let o = run(&["validate-hlo", good.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["validate-hlo", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("violation V"), "{err}");
    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(run(&["validate-hlo", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&["validate-hlo", dir.join("missing.json").to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn cost_report_table() {
    let dir = scratch("cost");
    let o = run(&["cost-report", "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("1.96M") && s.contains("8574") && s.contains("9811"), "{s}");
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("cost_report.json")).unwrap()).unwrap();
    assert_eq!(r["table"].as_array().unwrap().len(), 9);
}

#[test]
fn identical_manifests_identical_outputs() {
    let spec = scratch("spec").join("s.json");
    std::fs::write(
        &spec,
        r#"{"trace":{"lambda":2000.0,"duration":1.0,"mixture":{"dilithium":0.5,"bn254":0.5},"degree_min":64,"degree_max":512,"seed":3},
           "replay":{"verify_fraction":0.02,"verify_seed":4}}"#,
    )
    .unwrap();
    let (a, b) = (scratch("rep-a"), scratch("rep-b"));
    for d in [&a, &b] {
        let o = run(&["schedule-replay", "--spec", spec.to_str().unwrap(), "--out", d.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &PathBuf, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "replay_report.json"), read(&b, "replay_report.json"));
    let ma: serde_json::Value = serde_json::from_slice(&read(&a, "manifest.json")).unwrap();
    let mb: serde_json::Value = serde_json::from_slice(&read(&b, "manifest.json")).unwrap();
    assert_eq!(ma["outputs"], mb["outputs"]);
    assert_eq!(ma["seeds"]["trace"], 3);

    let (x, y) = (scratch("ntt-a"), scratch("ntt-b"));
    for d in [&x, &y] {
        run(&["ntt", "--field", "dilithium", "--degree", "256", "--seed", "9", "--out", d.to_str().unwrap()]);
    }
    assert_eq!(read(&x, "ntt.json"), read(&y, "ntt.json"));
}
