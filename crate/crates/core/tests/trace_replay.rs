use ffmxu::cost::Calibration;
use ffmxu::scheduler::{GroupingPolicy, WorkloadClass};
use ffmxu::trace::*;

#[test]
fn poisson_counts_over_seeds() {
    let (lambda, dur) = (500.0, 2.0);
    let counts: Vec<f64> =
        (0..100).map(|s| generate_trace(&TraceSpec::balanced(lambda, dur, s)).unwrap().len() as f64).collect();
    let mean = counts.iter().sum::<f64>() / 100.0;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 99.0;
    let expect = lambda * dur;
    // standard error of the mean is sqrt(1000/100) ≈ 3.2
    assert!((mean - expect).abs() < 4.0 * (expect / 100.0).sqrt(), "mean {mean}");
    assert!(var > 0.6 * expect && var < 1.4 * expect, "var {var}");
}

#[test]
fn trace_shape() {
    let t = generate_trace(&TraceSpec::balanced(2000.0, 3.0, 9)).unwrap();
    assert!(t.windows(2).all(|w| w[0].t <= w[1].t));
    assert!(t.iter().all(|r| (64..=512).contains(&r.degree) && r.t < 3.0));
    let bn = t.iter().filter(|r| r.class == WorkloadClass::Bn254).count() as f64 / t.len() as f64;
    assert!((bn - 0.5).abs() < 0.03);
}

#[test]
fn jsonl_round_trip() {
    let t = generate_trace(&TraceSpec::balanced(300.0, 1.0, 4)).unwrap();
    let text = write_trace_jsonl(&t);
    let back = read_trace_jsonl(text.as_bytes()).unwrap();
    assert_eq!(write_trace_jsonl(&back), text);
    assert!(matches!(read_trace_jsonl(&b"not json\n"[..]), Err(TraceError::Parse { line: 1, .. })));
}

#[test]
fn replay_is_byte_deterministic() {
    let cfg = ReplayConfig::v4(&Calibration::default());
    let spec = TraceSpec::balanced(4096.0, 2.0, 21);
    let a = replay_spec(&spec, &cfg).unwrap().report.to_json();
    let b = replay_spec(&spec, &cfg).unwrap().report.to_json();
    assert_eq!(a, b);
}

#[test]
fn sampled_batches_verify() {
    let mut cfg = ReplayConfig::v4(&Calibration::default());
    cfg.verify_fraction = 0.05;
    let out = replay_spec(&TraceSpec::balanced(2000.0, 0.5, 2), &cfg).unwrap();
    let mut verified = 0;
    for c in &out.report.classes {
        assert_eq!(c.verification_failures, 0);
        verified += c.verified_batches;
    }
    assert!(verified > 0);
}

#[test]
fn contention_lowers_throughput() {
    let cal = Calibration::default();
    let spec = TraceSpec::balanced(2048.0, 2.0, 5);
    let on = replay_spec(&spec, &ReplayConfig::v4(&cal)).unwrap();
    let mut cfg = ReplayConfig::v4(&cal);
    cfg.contention = false;
    let off = replay_spec(&spec, &cfg).unwrap();
    let (a, b) = (on.report.class(WorkloadClass::Bn254).unwrap(), off.report.class(WorkloadClass::Bn254).unwrap());
    assert!(a.utilization > b.utilization);
    assert!((a.interference_delta - 0.057).abs() < 1e-9);
}

#[test]
fn overload_is_flagged() {
    let out = replay_spec(&TraceSpec::balanced(12_000.0, 1.0, 3), &ReplayConfig::v4(&Calibration::default())).unwrap();
    assert!(out.report.class(WorkloadClass::Bn254).unwrap().saturated);
}

#[test]
fn every_request_is_emitted_once() {
    let cfg = ReplayConfig::v4(&Calibration::default());
    let t = generate_trace(&TraceSpec::balanced(1500.0, 1.0, 8)).unwrap();
    let emitted = emit_batches(&t, &cfg).unwrap();
    let mut ids: Vec<usize> = emitted.iter().flat_map(|b| b.plan.members.clone()).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..t.len()).collect::<Vec<_>>());
    for b in &emitted {
        assert!(b.plan.rows() <= cfg.caps.get(b.plan.class));
        let oldest = b.plan.members.iter().map(|&i| t[i].t).fold(f64::INFINITY, f64::min);
        assert!(b.flushed_at <= oldest + cfg.flush_timeout + 1e-12);
    }
}

#[test]
fn spec_file_overrides_apply() {
    let text = r#"{"trace":{"lambda":100.0,"duration":1.0,"mixture":{"dilithium":0.5,"bn254":0.5},"degree_min":64,"degree_max":512,"seed":1},
                   "replay":{"cap":4,"policy":"arrival","flush_timeout":0.01}}"#;
    let f: ReplaySpecFile = serde_json::from_str(text).unwrap();
    let mut cfg = ReplayConfig::v4(&Calibration::default());
    f.replay.unwrap().apply(&mut cfg);
    assert_eq!(cfg.caps.get(WorkloadClass::Bn254), 4);
    assert_eq!(cfg.policy, GroupingPolicy::Arrival);
    assert_eq!(cfg.flush_timeout, 0.01);
}

#[test]
fn invalid_specs_rejected() {
    let mut s = TraceSpec::balanced(0.0, 1.0, 0);
    assert!(matches!(generate_trace(&s), Err(TraceError::Rate)));
    s.lambda = 10.0;
    s.degree_min = 0;
    assert!(generate_trace(&s).is_err());
}
