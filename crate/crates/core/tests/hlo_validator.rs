use ffmxu::hlo::*;
use ffmxu::scheduler::*;
use proptest::prelude::*;

fn module(degrees: &[(bool, usize)], cap: usize, cores: usize) -> IrModule {
    let reqs: Vec<Request> = degrees
        .iter()
        .enumerate()
        .map(|(i, &(bn, d))| {
            let c = if bn { WorkloadClass::Bn254 } else { WorkloadClass::Dilithium };
            Request::random(i as u64, c, d, i as f64, 0)
        })
        .collect();
    let b = form_batches(&reqs, ClassCaps::uniform(cap), GroupingPolicy::DegreeBucket).unwrap();
    build_module(&co_schedule(b, cores).unwrap())
}

fn two_class_module() -> IrModule {
    module(&[(true, 200), (true, 130), (false, 256), (false, 90), (true, 64)], 2, 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn compliant_modules_pass(reqs in prop::collection::vec((any::<bool>(), 1usize..=400), 1..6), cap in 1usize..4, cores in 1usize..9) {
        let m = module(&reqs, cap, cores);
        prop_assert_eq!(validate(&m).unwrap(), vec![]);
    }

    #[test]
    fn detected_rules_equal_injected(seed: u64, merge in 0.0f64..1.0, cross in 0.0f64..1.0, coal in 0.0f64..1.0, live in 0.0f64..1.0) {
        let m = two_class_module();
        let probs = MutationProbs { merge, cross_fuse: cross, coalesce: coal, liveness: live };
        let (mutated, injected) = adversarial_fuse(&m, seed, probs);
        let got = violated_rules(&validate(&mutated).unwrap());
        prop_assert_eq!(got, injected_rules(&injected));
    }
}

#[test]
fn each_mutation_kind_maps_to_its_rules() {
    let m = two_class_module();
    let only = |merge, cross_fuse, coalesce, liveness| MutationProbs { merge, cross_fuse, coalesce, liveness };
    let cases = [
        (only(1.0, 0.0, 0.0, 0.0), vec![Rule::V1]),
        (only(0.0, 0.0, 1.0, 0.0), vec![Rule::V2]),
        (only(0.0, 0.0, 0.0, 1.0), vec![Rule::V4]),
    ];
    for (p, want) in cases {
        let (mutated, inj) = adversarial_fuse(&m, 11, p);
        assert!(!inj.is_empty());
        let got: Vec<Rule> = violated_rules(&validate(&mutated).unwrap()).into_iter().collect();
        assert_eq!(got, want);
    }
    let (mutated, inj) = adversarial_fuse(&m, 11, only(0.0, 1.0, 0.0, 0.0));
    let got = violated_rules(&validate(&mutated).unwrap());
    assert!(got.contains(&Rule::V3));
    assert_eq!(got, injected_rules(&inj));
}

#[test]
fn no_mutation_no_violation() {
    let m = two_class_module();
    let (same, inj) = adversarial_fuse(&m, 3, MutationProbs::NONE);
    assert!(inj.is_empty());
    assert_eq!(same, m);
}

#[test]
fn json_round_trip_preserves_verdict() {
    let m = two_class_module();
    let back = IrModule::from_json(&m.to_json()).unwrap();
    assert_eq!(back, m);
    let (mutated, _) = adversarial_fuse(&m, 5, MutationProbs::ALL);
    let back = IrModule::from_json(&mutated.to_json()).unwrap();
    assert_eq!(validate(&back).unwrap(), validate(&mutated).unwrap());
}

#[test]
fn lazy_graph_is_compliant_and_smaller() {
    let lazy = build_lazy_module(256);
    assert!(validate(&lazy).unwrap().is_empty());
    let eager = module(&[(true, 256)], 1, 1);
    assert_eq!(count_vpu_nodes(&eager), 1764);
    assert_eq!(count_vpu_nodes(&lazy), 392);
}

#[test]
fn structural_errors_are_reported() {
    let mut m = two_class_module();
    let last = *m.schedule.last().unwrap();
    m.nodes.iter_mut().find(|n| n.id == last).unwrap().operands.push(NodeId(9_999_999));
    assert!(matches!(validate(&m), Err(IrError::DanglingOperand { .. })));

    let mut m = two_class_module();
    let n = m.schedule.len();
    m.schedule.swap(0, n - 1);
    assert!(validate(&m).is_err());

    assert!(matches!(IrModule::from_json("{"), Err(IrError::Parse(_))));
}

#[test]
fn violation_dump_names_nodes() {
    let (mutated, _) = adversarial_fuse(&two_class_module(), 2, MutationProbs::ALL);
    for v in validate(&mutated).unwrap() {
        assert!(!v.nodes.is_empty());
        assert!(!v.dump.is_empty());
    }
}
