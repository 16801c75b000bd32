//! End-to-end acceptance checks. Each returns a pass flag and a one-line detail; the
//! integration test target and the CLI `selftest` both print these.
//!
//! Tolerances are pinned here as constants.

use std::collections::BTreeSet;
use std::time::Instant;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cost::{
    cost_table, crossover_scan, deficit_factorization, derived_penalties, algorithmic_fill, single_tenant_projection, effective_utilization,
    Calibration,
};
use crate::erns::{reduction_ratio, ResidueSystem};
use crate::field::{dense_evaluate, PrimeField};
use crate::hlo::{
    adversarial_fuse, build_lazy_module, build_module, count_vpu_nodes, injected_rules, validate, violated_rules,
    MutationProbs, Rule,
};
use crate::mxu::{
    accumulate_probe, accumulator_bound, mxu_matmul, saturation_operands, staged_matrix_ntt, AccumulatorModel,
    MxuConfig, ResidueTwiddle, Staging, PROBE_TARGETS,
};
use crate::scheduler::{
    co_schedule, evaluate_batch, evaluate_isolated, form_batches, occupancy, padding_waste, plan_batches,
    staging_overhead, summarize_plans, ClassCaps, GroupingPolicy, Request, StackedBatch, WorkloadClass, ZoneTag,
};
use crate::trace::{generate_trace, replay_spec, ReplayConfig, TraceSpec};

pub const BOUND_RUNTIME_MS: f64 = 1.0;
pub const STAGED_RUNTIME_S: f64 = 60.0;
pub const ISOLATION_BATCHES_PER_CLASS: usize = 100;
pub const ISOLATION_MAX_ROWS: usize = 16;
pub const ERNS_SAMPLES: usize = 1000;
pub const DILITHIUM_WASTE: f64 = 0.251;
pub const DILITHIUM_WASTE_TOL: f64 = 0.002;
pub const K_OCCUPANCY_FLOOR: f64 = 0.92;
pub const MIXED_TRACE_MIN_REQUESTS: usize = 1000;
pub const COMPLIANT_MODULES: usize = 100;
pub const MUTATIONS: usize = 1000;
pub const TABLE_TOL: f64 = 0.01;
pub const DISPATCH_TOL: f64 = 0.1;
pub const CONTENTION_FREE_TOL: f64 = 0.05;
pub const PENALTY_TOL: f64 = 0.05;
pub const UTILIZATION_TARGET: f64 = 0.02875;
pub const PROJECTION_BAND: [f64; 2] = [18_900.0, 19_200.0];
pub const FACTORIZATION_TOL: f64 = 0.005;
pub const DILITHIUM_DEFICIT_TOL: f64 = 0.01;
pub const REPLAY_DURATION_S: f64 = 10.0;
pub const REPLAY_UTILIZATION: f64 = 0.80;
pub const REPLAY_UTILIZATION_TOL: f64 = 0.05;

#[derive(Clone, Debug, Serialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {:>2} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.id, self.name, self.detail)
    }
}

fn rel(x: f64, want: f64) -> f64 {
    ((x - want) / want).abs()
}

/// Collects failed sub-checks so one criterion reports all of them.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let w = what.into();
        if ok {
            self.notes.push(w);
        } else {
            self.failed.push(w);
        }
    }
    fn finish(self, id: u8, name: &'static str) -> CriterionOutcome {
        let passed = self.failed.is_empty();
        let detail = if passed { self.notes.join("; ") } else { format!("failed: {}", self.failed.join("; ")) };
        CriterionOutcome { id, name, passed, detail }
    }
}

pub fn accumulator_bounds() -> CriterionOutcome {
    let mut c = Checks::default();
    let t = Instant::now();
    let got = [
        accumulator_bound(4, 1 << 24).ok(),
        accumulator_bound(3, 1 << 24).ok(),
        accumulator_bound(4, (1 << 31) - 1).ok(),
    ];
    let ms = t.elapsed().as_secs_f64() * 1e3;
    c.check(got == [Some(128), Some(171), Some(16_448)], format!("bounds {:?}", got.map(|g| g.unwrap_or(0))));
    c.check(ms < BOUND_RUNTIME_MS, format!("{ms:.4} ms"));
    c.finish(1, "accumulator bounds")
}

pub fn probe_grid() -> CriterionOutcome {
    let mut c = Checks::default();
    let fp_expected = [true, true, true, false, false, false, false];
    let mut cells = 0;
    for (target, want_fp) in PROBE_TARGETS.into_iter().zip(fp_expected) {
        let fp = accumulate_probe(target, AccumulatorModel::Fp32Mantissa);
        let int = accumulate_probe(target, AccumulatorModel::Int32);
        c.check(fp == want_fp, format!("fp32 at {target}: {fp}"));
        c.check(int, format!("int32 at {target}: {int}"));
        cells += 2;
    }
    let mut out = c.finish(2, "accumulator grid");
    if out.passed {
        out.detail = format!("{cells} cells match");
    }
    out
}

pub fn exactness_boundary() -> CriterionOutcome {
    let mut c = Checks::default();
    let cfg = MxuConfig::new(AccumulatorModel::Fp32Mantissa, 4).expect("valid");
    let (l, r) = saturation_operands(128, 4);
    let at128 = mxu_matmul(&l, &r, &cfg).map(|o| o.report.flagged.len());
    let (l, r) = saturation_operands(129, 4);
    let at129 = mxu_matmul(&l, &r, &cfg).map(|o| o.report.flagged.len());
    c.check(matches!(at128, Ok(0)), format!("d=128 flagged {:?}", at128.ok()));
    c.check(matches!(at129, Ok(n) if n >= 1), format!("d=129 flagged {:?}", at129.ok()));
    let field = PrimeField::bn254_lane();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (d, passes) in [(256usize, 2usize), (1024, 8), (8192, 64)] {
        let t = Instant::now();
        let tw = match ResidueTwiddle::square(&field, d) {
            Ok(tw) => tw,
            Err(e) => {
                c.check(false, format!("d={d}: {e}"));
                continue;
            }
        };
        let p: Vec<u64> = (0..d).map(|_| rng.gen_range(0..tw.modulus())).collect();
        let out = staged_matrix_ntt(&p, &tw, &cfg, 128, Staging::On);
        let secs = t.elapsed().as_secs_f64();
        let coeffs: Vec<BigUint> = p.iter().map(|&x| x.into()).collect();
        let oracle: Vec<u64> = dense_evaluate(&field, &coeffs, &BigUint::from(tw.omega().expect("cyclic")), d, d)
            .iter()
            .map(|v| v.to_u64().expect("reduced"))
            .collect();
        match out {
            Ok(o) => {
                c.check(o.values == oracle, format!("d={d} bit-exact {}", o.values == oracle));
                c.check(o.passes == passes, format!("d={d} passes {}", o.passes));
                if d == 8192 {
                    c.check(secs < STAGED_RUNTIME_S, format!("d=8192 in {secs:.1} s"));
                }
            }
            Err(e) => c.check(false, format!("d={d}: {e}")),
        }
    }
    c.finish(3, "exactness boundary and staging")
}

fn random_batch(rng: &mut ChaCha8Rng, class: WorkloadClass, zone: u32) -> StackedBatch {
    let rows = rng.gen_range(1..=ISOLATION_MAX_ROWS);
    let reqs: Vec<Request> = (0..rows)
        .map(|i| Request::random(i as u64, class, rng.gen_range(64..=512), 0.0, rng.gen()))
        .collect();
    let refs: Vec<&Request> = reqs.iter().collect();
    StackedBatch::build(&refs, ZoneTag(zone)).expect("homogeneous")
}

pub fn isolation() -> CriterionOutcome {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rows_checked = 0usize;
    let mut permuted = 0usize;
    for class in WorkloadClass::ALL {
        let mut bad = 0usize;
        for b in 0..ISOLATION_BATCHES_PER_CLASS {
            let batch = random_batch(&mut rng, class, b as u32);
            let Ok(rows) = evaluate_batch(&batch) else {
                bad += 1;
                continue;
            };
            for (i, row) in rows.iter().enumerate() {
                rows_checked += 1;
                if evaluate_isolated(&batch, i).ok().as_ref() != Some(row) {
                    bad += 1;
                }
            }
            if b % 10 == 0 {
                let mut perm: Vec<usize> = (0..batch.rows()).collect();
                perm.reverse();
                perm.rotate_left(rng.gen_range(0..batch.rows()));
                let got = evaluate_batch(&batch.permuted(&perm)).ok();
                let want: Vec<Vec<u64>> = perm.iter().map(|&p| rows[p].clone()).collect();
                if got.as_ref() != Some(&want) {
                    bad += 1;
                }
                permuted += 1;
            }
        }
        c.check(bad == 0, format!("{} {} batches, {bad} mismatches", class.name(), ISOLATION_BATCHES_PER_CLASS));
    }
    c.check(true, format!("{rows_checked} rows, {permuted} permutations"));
    c.finish(4, "isolation isomorphism")
}

pub fn erns_counts() -> CriterionOutcome {
    let mut c = Checks::default();
    let sys = ResidueSystem::bn254();
    let field = PrimeField::bn254();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut wrong, mut pointwise_ok, mut min_red) = (0usize, true, u64::MAX);
    for _ in 0..ERNS_SAMPLES {
        let a = field.random_element(&mut rng);
        let b = field.random_element(&mut rng);
        let (Ok(ra), Ok(rb)) = (sys.to_residues(&a), sys.to_residues(&b)) else {
            wrong += 1;
            continue;
        };
        match sys.bn254_full_mul(&[ra], &[rb]) {
            Ok((out, count)) => {
                if sys.from_residues(&out[0]).ok() != Some(field.mul(&a, &b)) {
                    wrong += 1;
                }
                pointwise_ok &= count.pointwise_limb_products == 144;
                min_red = min_red.min(count.reduction_limb_products);
            }
            Err(_) => wrong += 1,
        }
    }
    c.check(wrong == 0, format!("{ERNS_SAMPLES} products, {wrong} wrong"));
    c.check(pointwise_ok, "144 pointwise limb products each");
    c.check(min_red > 2100, format!("reduction limb products {min_red}"));
    let eager = {
        let q = [Request::random(0, WorkloadClass::Bn254, 256, 0.0, 0)];
        let batches = form_batches(&q, ClassCaps::V4, GroupingPolicy::DegreeBucket).expect("valid");
        count_vpu_nodes(&build_module(&co_schedule(batches, 8).expect("cores")))
    };
    let lazy = count_vpu_nodes(&build_lazy_module(256));
    let k = reduction_ratio(eager, lazy);
    c.check(eager == 1764 && lazy == 392 && k == 4.5, format!("reduction_ratio {eager}/{lazy} = {k}"));
    c.finish(5, "ERNS correctness and counts")
}

pub fn scheduler_metrics() -> CriterionOutcome {
    let mut c = Checks::default();
    let uniform = |class, n, d| -> Vec<Request> {
        (0..n).map(|i| Request::random(i as u64, class, d, i as f64, 6)).collect()
    };
    let bn = form_batches(&uniform(WorkloadClass::Bn254, 8, 256), ClassCaps::V4, GroupingPolicy::DegreeBucket)
        .expect("valid");
    let dil = form_batches(&uniform(WorkloadClass::Dilithium, 8, 256), ClassCaps::V4, GroupingPolicy::DegreeBucket)
        .expect("valid");
    let w_bn = padding_waste(&bn[0]);
    let w_dil = padding_waste(&dil[0]);
    c.check(w_bn == 0.0, format!("BN254 waste {:.1}%", w_bn * 100.0));
    c.check((w_dil - DILITHIUM_WASTE).abs() <= DILITHIUM_WASTE_TOL, format!("Dilithium waste {:.2}%", w_dil * 100.0));
    let so = staging_overhead(256, 128);
    c.check(so == 0.5, format!("staging overhead {:.0}%", so * 100.0));
    let m = occupancy(&bn[0]).m_occupancy;
    c.check(m == 0.0625, format!("m occupancy {:.2}%", m * 100.0));
    let trace = generate_trace(&TraceSpec::balanced(4096.0, 1.0, 6)).expect("valid spec");
    let keys: Vec<(WorkloadClass, usize)> = trace.iter().map(|r| (r.class, r.degree)).collect();
    let plans = plan_batches(&keys, ClassCaps::V4, GroupingPolicy::DegreeBucket).expect("valid");
    let s = summarize_plans(&plans, ClassCaps::V4);
    c.check(trace.len() >= MIXED_TRACE_MIN_REQUESTS, format!("{} requests", trace.len()));
    c.check(s.k_occupancy > K_OCCUPANCY_FLOOR, format!("mean k occupancy {:.1}%", s.k_occupancy * 100.0));
    c.finish(6, "scheduler metrics")
}

fn random_assignment_module(rng: &mut ChaCha8Rng) -> crate::hlo::IrModule {
    let n = rng.gen_range(1..=6);
    let reqs: Vec<Request> = (0..n)
        .map(|i| {
            let class = if rng.gen_bool(0.5) { WorkloadClass::Bn254 } else { WorkloadClass::Dilithium };
            Request::random(i as u64, class, rng.gen_range(16..=400), i as f64, 0)
        })
        .collect();
    let policy = [GroupingPolicy::DegreeBucket, GroupingPolicy::Arrival, GroupingPolicy::SortByDegree][rng.gen_range(0..3)];
    let batches = form_batches(&reqs, ClassCaps::uniform(rng.gen_range(1..=4)), policy).expect("valid");
    build_module(&co_schedule(batches, 8).expect("cores"))
}

pub fn validator() -> CriterionOutcome {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut false_pos = 0;
    for _ in 0..COMPLIANT_MODULES {
        if validate(&random_assignment_module(&mut rng)).map(|v| !v.is_empty()).unwrap_or(true) {
            false_pos += 1;
        }
    }
    c.check(false_pos == 0, format!("{COMPLIANT_MODULES} compliant modules, {false_pos} flagged"));
    let (mut mutations, mut missed, mut spurious) = (0usize, 0usize, 0usize);
    let mut covered: BTreeSet<Rule> = BTreeSet::new();
    let mut seed = 0u64;
    while mutations < MUTATIONS {
        seed += 1;
        let m = random_assignment_module(&mut rng);
        let probs = MutationProbs {
            merge: rng.gen_range(0.0..1.0),
            cross_fuse: rng.gen_range(0.0..1.0),
            coalesce: rng.gen_range(0.0..1.0),
            liveness: rng.gen_range(0.0..1.0),
        };
        let (mutated, injected) = adversarial_fuse(&m, seed, probs);
        if injected.is_empty() {
            continue;
        }
        mutations += 1;
        let want = injected_rules(&injected);
        covered.extend(want.iter().copied());
        match validate(&mutated) {
            Ok(v) => {
                let got = violated_rules(&v);
                if !want.is_subset(&got) {
                    missed += 1;
                }
                if !got.is_subset(&want) {
                    spurious += 1;
                }
            }
            Err(_) => missed += 1,
        }
    }
    c.check(missed == 0, format!("{mutations} mutations, {missed} with undetected rules"));
    c.check(spurious == 0, format!("{spurious} with unmatched rule ids"));
    c.check(covered.len() == Rule::ALL.len(), format!("rules exercised {covered:?}"));
    c.finish(7, "validator soundness and completeness")
}

pub fn cost_model() -> CriterionOutcome {
    let mut c = Checks::default();
    let cal = Calibration::default();
    let want = [1.96e6, 284.0, 282.0, 353.0, 418.0, 4.99e6, 8574.0, 8878.0, 9811.0];
    let worst = cost_table(&cal).iter().zip(want).map(|(r, w)| rel(r.ops_per_dollar_hour, w)).fold(0.0, f64::max);
    c.check(worst <= TABLE_TOL, format!("table cells within {:.2}%", worst * 100.0));
    let p = derived_penalties(&cal);
    c.check((p.dispatch_penalty - 17.2).abs() <= DISPATCH_TOL, format!("dispatch penalty {:.2}", p.dispatch_penalty));
    c.check((p.contention_free_penalty - 14.3).abs() <= CONTENTION_FREE_TOL, format!("contention-free penalty {:.2}", p.contention_free_penalty));
    c.check((p.arrival_penalty - 1.20).abs() <= PENALTY_TOL, format!("penalty {:.3}", p.arrival_penalty));
    let pa = algorithmic_fill(256).ok();
    let ue = effective_utilization(256, cal.geometry.mxu_share).unwrap_or(0.0);
    c.check(pa == Some(0.03125), format!("algorithmic fill {:?}", pa));
    c.check((ue - UTILIZATION_TARGET).abs() < 1e-9, format!("effective utilization {:.3}%", ue * 100.0));
    let proj = single_tenant_projection(&cal);
    c.check((PROJECTION_BAND[0]..=PROJECTION_BAND[1]).contains(&proj), format!("projection {proj:.0}"));
    let d = deficit_factorization(&cal);
    let lo = rel(1071.0 * 5.19, d.headline_range[0]);
    let hi = rel(1331.0 * 5.19, d.headline_range[1]);
    c.check(lo <= FACTORIZATION_TOL && hi <= FACTORIZATION_TOL, format!(
        "headline [{:.0}, {:.0}] vs factor products ({:.2}%, {:.2}%)",
        d.headline_range[0],
        d.headline_range[1],
        lo * 100.0,
        hi * 100.0
    ));
    c.check(rel(d.headline_range[0], 5558.0) <= FACTORIZATION_TOL && rel(d.headline_range[1], 6908.0) <= FACTORIZATION_TOL, "headline vs [5558, 6908]");
    c.check(rel(d.native_int32, 4693.0) <= FACTORIZATION_TOL, format!("int32 deficit {:.0}", d.native_int32));
    c.check(rel(d.dilithium_v5p, 508.0) <= DILITHIUM_DEFICIT_TOL, format!("Dilithium v5p {:.1}", d.dilithium_v5p));
    c.check(rel(d.dilithium_v4, 582.0) <= DILITHIUM_DEFICIT_TOL, format!("Dilithium v4 {:.1}", d.dilithium_v4));
    c.check(rel(d.dilithium_baseline, 18.3e6) <= TABLE_TOL, format!("GPU baseline {:.4}M", d.dilithium_baseline / 1e6));
    c.check(
        rel(d.dilithium_f_band[0], 22.8e6) <= TABLE_TOL && rel(d.dilithium_f_band[1], 45.7e6) <= TABLE_TOL,
        format!("f-band [{:.2}M, {:.2}M]", d.dilithium_f_band[0] / 1e6, d.dilithium_f_band[1] / 1e6),
    );
    c.finish(8, "cost model")
}

pub fn trace_replay() -> CriterionOutcome {
    let mut c = Checks::default();
    let cal = Calibration::default();
    let spec = TraceSpec::balanced(4096.0, REPLAY_DURATION_S, 8);
    let cfg = ReplayConfig::v4(&cal);
    let (a, b) = (replay_spec(&spec, &cfg), replay_spec(&spec, &cfg));
    let (Ok(a), Ok(b)) = (a, b) else {
        c.check(false, "replay failed");
        return c.finish(9, "trace replay");
    };
    match a.report.class(WorkloadClass::Bn254) {
        Some(bn) => {
            let sigma = (bn.nominal_arrival / REPLAY_DURATION_S).sqrt();
            c.check(bn.nominal_arrival == 2048.0, format!("BN254 arrival {:.0} req/s", bn.nominal_arrival));
            c.check(
                (bn.measured_arrival - 2048.0).abs() <= 4.0 * sigma,
                format!("measured {:.1} req/s", bn.measured_arrival),
            );
            c.check(
                (bn.utilization - REPLAY_UTILIZATION).abs() <= REPLAY_UTILIZATION_TOL,
                format!("utilization {:.3}", bn.utilization),
            );
        }
        None => c.check(false, "no BN254 traffic"),
    }
    c.check(a.report.to_json() == b.report.to_json(), "byte-identical reports");
    c.finish(9, "trace replay")
}

pub fn crossover() -> CriterionOutcome {
    let mut c = Checks::default();
    let degrees: Vec<u64> = (8..=14).map(|k| 1u64 << k).collect();
    match crossover_scan(&Calibration::default(), &degrees) {
        Ok(pts) => {
            let rising = pts.windows(2).all(|w| w[1].gpu_advantage > w[0].gpu_advantage);
            c.check(rising, format!(
                "GPU advantage {:.0}x at 256 to {:.0}x at 16384, strictly increasing",
                pts[0].gpu_advantage,
                pts[pts.len() - 1].gpu_advantage
            ));
            c.check(pts.iter().all(|p| p.gpu_advantage > 1.0), "no crossover");
        }
        Err(e) => c.check(false, e.to_string()),
    }
    c.finish(10, "no crossover")
}

pub fn run_all() -> Vec<CriterionOutcome> {
    vec![
        accumulator_bounds(),
        probe_grid(),
        exactness_boundary(),
        isolation(),
        erns_counts(),
        scheduler_metrics(),
        validator(),
        cost_model(),
        trace_replay(),
        crossover(),
    ]
}
