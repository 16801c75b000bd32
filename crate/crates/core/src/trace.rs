//! Seeded Poisson traces and a discrete-event replay through the batcher.
//!
//! Throughput in the replay is modeled from measured constants, never timed.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::io::BufRead;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::Calibration;
use crate::field::{dense_evaluate, find_root_of_unity};
use crate::scheduler::{
    evaluate_batch, padded_degree, summarize_plans, BatchPlan, BatchSummary, ClassCaps, GroupingPolicy, Request,
    RequestRecord, SchedError, StackedBatch, WorkloadClass, ZoneTag,
};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("arrival rate must be positive and finite")]
    Rate,
    #[error("duration must be positive and finite")]
    Duration,
    #[error("mixture probabilities must be non-negative and sum to 1")]
    Mixture,
    #[error("degree range [{0}, {1}] is empty or starts at 0")]
    Degrees(usize, usize),
    #[error("flush timeout must be non-negative")]
    Timeout,
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub dilithium: f64,
    pub bn254: f64,
}

impl Mixture {
    pub const BALANCED: Mixture = Mixture { dilithium: 0.5, bn254: 0.5 };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    /// Aggregate arrivals per second.
    pub lambda: f64,
    /// Seconds.
    pub duration: f64,
    pub mixture: Mixture,
    pub degree_min: usize,
    pub degree_max: usize,
    pub seed: u64,
}

impl TraceSpec {
    pub fn balanced(lambda: f64, duration: f64, seed: u64) -> Self {
        Self { lambda, duration, mixture: Mixture::BALANCED, degree_min: 64, degree_max: 512, seed }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(TraceError::Rate);
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(TraceError::Duration);
        }
        let m = self.mixture;
        if m.dilithium < 0.0 || m.bn254 < 0.0 || ((m.dilithium + m.bn254) - 1.0).abs() > 1e-9 {
            return Err(TraceError::Mixture);
        }
        if self.degree_min == 0 || self.degree_min > self.degree_max {
            return Err(TraceError::Degrees(self.degree_min, self.degree_max));
        }
        Ok(())
    }
}

/// Exponential inter-arrivals; class then degree drawn per arrival. Tenant ids are the
/// arrival index. No coefficients: they are materialized from the seed on demand.
pub fn generate_trace(spec: &TraceSpec) -> Result<Vec<RequestRecord>, TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gap = Exp::new(spec.lambda).map_err(|_| TraceError::Rate)?;
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t >= spec.duration {
            break;
        }
        let class = if rng.gen::<f64>() < spec.mixture.dilithium { WorkloadClass::Dilithium } else { WorkloadClass::Bn254 };
        let degree = rng.gen_range(spec.degree_min..=spec.degree_max);
        out.push(RequestRecord { tenant: out.len() as u64, class, degree, coeffs: None, t });
    }
    Ok(out)
}

pub fn write_trace_jsonl(trace: &[RequestRecord]) -> String {
    let mut s = String::new();
    for r in trace {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    s
}

pub fn read_trace_jsonl(reader: impl BufRead) -> Result<Vec<RequestRecord>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TraceError::Parse { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub caps: ClassCaps,
    pub policy: GroupingPolicy,
    /// Seconds a bucket may hold its oldest request before a partial flush.
    pub flush_timeout: f64,
    /// Batched d=256 throughput per class, whole slice.
    pub bn254_ops: f64,
    pub dilithium_ops: f64,
    pub contention: bool,
    pub bn254_delta: f64,
    pub dilithium_delta: f64,
    /// Fraction of emitted batches evaluated and checked against the oracle.
    pub verify_fraction: f64,
    pub verify_seed: u64,
}

impl ReplayConfig {
    /// v4 slice constants.
    pub fn v4(c: &Calibration) -> Self {
        Self {
            caps: ClassCaps::V4,
            policy: GroupingPolicy::DegreeBucket,
            flush_timeout: 0.025,
            bn254_ops: c.throughput.bn254_v4,
            dilithium_ops: c.throughput.dilithium_v4,
            contention: true,
            bn254_delta: c.contention.bn254_delta,
            dilithium_delta: c.contention.dilithium_delta,
            verify_fraction: 0.0,
            verify_seed: 0,
        }
    }

    fn ops(&self, class: WorkloadClass) -> f64 {
        match class {
            WorkloadClass::Dilithium => self.dilithium_ops,
            WorkloadClass::Bn254 => self.bn254_ops,
        }
    }
    fn delta(&self, class: WorkloadClass) -> f64 {
        match class {
            WorkloadClass::Dilithium => self.dilithium_delta,
            WorkloadClass::Bn254 => self.bn254_delta,
        }
    }
}

/// Padded footprint of a d = 256 row: the unit the class throughput is quoted in.
pub fn reference_footprint(class: WorkloadClass) -> usize {
    padded_degree(256, class.d_max())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: Option<WorkloadClass>,
    pub requests: usize,
    pub nominal_arrival: f64,
    pub measured_arrival: f64,
    /// Rows per busy second under the service model.
    pub modeled_throughput: f64,
    /// Same without contention.
    pub isolated_throughput: f64,
    pub interference_delta: f64,
    pub served_per_sec: f64,
    pub utilization: f64,
    pub saturated: bool,
    pub metrics: BatchSummary,
    pub verified_batches: usize,
    pub verification_failures: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub duration: f64,
    pub requests: usize,
    pub classes: Vec<ClassReport>,
}

impl ReplayReport {
    pub fn class(&self, c: WorkloadClass) -> Option<&ClassReport> {
        self.classes.iter().find(|r| r.class == Some(c))
    }
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>11} {:>13} {:>13} {:>10} {:>12} {:>11} {:>10}",
            "class", "requests", "batch fill", "padding waste", "staging ovhd", "k occ", "ops/sec", "utilization", "verified"
        );
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<10} {:>8} {:>10.1}% {:>12.1}% {:>12.1}% {:>9.1}% {:>12.0} {:>11.3} {:>10}",
                c.class.map(|c| c.name()).unwrap_or("-"),
                c.requests,
                c.metrics.batch_fill * 100.0,
                c.metrics.padding_waste * 100.0,
                c.metrics.staging_overhead * 100.0,
                c.metrics.k_occupancy * 100.0,
                c.modeled_throughput,
                c.utilization,
                c.verified_batches
            );
        }
        s
    }
}

/// A flushed batch with its dispatch time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmittedBatch {
    pub plan: BatchPlan,
    pub flushed_at: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutput {
    pub report: ReplayReport,
    pub batches: Vec<EmittedBatch>,
}

fn bucket_key(policy: GroupingPolicy, class: WorkloadClass, degree: usize) -> (WorkloadClass, usize) {
    match policy {
        GroupingPolicy::DegreeBucket => (class, degree.div_ceil(class.d_max())),
        _ => (class, 0),
    }
}

/// Online batching: buckets flush on reaching the cap or when the oldest member has waited
/// `flush_timeout`; whatever remains flushes at its deadline after the last arrival.
pub fn emit_batches(trace: &[RequestRecord], cfg: &ReplayConfig) -> Result<Vec<EmittedBatch>, TraceError> {
    if cfg.flush_timeout < 0.0 {
        return Err(TraceError::Timeout);
    }
    if cfg.caps.dilithium == 0 || cfg.caps.bn254 == 0 {
        return Err(SchedError::ZeroCap.into());
    }
    let mut order: Vec<usize> = (0..trace.len()).collect();
    order.sort_by(|&a, &b| trace[a].t.total_cmp(&trace[b].t).then(a.cmp(&b)));
    let mut queues: BTreeMap<(WorkloadClass, usize), VecDeque<usize>> = BTreeMap::new();
    let mut out = Vec::new();
    let make = |members: Vec<usize>, at: f64, class: WorkloadClass| {
        let mut members = members;
        if cfg.policy == GroupingPolicy::SortByDegree {
            members.sort_by(|&a, &b| trace[b].degree.cmp(&trace[a].degree).then(a.cmp(&b)));
        }
        let degrees: Vec<usize> = members.iter().map(|&i| trace[i].degree).collect();
        let padded_max = degrees.iter().map(|&d| padded_degree(d, class.d_max())).max().unwrap_or(0);
        EmittedBatch { plan: BatchPlan { class, members, degrees, padded_max }, flushed_at: at }
    };
    // flush every bucket whose deadline is at or before `now`, in deadline order
    let flush_due = |queues: &mut BTreeMap<(WorkloadClass, usize), VecDeque<usize>>, now: f64, out: &mut Vec<EmittedBatch>| loop {
        let due = queues
            .iter()
            .filter_map(|(k, q)| q.front().map(|&i| (trace[i].t + cfg.flush_timeout, *k)))
            .filter(|(d, _)| *d <= now)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some((deadline, key)) = due else { break };
        let members: Vec<usize> = queues.get_mut(&key).expect("present").drain(..).collect();
        out.push(make(members, deadline, key.0));
    };
    for &i in &order {
        let r = &trace[i];
        if r.degree == 0 {
            return Err(SchedError::ZeroDegree { tenant: r.tenant }.into());
        }
        flush_due(&mut queues, r.t, &mut out);
        let key = bucket_key(cfg.policy, r.class, r.degree);
        let q = queues.entry(key).or_default();
        q.push_back(i);
        if q.len() >= cfg.caps.get(r.class) {
            let members: Vec<usize> = q.drain(..).collect();
            out.push(make(members, r.t, r.class));
        }
    }
    flush_due(&mut queues, f64::INFINITY, &mut out);
    Ok(out)
}

fn materialize(trace: &[RequestRecord], plan: &BatchPlan, seed: u64) -> Result<StackedBatch, SchedError> {
    let reqs: Vec<Request> =
        plan.members.iter().map(|&i| trace[i].clone().materialize(seed)).collect::<Result<_, _>>()?;
    let refs: Vec<&Request> = reqs.iter().collect();
    StackedBatch::build(&refs, ZoneTag(0))
}

/// Batched evaluation of one emitted batch against the dense field oracle, row by row.
pub fn verify_batch(trace: &[RequestRecord], plan: &BatchPlan, seed: u64) -> Result<bool, SchedError> {
    let batch = materialize(trace, plan, seed)?;
    let rows = evaluate_batch(&batch)?;
    let field = batch.class().field();
    let n_out = batch.n_out();
    let omega = find_root_of_unity(&field, n_out as u64).expect("n_out within two-adicity");
    Ok(batch.operand().iter().zip(&rows).all(|(p, got)| {
        let coeffs: Vec<BigUint> = p.iter().map(|&c| BigUint::from(c)).collect();
        let want = dense_evaluate(&field, &coeffs, &omega, n_out, n_out);
        want.iter().zip(got).all(|(w, &g)| w.to_u64() == Some(g))
    }))
}

/// Deterministic given (trace, config). Per class a single FIFO server runs the class's
/// batches; a row costs (1/ops)·(d̂_max/d̂_ref), inflated by 1/(1−δ) when the other class
/// is present in the trace.
pub fn replay(trace: &[RequestRecord], duration: f64, cfg: &ReplayConfig) -> Result<ReplayOutput, TraceError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(TraceError::Duration);
    }
    let batches = emit_batches(trace, cfg)?;
    let present: Vec<WorkloadClass> =
        WorkloadClass::ALL.into_iter().filter(|c| trace.iter().any(|r| r.class == *c)).collect();

    let mut verify_rng = ChaCha8Rng::seed_from_u64(cfg.verify_seed);
    let sampled: Vec<usize> =
        (0..batches.len()).filter(|_| verify_rng.gen::<f64>() < cfg.verify_fraction).collect();
    let outcomes: Vec<Result<bool, SchedError>> =
        sampled.par_iter().map(|&b| verify_batch(trace, &batches[b].plan, cfg.verify_seed)).collect();
    let mut verified: BTreeMap<WorkloadClass, (usize, usize)> = BTreeMap::new();
    for (&b, ok) in sampled.iter().zip(outcomes) {
        let e = verified.entry(batches[b].plan.class).or_default();
        e.0 += 1;
        if !ok? {
            e.1 += 1;
        }
    }

    let mut classes = Vec::new();
    for class in present {
        let others = WorkloadClass::ALL.into_iter().any(|o| o != class && trace.iter().any(|r| r.class == o));
        let contention = if cfg.contention && others { 1.0 / (1.0 - cfg.delta(class)) } else { 1.0 };
        let d_ref = reference_footprint(class) as f64;
        let row_time = |d_hat: usize| d_hat as f64 / d_ref / cfg.ops(class);
        let mut free = 0.0f64;
        let (mut busy, mut busy_isolated) = (0.0, 0.0);
        let mut plans = Vec::new();
        for b in batches.iter().filter(|b| b.plan.class == class) {
            let isolated: f64 = b.plan.rows() as f64 * row_time(b.plan.padded_max);
            let service = isolated * contention;
            let start = free.max(b.flushed_at);
            free = start + service;
            busy += service;
            busy_isolated += isolated;
            plans.push(b.plan.clone());
        }
        let requests = plans.iter().map(|p| p.rows()).sum::<usize>();
        let modeled = if busy > 0.0 { requests as f64 / busy } else { 0.0 };
        let isolated = if busy_isolated > 0.0 { requests as f64 / busy_isolated } else { 0.0 };
        let utilization = busy / duration;
        let (v, f) = verified.get(&class).copied().unwrap_or_default();
        classes.push(ClassReport {
            class: Some(class),
            requests,
            nominal_arrival: 0.0,
            measured_arrival: requests as f64 / duration,
            modeled_throughput: modeled,
            isolated_throughput: isolated,
            interference_delta: if isolated > 0.0 { 1.0 - modeled / isolated } else { 0.0 },
            served_per_sec: requests as f64 / duration,
            utilization,
            saturated: utilization > 1.0,
            metrics: summarize_plans(&plans, cfg.caps),
            verified_batches: v,
            verification_failures: f,
        });
    }
    Ok(ReplayOutput { report: ReplayReport { duration, requests: trace.len(), classes }, batches })
}

/// Generates the trace for `spec` and replays it; nominal arrival rates come from the spec.
pub fn replay_spec(spec: &TraceSpec, cfg: &ReplayConfig) -> Result<ReplayOutput, TraceError> {
    let trace = generate_trace(spec)?;
    let mut out = replay(&trace, spec.duration, cfg)?;
    for c in &mut out.report.classes {
        c.nominal_arrival = spec.lambda
            * match c.class {
                Some(WorkloadClass::Dilithium) => spec.mixture.dilithium,
                Some(WorkloadClass::Bn254) => spec.mixture.bn254,
                None => 0.0,
            };
    }
    Ok(out)
}

/// Replay input file: the trace spec plus optional replay overrides.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplaySpecFile {
    pub trace: TraceSpec,
    #[serde(default)]
    pub replay: Option<ReplayOverrides>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ReplayOverrides {
    pub cap: Option<usize>,
    pub policy: Option<GroupingPolicy>,
    pub flush_timeout: Option<f64>,
    pub contention: Option<bool>,
    pub verify_fraction: Option<f64>,
    pub verify_seed: Option<u64>,
}

impl ReplayOverrides {
    pub fn apply(&self, cfg: &mut ReplayConfig) {
        if let Some(c) = self.cap {
            cfg.caps = ClassCaps::uniform(c);
        }
        if let Some(p) = self.policy {
            cfg.policy = p;
        }
        if let Some(t) = self.flush_timeout {
            cfg.flush_timeout = t;
        }
        if let Some(c) = self.contention {
            cfg.contention = c;
        }
        if let Some(f) = self.verify_fraction {
            cfg.verify_fraction = f;
        }
        if let Some(s) = self.verify_seed {
            cfg.verify_seed = s;
        }
    }
}
