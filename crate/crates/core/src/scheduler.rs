//! Tenant batching (row stacking into padded operands) and slice assignment.
//!
//! Two workload classes share the matrix unit. Each runs in its own lane field:
//! Dilithium over q = 8,380,417 with three limbs (staging width 171), and the BN254
//! class over the NTT-friendly lane prime with four limbs (staging width 128).

use std::collections::BTreeMap;
use std::io::BufRead;
use std::sync::mpsc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::PrimeField;
use crate::mxu::{
    pack_operands, staged_evaluate, staged_matrix_ntt, AccumulatorModel, MxuConfig, MxuError, ResidueTwiddle,
    Staging, VpuMode, TILE,
};

pub const DEFAULT_CORES: usize = 8;

#[derive(Debug, Error)]
pub enum SchedError {
    #[error("tenant {tenant}: degree must be at least 1")]
    ZeroDegree { tenant: u64 },
    #[error("tenant {tenant}: {got} coefficients for degree {degree}")]
    CoeffLength { tenant: u64, degree: usize, got: usize },
    #[error("tenant {tenant}: coefficient {value} not reduced mod {modulus}")]
    CoeffRange { tenant: u64, value: u64, modulus: u64 },
    #[error("tenant {tenant}: degree {degree} exceeds the largest {class:?} transform size")]
    DegreeTooLarge { tenant: u64, degree: usize, class: WorkloadClass },
    #[error("batch mixes {0:?} and {1:?}")]
    ClassMismatch(WorkloadClass, WorkloadClass),
    #[error("batch cap must be positive")]
    ZeroCap,
    #[error("empty batch")]
    EmptyBatch,
    #[error("need at least one core")]
    NoCores,
    #[error("tenant {tenant}: {source}")]
    Arithmetic { tenant: u64, source: MxuError },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadClass {
    Dilithium,
    Bn254,
}

impl WorkloadClass {
    pub const ALL: [WorkloadClass; 2] = [WorkloadClass::Dilithium, WorkloadClass::Bn254];

    pub fn field(self) -> PrimeField {
        match self {
            WorkloadClass::Dilithium => PrimeField::dilithium(),
            WorkloadClass::Bn254 => PrimeField::bn254_lane(),
        }
    }
    pub fn modulus(self) -> u64 {
        self.field().modulus_u64().expect("lane fields are word sized")
    }
    pub fn limbs(self) -> usize {
        match self {
            WorkloadClass::Dilithium => 3,
            WorkloadClass::Bn254 => 4,
        }
    }
    /// FP32-mantissa staging width for the class limb count.
    pub fn d_max(self) -> usize {
        match self {
            WorkloadClass::Dilithium => 171,
            WorkloadClass::Bn254 => 128,
        }
    }
    pub fn mxu_config(self) -> MxuConfig {
        MxuConfig::new(AccumulatorModel::Fp32Mantissa, self.limbs()).expect("valid limb count")
    }
    pub fn name(self) -> &'static str {
        match self {
            WorkloadClass::Dilithium => "dilithium",
            WorkloadClass::Bn254 => "bn254",
        }
    }
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dilithium" => Some(WorkloadClass::Dilithium),
            "bn254" => Some(WorkloadClass::Bn254),
            _ => None,
        }
    }
    fn max_transform(self) -> usize {
        1usize << self.field().two_adicity().min(24)
    }
}

/// ⌈d/d_max⌉·d_max.
pub fn padded_degree(d: usize, d_max: usize) -> usize {
    d.div_ceil(d_max) * d_max
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub tenant_id: u64,
    pub class: WorkloadClass,
    pub degree: usize,
    pub coeffs: Vec<u64>,
    pub arrival_time: f64,
}

impl Request {
    pub fn new(
        tenant_id: u64,
        class: WorkloadClass,
        coeffs: Vec<u64>,
        arrival_time: f64,
    ) -> Result<Self, SchedError> {
        let r = Self { tenant_id, class, degree: coeffs.len(), coeffs, arrival_time };
        r.validate()?;
        Ok(r)
    }

    /// Random residues from a per-tenant stream.
    pub fn random(tenant_id: u64, class: WorkloadClass, degree: usize, arrival_time: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tenant_id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let m = class.modulus();
        let coeffs = (0..degree).map(|_| rng.gen_range(0..m)).collect();
        Self { tenant_id, class, degree, coeffs, arrival_time }
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        let tenant = self.tenant_id;
        if self.degree == 0 {
            return Err(SchedError::ZeroDegree { tenant });
        }
        if self.coeffs.len() != self.degree {
            return Err(SchedError::CoeffLength { tenant, degree: self.degree, got: self.coeffs.len() });
        }
        if self.degree > self.class.max_transform() {
            return Err(SchedError::DegreeTooLarge { tenant, degree: self.degree, class: self.class });
        }
        let m = self.class.modulus();
        if let Some(&value) = self.coeffs.iter().find(|&&c| c >= m) {
            return Err(SchedError::CoeffRange { tenant, value, modulus: m });
        }
        Ok(())
    }
}

/// One JSON-lines ingress record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RequestRecord {
    pub tenant: u64,
    pub class: WorkloadClass,
    pub degree: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<u64>>,
    pub t: f64,
}

impl RequestRecord {
    pub fn materialize(self, seed: u64) -> Result<Request, SchedError> {
        let r = match self.coeffs {
            Some(c) => Request {
                tenant_id: self.tenant,
                class: self.class,
                degree: self.degree,
                coeffs: c,
                arrival_time: self.t,
            },
            None => Request::random(self.tenant, self.class, self.degree, self.t, seed),
        };
        r.validate()?;
        Ok(r)
    }
}

pub fn read_requests_jsonl(reader: impl BufRead, seed: u64) -> Result<Vec<Request>, SchedError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RequestRecord =
            serde_json::from_str(&line).map_err(|e| SchedError::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(rec.materialize(seed)?);
    }
    Ok(out)
}

/// Multi-producer ingress; the scheduler side drains in arrival order.
pub fn ingress() -> (IngressProducer, IngressConsumer) {
    let (tx, rx) = mpsc::channel();
    (IngressProducer { tx }, IngressConsumer { rx })
}

#[derive(Clone)]
pub struct IngressProducer {
    tx: mpsc::Sender<Request>,
}

impl IngressProducer {
    pub fn submit(&self, r: Request) -> Result<(), SchedError> {
        r.validate()?;
        // the consumer being gone only means nobody will schedule this request
        let _ = self.tx.send(r);
        Ok(())
    }
}

pub struct IngressConsumer {
    rx: mpsc::Receiver<Request>,
}

impl IngressConsumer {
    /// Everything submitted so far, ordered by (arrival_time, tenant_id).
    pub fn drain(&self) -> Vec<Request> {
        let mut v: Vec<Request> = self.rx.try_iter().collect();
        sort_by_arrival(&mut v);
        v
    }
    /// Blocks until every producer is dropped.
    pub fn drain_all(self) -> Vec<Request> {
        let mut v: Vec<Request> = self.rx.into_iter().collect();
        sort_by_arrival(&mut v);
        v
    }
}

fn sort_by_arrival(v: &mut [Request]) {
    v.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time).then(a.tenant_id.cmp(&b.tenant_id)));
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCaps {
    pub dilithium: usize,
    pub bn254: usize,
}

impl ClassCaps {
    pub const V4: ClassCaps = ClassCaps { dilithium: 8, bn254: 8 };
    pub const V5: ClassCaps = ClassCaps { dilithium: 16, bn254: 16 };

    pub fn uniform(cap: usize) -> Self {
        Self { dilithium: cap, bn254: cap }
    }
    pub fn get(&self, c: WorkloadClass) -> usize {
        match c {
            WorkloadClass::Dilithium => self.dilithium,
            WorkloadClass::Bn254 => self.bn254,
        }
    }
}

impl Default for ClassCaps {
    fn default() -> Self {
        Self::V4
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupingPolicy {
    /// Same padded-degree bucket, arrival order inside the bucket.
    #[default]
    DegreeBucket,
    /// Class-wide arrival order.
    Arrival,
    /// Descending degree within class.
    SortByDegree,
}

impl GroupingPolicy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "degree-bucket" | "bucket" => Some(Self::DegreeBucket),
            "arrival" => Some(Self::Arrival),
            "sort-by-degree" => Some(Self::SortByDegree),
            _ => None,
        }
    }
}

/// Batch membership without operands.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub class: WorkloadClass,
    /// Indices into the planned sequence.
    pub members: Vec<usize>,
    pub degrees: Vec<usize>,
    pub padded_max: usize,
}

impl BatchPlan {
    pub fn rows(&self) -> usize {
        self.members.len()
    }
}

/// Groups (class, degree) keys into batches. Output is ordered by the position of each
/// batch's first member, so the plan is a pure function of the input order.
pub fn plan_batches(
    keys: &[(WorkloadClass, usize)],
    caps: ClassCaps,
    policy: GroupingPolicy,
) -> Result<Vec<BatchPlan>, SchedError> {
    if caps.dilithium == 0 || caps.bn254 == 0 {
        return Err(SchedError::ZeroCap);
    }
    let mut groups: BTreeMap<(WorkloadClass, usize), Vec<usize>> = BTreeMap::new();
    for (i, &(class, d)) in keys.iter().enumerate() {
        let bucket = match policy {
            GroupingPolicy::DegreeBucket => d.div_ceil(class.d_max()),
            _ => 0,
        };
        groups.entry((class, bucket)).or_default().push(i);
    }
    let mut plans = Vec::new();
    for ((class, _), mut idx) in groups {
        if policy == GroupingPolicy::SortByDegree {
            idx.sort_by(|&a, &b| keys[b].1.cmp(&keys[a].1).then(a.cmp(&b)));
        }
        for chunk in idx.chunks(caps.get(class)) {
            let degrees: Vec<usize> = chunk.iter().map(|&i| keys[i].1).collect();
            let padded_max = degrees.iter().map(|&d| padded_degree(d, class.d_max())).max().unwrap_or(0);
            plans.push(BatchPlan { class, members: chunk.to_vec(), degrees, padded_max });
        }
    }
    plans.sort_by_key(|p| p.members.iter().copied().min().unwrap_or(usize::MAX));
    Ok(plans)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ZoneTag(pub u32);

/// N_c tenant rows zero-padded to d̂_max and stacked.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackedBatch {
    class: WorkloadClass,
    padded_max: usize,
    operand: Vec<Vec<u64>>,
    row_map: Vec<u64>,
    zone: ZoneTag,
    degrees: Vec<usize>,
}

impl StackedBatch {
    /// Writes each request into its own zero-initialised row.
    pub fn build(members: &[&Request], zone: ZoneTag) -> Result<Self, SchedError> {
        let first = members.first().ok_or(SchedError::EmptyBatch)?;
        let class = first.class;
        let mut padded_max = 0;
        for r in members {
            if r.class != class {
                return Err(SchedError::ClassMismatch(class, r.class));
            }
            r.validate()?;
            padded_max = padded_max.max(padded_degree(r.degree, class.d_max()));
        }
        let mut operand = vec![vec![0u64; padded_max]; members.len()];
        for (row, r) in operand.iter_mut().zip(members) {
            row[..r.degree].copy_from_slice(&r.coeffs);
        }
        Ok(Self {
            class,
            padded_max,
            operand,
            row_map: members.iter().map(|r| r.tenant_id).collect(),
            zone,
            degrees: members.iter().map(|r| r.degree).collect(),
        })
    }

    pub fn class(&self) -> WorkloadClass {
        self.class
    }
    pub fn rows(&self) -> usize {
        self.operand.len()
    }
    pub fn padded_max(&self) -> usize {
        self.padded_max
    }
    pub fn operand(&self) -> &[Vec<u64>] {
        &self.operand
    }
    pub fn row_map(&self) -> &[u64] {
        &self.row_map
    }
    pub fn zone(&self) -> ZoneTag {
        self.zone
    }
    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }
    /// Evaluation points per row: the next power of two above the largest member degree.
    pub fn n_out(&self) -> usize {
        self.degrees.iter().copied().max().unwrap_or(1).next_power_of_two()
    }
    /// Operand footprint in limb bytes.
    pub fn operand_bytes(&self) -> u64 {
        (self.rows() * self.padded_max * self.class.limbs()) as u64
    }

    pub fn twiddle(&self) -> Result<ResidueTwiddle, MxuError> {
        ResidueTwiddle::ntt(&self.class.field(), self.padded_max, self.n_out())
    }

    /// Rows reordered by `perm` (row i of the result is row perm[i] of self).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |v: &Vec<usize>| perm.iter().map(|&p| v[p]).collect::<Vec<_>>();
        Self {
            class: self.class,
            padded_max: self.padded_max,
            operand: perm.iter().map(|&p| self.operand[p].clone()).collect(),
            row_map: perm.iter().map(|&p| self.row_map[p]).collect(),
            zone: self.zone,
            degrees: pick(&self.degrees),
        }
    }
}

/// Plans, then builds operands. Zone tags are the batch index.
pub fn form_batches(
    queue: &[Request],
    caps: ClassCaps,
    policy: GroupingPolicy,
) -> Result<Vec<StackedBatch>, SchedError> {
    let keys: Vec<(WorkloadClass, usize)> = queue.iter().map(|r| (r.class, r.degree)).collect();
    plan_batches(&keys, caps, policy)?
        .iter()
        .enumerate()
        .map(|(z, p)| {
            let members: Vec<&Request> = p.members.iter().map(|&i| &queue[i]).collect();
            StackedBatch::build(&members, ZoneTag(z as u32))
        })
        .collect()
}

pub fn padding_waste_of(degrees: &[usize], padded_max: usize) -> f64 {
    if degrees.is_empty() || padded_max == 0 {
        return 0.0;
    }
    let used: usize = degrees.iter().sum();
    1.0 - used as f64 / (degrees.len() * padded_max) as f64
}

/// 1 − Σd_i / (N_c·d̂_max).
pub fn padding_waste(batch: &StackedBatch) -> f64 {
    padding_waste_of(&batch.degrees, batch.padded_max)
}

/// (⌈d/d_max⌉ − 1) / ⌈d/d_max⌉.
pub fn staging_overhead(d: usize, d_max: usize) -> f64 {
    let p = d.div_ceil(d_max).max(1);
    (p - 1) as f64 / p as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub k_occupancy: f64,
    pub m_occupancy: f64,
}

pub fn occupancy_of(degrees: &[usize], padded_max: usize) -> Occupancy {
    let active = degrees.iter().copied().max().unwrap_or(0);
    Occupancy {
        k_occupancy: if padded_max == 0 { 0.0 } else { active as f64 / padded_max as f64 },
        m_occupancy: degrees.len() as f64 / TILE as f64,
    }
}

/// K: populated columns (widest member) over dispatched columns d̂_max. M: N_c / 128.
pub fn occupancy(batch: &StackedBatch) -> Occupancy {
    occupancy_of(&batch.degrees, batch.padded_max)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub batches: usize,
    pub rows: usize,
    /// Cell-weighted over all batches.
    pub padding_waste: f64,
    /// Mean over requests.
    pub staging_overhead: f64,
    /// Means over batches.
    pub k_occupancy: f64,
    pub m_occupancy: f64,
    pub batch_fill: f64,
}

pub fn summarize_plans(plans: &[BatchPlan], caps: ClassCaps) -> BatchSummary {
    if plans.is_empty() {
        return BatchSummary::default();
    }
    let (mut used, mut cells, mut stage, mut rows) = (0usize, 0usize, 0.0, 0usize);
    let (mut k, mut m, mut fill) = (0.0, 0.0, 0.0);
    for p in plans {
        used += p.degrees.iter().sum::<usize>();
        cells += p.rows() * p.padded_max;
        rows += p.rows();
        stage += p.degrees.iter().map(|&d| staging_overhead(d, p.class.d_max())).sum::<f64>();
        let o = occupancy_of(&p.degrees, p.padded_max);
        k += o.k_occupancy;
        m += o.m_occupancy;
        fill += p.rows() as f64 / caps.get(p.class) as f64;
    }
    let n = plans.len() as f64;
    BatchSummary {
        batches: plans.len(),
        rows,
        padding_waste: 1.0 - used as f64 / cells as f64,
        staging_overhead: stage / rows as f64,
        k_occupancy: k / n,
        m_occupancy: m / n,
        batch_fill: fill / n,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneRange {
    pub start: u64,
    pub end: u64,
}

impl ZoneRange {
    pub fn overlaps(&self, o: &ZoneRange) -> bool {
        self.start < o.end && o.start < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub batch: usize,
    pub core: usize,
    pub window: usize,
    pub zone: ZoneRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceAssignment {
    pub cores: usize,
    pub batches: Vec<StackedBatch>,
    pub placements: Vec<Placement>,
}

/// HBM zones are aligned to this many bytes.
pub const ZONE_ALIGN: u64 = 4096;

impl SliceAssignment {
    pub fn windows(&self) -> usize {
        self.placements.iter().map(|p| p.window + 1).max().unwrap_or(0)
    }
    /// N_s for one dispatch window: Σ N_c over its cores.
    pub fn slices_in(&self, window: usize) -> usize {
        self.placements.iter().filter(|p| p.window == window).map(|p| self.batches[p.batch].rows()).sum()
    }
    pub fn core_batches(&self, core: usize) -> Vec<&StackedBatch> {
        self.placements.iter().filter(|p| p.core == core).map(|p| &self.batches[p.batch]).collect()
    }
    /// Pairs of placements whose HBM ranges intersect.
    pub fn zone_overlaps(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, a) in self.placements.iter().enumerate() {
            for (j, b) in self.placements.iter().enumerate().skip(i + 1) {
                if a.zone.overlaps(&b.zone) {
                    out.push((i, j));
                }
            }
        }
        out
    }
    /// (window, core) slots that hold more than one class.
    pub fn class_mixing(&self) -> Vec<(usize, usize)> {
        let mut seen: BTreeMap<(usize, usize), WorkloadClass> = BTreeMap::new();
        let mut bad = Vec::new();
        for p in &self.placements {
            let c = self.batches[p.batch].class;
            match seen.get(&(p.window, p.core)) {
                Some(&prev) if prev != c => bad.push((p.window, p.core)),
                Some(_) => {}
                None => {
                    seen.insert((p.window, p.core), c);
                }
            }
        }
        bad
    }
}

/// One batch per core per window. Classes are interleaved round-robin so both are resident
/// in every window while both have work; each class keeps its own order.
pub fn co_schedule(batches: Vec<StackedBatch>, cores: usize) -> Result<SliceAssignment, SchedError> {
    if cores == 0 {
        return Err(SchedError::NoCores);
    }
    let mut per_class: BTreeMap<WorkloadClass, std::collections::VecDeque<usize>> = BTreeMap::new();
    let mut class_order = Vec::new();
    for (i, b) in batches.iter().enumerate() {
        if !per_class.contains_key(&b.class) {
            class_order.push(b.class);
        }
        per_class.entry(b.class).or_default().push_back(i);
    }
    let mut order = Vec::with_capacity(batches.len());
    while order.len() < batches.len() {
        for c in &class_order {
            if let Some(i) = per_class.get_mut(c).and_then(|q| q.pop_front()) {
                order.push(i);
            }
        }
    }
    let mut cursor = 0u64;
    let placements = order
        .into_iter()
        .enumerate()
        .map(|(slot, batch)| {
            let size = batches[batch].operand_bytes().div_ceil(ZONE_ALIGN).max(1) * ZONE_ALIGN;
            let zone = ZoneRange { start: cursor, end: cursor + size };
            cursor += size;
            Placement { batch, core: slot % cores, window: slot / cores, zone }
        })
        .collect();
    Ok(SliceAssignment { cores, batches, placements })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TenantResult {
    pub tenant_id: u64,
    pub batch: usize,
    pub row: usize,
    pub values: Vec<u64>,
}

/// Staged evaluation of a whole batch in one fused matmul per pass.
pub fn evaluate_batch(batch: &StackedBatch) -> Result<Vec<Vec<u64>>, SchedError> {
    let attribute = |source| SchedError::Arithmetic { tenant: batch.row_map[0], source };
    let tw = batch.twiddle().map_err(attribute)?;
    let cfg = batch.class.mxu_config();
    let (left, right) = pack_operands(&batch.operand, &tw, cfg.limbs).map_err(attribute)?;
    let out = staged_evaluate(&left, &right, tw.modulus(), &cfg, batch.class.d_max(), Staging::On, VpuMode::Eager)
        .map_err(attribute)?;
    Ok((0..batch.rows()).map(|r| out.row(r).to_vec()).collect())
}

/// The same transform applied to one row on its own.
pub fn evaluate_isolated(batch: &StackedBatch, row: usize) -> Result<Vec<u64>, SchedError> {
    let attribute = |source| SchedError::Arithmetic { tenant: batch.row_map[row], source };
    let tw = batch.twiddle().map_err(attribute)?;
    let out = staged_matrix_ntt(&batch.operand[row], &tw, &batch.class.mxu_config(), batch.class.d_max(), Staging::On)
        .map_err(attribute)?;
    Ok(out.row(0).to_vec())
}

/// Evaluates every placed batch in parallel; results come back in placement order.
pub fn batched_evaluate(assignment: &SliceAssignment) -> Result<Vec<TenantResult>, SchedError> {
    let per_batch: Vec<Result<Vec<TenantResult>, SchedError>> = assignment
        .placements
        .par_iter()
        .map(|p| {
            let b = &assignment.batches[p.batch];
            Ok(evaluate_batch(b)?
                .into_iter()
                .enumerate()
                .map(|(row, values)| TenantResult { tenant_id: b.row_map[row], batch: p.batch, row, values })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_batch {
        out.extend(r?);
    }
    Ok(out)
}
