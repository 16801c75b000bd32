//! A small dataflow IR for staged multi-tenant transforms, an aggressive mutation pass
//! that plays the role of an unconstrained fusion optimizer, and the validator that
//! audits separation rules before dispatch.
//!
//! Rules:
//! - V1 strict reduction ordering: consecutive tiles of a staged summation chain are
//!   separated by a VpuReduce and then a Barrier, and no tile has a reduction fused into it.
//! - V2 disjoint addressing: buffers in different memory spaces never overlap.
//! - V3 no cross-block fusion: a Fusion never draws operands from two memory spaces or
//!   two workload zones.
//! - V4 liveness containment: a zoned buffer is never live inside another zone's window.
//! - V5 precision separation: a zoned node never consumes operands of two precision zones.
//!
//! V2 to V5 are this crate's formalization of the background separation conditions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::erns::{schedule_reductions, ReductionMode, CHAIN_LEN};
use crate::scheduler::{SliceAssignment, StackedBatch, WorkloadClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "%{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustomTarget {
    ZoneWrap,
    MontgomeryReduce,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum NodeKind {
    Param,
    Dot,
    VpuReduce,
    CustomCall { target: CustomTarget },
    Barrier,
    Fusion { fused: Vec<NodeKind>, origin: Vec<NodeId> },
    Tuple,
}

impl NodeKind {
    pub fn is_reduction(&self) -> bool {
        matches!(self, NodeKind::VpuReduce | NodeKind::CustomCall { target: CustomTarget::MontgomeryReduce })
    }
    fn reductions(&self) -> usize {
        match self {
            NodeKind::Fusion { fused, .. } => fused.iter().map(NodeKind::reductions).sum(),
            k if k.is_reduction() => 1,
            _ => 0,
        }
    }
    fn contains_vpu_reduce(&self) -> bool {
        match self {
            NodeKind::VpuReduce => true,
            NodeKind::Fusion { fused, .. } => fused.iter().any(NodeKind::contains_vpu_reduce),
            _ => false,
        }
    }
    fn label(&self) -> String {
        match self {
            NodeKind::Param => "param".into(),
            NodeKind::Dot => "dot".into(),
            NodeKind::VpuReduce => "vpu-reduce".into(),
            NodeKind::CustomCall { target: CustomTarget::ZoneWrap } => "custom-call[zone-wrap]".into(),
            NodeKind::CustomCall { target: CustomTarget::MontgomeryReduce } => "custom-call[montgomery-reduce]".into(),
            NodeKind::Barrier => "barrier".into(),
            NodeKind::Fusion { fused, .. } => {
                format!("fusion[{}]", fused.iter().map(NodeKind::label).collect::<Vec<_>>().join(","))
            }
            NodeKind::Tuple => "tuple".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_space: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload_zone: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision_zone: Option<u32>,
}

impl Attrs {
    fn zoned(&self) -> bool {
        self.workload_zone.is_some()
    }
}

/// Half-open byte interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buffer {
    pub start: u64,
    pub end: u64,
}

impl Buffer {
    pub fn overlaps(&self, o: &Buffer) -> bool {
        self.start < o.end && o.start < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub operands: Vec<NodeId>,
    pub attrs: Attrs,
    pub buffer: Buffer,
    /// Last schedule position at which the buffer is held.
    pub live_until: usize,
}

/// One staged summation: its Dot tiles in order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chain {
    pub tenant: u64,
    pub residue: u32,
    pub tiles: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TenantSegment {
    pub tenant: u64,
    pub memory_space: u32,
    pub wrap: NodeId,
    pub output: NodeId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrModule {
    pub nodes: Vec<Node>,
    pub schedule: Vec<NodeId>,
    pub chains: Vec<Chain>,
    pub tenants: Vec<TenantSegment>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IrError {
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("node {node} references missing operand {operand}")]
    DanglingOperand { node: NodeId, operand: NodeId },
    #[error("schedule is not a permutation of the nodes")]
    BadSchedule,
    #[error("node {node} is scheduled before its operand {operand}")]
    OperandAfterConsumer { node: NodeId, operand: NodeId },
    #[error("metadata references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("malformed module: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    V1,
    V2,
    V3,
    V4,
    V5,
}

impl Rule {
    pub const ALL: [Rule; 5] = [Rule::V1, Rule::V2, Rule::V3, Rule::V4, Rule::V5];
    pub fn describe(self) -> &'static str {
        match self {
            Rule::V1 => "strict reduction ordering",
            Rule::V2 => "disjoint addressing",
            Rule::V3 => "no cross-block fusion",
            Rule::V4 => "liveness containment",
            Rule::V5 => "precision-zone separation",
        }
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub nodes: Vec<NodeId>,
    pub dump: String,
}

impl IrModule {
    pub fn from_json(s: &str) -> Result<Self, IrError> {
        serde_json::from_str(s).map_err(|e| IrError::Parse(e.to_string()))
    }
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("module serializes")
    }
    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }
    fn index(&self) -> HashMap<NodeId, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }
    fn positions(&self) -> HashMap<NodeId, usize> {
        self.schedule.iter().enumerate().map(|(p, &id)| (id, p)).collect()
    }

    /// Recomputes live_until from zoned consumers. Unzoned consumers (the root tuple)
    /// read results that have already been copied out.
    pub fn recompute_liveness(&mut self) {
        let pos = self.positions();
        let mut last: HashMap<NodeId, usize> = HashMap::new();
        for n in &self.nodes {
            if !n.attrs.zoned() {
                continue;
            }
            let p = pos[&n.id];
            for o in &n.operands {
                let e = last.entry(*o).or_insert(0);
                *e = (*e).max(p);
            }
        }
        for n in &mut self.nodes {
            let own = pos[&n.id];
            n.live_until = last.get(&n.id).copied().unwrap_or(own).max(own);
        }
    }

    fn dump(&self, ids: &[NodeId]) -> String {
        let idx = self.index();
        let pos = self.positions();
        let mut s = String::new();
        for id in ids {
            let Some(&i) = idx.get(id) else { continue };
            let n = &self.nodes[i];
            let ops: Vec<String> = n.operands.iter().map(|o| o.to_string()).collect();
            let _ = writeln!(
                s,
                "{} = {}({}) @{} space={:?} zone={:?} precision={:?} buf=[{},{}) live_until={}",
                n.id,
                n.kind.label(),
                ops.join(", "),
                pos.get(id).copied().unwrap_or(usize::MAX),
                n.attrs.memory_space,
                n.attrs.workload_zone,
                n.attrs.precision_zone,
                n.buffer.start,
                n.buffer.end,
                n.live_until
            );
        }
        s
    }
}

struct Builder {
    m: IrModule,
    next: u32,
    cursor: u64,
}

impl Builder {
    fn new() -> Self {
        Self { m: IrModule::default(), next: 0, cursor: 0 }
    }
    fn push(&mut self, kind: NodeKind, operands: Vec<NodeId>, attrs: Attrs, bytes: u64) -> NodeId {
        let id = NodeId(self.next);
        self.next += 1;
        let buffer = Buffer { start: self.cursor, end: self.cursor + bytes };
        self.cursor += bytes;
        self.m.nodes.push(Node { id, kind, operands, attrs, buffer, live_until: 0 });
        self.m.schedule.push(id);
        id
    }
    fn finish(mut self) -> IrModule {
        let outs: Vec<NodeId> = self.m.tenants.iter().map(|t| t.output).collect();
        self.push(NodeKind::Tuple, outs, Attrs::default(), 0);
        self.m.recompute_liveness();
        self.m
    }
}

/// Memory spaces at and above this value belong to batch-shared twiddle operands.
pub const SHARED_SPACE_BASE: u32 = 1 << 20;

/// Residue chains per tenant row.
pub fn chains_per_row(class: WorkloadClass) -> usize {
    match class {
        WorkloadClass::Bn254 => CHAIN_LEN,
        WorkloadClass::Dilithium => 1,
    }
}

/// Reduction nodes one tenant row contributes in the eager graph.
pub fn eager_reductions_per_row(class: WorkloadClass, d_hat: usize) -> u64 {
    let tiles = d_hat.div_ceil(class.d_max()) as u64;
    let chain_reduces = chains_per_row(class) as u64 * tiles;
    match class {
        WorkloadClass::Bn254 => schedule_reductions(d_hat, ReductionMode::Eager).reductions_per_polynomial.max(chain_reduces + 1),
        WorkloadClass::Dilithium => chain_reduces,
    }
}

fn emit_batch(b: &mut Builder, batch: &StackedBatch, batch_index: usize, space_counter: &mut u32) {
    let class = batch.class();
    let c = class.limbs() as u64;
    let d_hat = batch.padded_max();
    let n_out = batch.n_out() as u64;
    let zone = batch.zone().0;
    let precision = class.limbs() as u32;
    let tiles = d_hat.div_ceil(class.d_max());
    let shared = Attrs {
        memory_space: Some(SHARED_SPACE_BASE + batch_index as u32),
        workload_zone: Some(zone),
        precision_zone: Some(precision),
    };
    let twiddle = b.push(NodeKind::Param, vec![], shared, d_hat as u64 * n_out * c);
    for &tenant in batch.row_map() {
        let space = *space_counter;
        *space_counter += 1;
        let a = Attrs { memory_space: Some(space), workload_zone: Some(zone), precision_zone: Some(precision) };
        let param = b.push(NodeKind::Param, vec![], a, d_hat as u64 * c);
        let wrap = b.push(NodeKind::CustomCall { target: CustomTarget::ZoneWrap }, vec![param, twiddle], a, d_hat as u64 * c);
        let mut chain_outs = Vec::new();
        for residue in 0..chains_per_row(class) {
            let mut chain = Chain { tenant, residue: residue as u32, tiles: Vec::new() };
            let mut prev_barrier = None;
            let mut last_reduce = None;
            for k in 0..tiles {
                let mut ops = vec![wrap];
                ops.extend(prev_barrier);
                let dot = b.push(NodeKind::Dot, ops, a, n_out * (2 * c - 1) * 4);
                chain.tiles.push(dot);
                let red = b.push(NodeKind::VpuReduce, vec![dot], a, n_out * 4);
                last_reduce = Some(red);
                if k + 1 < tiles {
                    prev_barrier = Some(b.push(NodeKind::Barrier, vec![red], a, 0));
                }
            }
            chain_outs.push(last_reduce.expect("at least one tile"));
            b.m.chains.push(chain);
        }
        let mut output = *chain_outs.last().expect("at least one chain");
        if class == WorkloadClass::Bn254 {
            let fill = eager_reductions_per_row(class, d_hat) - (chain_outs.len() * tiles) as u64;
            let mr = NodeKind::CustomCall { target: CustomTarget::MontgomeryReduce };
            output = b.push(mr.clone(), chain_outs, a, n_out * 4);
            for _ in 1..fill {
                output = b.push(mr.clone(), vec![output], a, n_out * 4);
            }
        }
        b.m.tenants.push(TenantSegment { tenant, memory_space: space, wrap, output });
    }
}

/// Eager multi-tenant graph in placement order: per batch a shared twiddle Param, then per
/// tenant its Param, ZoneWrap, one staged chain per residue and the Montgomery tail.
pub fn build_module(assignment: &SliceAssignment) -> IrModule {
    let mut b = Builder::new();
    let mut spaces = 0u32;
    for p in &assignment.placements {
        emit_batch(&mut b, &assignment.batches[p.batch], p.batch, &mut spaces);
    }
    b.finish()
}

/// Graph for a bare batch list, placed in order.
pub fn build_module_for_batches(batches: &[StackedBatch]) -> IrModule {
    let mut b = Builder::new();
    let mut spaces = 0u32;
    for (i, batch) in batches.iter().enumerate() {
        emit_batch(&mut b, batch, i, &mut spaces);
    }
    b.finish()
}

/// Single-tenant lazy BN254 graph: log2(d) butterfly-stage dots per residue with no
/// barriers, one VpuReduce per residue, and Montgomery calls up to the lazy schedule.
pub fn build_lazy_module(d: usize) -> IrModule {
    let mut b = Builder::new();
    let a = Attrs { memory_space: Some(0), workload_zone: Some(0), precision_zone: Some(4) };
    let tw = b.push(NodeKind::Param, vec![], Attrs { memory_space: Some(SHARED_SPACE_BASE), ..a }, d as u64 * 4);
    let param = b.push(NodeKind::Param, vec![], a, d as u64 * 4);
    let wrap = b.push(NodeKind::CustomCall { target: CustomTarget::ZoneWrap }, vec![param, tw], a, d as u64 * 4);
    let stages = d.max(2).trailing_zeros() as usize;
    let mut outs = Vec::new();
    for _ in 0..CHAIN_LEN {
        let mut prev = wrap;
        for _ in 0..stages {
            prev = b.push(NodeKind::Dot, vec![prev], a, d as u64 * 28);
        }
        outs.push(b.push(NodeKind::VpuReduce, vec![prev], a, d as u64 * 4));
    }
    let total = schedule_reductions(d, ReductionMode::Lazy).reductions_per_polynomial;
    let mr = NodeKind::CustomCall { target: CustomTarget::MontgomeryReduce };
    let mut output = b.push(mr.clone(), outs, a, d as u64 * 4);
    for _ in (CHAIN_LEN as u64 + 1)..total {
        output = b.push(mr.clone(), vec![output], a, d as u64 * 4);
    }
    b.m.tenants.push(TenantSegment { tenant: 0, memory_space: 0, wrap, output });
    b.finish()
}

/// VpuReduce and Montgomery custom-call nodes, including any fused into a Fusion.
pub fn count_vpu_nodes(m: &IrModule) -> u64 {
    m.nodes.iter().map(|n| n.kind.reductions() as u64).sum()
}

fn check_structure(m: &IrModule) -> Result<(HashMap<NodeId, usize>, HashMap<NodeId, usize>), IrError> {
    let mut idx = HashMap::with_capacity(m.nodes.len());
    for (i, n) in m.nodes.iter().enumerate() {
        if idx.insert(n.id, i).is_some() {
            return Err(IrError::DuplicateId(n.id));
        }
    }
    for n in &m.nodes {
        if let Some(&operand) = n.operands.iter().find(|o| !idx.contains_key(o)) {
            return Err(IrError::DanglingOperand { node: n.id, operand });
        }
    }
    let pos = m.positions();
    if m.schedule.len() != m.nodes.len() || pos.len() != m.nodes.len() || !m.schedule.iter().all(|s| idx.contains_key(s)) {
        return Err(IrError::BadSchedule);
    }
    for n in &m.nodes {
        for o in &n.operands {
            if pos[o] >= pos[&n.id] {
                return Err(IrError::OperandAfterConsumer { node: n.id, operand: *o });
            }
        }
    }
    let meta = m.chains.iter().flat_map(|c| c.tiles.iter()).chain(m.tenants.iter().flat_map(|t| [&t.wrap, &t.output]));
    for id in meta {
        if !idx.contains_key(id) {
            return Err(IrError::UnknownNode(*id));
        }
    }
    Ok((idx, pos))
}

/// All violations, sorted by rule then node set; structural problems are errors instead.
pub fn validate(m: &IrModule) -> Result<Vec<Violation>, IrError> {
    let (idx, pos) = check_structure(m)?;
    let node = |id: &NodeId| &m.nodes[idx[id]];
    let mut found: BTreeSet<(Rule, Vec<NodeId>)> = BTreeSet::new();

    // consumers, for the reduce/barrier lookup
    let mut consumers: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for n in &m.nodes {
        for o in &n.operands {
            consumers.entry(*o).or_default().push(n.id);
        }
    }

    // V1
    for chain in &m.chains {
        for t in &chain.tiles {
            if node(t).kind.contains_vpu_reduce() {
                found.insert((Rule::V1, vec![*t]));
            }
        }
        for w in chain.tiles.windows(2) {
            let (cur, next) = (w[0], w[1]);
            let closed = consumers.get(&cur).into_iter().flatten().any(|r| {
                node(r).kind == NodeKind::VpuReduce
                    && pos[r] > pos[&cur]
                    && consumers.get(r).into_iter().flatten().any(|b| {
                        node(b).kind == NodeKind::Barrier
                            && pos[b] > pos[r]
                            && pos[b] < pos[&next]
                            && node(&next).operands.contains(b)
                    })
            });
            if !closed {
                found.insert((Rule::V1, vec![cur, next]));
            }
        }
    }

    // V2: sweep by start address
    let mut spans: Vec<(&Node, u32)> =
        m.nodes.iter().filter(|n| n.buffer.end > n.buffer.start).filter_map(|n| n.attrs.memory_space.map(|s| (n, s))).collect();
    spans.sort_by_key(|(n, _)| (n.buffer.start, n.buffer.end, n.id));
    for i in 0..spans.len() {
        let (a, sa) = spans[i];
        for &(b, sb) in &spans[i + 1..] {
            if b.buffer.start >= a.buffer.end {
                break;
            }
            if sa != sb {
                let mut ids = vec![a.id, b.id];
                ids.sort();
                found.insert((Rule::V2, ids));
            }
        }
    }

    // V3
    for n in &m.nodes {
        if let NodeKind::Fusion { .. } = n.kind {
            let spaces: BTreeSet<u32> = n.operands.iter().filter_map(|o| node(o).attrs.memory_space).collect();
            let zones: BTreeSet<u32> = n.operands.iter().filter_map(|o| node(o).attrs.workload_zone).collect();
            if spaces.len() > 1 || zones.len() > 1 {
                found.insert((Rule::V3, vec![n.id]));
            }
        }
    }

    // V4: zone windows over schedule positions
    let mut windows: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for n in &m.nodes {
        if let Some(z) = n.attrs.workload_zone {
            let p = pos[&n.id];
            let w = windows.entry(z).or_insert((p, p));
            w.0 = w.0.min(p);
            w.1 = w.1.max(p);
        }
    }
    for n in &m.nodes {
        let Some(z) = n.attrs.workload_zone else { continue };
        let (lo, hi) = (pos[&n.id], n.live_until.max(pos[&n.id]));
        if windows.iter().any(|(&oz, &(ws, we))| oz != z && lo <= we && ws <= hi) {
            found.insert((Rule::V4, vec![n.id]));
        }
    }

    // V5
    for n in &m.nodes {
        if !n.attrs.zoned() {
            continue;
        }
        let precisions: BTreeSet<u32> = n.operands.iter().filter_map(|o| node(o).attrs.precision_zone).collect();
        if precisions.len() > 1 {
            found.insert((Rule::V5, vec![n.id]));
        }
    }

    Ok(found
        .into_iter()
        .map(|(rule, nodes)| {
            let mut shown: BTreeSet<NodeId> = nodes.iter().copied().collect();
            for id in &nodes {
                shown.extend(node(id).operands.iter().copied());
            }
            let ids: Vec<NodeId> = shown.into_iter().collect();
            let dump = format!("{} {}:\n{}", rule, rule.describe(), m.dump(&ids));
            Violation { rule, nodes, dump }
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub nodes: usize,
    pub violations: Vec<Violation>,
    #[serde(skip)]
    pub elapsed: Duration,
}

pub fn validate_timed(m: &IrModule) -> Result<ValidationReport, IrError> {
    let t = Instant::now();
    let violations = validate(m)?;
    Ok(ValidationReport { nodes: m.nodes.len(), violations, elapsed: t.elapsed() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationProbs {
    /// Fuse Dot, VpuReduce, Barrier, Dot across a tile boundary.
    pub merge: f64,
    /// Fuse one tenant's output with the next tenant's entry.
    pub cross_fuse: f64,
    /// Alias two buffers from different memory spaces.
    pub coalesce: f64,
    /// Keep a buffer alive into a later zone.
    pub liveness: f64,
}

impl MutationProbs {
    pub const NONE: MutationProbs = MutationProbs { merge: 0.0, cross_fuse: 0.0, coalesce: 0.0, liveness: 0.0 };
    pub const ALL: MutationProbs = MutationProbs { merge: 1.0, cross_fuse: 1.0, coalesce: 1.0, liveness: 1.0 };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mutation {
    Merge,
    CrossFuse,
    Coalesce,
    Liveness,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injected {
    pub mutation: Mutation,
    pub rules: Vec<Rule>,
    pub nodes: Vec<NodeId>,
}

/// Replaces `removed` with `fused` at the schedule slot of `at`; consumers are redirected.
fn replace_with_fusion(m: &mut IrModule, removed: &[NodeId], at: NodeId, attrs: Attrs, buffer: Buffer) -> NodeId {
    let new_id = NodeId(m.nodes.iter().map(|n| n.id.0).max().unwrap_or(0) + 1);
    let gone: BTreeSet<NodeId> = removed.iter().copied().collect();
    let by_id: HashMap<NodeId, &Node> = m.nodes.iter().map(|n| (n.id, n)).collect();
    let mut operands = Vec::new();
    for r in removed {
        for o in &by_id[r].operands {
            if !gone.contains(o) && !operands.contains(o) {
                operands.push(*o);
            }
        }
    }
    let fused = NodeKind::Fusion { fused: removed.iter().map(|r| by_id[r].kind.clone()).collect(), origin: removed.to_vec() };
    let slot = m.schedule.iter().position(|&s| s == at).expect("scheduled");
    m.schedule[slot] = new_id;
    m.schedule.retain(|s| !gone.contains(s));
    m.nodes.retain(|n| !gone.contains(&n.id));
    for n in &mut m.nodes {
        if n.operands.iter().any(|o| gone.contains(o)) {
            let mut ops = Vec::new();
            for o in &n.operands {
                let o = if gone.contains(o) { new_id } else { *o };
                if !ops.contains(&o) {
                    ops.push(o);
                }
            }
            n.operands = ops;
        }
    }
    m.nodes.push(Node { id: new_id, kind: fused, operands, attrs, buffer, live_until: 0 });
    let redirect = |id: &mut NodeId| {
        if gone.contains(id) {
            *id = new_id;
        }
    };
    for c in &mut m.chains {
        c.tiles.iter_mut().for_each(redirect);
        c.tiles.dedup();
    }
    for t in &mut m.tenants {
        redirect(&mut t.wrap);
        redirect(&mut t.output);
    }
    m.recompute_liveness();
    new_id
}

/// Seeded mutation pass. Each mutation fires at most once with its probability, in the
/// order merge, cross-tenant fusion, coalescing, liveness extension. Returns the mutated
/// module and the ground truth of what was injected.
pub fn adversarial_fuse(m: &IrModule, seed: u64, probs: MutationProbs) -> (IrModule, Vec<Injected>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = m.clone();
    let mut injected = Vec::new();

    if rng.gen_bool(probs.merge.clamp(0.0, 1.0)) {
        let candidates: Vec<usize> = (0..m.chains.len()).filter(|&i| m.chains[i].tiles.len() >= 2).collect();
        if !candidates.is_empty() {
            let chain = &m.chains[candidates[rng.gen_range(0..candidates.len())]];
            let k = rng.gen_range(0..chain.tiles.len() - 1);
            let (cur, next) = (chain.tiles[k], chain.tiles[k + 1]);
            let next_node = m.node(next).expect("tile").clone();
            let barrier = next_node.operands.iter().copied().find(|o| m.node(*o).is_some_and(|n| n.kind == NodeKind::Barrier));
            let reduce = barrier.and_then(|b| m.node(b).and_then(|n| n.operands.first().copied()));
            if let (Some(r), Some(b)) = (reduce, barrier) {
                let d = m.node(cur).expect("tile").clone();
                let f = replace_with_fusion(&mut m, &[cur, r, b, next], cur, d.attrs, d.buffer);
                injected.push(Injected { mutation: Mutation::Merge, rules: vec![Rule::V1], nodes: vec![f] });
            }
        }
    }

    if rng.gen_bool(probs.cross_fuse.clamp(0.0, 1.0)) && m.tenants.len() >= 2 {
        let i = rng.gen_range(0..m.tenants.len() - 1);
        let (x, y) = (m.tenants[i].output, m.tenants[i + 1].wrap);
        let xn = m.node(x).expect("output").clone();
        let yn = m.node(y).expect("wrap").clone();
        let f = replace_with_fusion(&mut m, &[x, y], y, yn.attrs, yn.buffer);
        let mut rules = vec![Rule::V3];
        let mut nodes = vec![f];
        if xn.attrs.workload_zone != yn.attrs.workload_zone {
            rules.push(Rule::V4);
            nodes.extend(xn.operands.iter().copied());
        }
        if xn.attrs.precision_zone != yn.attrs.precision_zone {
            rules.push(Rule::V5);
        }
        injected.push(Injected { mutation: Mutation::CrossFuse, rules, nodes });
    }

    if rng.gen_bool(probs.coalesce.clamp(0.0, 1.0)) {
        let sized: Vec<usize> = (0..m.nodes.len())
            .filter(|&i| m.nodes[i].attrs.memory_space.is_some() && m.nodes[i].buffer.end > m.nodes[i].buffer.start)
            .collect();
        if !sized.is_empty() {
            let a = sized[rng.gen_range(0..sized.len())];
            let sa = m.nodes[a].attrs.memory_space;
            let others: Vec<usize> = sized.iter().copied().filter(|&j| m.nodes[j].attrs.memory_space != sa).collect();
            if !others.is_empty() {
                let b = others[rng.gen_range(0..others.len())];
                m.nodes[b].buffer = m.nodes[a].buffer;
                injected.push(Injected {
                    mutation: Mutation::Coalesce,
                    rules: vec![Rule::V2],
                    nodes: vec![m.nodes[a].id, m.nodes[b].id],
                });
            }
        }
    }

    if rng.gen_bool(probs.liveness.clamp(0.0, 1.0)) {
        let pos = m.positions();
        let mut windows: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for n in &m.nodes {
            if let Some(z) = n.attrs.workload_zone {
                let p = pos[&n.id];
                let w = windows.entry(z).or_insert((p, p));
                w.0 = w.0.min(p);
                w.1 = w.1.max(p);
            }
        }
        let candidates: Vec<(usize, usize, usize)> = m
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                let z = n.attrs.workload_zone?;
                let p = pos[&n.id];
                // first later window of another zone
                windows
                    .iter()
                    .filter(|(&oz, &(ws, _))| oz != z && ws > p)
                    .map(|(_, &w)| w)
                    .min()
                    .map(|(ws, we)| (i, ws, we))
            })
            .collect();
        if !candidates.is_empty() {
            let (i, ws, we) = candidates[rng.gen_range(0..candidates.len())];
            m.nodes[i].live_until = m.nodes[i].live_until.max(rng.gen_range(ws..=we));
            injected.push(Injected { mutation: Mutation::Liveness, rules: vec![Rule::V4], nodes: vec![m.nodes[i].id] });
        }
    }

    (m, injected)
}

pub fn injected_rules(injected: &[Injected]) -> BTreeSet<Rule> {
    injected.iter().flat_map(|i| i.rules.iter().copied()).collect()
}

pub fn violated_rules(v: &[Violation]) -> BTreeSet<Rule> {
    v.iter().map(|v| v.rule).collect()
}
