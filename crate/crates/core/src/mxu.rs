//! Systolic matrix-unit simulation with accumulator-faithful semantics.
//!
//! The left operand carries unsigned 8-bit limbs of each coefficient, the
//! right operand carries balanced signed 8-bit limbs of each twiddle. Limb
//! pair (i, j) lands in weight class k = i + j, so each output coefficient
//! owns 2C-1 accumulator columns and the k = C-1 column absorbs C products
//! per coefficient.

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{find_root_of_unity, FieldError, PrimeField};

pub const TILE: usize = 128;
pub const MAX_PIXEL_PRODUCT: u64 = 255 * 128;
pub const FP32_WINDOW: u64 = 1 << 24;
pub const INT32_WINDOW: u64 = i32::MAX as u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MxuError {
    #[error("ceiling {ceiling} is below one degree of {limbs}-limb products")]
    DegenerateBound { limbs: u64, ceiling: u64 },
    #[error("residue {residue} does not fit {limbs} unsigned limbs")]
    LimbRange { residue: u64, limbs: usize },
    #[error("value {value} does not fit {limbs} balanced limbs")]
    RecodeOverflow { value: i64, limbs: usize },
    #[error("limb count {0} outside 1..=4")]
    BadLimbCount(usize),
    #[error("{what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("staging width {d_max} exceeds the exact bound {bound}")]
    StagingWidth { d_max: usize, bound: u64 },
    #[error("residue modulus {0} is too wide for the simulated lane")]
    ModulusTooWide(u64),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccumulatorModel {
    Fp32Mantissa,
    Int32,
    ExactOracle,
}

impl AccumulatorModel {
    /// Largest magnitude that accumulates exactly; `None` for the unbounded oracle.
    pub fn exact_window(self) -> Option<u64> {
        match self {
            Self::Fp32Mantissa => Some(FP32_WINDOW),
            Self::Int32 => Some(INT32_WINDOW),
            Self::ExactOracle => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fp32" => Some(Self::Fp32Mantissa),
            "int32" => Some(Self::Int32),
            "exact" => Some(Self::ExactOracle),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MxuConfig {
    pub tile_m: usize,
    pub tile_k: usize,
    pub tile_n: usize,
    pub accumulator: AccumulatorModel,
    pub limbs: usize,
    pub max_pixel_product: u64,
}

impl MxuConfig {
    pub fn new(accumulator: AccumulatorModel, limbs: usize) -> Result<Self, MxuError> {
        if !(1..=4).contains(&limbs) {
            return Err(MxuError::BadLimbCount(limbs));
        }
        Ok(Self {
            tile_m: TILE,
            tile_k: TILE,
            tile_n: TILE,
            accumulator,
            limbs,
            max_pixel_product: MAX_PIXEL_PRODUCT,
        })
    }

    /// Per-pass degree bound for this limb count and accumulator, if bounded.
    pub fn d_max(&self) -> Option<usize> {
        self.accumulator
            .exact_window()
            .map(|w| accumulator_bound(self.limbs as u64, w).expect("window exceeds one degree") as usize)
    }
}

/// ⌊ceiling / (C · 32,640)⌋.
pub fn accumulator_bound(limbs: u64, ceiling: u64) -> Result<u64, MxuError> {
    if limbs == 0 || ceiling < limbs * MAX_PIXEL_PRODUCT {
        return Err(MxuError::DegenerateBound { limbs, ceiling });
    }
    Ok(ceiling / (limbs * MAX_PIXEL_PRODUCT))
}

/// Little-endian base-256 digits.
pub fn decompose_limbs(residue: u64, limbs: usize) -> Result<Vec<u8>, MxuError> {
    if !(1..=4).contains(&limbs) {
        return Err(MxuError::BadLimbCount(limbs));
    }
    if residue >> (8 * limbs) != 0 {
        return Err(MxuError::LimbRange { residue, limbs });
    }
    Ok((0..limbs).map(|i| (residue >> (8 * i)) as u8).collect())
}

/// Balanced base-256 digits in [-128, 127]; a remainder of 128 becomes -128 with a carry.
pub fn recode_balanced(value: i64, limbs: usize) -> Result<Vec<i8>, MxuError> {
    if !(1..=4).contains(&limbs) {
        return Err(MxuError::BadLimbCount(limbs));
    }
    let mut v = value;
    let mut out = Vec::with_capacity(limbs);
    for _ in 0..limbs {
        let r = v.rem_euclid(256);
        let digit = if r >= 128 { r - 256 } else { r };
        out.push(digit as i8);
        v = (v - digit) / 256;
    }
    if v != 0 {
        return Err(MxuError::RecodeOverflow { value, limbs });
    }
    Ok(out)
}

pub fn recombine_unsigned(limbs: &[u8]) -> u64 {
    limbs.iter().rev().fold(0u64, |acc, &l| (acc << 8) | l as u64)
}

pub fn recombine_signed(limbs: &[i8]) -> i64 {
    limbs.iter().rev().fold(0i64, |acc, &l| acc * 256 + l as i64)
}

/// Symmetric representative of a residue: w - m when w > m/2.
pub fn centered(w: u64, m: u64) -> i64 {
    if w > m / 2 {
        w as i64 - m as i64
    } else {
        w as i64
    }
}

/// M × (C·d) unsigned limb matrix; column t·C + i holds limb i of coefficient t.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LimbOperand {
    rows: usize,
    degree: usize,
    limbs: usize,
    data: Vec<u8>,
}

impl LimbOperand {
    pub fn from_residues(batch: &[Vec<u64>], limbs: usize) -> Result<Self, MxuError> {
        let degree = batch.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(batch.len() * degree * limbs);
        for row in batch {
            if row.len() != degree {
                return Err(MxuError::Dimension { what: "row degree", expected: degree, got: row.len() });
            }
            for &r in row {
                data.extend(decompose_limbs(r, limbs)?);
            }
        }
        Ok(Self { rows: batch.len(), degree, limbs, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn limbs(&self) -> usize {
        self.limbs
    }
    /// (M, K) with K = C·d.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.limbs * self.degree)
    }
    pub fn column(&self, t: usize, i: usize) -> usize {
        t * self.limbs + i
    }
    /// Column index → (coefficient, limb).
    pub fn layout(&self, col: usize) -> (usize, usize) {
        (col / self.limbs, col % self.limbs)
    }
    pub fn get(&self, m: usize, col: usize) -> u8 {
        self.data[m * self.limbs * self.degree + col]
    }
    pub fn coefficient_limbs(&self, m: usize, t: usize) -> &[u8] {
        let s = (m * self.degree + t) * self.limbs;
        &self.data[s..s + self.limbs]
    }
    pub fn recombine(&self, m: usize, t: usize) -> u64 {
        recombine_unsigned(self.coefficient_limbs(m, t))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum TwiddleTable {
    /// limbs[(t·d_out + u)·C + j]
    Dense(Vec<i8>),
    /// limbs[e·C + j] for the power ω^e, e = t·u mod order
    Cyclic { order: usize, limbs: Vec<i8> },
}

/// K × N signed limb matrix with K = C·d and N = (2C-1)·d_out.
/// Row (t, i) and column (u, k) hold limb k-i of W[t][u], zero when k-i is outside [0, C).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedTwiddleOperand {
    degree: usize,
    d_out: usize,
    limbs: usize,
    table: TwiddleTable,
}

impl SignedTwiddleOperand {
    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn d_out(&self) -> usize {
        self.d_out
    }
    pub fn limbs(&self) -> usize {
        self.limbs
    }
    pub fn classes(&self) -> usize {
        2 * self.limbs - 1
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.limbs * self.degree, self.classes() * self.d_out)
    }

    /// The C balanced limbs of W[t][u].
    pub fn twiddle_limbs(&self, t: usize, u: usize) -> &[i8] {
        let c = self.limbs;
        let base = match &self.table {
            TwiddleTable::Dense(_) => (t * self.d_out + u) * c,
            TwiddleTable::Cyclic { order, .. } => ((t as u128 * u as u128) % *order as u128) as usize * c,
        };
        match &self.table {
            TwiddleTable::Dense(l) | TwiddleTable::Cyclic { limbs: l, .. } => &l[base..base + c],
        }
    }

    /// Entry at (row, col) of the expanded K × N matrix.
    pub fn entry(&self, row: usize, col: usize) -> i8 {
        let (t, i) = (row / self.limbs, row % self.limbs);
        let (u, k) = (col / self.classes(), col % self.classes());
        match k.checked_sub(i) {
            Some(j) if j < self.limbs => self.twiddle_limbs(t, u)[j],
            _ => 0,
        }
    }
}

/// Residue twiddle matrix of `rows` × `cols` over a word-sized modulus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResidueTwiddle {
    modulus: u64,
    rows: usize,
    cols: usize,
    kind: ResidueKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum ResidueKind {
    Dense(Vec<u64>),
    Cyclic { omega: u64, powers: Vec<u64> },
}

impl ResidueTwiddle {
    /// W[t][u] = ω^(t·u) with ω of order `cols`.
    pub fn ntt(field: &PrimeField, rows: usize, cols: usize) -> Result<Self, MxuError> {
        let m = field.modulus_u64().ok_or(MxuError::ModulusTooWide(u64::MAX))?;
        if m >= 1 << 32 {
            return Err(MxuError::ModulusTooWide(m));
        }
        let omega = find_root_of_unity(field, cols as u64)?.to_u64().expect("reduced");
        let mut powers = Vec::with_capacity(cols);
        let mut x = 1u64;
        for _ in 0..cols {
            powers.push(x);
            x = x * omega % m;
        }
        Ok(Self { modulus: m, rows, cols, kind: ResidueKind::Cyclic { omega, powers } })
    }

    pub fn square(field: &PrimeField, d: usize) -> Result<Self, MxuError> {
        Self::ntt(field, d, d)
    }

    /// Arbitrary residue matrix, row-major.
    pub fn dense(modulus: u64, rows: usize, cols: usize, entries: Vec<u64>) -> Result<Self, MxuError> {
        if entries.len() != rows * cols {
            return Err(MxuError::Dimension { what: "twiddle entries", expected: rows * cols, got: entries.len() });
        }
        if modulus >= 1 << 32 {
            return Err(MxuError::ModulusTooWide(modulus));
        }
        Ok(Self { modulus, rows, cols, kind: ResidueKind::Dense(entries.into_iter().map(|e| e % modulus).collect()) })
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn omega(&self) -> Option<u64> {
        match &self.kind {
            ResidueKind::Cyclic { omega, .. } => Some(*omega),
            ResidueKind::Dense(_) => None,
        }
    }

    pub fn get(&self, t: usize, u: usize) -> u64 {
        match &self.kind {
            ResidueKind::Dense(e) => e[t * self.cols + u],
            ResidueKind::Cyclic { powers, .. } => powers[((t as u128 * u as u128) % self.cols as u128) as usize],
        }
    }

    /// Balanced limbs of the centered representative of each entry.
    pub fn signed_operand(&self, limbs: usize) -> Result<SignedTwiddleOperand, MxuError> {
        let m = self.modulus;
        let recode = |w: u64| recode_balanced(centered(w, m), limbs);
        let table = match &self.kind {
            ResidueKind::Dense(e) => {
                let mut l = Vec::with_capacity(e.len() * limbs);
                for &w in e {
                    l.extend(recode(w)?);
                }
                TwiddleTable::Dense(l)
            }
            ResidueKind::Cyclic { powers, .. } => {
                let mut l = Vec::with_capacity(powers.len() * limbs);
                for &w in powers {
                    l.extend(recode(w)?);
                }
                TwiddleTable::Cyclic { order: self.cols, limbs: l }
            }
        };
        Ok(SignedTwiddleOperand { degree: self.rows, d_out: self.cols, limbs, table })
    }
}

/// Builds both operands of one fused limb-interleaved matmul.
pub fn pack_operands(
    batch: &[Vec<u64>],
    twiddle: &ResidueTwiddle,
    limbs: usize,
) -> Result<(LimbOperand, SignedTwiddleOperand), MxuError> {
    let left = LimbOperand::from_residues(batch, limbs)?;
    if !batch.is_empty() && left.degree != twiddle.rows {
        return Err(MxuError::Dimension { what: "twiddle rows", expected: left.degree, got: twiddle.rows });
    }
    Ok((left, twiddle.signed_operand(limbs)?))
}

pub type Cell = (usize, usize);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactnessReport {
    pub model: Option<AccumulatorModel>,
    /// Cells whose model value differs from the exact value (or overflowed).
    pub flagged: Vec<Cell>,
    /// Int32 cells whose running sum left the i32 range.
    pub overflowed: Vec<Cell>,
    /// Cells whose exact running sum ever exceeded the model's exact window.
    pub window_exceeded: Vec<Cell>,
    pub cells: u64,
    pub macs: u64,
}

impl ExactnessReport {
    pub fn is_clean(&self) -> bool {
        self.flagged.is_empty() && self.overflowed.is_empty()
    }

    fn absorb(&mut self, other: ExactnessReport) {
        self.flagged.extend(other.flagged);
        self.overflowed.extend(other.overflowed);
        self.window_exceeded.extend(other.window_exceeded);
        self.cells += other.cells;
        self.macs += other.macs;
    }

    fn normalize(&mut self) {
        for v in [&mut self.flagged, &mut self.overflowed, &mut self.window_exceeded] {
            v.sort_unstable();
            v.dedup();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatmulOutput {
    pub rows: usize,
    pub cols: usize,
    /// Values as the modeled accumulator holds them.
    pub values: Vec<i64>,
    /// Unbounded-integer values of the same products.
    pub exact: Vec<i64>,
    pub report: ExactnessReport,
}

trait Accum: Copy {
    const ZERO: Self;
    /// Adds one limb product; the flag reports an integer overflow.
    fn add(self, p: i32) -> (Self, bool);
    fn value(self) -> i64;
}

#[derive(Clone, Copy)]
struct F32Acc(f32);
#[derive(Clone, Copy)]
struct I32Acc(i32);
#[derive(Clone, Copy)]
struct ExactAcc(i64);

impl Accum for F32Acc {
    const ZERO: Self = F32Acc(0.0);
    #[inline(always)]
    fn add(self, p: i32) -> (Self, bool) {
        // |p| ≤ 32,640 converts exactly; the add rounds half to even
        (F32Acc(self.0 + p as f32), false)
    }
    fn value(self) -> i64 {
        self.0 as i64
    }
}

impl Accum for I32Acc {
    const ZERO: Self = I32Acc(0);
    #[inline(always)]
    fn add(self, p: i32) -> (Self, bool) {
        let (s, o) = self.0.overflowing_add(p);
        (I32Acc(s), o)
    }
    fn value(self) -> i64 {
        self.0 as i64
    }
}

impl Accum for ExactAcc {
    const ZERO: Self = ExactAcc(0);
    #[inline(always)]
    fn add(self, p: i32) -> (Self, bool) {
        (ExactAcc(self.0 + p as i64), false)
    }
    fn value(self) -> i64 {
        self.0
    }
}

const MAX_CLASSES: usize = 7;

fn check_inner(left: &LimbOperand, right: &SignedTwiddleOperand) -> Result<(), MxuError> {
    if left.limbs != right.limbs {
        return Err(MxuError::Dimension { what: "limb count", expected: left.limbs, got: right.limbs });
    }
    if left.rows > 0 && left.degree != right.degree {
        return Err(MxuError::Dimension { what: "inner dimension", expected: left.limbs * left.degree, got: right.limbs * right.degree });
    }
    Ok(())
}

fn kernel<A: Accum>(
    left: &LimbOperand,
    right: &SignedTwiddleOperand,
    window: Option<u64>,
    coeffs: std::ops::Range<usize>,
) -> MatmulOutput {
    let c = left.limbs;
    let classes = 2 * c - 1;
    let n = classes * right.d_out;
    let window = window.map_or(i64::MAX, |w| w as i64);
    let mut values = vec![0i64; left.rows * n];
    let mut exact = vec![0i64; left.rows * n];
    let mut report = ExactnessReport { cells: (left.rows * n) as u64, ..Default::default() };
    let mut macs = 0u64;
    for m in 0..left.rows {
        // zero coefficients contribute exact zeros; skipping them leaves every sum unchanged
        let active: Vec<usize> = coeffs
            .clone()
            .filter(|&t| left.coefficient_limbs(m, t).iter().any(|&l| l != 0))
            .collect();
        for u in 0..right.d_out {
            let mut acc = [A::ZERO; MAX_CLASSES];
            let mut ex = [0i64; MAX_CLASSES];
            let mut ovf = [false; MAX_CLASSES];
            let mut wide = [false; MAX_CLASSES];
            for &t in &active {
                let a = left.coefficient_limbs(m, t);
                let w = right.twiddle_limbs(t, u);
                for i in 0..c {
                    let ai = a[i] as i32;
                    for j in 0..c {
                        let p = ai * w[j] as i32;
                        let k = i + j;
                        let (s, o) = acc[k].add(p);
                        acc[k] = s;
                        ovf[k] |= o;
                        ex[k] += p as i64;
                        wide[k] |= ex[k].abs() > window;
                    }
                }
                macs += (c * c) as u64;
            }
            for k in 0..classes {
                let col = u * classes + k;
                let idx = m * n + col;
                values[idx] = acc[k].value();
                exact[idx] = ex[k];
                if ovf[k] {
                    report.overflowed.push((m, col));
                }
                if ovf[k] || values[idx] != ex[k] {
                    report.flagged.push((m, col));
                }
                if wide[k] {
                    report.window_exceeded.push((m, col));
                }
            }
        }
    }
    report.macs = macs;
    MatmulOutput { rows: left.rows, cols: n, values, exact, report }
}

fn matmul_range(
    left: &LimbOperand,
    right: &SignedTwiddleOperand,
    cfg: &MxuConfig,
    coeffs: std::ops::Range<usize>,
) -> MatmulOutput {
    let window = cfg.accumulator.exact_window();
    let mut out = match cfg.accumulator {
        AccumulatorModel::Fp32Mantissa => kernel::<F32Acc>(left, right, window, coeffs),
        AccumulatorModel::Int32 => kernel::<I32Acc>(left, right, window, coeffs),
        AccumulatorModel::ExactOracle => kernel::<ExactAcc>(left, right, window, coeffs),
    };
    out.report.model = Some(cfg.accumulator);
    out
}

/// One fused dispatch over the whole K dimension, accumulating in ascending K order.
pub fn mxu_matmul(
    left: &LimbOperand,
    right: &SignedTwiddleOperand,
    cfg: &MxuConfig,
) -> Result<MatmulOutput, MxuError> {
    check_inner(left, right)?;
    if left.limbs != cfg.limbs {
        return Err(MxuError::Dimension { what: "configured limbs", expected: cfg.limbs, got: left.limbs });
    }
    Ok(matmul_range(left, right, cfg, 0..left.degree))
}

/// Sums unit products up to `target` under the model; true when the result is exact.
pub fn accumulate_probe(target: u64, model: AccumulatorModel) -> bool {
    match model {
        AccumulatorModel::Fp32Mantissa => {
            let mut acc = 0f32;
            for _ in 0..target {
                let next = acc + 1.0;
                if next == acc {
                    // the sum can no longer move
                    return false;
                }
                acc = next;
            }
            acc as u64 == target
        }
        AccumulatorModel::Int32 => {
            let mut acc = 0i32;
            for _ in 0..target {
                match acc.checked_add(1) {
                    Some(s) => acc = s,
                    None => return false,
                }
            }
            acc as u64 == target
        }
        AccumulatorModel::ExactOracle => true,
    }
}

pub const PROBE_TARGETS: [u64; 7] =
    [1 << 23, (1 << 24) - 1, 1 << 24, (1 << 24) + 1, (1 << 25) - 1, 1 << 28, 1 << 30];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Staging {
    On,
    Off,
}

/// How the simulated VPU treats partial results between passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VpuMode {
    /// Reduce into [0, m) after every pass.
    Eager,
    /// Carry the integer sum across passes and reduce once.
    Lazy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagedOutput {
    pub rows: usize,
    pub d_out: usize,
    /// rows × d_out reduced residues.
    pub values: Vec<u64>,
    pub passes: usize,
    pub vpu_reductions: u64,
    pub report: ExactnessReport,
}

impl StagedOutput {
    pub fn row(&self, m: usize) -> &[u64] {
        &self.values[m * self.d_out..(m + 1) * self.d_out]
    }
}

pub fn pass_count(d: usize, d_max: usize) -> usize {
    d.div_ceil(d_max)
}

/// Splits K into ⌈d/d_max⌉ coefficient chunks; between chunks the weight classes are
/// recombined (Σ_k cell_k·256^k), reduced mod m on the VPU and folded into the running result.
pub fn staged_evaluate(
    left: &LimbOperand,
    right: &SignedTwiddleOperand,
    modulus: u64,
    cfg: &MxuConfig,
    d_max: usize,
    staging: Staging,
    vpu: VpuMode,
) -> Result<StagedOutput, MxuError> {
    check_inner(left, right)?;
    if d_max == 0 {
        return Err(MxuError::StagingWidth { d_max, bound: 0 });
    }
    if staging == Staging::On {
        if let Some(w) = cfg.accumulator.exact_window() {
            let bound = accumulator_bound(cfg.limbs as u64, w)?;
            if d_max as u64 > bound {
                return Err(MxuError::StagingWidth { d_max, bound });
            }
        }
    }
    let d = left.degree;
    let chunks: Vec<std::ops::Range<usize>> = match staging {
        Staging::On => (0..pass_count(d, d_max)).map(|p| p * d_max..((p + 1) * d_max).min(d)).collect(),
        Staging::Off => vec![0..d],
    };
    let classes = right.classes();
    let d_out = right.d_out;
    let m = modulus as i128;
    let mut running = vec![0i128; left.rows * d_out];
    let mut report = ExactnessReport { model: Some(cfg.accumulator), ..Default::default() };
    let mut reductions = 0u64;
    for chunk in &chunks {
        let out = matmul_range(left, right, cfg, chunk.clone());
        for row in 0..left.rows {
            for u in 0..d_out {
                let cells = &out.values[row * out.cols + u * classes..row * out.cols + (u + 1) * classes];
                let v: i128 = cells.iter().rev().fold(0i128, |acc, &x| acc * 256 + x as i128);
                let r = &mut running[row * d_out + u];
                match vpu {
                    VpuMode::Eager => {
                        *r = (*r + v).rem_euclid(m);
                        reductions += 1;
                    }
                    VpuMode::Lazy => *r += v,
                }
            }
        }
        report.absorb(out.report);
    }
    if vpu == VpuMode::Lazy {
        for r in running.iter_mut() {
            *r = r.rem_euclid(m);
        }
        reductions += running.len() as u64;
    }
    report.normalize();
    Ok(StagedOutput {
        rows: left.rows,
        d_out,
        values: running.into_iter().map(|r| r as u64).collect(),
        passes: chunks.len(),
        vpu_reductions: reductions,
        report,
    })
}

/// Single-polynomial staged transform; pass count is ⌈d/d_max⌉ with staging on.
pub fn staged_matrix_ntt(
    p: &[u64],
    twiddle: &ResidueTwiddle,
    cfg: &MxuConfig,
    d_max: usize,
    staging: Staging,
) -> Result<StagedOutput, MxuError> {
    let (left, right) = pack_operands(&[p.to_vec()], twiddle, cfg.limbs)?;
    staged_evaluate(&left, &right, twiddle.modulus(), cfg, d_max, staging, VpuMode::Eager)
}

/// The worst-case operand pair for C limbs at degree d: every left limb 255, every right
/// limb -128 except one -127 on the final product of the densest class, so the last
/// partial sum is odd and lands just past the window when d = bound + 1.
pub fn saturation_operands(d: usize, limbs: usize) -> (LimbOperand, SignedTwiddleOperand) {
    let left = LimbOperand { rows: 1, degree: d, limbs, data: vec![255; d * limbs] };
    let mut l = vec![-128i8; d * limbs];
    l[(d - 1) * limbs] = -127;
    let right = SignedTwiddleOperand { degree: d, d_out: 1, limbs, table: TwiddleTable::Dense(l) };
    (left, right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::BN254_LANE_PRIME;

    #[test]
    fn bounds() {
        assert_eq!(accumulator_bound(4, 1 << 24).unwrap(), 128);
        assert_eq!(accumulator_bound(3, 1 << 24).unwrap(), 171);
        assert_eq!(accumulator_bound(4, (1 << 31) - 1).unwrap(), 16_448);
        assert!(accumulator_bound(4, 1000).is_err());
        assert!(accumulator_bound(0, 1 << 24).is_err());
    }

    #[test]
    fn limb_examples() {
        assert_eq!(decompose_limbs(0x0102_0304, 4).unwrap(), vec![4, 3, 2, 1]);
        assert_eq!(decompose_limbs(0, 3).unwrap(), vec![0, 0, 0]);
        assert_eq!(decompose_limbs(8_380_416, 3).unwrap(), vec![0x00, 0xE0, 0x7F]);
        assert!(decompose_limbs(1 << 24, 3).is_err());
    }

    #[test]
    fn recode_examples() {
        assert_eq!(recode_balanced(255, 4).unwrap(), vec![-1, 1, 0, 0]);
        assert_eq!(recode_balanced(0, 4).unwrap(), vec![0, 0, 0, 0]);
        assert_eq!(recode_balanced(32_640, 4).unwrap(), vec![-128, -128, 1, 0]);
        assert_eq!(recode_balanced(0x7F7F_7F7F, 4).unwrap(), vec![127; 4]);
        assert!(recode_balanced(0x7F7F_7F80, 4).is_err());
        assert_eq!(recode_balanced(-128, 1).unwrap(), vec![-128]);
    }

    #[test]
    fn pack_identity() {
        let w = ResidueTwiddle::dense(17, 1, 1, vec![1]).unwrap();
        let (l, r) = pack_operands(&[vec![1]], &w, 2).unwrap();
        assert_eq!(l.shape(), (1, 2));
        assert_eq!((l.get(0, 0), l.get(0, 1)), (1, 0));
        assert_eq!(r.shape(), (2, 3));
        let expanded: Vec<Vec<i8>> = (0..2).map(|row| (0..3).map(|c| r.entry(row, c)).collect()).collect();
        assert_eq!(expanded, vec![vec![1, 0, 0], vec![0, 1, 0]]);
        let cfg = MxuConfig::new(AccumulatorModel::ExactOracle, 2).unwrap();
        let out = mxu_matmul(&l, &r, &cfg).unwrap();
        let v: i64 = out.values.iter().rev().fold(0, |a, &x| a * 256 + x);
        assert_eq!(v, 1);
    }

    #[test]
    fn pack_shapes_and_densest_class() {
        let f = PrimeField::bn254_lane();
        let w = ResidueTwiddle::square(&f, 128).unwrap();
        let batch = vec![vec![7u64; 128]; 8];
        let (l, r) = pack_operands(&batch, &w, 4).unwrap();
        assert_eq!(l.shape(), (8, 512));
        assert_eq!(r.shape(), (512, 896));
        // class k = 3 of output u = 5 gets (i, j) = (0,3),(1,2),(2,1),(3,0) for coefficient t = 9
        let pairs: Vec<(usize, usize)> = (0..4)
            .filter_map(|i| (3usize).checked_sub(i).filter(|&j| j < 4).map(|j| (i, j)))
            .collect();
        assert_eq!(pairs, vec![(0, 3), (1, 2), (2, 1), (3, 0)]);
        for (i, j) in pairs {
            assert_eq!(r.entry(9 * 4 + i, 5 * 7 + 3), r.twiddle_limbs(9, 5)[j]);
        }
        assert_eq!(r.entry(9 * 4 + 3, 5 * 7), 0);
    }

    #[test]
    fn zero_operands() {
        let w = ResidueTwiddle::dense(BN254_LANE_PRIME, 4, 4, vec![0; 16]).unwrap();
        let (l, r) = pack_operands(&vec![vec![0; 4]; 3], &w, 4).unwrap();
        let cfg = MxuConfig::new(AccumulatorModel::Fp32Mantissa, 4).unwrap();
        let out = mxu_matmul(&l, &r, &cfg).unwrap();
        assert!(out.values.iter().all(|&v| v == 0));
        assert!(out.report.flagged.is_empty());
    }

    #[test]
    fn saturation_boundary() {
        let cfg = MxuConfig::new(AccumulatorModel::Fp32Mantissa, 4).unwrap();
        let (l, r) = saturation_operands(128, 4);
        let out = mxu_matmul(&l, &r, &cfg).unwrap();
        assert!(out.report.flagged.is_empty());
        assert!(out.report.window_exceeded.is_empty());
        let (l, r) = saturation_operands(129, 4);
        let out = mxu_matmul(&l, &r, &cfg).unwrap();
        assert_eq!(out.report.flagged, vec![(0, 3)]);
        assert_eq!(out.exact[3], -16_841_985);
        assert!(out.report.window_exceeded.contains(&(0, 3)));
    }

    #[test]
    fn probes() {
        assert!(accumulate_probe(1 << 24, AccumulatorModel::Fp32Mantissa));
        assert!(!accumulate_probe((1 << 24) + 1, AccumulatorModel::Fp32Mantissa));
        assert!(accumulate_probe(1 << 28, AccumulatorModel::Int32));
        assert!(!accumulate_probe(1 << 31, AccumulatorModel::Int32));
    }

    #[test]
    fn pass_counts() {
        assert_eq!(pass_count(256, 171), 2);
        assert_eq!(pass_count(256, 128), 2);
        assert_eq!(pass_count(128, 128), 1);
        assert_eq!(pass_count(8192, 128), 64);
    }

    #[test]
    fn staging_width_checked() {
        let f = PrimeField::bn254_lane();
        let w = ResidueTwiddle::square(&f, 256).unwrap();
        let cfg = MxuConfig::new(AccumulatorModel::Fp32Mantissa, 4).unwrap();
        let err = staged_matrix_ntt(&vec![1; 256], &w, &cfg, 129, Staging::On).unwrap_err();
        assert_eq!(err, MxuError::StagingWidth { d_max: 129, bound: 128 });
    }
}
