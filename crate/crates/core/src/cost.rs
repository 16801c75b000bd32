//! Closed-form throughput and cost arithmetic over measured constants.
//!
//! Everything is computed in SI units (seconds, ops/sec); formatting converts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const EMBEDDED: &str = include_str!("../calibration/constants.toml");

#[derive(Debug, Error)]
pub enum CostError {
    #[error("calibration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("calibration: {0}")]
    Io(#[from] std::io::Error),
    #[error("calibration field {0} must be positive")]
    NonPositive(&'static str),
    #[error("degree {0} must be a power of two at least 2")]
    Degree(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub t_gemm: f64,
    pub t_vpu: f64,
    pub t_gemm_butterfly: f64,
    pub reduction_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub bn254_v4: f64,
    pub bn254_v5e: f64,
    pub bn254_v5p: f64,
    pub bn254_v5p_int32: f64,
    pub dilithium_v4: f64,
    pub dilithium_v5e: f64,
    pub dilithium_v5p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub sequential: f64,
    pub time_sliced: f64,
    pub dilithium_sequential: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gpu {
    pub bn254: f64,
    pub dilithium_verifications: f64,
    pub ntts_per_verification: u32,
    pub ntt_fraction_min: f64,
    pub ntt_fraction_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerDevice<T> {
    pub a100: T,
    pub v4: T,
    pub v5e: T,
    pub v5p: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerTpu<T> {
    pub v4: T,
    pub v5e: T,
    pub v5p: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub mxu_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contention {
    pub bn254_delta: f64,
    pub dilithium_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub version: u32,
    pub timing: Timing,
    pub throughput: Throughput,
    pub ablation: Ablation,
    pub gpu: Gpu,
    pub prices: PerDevice<f64>,
    pub chips: PerDevice<u32>,
    pub cores_per_chip: PerTpu<u32>,
    pub vpu_fraction: PerTpu<f64>,
    pub geometry: Geometry,
    pub contention: Contention,
}

impl Default for Calibration {
    fn default() -> Self {
        Self::from_toml_str(EMBEDDED).expect("embedded calibration is valid")
    }
}

impl Calibration {
    pub fn from_toml_str(s: &str) -> Result<Self, CostError> {
        let c: Calibration = toml::from_str(s)?;
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn embedded_source() -> &'static str {
        EMBEDDED
    }

    fn check(&self) -> Result<(), CostError> {
        let t = &self.timing;
        let p = &self.prices;
        let pos = [
            ("timing.t_gemm", t.t_gemm),
            ("timing.t_vpu", t.t_vpu),
            ("timing.reduction_ratio", t.reduction_ratio),
            ("throughput.bn254_v4", self.throughput.bn254_v4),
            ("throughput.bn254_v5e", self.throughput.bn254_v5e),
            ("throughput.bn254_v5p", self.throughput.bn254_v5p),
            ("throughput.bn254_v5p_int32", self.throughput.bn254_v5p_int32),
            ("throughput.dilithium_v4", self.throughput.dilithium_v4),
            ("throughput.dilithium_v5e", self.throughput.dilithium_v5e),
            ("throughput.dilithium_v5p", self.throughput.dilithium_v5p),
            ("gpu.bn254", self.gpu.bn254),
            ("gpu.dilithium_verifications", self.gpu.dilithium_verifications),
            ("gpu.ntt_fraction_min", self.gpu.ntt_fraction_min),
            ("prices.a100", p.a100),
            ("prices.v4", p.v4),
            ("prices.v5e", p.v5e),
            ("prices.v5p", p.v5p),
            ("geometry.mxu_share", self.geometry.mxu_share),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CostError::NonPositive(name));
            }
        }
        if t.t_gemm_butterfly < 0.0 {
            return Err(CostError::NonPositive("timing.t_gemm_butterfly"));
        }
        Ok(())
    }

    /// Copy with every TPU chip price scaled by (1 + pct/100).
    pub fn with_tpu_price_change(&self, pct: f64) -> Self {
        let f = 1.0 + pct / 100.0;
        let mut c = self.clone();
        c.prices.v4 *= f;
        c.prices.v5e *= f;
        c.prices.v5p *= f;
        c
    }

    /// Dilithium NTT throughput implied by the GPU verification rate.
    pub fn gpu_dilithium_ntts(&self) -> f64 {
        self.gpu.dilithium_verifications * self.gpu.ntts_per_verification as f64
    }

    fn hourly(&self, g: Generation) -> f64 {
        match g {
            Generation::V4 => self.chips.v4 as f64 * self.prices.v4,
            Generation::V5e => self.chips.v5e as f64 * self.prices.v5e,
            Generation::V5p | Generation::V5pInt32 => self.chips.v5p as f64 * self.prices.v5p,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generation {
    V4,
    V5e,
    V5p,
    V5pInt32,
}

impl Generation {
    pub fn label(self) -> &'static str {
        match self {
            Generation::V4 => "TPU v4-8",
            Generation::V5e => "TPU v5e-8",
            Generation::V5p => "TPU v5p-8",
            Generation::V5pInt32 => "TPU v5p-8 (int32)",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    pub dispatch_penalty: f64,
    pub contention_free_penalty: f64,
    pub arrival_penalty: f64,
}

/// Π = T_total/T_GEMM with T_total = 1/(v4 throughput); Π_cf = T_VPU/T_GEMM.
pub fn derived_penalties(c: &Calibration) -> Penalties {
    let t_total = 1.0 / c.throughput.bn254_v4;
    let dispatch_penalty = t_total / c.timing.t_gemm;
    let contention_free_penalty = c.timing.t_vpu / c.timing.t_gemm;
    Penalties { dispatch_penalty, contention_free_penalty, arrival_penalty: dispatch_penalty / contention_free_penalty }
}

pub fn algorithmic_fill(d: u64) -> Result<f64, CostError> {
    if d < 2 || !d.is_power_of_two() {
        return Err(CostError::Degree(d));
    }
    Ok(d.trailing_zeros() as f64 / d as f64)
}

pub fn effective_utilization(d: u64, mxu_share: f64) -> Result<f64, CostError> {
    Ok(mxu_share * algorithmic_fill(d)?)
}

/// 1 / (T_VPU/κ + T_GEMM_butterfly).
pub fn single_tenant_projection(c: &Calibration) -> f64 {
    1.0 / (c.timing.t_vpu / c.timing.reduction_ratio + c.timing.t_gemm_butterfly)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub workload: String,
    pub hardware: String,
    pub ops_per_sec: f64,
    pub price_per_hour: f64,
    pub ops_per_dollar_hour: f64,
}

fn row(workload: &str, hardware: &str, ops: f64, hourly: f64) -> CostRow {
    CostRow {
        workload: workload.into(),
        hardware: hardware.into(),
        ops_per_sec: ops,
        price_per_hour: hourly,
        ops_per_dollar_hour: ops / hourly,
    }
}

/// ops per $/hr = throughput / (chips · chip price).
pub fn cost_table(c: &Calibration) -> Vec<CostRow> {
    let t = &c.throughput;
    let a100 = c.chips.a100 as f64 * c.prices.a100;
    vec![
        row("BN254", "A100 (GPU NTT)", c.gpu.bn254, a100),
        row("BN254", Generation::V4.label(), t.bn254_v4, c.hourly(Generation::V4)),
        row("BN254", Generation::V5e.label(), t.bn254_v5e, c.hourly(Generation::V5e)),
        row("BN254", Generation::V5p.label(), t.bn254_v5p, c.hourly(Generation::V5p)),
        row("BN254", Generation::V5pInt32.label(), t.bn254_v5p_int32, c.hourly(Generation::V5pInt32)),
        row("Dilithium", "A100 (projected)", c.gpu_dilithium_ntts(), a100),
        row("Dilithium", Generation::V4.label(), t.dilithium_v4, c.hourly(Generation::V4)),
        row("Dilithium", Generation::V5e.label(), t.dilithium_v5e, c.hourly(Generation::V5e)),
        row("Dilithium", Generation::V5p.label(), t.dilithium_v5p, c.hourly(Generation::V5p)),
    ]
}

fn cell(c: &Calibration, workload: &str, hardware: &str) -> f64 {
    cost_table(c)
        .into_iter()
        .find(|r| r.workload == workload && r.hardware == hardware)
        .map(|r| r.ops_per_dollar_hour)
        .expect("row present")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationDeficit {
    pub generation: Generation,
    pub headline: f64,
    pub arithmetic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deficits {
    pub per_generation: Vec<GenerationDeficit>,
    /// [min, max] over v4 and v5p.
    pub headline_range: [f64; 2],
    pub arithmetic_range: [f64; 2],
    /// Single-tenant projection over the batched v4 throughput.
    pub spatial: f64,
    pub native_int32: f64,
    pub dilithium_v5p: f64,
    pub dilithium_v4: f64,
    pub dilithium_baseline: f64,
    /// GPU NTT throughput at the upper and lower NTT fraction.
    pub dilithium_f_band: [f64; 2],
}

/// Headline = GPU ops/$ over TPU ops/$; the spatial factor is attributed to every
/// generation, so arithmetic = headline / spatial.
pub fn deficit_factorization(c: &Calibration) -> Deficits {
    let gpu = cell(c, "BN254", "A100 (GPU NTT)");
    let spatial = single_tenant_projection(c) / c.throughput.bn254_v4;
    let per_generation: Vec<GenerationDeficit> = [Generation::V4, Generation::V5e, Generation::V5p]
        .into_iter()
        .map(|g| {
            let headline = gpu / cell(c, "BN254", g.label());
            GenerationDeficit { generation: g, headline, arithmetic: headline / spatial }
        })
        .collect();
    let pick = |g: Generation| per_generation.iter().find(|d| d.generation == g).expect("present").clone();
    let (v4, v5p) = (pick(Generation::V4), pick(Generation::V5p));
    let dil_gpu = cell(c, "Dilithium", "A100 (projected)");
    let base = c.gpu_dilithium_ntts();
    Deficits {
        headline_range: [v4.headline.min(v5p.headline), v4.headline.max(v5p.headline)],
        arithmetic_range: [v4.arithmetic.min(v5p.arithmetic), v4.arithmetic.max(v5p.arithmetic)],
        spatial,
        native_int32: gpu / cell(c, "BN254", Generation::V5pInt32.label()),
        dilithium_v5p: dil_gpu / cell(c, "Dilithium", Generation::V5p.label()),
        dilithium_v4: dil_gpu / cell(c, "Dilithium", Generation::V4.label()),
        dilithium_baseline: base,
        dilithium_f_band: [base / c.gpu.ntt_fraction_max, base / c.gpu.ntt_fraction_min],
        per_generation,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct V5eAnomaly {
    pub per_chip_v4: f64,
    pub per_chip_v5e: f64,
    pub per_chip_regression: f64,
    /// Ratio of per-core VPU time per polynomial, v5e over v4.
    pub per_instruction_regression: f64,
    pub core_density_ratio: f64,
}

pub fn v5e_anomaly(c: &Calibration) -> V5eAnomaly {
    let per_chip_v4 = c.throughput.bn254_v4 / c.chips.v4 as f64;
    let per_chip_v5e = c.throughput.bn254_v5e / c.chips.v5e as f64;
    let cores_v4 = (c.chips.v4 * c.cores_per_chip.v4) as f64;
    let cores_v5e = (c.chips.v5e * c.cores_per_chip.v5e) as f64;
    let vpu_time = |frac: f64, ops: f64, cores: f64| frac * cores / ops;
    V5eAnomaly {
        per_chip_v4,
        per_chip_v5e,
        per_chip_regression: per_chip_v4 / per_chip_v5e,
        per_instruction_regression: vpu_time(c.vpu_fraction.v5e, c.throughput.bn254_v5e, cores_v5e)
            / vpu_time(c.vpu_fraction.v4, c.throughput.bn254_v4, cores_v4),
        core_density_ratio: c.cores_per_chip.v4 as f64 / c.cores_per_chip.v5e as f64,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRatios {
    pub over_time_sliced: f64,
    pub over_sequential: f64,
    pub dilithium_over_sequential: f64,
}

pub fn ablation(c: &Calibration) -> AblationRatios {
    AblationRatios {
        over_time_sliced: c.throughput.bn254_v4 / c.ablation.time_sliced,
        over_sequential: c.throughput.bn254_v4 / c.ablation.sequential,
        dilithium_over_sequential: c.throughput.dilithium_v4 / c.ablation.dilithium_sequential,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverPoint {
    pub degree: u64,
    pub tpu_ops: f64,
    pub gpu_ops: f64,
    pub gpu_advantage: f64,
}

/// Anchored at d = 256: the matrix form costs O(d²) per transform, the GPU butterfly
/// O(d log d).
pub fn crossover_scan(c: &Calibration, degrees: &[u64]) -> Result<Vec<CrossoverPoint>, CostError> {
    let anchor = 256.0f64;
    let anchor_nlogn = anchor * anchor.log2();
    degrees
        .iter()
        .map(|&d| {
            if d < 2 || !d.is_power_of_two() {
                return Err(CostError::Degree(d));
            }
            let x = d as f64;
            let tpu_ops = c.throughput.bn254_v4 * (anchor / x).powi(2);
            let gpu_ops = c.gpu.bn254 * anchor_nlogn / (x * x.log2());
            Ok(CrossoverPoint { degree: d, tpu_ops, gpu_ops, gpu_advantage: gpu_ops / tpu_ops })
        })
        .collect()
}

pub fn default_crossover_degrees() -> Vec<u64> {
    (8..=14).map(|k| 1u64 << k).collect()
}

/// Three significant figures, with k/M suffixes for large values.
pub fn sig3(x: f64) -> String {
    let (v, suffix) = if x.abs() >= 1e6 {
        (x / 1e6, "M")
    } else if x.abs() >= 1e4 {
        (x / 1e3, "k")
    } else {
        (x, "")
    };
    if v == 0.0 {
        return "0".into();
    }
    let digits = v.abs().log10().floor() as i32;
    let decimals = (2 - digits).max(0) as usize;
    let rounded = format!("{:.*}", decimals, v);
    format!("{rounded}{suffix}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub calibration_version: u32,
    pub tpu_price_change_pct: f64,
    pub penalties: Penalties,
    pub algorithmic_fill_256: f64,
    pub effective_utilization_256: f64,
    pub single_tenant_projection: f64,
    pub table: Vec<CostRow>,
    pub deficits: Deficits,
    pub v5e: V5eAnomaly,
    pub ablation: AblationRatios,
    pub crossover: Vec<CrossoverPoint>,
}

pub fn cost_report(c: &Calibration, tpu_price_change_pct: f64) -> CostReport {
    let c = c.with_tpu_price_change(tpu_price_change_pct);
    CostReport {
        calibration_version: c.version,
        tpu_price_change_pct,
        penalties: derived_penalties(&c),
        algorithmic_fill_256: algorithmic_fill(256).expect("valid"),
        effective_utilization_256: effective_utilization(256, c.geometry.mxu_share).expect("valid"),
        single_tenant_projection: single_tenant_projection(&c),
        table: cost_table(&c),
        deficits: deficit_factorization(&c),
        v5e: v5e_anomaly(&c),
        ablation: ablation(&c),
        crossover: crossover_scan(&c, &default_crossover_degrees()).expect("valid degrees"),
    }
}

pub fn render_cost_report(r: &CostReport) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "Cost-normalised throughput (TPU price change {:+}%)", r.tpu_price_change_pct);
    let _ = writeln!(s, "{:<10} {:<20} {:>12} {:>10} {:>14}", "workload", "hardware", "ops/sec", "$/hr", "ops per $/hr");
    for row in &r.table {
        let _ = writeln!(
            s,
            "{:<10} {:<20} {:>12} {:>10.2} {:>14}",
            row.workload,
            row.hardware,
            sig3(row.ops_per_sec),
            row.price_per_hour,
            sig3(row.ops_per_dollar_hour)
        );
    }
    let p = &r.penalties;
    let _ = writeln!(s, "\nPenalties: dispatch {}  contention-free {}  arrival {}", sig3(p.dispatch_penalty), sig3(p.contention_free_penalty), sig3(p.arrival_penalty));
    let _ = writeln!(s, "algorithmic fill at 256: {}  effective utilization: {:.3}%", r.algorithmic_fill_256, r.effective_utilization_256 * 100.0);
    let _ = writeln!(s, "Single-tenant projection {} ops/sec", sig3(r.single_tenant_projection));
    let d = &r.deficits;
    let _ = writeln!(s, "\nDeficit factorization (spatial factor {})", sig3(d.spatial));
    let _ = writeln!(s, "{:<20} {:>10} {:>12}", "generation", "headline", "arithmetic");
    for g in &d.per_generation {
        let _ = writeln!(s, "{:<20} {:>10} {:>12}", g.generation.label(), sig3(g.headline), sig3(g.arithmetic));
    }
    let _ = writeln!(s, "headline range [{}, {}]", sig3(d.headline_range[0]), sig3(d.headline_range[1]));
    let _ = writeln!(s, "arithmetic range [{}, {}] (projection)", sig3(d.arithmetic_range[0]), sig3(d.arithmetic_range[1]));
    let _ = writeln!(s, "native int32 (v5p) {}", sig3(d.native_int32));
    let _ = writeln!(s, "Dilithium: v5p {}  v4 {}", sig3(d.dilithium_v5p), sig3(d.dilithium_v4));
    let _ = writeln!(
        s,
        "Dilithium GPU baseline {}  NTT-fraction band [{}, {}]",
        sig3(d.dilithium_baseline),
        sig3(d.dilithium_f_band[0]),
        sig3(d.dilithium_f_band[1])
    );
    let v = &r.v5e;
    let _ = writeln!(
        s,
        "\nv5e per chip {} vs v4 {} ({}x), per-instruction {}x",
        sig3(v.per_chip_v5e),
        sig3(v.per_chip_v4),
        sig3(v.per_chip_regression),
        sig3(v.per_instruction_regression)
    );
    let a = &r.ablation;
    let _ = writeln!(
        s,
        "Ablation: {}x over time-sliced, {}x over sequential, Dilithium {}x",
        sig3(a.over_time_sliced),
        sig3(a.over_sequential),
        sig3(a.dilithium_over_sequential)
    );
    let _ = writeln!(s, "\n{:>8} {:>12} {:>12} {:>14}", "degree", "tpu ops/s", "gpu ops/s", "gpu advantage");
    for p in &r.crossover {
        let _ = writeln!(s, "{:>8} {:>12} {:>12} {:>14}", p.degree, sig3(p.tpu_ops), sig3(p.gpu_ops), sig3(p.gpu_advantage));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(x: f64, want: f64, rel: f64) -> bool {
        ((x - want) / want).abs() <= rel
    }

    #[test]
    fn penalties() {
        let c = Calibration::default();
        let p = derived_penalties(&c);
        assert!((p.dispatch_penalty - 17.2).abs() < 0.1, "{}", p.dispatch_penalty);
        assert!((p.contention_free_penalty - 14.3).abs() < 0.05);
        assert!((p.arrival_penalty - 1.20).abs() < 0.05);
        let mut d = c.clone();
        d.timing.t_gemm *= 2.0;
        assert!(close(derived_penalties(&d).dispatch_penalty, p.dispatch_penalty / 2.0, 1e-12));
        let mut e = c.clone();
        e.timing.t_vpu = 1.0 / e.throughput.bn254_v4;
        assert!(close(derived_penalties(&e).arrival_penalty, 1.0, 1e-12));
    }

    #[test]
    fn algorithmic_penalty() {
        assert_eq!(algorithmic_fill(256).unwrap(), 0.03125);
        assert_eq!(algorithmic_fill(2).unwrap(), 0.5);
        assert!(algorithmic_fill(3).is_err() && algorithmic_fill(1).is_err());
        assert!((effective_utilization(256, 0.92).unwrap() - 0.02875).abs() < 1e-12);
        let mut prev = effective_utilization(4, 0.92).unwrap();
        for k in 3..20 {
            let u = effective_utilization(1 << k, 0.92).unwrap();
            assert!(u < prev);
            prev = u;
        }
    }

    #[test]
    fn projection_variants() {
        let c = Calibration::default();
        let p = single_tenant_projection(&c);
        assert!((18_900.0..=19_200.0).contains(&p), "{p}");
        let mut k1 = c.clone();
        k1.timing.reduction_ratio = 1.0;
        assert!(close(single_tenant_projection(&k1), 1.0 / 229.3e-6, 1e-12));
        let mut z = c.clone();
        z.timing.t_gemm_butterfly = 0.0;
        assert!(close(single_tenant_projection(&z), 4.5 / 227.3e-6, 1e-12));
    }

    #[test]
    fn table_cells() {
        let c = Calibration::default();
        let want = [1.96e6, 284.0, 282.0, 353.0, 418.0, 4.99e6, 8574.0, 8878.0, 9811.0];
        for (r, w) in cost_table(&c).iter().zip(want) {
            assert!(close(r.ops_per_dollar_hour, w, 0.01), "{} {}: {}", r.workload, r.hardware, r.ops_per_dollar_hour);
        }
    }

    #[test]
    fn price_perturbation_scales_deficits() {
        let c = Calibration::default();
        let base = deficit_factorization(&c);
        for pct in [-25.0, 25.0] {
            let d = deficit_factorization(&c.with_tpu_price_change(pct));
            let f = 1.0 + pct / 100.0;
            assert!(close(d.headline_range[0], base.headline_range[0] * f, 1e-12));
            assert!(close(d.dilithium_v5p, base.dilithium_v5p * f, 1e-12));
            assert!(d.headline_range[0] < d.headline_range[1]);
        }
    }

    #[test]
    fn sig3_format() {
        assert_eq!(sig3(284.37), "284");
        assert_eq!(sig3(17.17), "17.2");
        assert_eq!(sig3(1_961_852.0), "1.96M");
        assert_eq!(sig3(19_044.0), "19.0k");
        assert_eq!(sig3(0.0314159), "0.0314");
    }

    #[test]
    fn bad_calibration_rejected() {
        let s = Calibration::embedded_source().replace("t_vpu = 227.3e-6", "t_vpu = -1.0");
        assert!(matches!(Calibration::from_toml_str(&s), Err(CostError::NonPositive("timing.t_vpu"))));
    }
}
