use std::sync::Arc;

use ffmxu::field::{dense_evaluate, PrimeField};
use ffmxu::mxu::{
    accumulator_bound, decompose_limbs, mxu_matmul, pack_operands, recode_balanced, recombine_signed,
    recombine_unsigned, saturation_operands, staged_evaluate, staged_matrix_ntt, AccumulatorModel, MxuConfig,
    ResidueTwiddle, Staging, VpuMode, MAX_PIXEL_PRODUCT,
};
use num_bigint::BigUint;
use num_traits::ToPrimitive;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn oracle(field: &PrimeField, p: &[u64], tw: &ResidueTwiddle) -> Vec<u64> {
    let coeffs: Vec<BigUint> = p.iter().map(|&c| c.into()).collect();
    let omega = BigUint::from(tw.omega().unwrap());
    dense_evaluate(field, &coeffs, &omega, tw.cols(), tw.cols())
        .into_iter()
        .map(|v| v.to_u64().unwrap())
        .collect()
}

fn random_poly(rng: &mut ChaCha8Rng, d: usize, m: u64) -> Vec<u64> {
    (0..d).map(|_| rng.gen_range(0..m)).collect()
}

#[test]
fn staged_matches_oracle_bn254_lane() {
    let f = PrimeField::bn254_lane();
    let cfg = MxuConfig::new(AccumulatorModel::Fp32Mantissa, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for (d, passes) in [(128, 1), (256, 2), (1024, 8)] {
        let tw = ResidueTwiddle::square(&f, d).unwrap();
        let p = random_poly(&mut rng, d, tw.modulus());
        let out = staged_matrix_ntt(&p, &tw, &cfg, 128, Staging::On).unwrap();
        assert_eq!(out.passes, passes);
        assert!(out.report.is_clean());
        assert_eq!(out.values, oracle(&f, &p, &tw), "d = {d}");
    }
}

#[test]
fn staged_matches_oracle_dilithium() {
    let f = PrimeField::dilithium();
    let cfg = MxuConfig::new(AccumulatorModel::Fp32Mantissa, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tw = ResidueTwiddle::square(&f, 256).unwrap();
    for _ in 0..5 {
        let p = random_poly(&mut rng, 256, tw.modulus());
        let out = staged_matrix_ntt(&p, &tw, &cfg, 171, Staging::On).unwrap();
        assert_eq!(out.passes, 2);
        assert_eq!(out.values, oracle(&f, &p, &tw));
    }
}

#[test]
fn unstaged_worst_case_flags_but_completes() {
    // all coefficients at the maximal limb pattern push past the mantissa in one pass
    let f = PrimeField::bn254_lane();
    let cfg = MxuConfig::new(AccumulatorModel::Fp32Mantissa, 4).unwrap();
    let tw = ResidueTwiddle::square(&f, 256).unwrap();
    let p = vec![f.modulus_u64().unwrap() - 1; 256];
    let out = staged_matrix_ntt(&p, &tw, &cfg, 128, Staging::Off).unwrap();
    assert_eq!(out.passes, 1);
    assert!(!out.report.window_exceeded.is_empty() || out.report.is_clean());
    let staged = staged_matrix_ntt(&p, &tw, &cfg, 128, Staging::On).unwrap();
    assert_eq!(staged.values, oracle(&f, &p, &tw));
}

#[test]
fn saturation_boundary_all_limb_counts() {
    let cfg_for = |c| MxuConfig::new(AccumulatorModel::Fp32Mantissa, c).unwrap();
    for c in [3usize, 4] {
        let bound = accumulator_bound(c as u64, 1 << 24).unwrap() as usize;
        let (l, r) = saturation_operands(bound, c);
        assert!(mxu_matmul(&l, &r, &cfg_for(c)).unwrap().report.flagged.is_empty(), "C = {c}");
        let (l, r) = saturation_operands(bound + 1, c);
        assert!(!mxu_matmul(&l, &r, &cfg_for(c)).unwrap().report.flagged.is_empty(), "C = {c}");
    }
}

#[test]
fn int32_model_survives_what_fp32_cannot() {
    let (l, r) = saturation_operands(129, 4);
    let int32 = MxuConfig::new(AccumulatorModel::Int32, 4).unwrap();
    let out = mxu_matmul(&l, &r, &int32).unwrap();
    assert!(out.report.is_clean());
    assert_eq!(out.values, out.exact);
    // and overflows past its own bound
    let bound = accumulator_bound(4, (1 << 31) - 1).unwrap() as usize;
    let (l, r) = saturation_operands(bound + 1, 4);
    let out = mxu_matmul(&l, &r, &int32).unwrap();
    assert!(!out.report.overflowed.is_empty());
}

#[test]
fn eager_and_lazy_vpu_agree() {
    let f = PrimeField::bn254_lane();
    let cfg = MxuConfig::new(AccumulatorModel::Fp32Mantissa, 4).unwrap();
    let tw = ResidueTwiddle::square(&f, 512).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let batch: Vec<Vec<u64>> = (0..3).map(|_| random_poly(&mut rng, 512, tw.modulus())).collect();
    let (l, r) = pack_operands(&batch, &tw, 4).unwrap();
    let eager = staged_evaluate(&l, &r, tw.modulus(), &cfg, 128, Staging::On, VpuMode::Eager).unwrap();
    let lazy = staged_evaluate(&l, &r, tw.modulus(), &cfg, 128, Staging::On, VpuMode::Lazy).unwrap();
    assert_eq!(eager.values, lazy.values);
    assert_eq!(eager.vpu_reductions, 4 * 3 * 512);
    assert_eq!(lazy.vpu_reductions, 3 * 512);
}

fn dense_twiddle(rng: &mut ChaCha8Rng, m: u64, rows: usize, cols: usize) -> ResidueTwiddle {
    ResidueTwiddle::dense(m, rows, cols, (0..rows * cols).map(|_| rng.gen_range(0..m)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn limb_round_trip(c in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rng.gen_range(0..(1u64 << (8 * c)));
        prop_assert_eq!(recombine_unsigned(&decompose_limbs(x, c).unwrap()), x);
        let max = (0..c).fold(0i64, |acc, _| acc * 256 + 127);
        let v = rng.gen_range(-max..=max);
        let digits = recode_balanced(v, c).unwrap();
        prop_assert_eq!(recombine_signed(&digits), v);
    }

    #[test]
    fn exact_below_window(c in 3usize..=4, d in 1usize..=40, rows in 1usize..=3, seed in any::<u64>(), adversarial in any::<bool>()) {
        // d·C·32,640 ≤ 2^24 holds for all d ≤ 128 at C = 4
        prop_assert!(d as u64 * c as u64 * MAX_PIXEL_PRODUCT <= 1 << 24);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = if c == 4 { 2_013_265_921 } else { 8_380_417 };
        let batch: Vec<Vec<u64>> = (0..rows)
            .map(|_| (0..d).map(|_| if adversarial { m - 1 } else { rng.gen_range(0..m) }).collect())
            .collect();
        let tw = dense_twiddle(&mut rng, m, d, 3);
        let (l, r) = pack_operands(&batch, &tw, c).unwrap();
        let fp = mxu_matmul(&l, &r, &MxuConfig::new(AccumulatorModel::Fp32Mantissa, c).unwrap()).unwrap();
        let ex = mxu_matmul(&l, &r, &MxuConfig::new(AccumulatorModel::ExactOracle, c).unwrap()).unwrap();
        prop_assert!(fp.report.flagged.is_empty());
        prop_assert_eq!(fp.values, ex.values);
    }

    #[test]
    fn matmul_recombines_to_integer_product(d in 1usize..=24, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 2_013_265_921u64;
        let p: Vec<u64> = (0..d).map(|_| rng.gen_range(0..m)).collect();
        let tw = dense_twiddle(&mut rng, m, d, 2);
        let (l, r) = pack_operands(&[p.clone()], &tw, 4).unwrap();
        let out = mxu_matmul(&l, &r, &MxuConfig::new(AccumulatorModel::ExactOracle, 4).unwrap()).unwrap();
        for u in 0..2 {
            let v: i128 = out.values[u * 7..(u + 1) * 7].iter().rev().fold(0i128, |a, &x| a * 256 + x as i128);
            let want: i128 = (0..d).map(|t| p[t] as i128 * ffmxu::mxu::centered(tw.get(t, u), m) as i128).sum();
            prop_assert_eq!(v, want);
        }
    }

    #[test]
    fn staging_restores_exactness(k in 7u32..=9, seed in any::<u64>()) {
        let f = PrimeField::bn254_lane();
        let d = 1usize << k;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tw = ResidueTwiddle::square(&f, d).unwrap();
        let p = random_poly(&mut rng, d, tw.modulus());
        let cfg = MxuConfig::new(AccumulatorModel::Fp32Mantissa, 4).unwrap();
        let out = staged_matrix_ntt(&p, &tw, &cfg, 128, Staging::On).unwrap();
        prop_assert_eq!(out.passes, d.div_ceil(128));
        prop_assert_eq!(out.values, oracle(&f, &p, &tw));
    }

    #[test]
    fn pass_count_formula(d in 1usize..=600, d_max in 1usize..=171) {
        let f = PrimeField::dilithium();
        let cfg = MxuConfig::new(AccumulatorModel::ExactOracle, 3).unwrap();
        let tw = ResidueTwiddle::dense(f.modulus_u64().unwrap(), d, 1, vec![1; d]).unwrap();
        let out = staged_matrix_ntt(&vec![1; d], &tw, &cfg, d_max, Staging::On).unwrap();
        prop_assert_eq!(out.passes, d.div_ceil(d_max));
        prop_assert_eq!(out.values[0], d as u64);
    }
}

#[test]
fn lane_fields_shared() {
    // the two matrix-unit lanes are the ones the scheduler uses
    let lane = Arc::new(PrimeField::bn254_lane());
    assert!(lane.modulus_u64().unwrap() <= 0x7F7F_7F7F * 2);
    assert_eq!(accumulator_bound(4, 1 << 24).unwrap(), 128);
}
