use std::sync::Arc;

use ffmxu::erns::{
    reduction_ratio, poly_to_residues, residues_to_poly, schedule_reductions, ReductionMode, ResidueSystem,
};
use ffmxu::field::{field_mul_full, ntt_reference, Polynomial, PrimeField, TwiddleMatrix};
use num_bigint::BigUint;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_coefficient_products_match_bigint() {
    let sys = ResidueSystem::bn254();
    let f = PrimeField::bn254();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..100 {
        let a = f.random_element(&mut rng);
        let b = f.random_element(&mut rng);
        let ra = sys.to_residues(&a).unwrap();
        let rb = sys.to_residues(&b).unwrap();
        let (pf, pointwise) = sys.product_form(&ra, &rb).unwrap();
        assert_eq!(pointwise, 144);
        let (red, count) = sys.montgomery_reduce_rns(&pf).unwrap();
        let want = (&a * &b * sys.r_inverse()) % f.modulus();
        assert_eq!(sys.from_residues(&red).unwrap(), want);
        assert_eq!(count.base_extension_limb_products, 2048);
        assert!(count.reduction_limb_products > 2100);
    }
}

#[test]
fn end_to_end_against_field_oracle() {
    let sys = ResidueSystem::bn254();
    let f = Arc::new(PrimeField::bn254());
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for d in [4usize, 128, 256] {
        let w = TwiddleMatrix::new(f.clone(), d).unwrap();
        let a = ntt_reference(&Polynomial::random(f.clone(), d, &mut rng), &w).unwrap();
        let b = ntt_reference(&Polynomial::random(f.clone(), d, &mut rng), &w).unwrap();
        let want = field_mul_full(&a, &b, &w).unwrap();
        let ra = poly_to_residues(sys, a.coeffs()).unwrap();
        let rb = poly_to_residues(sys, b.coeffs()).unwrap();
        let (out, count) = sys.bn254_full_mul(&ra, &rb).unwrap();
        assert_eq!(residues_to_poly(sys, &out).unwrap(), want.coeffs());
        assert_eq!(count.pointwise_limb_products, 144 * d as u64);
        assert!(count.reduction_limb_products > 2100 * d as u64);
        assert_eq!(count.vpu_reduction_nodes, d as u64);
    }
}

#[test]
fn zero_operand_gives_zero() {
    let sys = ResidueSystem::bn254();
    let f = PrimeField::bn254();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let a: Vec<_> = (0..8).map(|_| sys.to_residues(&f.random_element(&mut rng)).unwrap()).collect();
    let z = vec![[0u64; 9]; 8];
    assert_eq!(sys.bn254_full_mul(&a, &z).unwrap().0, z);
}

#[test]
fn reduction_ratio_from_schedules() {
    let e = schedule_reductions(256, ReductionMode::Eager);
    let l = schedule_reductions(256, ReductionMode::Lazy);
    assert_eq!(reduction_ratio(e.reductions_per_polynomial, l.reductions_per_polynomial), 4.5);
}

#[test]
fn counts_are_deterministic_and_shape_only() {
    let sys = ResidueSystem::bn254();
    let f = PrimeField::bn254();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut seen = None;
    for _ in 0..10 {
        let a = sys.to_residues(&f.random_element(&mut rng)).unwrap();
        let b = sys.to_residues(&f.random_element(&mut rng)).unwrap();
        let (_, c) = sys.bn254_full_mul(&[a], &[b]).unwrap();
        match &seen {
            None => seen = Some(c),
            Some(s) => assert_eq!(s, &c),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn crt_bijection(seed in any::<u64>()) {
        let sys = ResidueSystem::bn254();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mods = sys.chain_moduli();
        let res = mods.map(|m| rand::Rng::gen_range(&mut rng, 0..m));
        let x = sys.from_residues(&res).unwrap();
        prop_assert!(&x < sys.chain_product());
        let back: [u64; 9] = mods.map(|m| (&x % BigUint::from(m)).try_into().unwrap());
        prop_assert_eq!(back, res);
    }

    #[test]
    fn montgomery_matches_bigint(seed in any::<u64>()) {
        let sys = ResidueSystem::bn254();
        let f = PrimeField::bn254();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = f.random_element(&mut rng);
        let b = f.random_element(&mut rng);
        let (pf, _) = sys.product_form(&sys.to_residues(&a).unwrap(), &sys.to_residues(&b).unwrap()).unwrap();
        let (red, _) = sys.montgomery_reduce_rns(&pf).unwrap();
        prop_assert_eq!(sys.from_residues(&red).unwrap(), (&a * &b * sys.r_inverse()) % f.modulus());
    }
}
