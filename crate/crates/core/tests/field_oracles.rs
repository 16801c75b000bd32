use std::sync::Arc;

use ffmxu::field::{
    field_mul_full, find_root_of_unity, intt_reference, matrix_ntt_oracle, ntt_reference, two_power_order, Polynomial,
    PrimeField, TwiddleMatrix,
};
use num_bigint::BigUint;
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sweep(field: PrimeField, sizes: &[(usize, usize)], seed: u64) {
    let f = Arc::new(field);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &(d, count) in sizes {
        let w = TwiddleMatrix::new(f.clone(), d).unwrap();
        for _ in 0..count {
            let p = Polynomial::random(f.clone(), d, &mut rng);
            assert_eq!(ntt_reference(&p, &w).unwrap(), matrix_ntt_oracle(&p, &w).unwrap(), "d = {d}");
        }
    }
}

#[test]
fn oracles_agree_dilithium_all_sizes() {
    // at least 100 polynomials per size through d = 8192
    let sizes: Vec<(usize, usize)> = (2..=13).map(|k| (1usize << k, 100)).collect();
    sweep(PrimeField::dilithium(), &sizes, 1);
}

#[test]
fn oracles_agree_dilithium_256_hundred_seeds() {
    let f = Arc::new(PrimeField::dilithium());
    let w = TwiddleMatrix::new(f.clone(), 256).unwrap();
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Polynomial::random(f.clone(), 256, &mut rng);
        assert_eq!(ntt_reference(&p, &w).unwrap(), matrix_ntt_oracle(&p, &w).unwrap());
    }
}

#[test]
fn oracles_agree_bn254() {
    sweep(PrimeField::bn254(), &[(4, 100), (8, 100), (16, 100), (64, 20), (256, 4)], 2);
}

#[test]
fn oracles_agree_lane_field() {
    sweep(PrimeField::bn254_lane(), &[(4, 100), (128, 100), (1024, 5)], 3);
}

#[test]
fn root_orders_are_exact() {
    for f in [PrimeField::f17(), PrimeField::dilithium(), PrimeField::bn254_lane(), PrimeField::bn254()] {
        for k in 0..=f.two_adicity().min(13) {
            let d = 1u64 << k;
            let w = find_root_of_unity(&f, d).unwrap();
            assert_eq!(two_power_order(&f, &w), Some(d));
        }
        // deterministic
        assert_eq!(find_root_of_unity(&f, 4).unwrap(), find_root_of_unity(&f, 4).unwrap());
    }
}

#[test]
fn field_mul_full_examples() {
    let f = Arc::new(PrimeField::bn254());
    let w = TwiddleMatrix::new(f.clone(), 256).unwrap();
    let ones = Polynomial::new(f.clone(), vec![BigUint::one(); 256]).unwrap();
    assert_eq!(field_mul_full(&ones, &ones, &w).unwrap(), ones);
    let zeros = Polynomial::new(f.clone(), vec![BigUint::zero(); 256]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = Polynomial::random(f.clone(), 256, &mut rng);
    assert_eq!(field_mul_full(&a, &zeros, &w).unwrap(), zeros);
    let b = Polynomial::random(f.clone(), 256, &mut rng);
    let c = field_mul_full(&a, &b, &w).unwrap();
    for i in 0..256 {
        assert_eq!(c.coeffs()[i], (&a.coeffs()[i] * &b.coeffs()[i]) % f.modulus());
    }
}

fn small_field() -> impl Strategy<Value = PrimeField> {
    prop_oneof![Just(PrimeField::dilithium()), Just(PrimeField::bn254_lane()), Just(PrimeField::bn254())]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linearity(field in small_field(), k in 1u32..7, seed in any::<u64>()) {
        let f = Arc::new(field);
        let d = 1usize << k;
        let w = TwiddleMatrix::new(f.clone(), d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Polynomial::random(f.clone(), d, &mut rng);
        let r = Polynomial::random(f.clone(), d, &mut rng);
        let alpha = f.random_element(&mut rng);
        let beta = f.random_element(&mut rng);
        let combo: Vec<BigUint> = p.coeffs().iter().zip(r.coeffs())
            .map(|(x, y)| f.add(&f.mul(&alpha, x), &f.mul(&beta, y))).collect();
        let lhs = ntt_reference(&Polynomial::new(f.clone(), combo).unwrap(), &w).unwrap();
        let np = ntt_reference(&p, &w).unwrap();
        let nr = ntt_reference(&r, &w).unwrap();
        let rhs: Vec<BigUint> = np.coeffs().iter().zip(nr.coeffs())
            .map(|(x, y)| f.add(&f.mul(&alpha, x), &f.mul(&beta, y))).collect();
        prop_assert_eq!(lhs.coeffs(), &rhs[..]);
    }

    #[test]
    fn inverse_round_trip(field in small_field(), k in 0u32..9, seed in any::<u64>()) {
        let f = Arc::new(field);
        let d = 1usize << k;
        let w = TwiddleMatrix::new(f.clone(), d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Polynomial::random(f.clone(), d, &mut rng);
        let back = intt_reference(&ntt_reference(&p, &w).unwrap(), &w).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn constant_polynomial_concentrates(c in 0u64..8_380_417, k in 1u32..10) {
        let f = Arc::new(PrimeField::dilithium());
        let d = 1usize << k;
        let w = TwiddleMatrix::new(f.clone(), d).unwrap();
        let p = Polynomial::from_u64(f.clone(), &vec![c; d]).unwrap();
        let y = ntt_reference(&p, &w).unwrap().to_u64().unwrap();
        prop_assert_eq!(y[0], c * d as u64 % 8_380_417);
        prop_assert!(y[1..].iter().all(|&v| v == 0));
    }
}
