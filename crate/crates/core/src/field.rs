//! Prime fields, roots of unity and the two reference transforms.
//!
//! Everything here is exact and fully reduced. Other modules check their
//! results against [`ntt_reference`] and [`matrix_ntt_oracle`].

use std::sync::{Arc, OnceLock};

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(String),
    #[error("modulus - 1 has a composite cofactor {0} beyond trial division; supply the factorization")]
    Unfactored(String),
    #[error("factorization does not multiply back to modulus - 1")]
    BadFactorization,
    #[error("{0} is not a primitive root")]
    BadGenerator(String),
    #[error("unsupported transform size {d} (two-adicity {two_adicity})")]
    UnsupportedDomain { d: u64, two_adicity: u32 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("operands belong to different fields")]
    FieldMismatch,
    #[error("coefficient {0} is not reduced")]
    OutOfRange(String),
    #[error("polynomial must have at least one coefficient")]
    Empty,
    #[error("parse error: {0}")]
    Parse(String),
}

const TRIAL_BOUND: u64 = 1 << 20;
const MR_ROUNDS: usize = 32;
const MR_SEED: u64 = 0x6d69_6c6c_6572;

const SMALL_PRIMES: [u64; 15] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47];

/// Miller-Rabin with bases drawn from a fixed-seed generator.
pub fn is_probable_prime(n: &BigUint) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for p in SMALL_PRIMES {
        let p = BigUint::from(p);
        if *n == p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    let mut rng = ChaCha8Rng::seed_from_u64(MR_SEED);
    'witness: for _ in 0..MR_ROUNDS {
        let a = rng.gen_biguint_range(&two, &n_minus_1);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Distinct prime factors by trial division; the leftover cofactor must be 1 or prime.
fn factor_by_trial(n: &BigUint) -> Result<Vec<BigUint>, FieldError> {
    let mut rest = n.clone();
    let mut out = Vec::new();
    let mut p = 2u64;
    while p < TRIAL_BOUND {
        let bp = BigUint::from(p);
        if &bp * &bp > rest {
            break;
        }
        if (&rest % &bp).is_zero() {
            out.push(bp.clone());
            while (&rest % &bp).is_zero() {
                rest /= &bp;
            }
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if !rest.is_one() {
        if !is_probable_prime(&rest) {
            return Err(FieldError::Unfactored(rest.to_string()));
        }
        out.push(rest);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimeField {
    modulus: BigUint,
    two_adicity: u32,
    generator: BigUint,
    factors: Vec<BigUint>,
    small: Option<u64>,
}

/// JSON shape of a field: decimal strings for the big values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    pub modulus: String,
    pub generator: String,
    pub two_adicity: u32,
}

pub const DILITHIUM_Q: u64 = 8_380_417;
/// 15 * 2^27 + 1: the 32-bit residue lane used for BN254-class evaluation on the matrix unit.
pub const BN254_LANE_PRIME: u64 = 2_013_265_921;
pub const BN254_R: &str =
    "21888242871839275222246405745257275088548364400416034343698204186575808495617";
const BN254_R_MINUS_1_FACTORS: [&str; 10] = [
    "2",
    "3",
    "13",
    "29",
    "983",
    "11003",
    "237073",
    "405928799",
    "1670836401704629",
    "13818364434197438864469338081",
];

impl PrimeField {
    /// Builds a field, factoring modulus - 1 by trial division.
    pub fn new(modulus: BigUint, generator: BigUint) -> Result<Self, FieldError> {
        if !is_probable_prime(&modulus) {
            return Err(FieldError::NotPrime(modulus.to_string()));
        }
        let factors = factor_by_trial(&(&modulus - 1u32))?;
        Self::build(modulus, generator, factors)
    }

    /// Builds a field from a caller-supplied list of the distinct primes dividing modulus - 1.
    pub fn with_factors(
        modulus: BigUint,
        generator: BigUint,
        factors: &[BigUint],
    ) -> Result<Self, FieldError> {
        if !is_probable_prime(&modulus) {
            return Err(FieldError::NotPrime(modulus.to_string()));
        }
        let mut rest = &modulus - 1u32;
        for f in factors {
            if !is_probable_prime(f) || !(&rest % f).is_zero() {
                return Err(FieldError::BadFactorization);
            }
            while (&rest % f).is_zero() {
                rest /= f;
            }
        }
        if !rest.is_one() {
            return Err(FieldError::BadFactorization);
        }
        Self::build(modulus, generator, factors.to_vec())
    }

    fn build(modulus: BigUint, generator: BigUint, mut factors: Vec<BigUint>) -> Result<Self, FieldError> {
        factors.sort();
        factors.dedup();
        let n_minus_1 = &modulus - 1u32;
        let g = &generator % &modulus;
        if g.is_zero() || !g.modpow(&n_minus_1, &modulus).is_one() {
            return Err(FieldError::BadGenerator(generator.to_string()));
        }
        for p in &factors {
            if g.modpow(&(&n_minus_1 / p), &modulus).is_one() {
                return Err(FieldError::BadGenerator(generator.to_string()));
            }
        }
        let two_adicity = n_minus_1.trailing_zeros().unwrap_or(0) as u32;
        let small = modulus.to_u64();
        Ok(Self { modulus, two_adicity, generator: g, factors, small })
    }

    fn named(cell: &'static OnceLock<PrimeField>, make: fn() -> PrimeField, adicity: u32) -> PrimeField {
        let f = cell.get_or_init(make);
        assert_eq!(f.two_adicity, adicity, "hard-coded two-adicity disagrees with modulus");
        f.clone()
    }

    /// F_17 with generator 6, so the order-4 root is 4.
    pub fn f17() -> Self {
        static CELL: OnceLock<PrimeField> = OnceLock::new();
        Self::named(&CELL, || PrimeField::new(17u32.into(), 6u32.into()).expect("F17"), 4)
    }

    pub fn dilithium() -> Self {
        static CELL: OnceLock<PrimeField> = OnceLock::new();
        Self::named(
            &CELL,
            || PrimeField::new(DILITHIUM_Q.into(), 10u32.into()).expect("Dilithium field"),
            13,
        )
    }

    pub fn bn254() -> Self {
        static CELL: OnceLock<PrimeField> = OnceLock::new();
        Self::named(
            &CELL,
            || {
                let r: BigUint = BN254_R.parse().expect("literal");
                let fs: Vec<BigUint> =
                    BN254_R_MINUS_1_FACTORS.iter().map(|s| s.parse().expect("literal")).collect();
                PrimeField::with_factors(r, 5u32.into(), &fs).expect("BN254 scalar field")
            },
            28,
        )
    }

    pub fn bn254_lane() -> Self {
        static CELL: OnceLock<PrimeField> = OnceLock::new();
        Self::named(
            &CELL,
            || PrimeField::new(BN254_LANE_PRIME.into(), 31u32.into()).expect("lane field"),
            27,
        )
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "f17" => Some(Self::f17()),
            "dilithium" => Some(Self::dilithium()),
            "bn254" => Some(Self::bn254()),
            "bn254-lane" => Some(Self::bn254_lane()),
            _ => None,
        }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }
    pub fn two_adicity(&self) -> u32 {
        self.two_adicity
    }
    pub fn generator(&self) -> &BigUint {
        &self.generator
    }
    /// Distinct primes dividing modulus - 1, ascending.
    pub fn factors(&self) -> &[BigUint] {
        &self.factors
    }
    /// The modulus as a machine word when it fits.
    pub fn modulus_u64(&self) -> Option<u64> {
        self.small
    }

    pub fn add(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a + b) % &self.modulus
    }
    pub fn sub(&self, a: &BigUint, b: &BigUint) -> BigUint {
        ((a + &self.modulus) - b) % &self.modulus
    }
    pub fn mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &self.modulus
    }
    pub fn pow(&self, a: &BigUint, e: &BigUint) -> BigUint {
        a.modpow(e, &self.modulus)
    }
    /// Inverse by Fermat; zero maps to zero.
    pub fn inv(&self, a: &BigUint) -> BigUint {
        a.modpow(&(&self.modulus - 2u32), &self.modulus)
    }

    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R) -> BigUint {
        rng.gen_biguint_below(&self.modulus)
    }

    pub fn descriptor(&self) -> FieldDescriptor {
        FieldDescriptor {
            modulus: self.modulus.to_string(),
            generator: self.generator.to_string(),
            two_adicity: self.two_adicity,
        }
    }

    pub fn from_descriptor(desc: &FieldDescriptor) -> Result<Self, FieldError> {
        let m: BigUint = desc.modulus.parse().map_err(|_| FieldError::Parse(desc.modulus.clone()))?;
        let g: BigUint =
            desc.generator.parse().map_err(|_| FieldError::Parse(desc.generator.clone()))?;
        let f = if m.to_string() == BN254_R { Self::bn254() } else { Self::new(m, g.clone())? };
        if f.generator != g || f.two_adicity != desc.two_adicity {
            return Err(FieldError::Parse("descriptor does not match its modulus".into()));
        }
        Ok(f)
    }
}

/// ω = g^((q-1)/d), an element of order exactly d.
pub fn find_root_of_unity(field: &PrimeField, d: u64) -> Result<BigUint, FieldError> {
    let bad = FieldError::UnsupportedDomain { d, two_adicity: field.two_adicity };
    if d == 0 || !d.is_power_of_two() || d.trailing_zeros() > field.two_adicity {
        return Err(bad);
    }
    let e = (&field.modulus - 1u32) / BigUint::from(d);
    Ok(field.generator.modpow(&e, &field.modulus))
}

/// Multiplicative order of a power-of-two-order element, by repeated squaring.
pub fn two_power_order(field: &PrimeField, x: &BigUint) -> Option<u64> {
    let mut y = x % field.modulus();
    let mut k = 1u64;
    for _ in 0..=field.two_adicity {
        if y.is_one() {
            return Some(k);
        }
        y = field.mul(&y, &y);
        k <<= 1;
    }
    None
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polynomial {
    field: Arc<PrimeField>,
    coeffs: Vec<BigUint>,
}

impl Polynomial {
    pub fn new(field: Arc<PrimeField>, coeffs: Vec<BigUint>) -> Result<Self, FieldError> {
        if coeffs.is_empty() {
            return Err(FieldError::Empty);
        }
        if let Some(c) = coeffs.iter().find(|c| *c >= field.modulus()) {
            return Err(FieldError::OutOfRange(c.to_string()));
        }
        Ok(Self { field, coeffs })
    }

    pub fn from_u64(field: Arc<PrimeField>, coeffs: &[u64]) -> Result<Self, FieldError> {
        Self::new(field, coeffs.iter().map(|&c| BigUint::from(c)).collect())
    }

    pub fn random<R: Rng + ?Sized>(field: Arc<PrimeField>, d: usize, rng: &mut R) -> Self {
        let coeffs = (0..d.max(1)).map(|_| field.random_element(rng)).collect();
        Self { field, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }
    pub fn coeffs(&self) -> &[BigUint] {
        &self.coeffs
    }
    pub fn field(&self) -> &Arc<PrimeField> {
        &self.field
    }

    pub fn to_u64(&self) -> Option<Vec<u64>> {
        self.coeffs.iter().map(|c| c.to_u64()).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        coeffs_to_json(&self.coeffs)
    }
}

pub fn coeffs_to_json(coeffs: &[BigUint]) -> serde_json::Value {
    serde_json::Value::Array(coeffs.iter().map(|c| serde_json::Value::String(c.to_string())).collect())
}

/// Accepts an array of decimal strings (plain JSON integers are tolerated too).
pub fn coeffs_from_json(v: &serde_json::Value) -> Result<Vec<BigUint>, FieldError> {
    let arr = v.as_array().ok_or_else(|| FieldError::Parse("expected a JSON array".into()))?;
    arr.iter()
        .map(|x| {
            let s = match x {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) if n.is_u64() => n.to_string(),
                other => return Err(FieldError::Parse(format!("bad coefficient {other}"))),
            };
            s.parse::<BigUint>().map_err(|_| FieldError::Parse(s))
        })
        .collect()
}

/// W[i][j] = ω^(i·j), stored as the cyclic table of ω's powers.
#[derive(Clone, Debug)]
pub struct TwiddleMatrix {
    field: Arc<PrimeField>,
    d: usize,
    omega: BigUint,
    powers: Vec<BigUint>,
}

impl TwiddleMatrix {
    pub fn new(field: Arc<PrimeField>, d: usize) -> Result<Self, FieldError> {
        let omega = find_root_of_unity(&field, d as u64)?;
        Ok(Self::with_omega(field, d, omega))
    }

    fn with_omega(field: Arc<PrimeField>, d: usize, omega: BigUint) -> Self {
        let mut powers = Vec::with_capacity(d);
        let mut x = BigUint::one();
        for _ in 0..d {
            powers.push(x.clone());
            x = field.mul(&x, &omega);
        }
        Self { field, d, omega, powers }
    }

    /// Same size, built from ω^(-1).
    pub fn inverse(&self) -> Self {
        Self::with_omega(self.field.clone(), self.d, self.field.inv(&self.omega))
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn omega(&self) -> &BigUint {
        &self.omega
    }
    pub fn field(&self) -> &Arc<PrimeField> {
        &self.field
    }
    pub fn powers(&self) -> &[BigUint] {
        &self.powers
    }

    pub fn entry(&self, i: usize, j: usize) -> &BigUint {
        &self.powers[((i as u128 * j as u128) % self.d as u128) as usize]
    }
}

fn check_shapes(p: &Polynomial, w: &TwiddleMatrix) -> Result<(), FieldError> {
    if p.field.modulus() != w.field.modulus() {
        return Err(FieldError::FieldMismatch);
    }
    if p.degree() != w.d {
        return Err(FieldError::Dimension { expected: w.d, got: p.degree() });
    }
    Ok(())
}

fn mulmod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn bit_reverse<T>(a: &mut [T]) {
    let n = a.len();
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            a.swap(i, j);
        }
    }
}

fn butterflies_u64(a: &mut [u64], omega: u64, m: u64) {
    let n = a.len();
    bit_reverse(a);
    let mut len = 2;
    while len <= n {
        let step = pow_u64(omega, (n / len) as u64, m);
        for start in (0..n).step_by(len) {
            let mut w = 1u64;
            for j in 0..len / 2 {
                let u = a[start + j];
                let v = mulmod(a[start + j + len / 2], w, m);
                a[start + j] = (u + v) % m;
                a[start + j + len / 2] = (u + m - v) % m;
                w = mulmod(w, step, m);
            }
        }
        len <<= 1;
    }
}

fn butterflies_big(a: &mut [BigUint], omega: &BigUint, f: &PrimeField) {
    let n = a.len();
    bit_reverse(a);
    let mut len = 2;
    while len <= n {
        let step = f.pow(omega, &BigUint::from(n / len));
        for start in (0..n).step_by(len) {
            let mut w = BigUint::one();
            for j in 0..len / 2 {
                let v = f.mul(&a[start + j + len / 2], &w);
                let u = a[start + j].clone();
                a[start + j] = f.add(&u, &v);
                a[start + j + len / 2] = f.sub(&u, &v);
                w = f.mul(&w, &step);
            }
        }
        len <<= 1;
    }
}

pub fn pow_u64(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mulmod(r, b, m);
        }
        b = mulmod(b, b, m);
        e >>= 1;
    }
    r
}

/// Radix-2 Cooley-Tukey transform, natural-order output: y[j] = Σ_t p[t]·ω^(t·j).
pub fn ntt_reference(p: &Polynomial, w: &TwiddleMatrix) -> Result<Polynomial, FieldError> {
    check_shapes(p, w)?;
    let f = &p.field;
    let coeffs = match (f.modulus_u64(), w.omega.to_u64()) {
        (Some(m), Some(om)) => {
            let mut a = p.to_u64().expect("reduced below a u64 modulus");
            butterflies_u64(&mut a, om, m);
            a.into_iter().map(BigUint::from).collect()
        }
        _ => {
            let mut a = p.coeffs.clone();
            butterflies_big(&mut a, &w.omega, f);
            a
        }
    };
    Ok(Polynomial { field: f.clone(), coeffs })
}

/// Inverse transform built from ω^(-1) and d^(-1).
pub fn intt_reference(y: &Polynomial, w: &TwiddleMatrix) -> Result<Polynomial, FieldError> {
    let inv = w.inverse();
    let mut out = ntt_reference(y, &inv)?;
    let f = out.field.clone();
    let d_inv = f.inv(&BigUint::from(w.d));
    for c in out.coeffs.iter_mut() {
        *c = f.mul(c, &d_inv);
    }
    Ok(out)
}

/// Dense evaluation Σ_t c[t]·ω^(t·u) for u in 0..n_out, where ω has order `order`.
/// Exact integer accumulation, one reduction per output.
pub fn dense_evaluate(
    field: &PrimeField,
    coeffs: &[BigUint],
    omega: &BigUint,
    order: usize,
    n_out: usize,
) -> Vec<BigUint> {
    let mut powers = Vec::with_capacity(order);
    let mut x = BigUint::one();
    for _ in 0..order {
        powers.push(x.clone());
        x = field.mul(&x, omega);
    }
    match field.modulus_u64() {
        Some(m) if m < (1 << 32) => {
            let c: Vec<u64> = coeffs.iter().map(|c| c.to_u64().expect("reduced")).collect();
            let pw: Vec<u64> = powers.iter().map(|c| c.to_u64().expect("reduced")).collect();
            (0..n_out)
                .map(|u| {
                    let mut acc: u128 = 0;
                    let mut idx = 0usize;
                    for &ct in &c {
                        acc += (ct * pw[idx]) as u128;
                        idx += u;
                        if idx >= order {
                            idx %= order;
                        }
                    }
                    BigUint::from((acc % m as u128) as u64)
                })
                .collect()
        }
        Some(m) => {
            let c: Vec<u64> = coeffs.iter().map(|c| c.to_u64().expect("reduced")).collect();
            let pw: Vec<u64> = powers.iter().map(|c| c.to_u64().expect("reduced")).collect();
            (0..n_out)
                .map(|u| {
                    let mut acc: u128 = 0;
                    for (t, &ct) in c.iter().enumerate() {
                        let e = ((t as u128 * u as u128) % order as u128) as usize;
                        acc = (acc + ct as u128 * pw[e] as u128 % m as u128) % m as u128;
                    }
                    BigUint::from(acc as u64)
                })
                .collect()
        }
        None => (0..n_out)
            .map(|u| {
                let mut acc = BigUint::zero();
                for (t, ct) in coeffs.iter().enumerate() {
                    let e = ((t as u128 * u as u128) % order as u128) as usize;
                    acc += ct * &powers[e];
                }
                acc % field.modulus()
            })
            .collect(),
    }
}

/// The O(d²) vector-matrix product p·W, reduced once per output.
pub fn matrix_ntt_oracle(p: &Polynomial, w: &TwiddleMatrix) -> Result<Polynomial, FieldError> {
    check_shapes(p, w)?;
    let coeffs = dense_evaluate(&p.field, &p.coeffs, &w.omega, w.d, w.d);
    Ok(Polynomial { field: p.field.clone(), coeffs })
}

/// Coefficient-wise product of two evaluation vectors: one "full-field multiplication".
pub fn field_mul_full(a: &Polynomial, b: &Polynomial, w: &TwiddleMatrix) -> Result<Polynomial, FieldError> {
    check_shapes(a, w)?;
    check_shapes(b, w)?;
    let f = a.field.clone();
    let coeffs = a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| f.mul(x, y)).collect();
    Ok(Polynomial { field: f, coeffs })
}
