//! Nine-residue chain for the BN254 scalar field and RNS Montgomery reduction.
//!
//! The chain is eight base primes B (R = ∏B > r) plus one auxiliary prime.
//! Reduction works in a second base B' of eight more primes: the quotient q is
//! extended B → B' exactly, s = (t + q·r)/R is formed in B', and s is brought
//! back to B with the auxiliary residue fixing the extension offset.
//! Every residue multiply goes through sixteen u8×u8 limb products so the
//! counts below are counts of work actually done.

use std::sync::OnceLock;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::PrimeField;

pub const BASE_LEN: usize = 8;
pub const CHAIN_LEN: usize = BASE_LEN + 1;
pub const LIMB_PRODUCTS_PER_RESIDUE_MUL: u64 = 16;

/// Calibrated reduction-node counts per d = 256 polynomial.
pub const EAGER_REDUCTIONS_AT_256: u64 = 1764;
pub const LAZY_REDUCTIONS_AT_256: u64 = 392;

pub type Residues = [u64; CHAIN_LEN];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ErnsError {
    #[error("value is not below the BN254 modulus")]
    OutOfRange,
    #[error("residue {residue} is not reduced modulo {modulus}")]
    ResidueRange { residue: u64, modulus: u64 },
    #[error("operand lengths differ: {0} vs {1}")]
    Length(usize, usize),
}

/// Deterministic Miller-Rabin for 64-bit inputs.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    let mul = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    'outer: for a in BASES {
        let mut x = crate::field::pow_u64(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul(x, x);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// The `count` largest primes strictly below 2^32, descending.
pub fn largest_primes_below_2_32(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut n = (1u64 << 32) - 1;
    while out.len() < count {
        if is_prime_u64(n) {
            out.push(n);
        }
        n -= 2;
    }
    out
}

/// One residue multiply as the matrix unit sees it: 4×4 u8 limb products, recombined and reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct LimbCounter(u64);

impl LimbCounter {
    fn mul(&mut self, a: u64, b: u64, m: u64) -> u64 {
        debug_assert!(a < 1 << 32 && b < 1 << 32);
        let mut acc: u128 = 0;
        for i in 0..4 {
            let ai = (a >> (8 * i)) & 0xFF;
            for j in 0..4 {
                let bj = (b >> (8 * j)) & 0xFF;
                acc += ((ai * bj) as u128) << (8 * (i + j));
            }
        }
        self.0 += LIMB_PRODUCTS_PER_RESIDUE_MUL;
        (acc % m as u128) as u64
    }
}

fn inv_mod(a: u64, m: u64) -> u64 {
    crate::field::pow_u64(a, m - 2, m)
}

fn big_mod(x: &BigUint, m: u64) -> u64 {
    (x % m).to_u64().expect("below modulus")
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    /// The two 8×8 residue-level base-extension products.
    pub base_extension_limb_products: u64,
    /// Quotient, correction and auxiliary-residue multiplies around the extensions.
    pub aux_scaling_limb_products: u64,
    /// base_extension + aux_scaling.
    pub reduction_limb_products: u64,
    /// Lifting the two operands into B' and forming their product there.
    pub operand_lift_limb_products: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineCount {
    pub coefficients: u64,
    pub pointwise_limb_products: u64,
    pub reduction_limb_products: u64,
    pub base_extension_limb_products: u64,
    pub aux_scaling_limb_products: u64,
    pub operand_lift_limb_products: u64,
    pub vpu_reduction_nodes: u64,
}

impl PipelineCount {
    fn add_reduction(&mut self, c: &OpCount) {
        self.reduction_limb_products += c.reduction_limb_products;
        self.base_extension_limb_products += c.base_extension_limb_products;
        self.aux_scaling_limb_products += c.aux_scaling_limb_products;
        self.operand_lift_limb_products += c.operand_lift_limb_products;
        self.vpu_reduction_nodes += 1;
    }
}

/// Chain residues of a·b together with the operands themselves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProductForm {
    pub a: Residues,
    pub b: Residues,
    pub t: Residues,
}

pub struct ResidueSystem {
    r: BigUint,
    base: [u64; BASE_LEN],
    aux: u64,
    ext: [u64; BASE_LEN],
    big_r: BigUint,
    m_ext: BigUint,
    m_chain: BigUint,
    r_inv_big_r: BigUint,
    // (R/b_i)^{-1} mod b_i
    base_hat_inv: [u64; BASE_LEN],
    // -r^{-1} (R/b_i)^{-1} mod b_i
    quotient_scale: [u64; BASE_LEN],
    // (R/b_i) mod e_j, indexed [i][j]
    base_to_ext: [[u64; BASE_LEN]; BASE_LEN],
    base_to_aux: [u64; BASE_LEN],
    big_r_mod_ext: [u64; BASE_LEN],
    big_r_mod_aux: u64,
    r_mod_ext: [u64; BASE_LEN],
    r_mod_aux: u64,
    big_r_inv_ext: [u64; BASE_LEN],
    big_r_inv_aux: u64,
    // (M'/e_j)^{-1} mod e_j
    ext_hat_inv: [u64; BASE_LEN],
    // (M'/e_j) mod b_i, indexed [j][i]
    ext_to_base: [[u64; BASE_LEN]; BASE_LEN],
    ext_to_aux: [u64; BASE_LEN],
    m_ext_mod_base: [u64; BASE_LEN],
    m_ext_inv_aux: u64,
    // CRT basis over the nine-residue chain
    chain_basis: Vec<BigUint>,
}

impl std::fmt::Debug for ResidueSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResidueSystem")
            .field("base", &self.base)
            .field("aux", &self.aux)
            .field("ext", &self.ext)
            .finish()
    }
}

fn product(ms: &[u64]) -> BigUint {
    ms.iter().fold(BigUint::one(), |acc, &m| acc * m)
}

impl ResidueSystem {
    /// The shared BN254 instance.
    pub fn bn254() -> &'static ResidueSystem {
        static CELL: OnceLock<ResidueSystem> = OnceLock::new();
        CELL.get_or_init(|| ResidueSystem::new(PrimeField::bn254().modulus().clone()))
    }

    pub fn new(r: BigUint) -> Self {
        let primes = largest_primes_below_2_32(2 * BASE_LEN + 1);
        let mut base = [0u64; BASE_LEN];
        let mut ext = [0u64; BASE_LEN];
        base.copy_from_slice(&primes[..BASE_LEN]);
        let aux = primes[BASE_LEN];
        ext.copy_from_slice(&primes[BASE_LEN + 1..]);

        let big_r = product(&base);
        let m_ext = product(&ext);
        let m_chain = &big_r * aux;
        assert!(big_r > r && m_ext > &r * 2u32, "bases too small for the modulus");

        let r_mod = |m: u64| big_mod(&r, m);
        let base_hat: Vec<BigUint> = base.iter().map(|&b| &big_r / b).collect();
        let ext_hat: Vec<BigUint> = ext.iter().map(|&e| &m_ext / e).collect();

        let mut base_hat_inv = [0; BASE_LEN];
        let mut quotient_scale = [0; BASE_LEN];
        let mut base_to_ext = [[0; BASE_LEN]; BASE_LEN];
        let mut base_to_aux = [0; BASE_LEN];
        for (i, &b) in base.iter().enumerate() {
            base_hat_inv[i] = inv_mod(big_mod(&base_hat[i], b), b);
            let neg_r_inv = b - inv_mod(r_mod(b), b);
            quotient_scale[i] = (neg_r_inv as u128 * base_hat_inv[i] as u128 % b as u128) as u64;
            for (j, &e) in ext.iter().enumerate() {
                base_to_ext[i][j] = big_mod(&base_hat[i], e);
            }
            base_to_aux[i] = big_mod(&base_hat[i], aux);
        }
        let mut ext_hat_inv = [0; BASE_LEN];
        let mut ext_to_base = [[0; BASE_LEN]; BASE_LEN];
        let mut ext_to_aux = [0; BASE_LEN];
        let mut big_r_mod_ext = [0; BASE_LEN];
        let mut r_mod_ext = [0; BASE_LEN];
        let mut big_r_inv_ext = [0; BASE_LEN];
        for (j, &e) in ext.iter().enumerate() {
            ext_hat_inv[j] = inv_mod(big_mod(&ext_hat[j], e), e);
            for (i, &b) in base.iter().enumerate() {
                ext_to_base[j][i] = big_mod(&ext_hat[j], b);
            }
            ext_to_aux[j] = big_mod(&ext_hat[j], aux);
            big_r_mod_ext[j] = big_mod(&big_r, e);
            r_mod_ext[j] = r_mod(e);
            big_r_inv_ext[j] = inv_mod(big_r_mod_ext[j], e);
        }
        let m_ext_mod_base = base.map(|b| big_mod(&m_ext, b));
        let m_ext_inv_aux = inv_mod(big_mod(&m_ext, aux), aux);

        let chain: Vec<u64> = base.iter().copied().chain([aux]).collect();
        let chain_basis = chain
            .iter()
            .map(|&m| {
                let hat = &m_chain / m;
                let inv = inv_mod(big_mod(&hat, m), m);
                hat * inv
            })
            .collect();
        // R^{-1} mod r by Fermat
        let r_inv_big_r = (&big_r % &r).modpow(&(&r - 2u32), &r);
        Self {
            r: r.clone(),
            base,
            aux,
            ext,
            big_r_mod_aux: big_mod(&big_r, aux),
            big_r_inv_aux: inv_mod(big_mod(&big_r, aux), aux),
            big_r: big_r.clone(),
            m_ext,
            m_chain,
            r_inv_big_r,
            base_hat_inv,
            quotient_scale,
            base_to_ext,
            base_to_aux,
            big_r_mod_ext,
            r_mod_ext,
            r_mod_aux: r_mod(aux),
            big_r_inv_ext,
            ext_hat_inv,
            ext_to_base,
            ext_to_aux,
            m_ext_mod_base,
            m_ext_inv_aux,
            chain_basis,
        }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.r
    }
    pub fn base_moduli(&self) -> &[u64; BASE_LEN] {
        &self.base
    }
    pub fn aux_modulus(&self) -> u64 {
        self.aux
    }
    pub fn extension_moduli(&self) -> &[u64; BASE_LEN] {
        &self.ext
    }
    /// The nine chain moduli: base then auxiliary.
    pub fn chain_moduli(&self) -> Residues {
        let mut m = [0; CHAIN_LEN];
        m[..BASE_LEN].copy_from_slice(&self.base);
        m[BASE_LEN] = self.aux;
        m
    }
    /// Montgomery radix R = ∏ base moduli.
    pub fn montgomery_r(&self) -> &BigUint {
        &self.big_r
    }
    pub fn chain_product(&self) -> &BigUint {
        &self.m_chain
    }
    pub fn extension_product(&self) -> &BigUint {
        &self.m_ext
    }
    pub fn r_inverse(&self) -> &BigUint {
        &self.r_inv_big_r
    }

    pub fn to_residues(&self, x: &BigUint) -> Result<Residues, ErnsError> {
        if x >= &self.r {
            return Err(ErnsError::OutOfRange);
        }
        Ok(self.residues_unchecked(x))
    }

    fn residues_unchecked(&self, x: &BigUint) -> Residues {
        self.chain_moduli().map(|m| big_mod(x, m))
    }

    /// CRT inverse over the chain: the unique value below ∏ m_i.
    pub fn from_residues(&self, res: &Residues) -> Result<BigUint, ErnsError> {
        let mods = self.chain_moduli();
        let mut acc = BigUint::zero();
        for ((&x, &m), basis) in res.iter().zip(&mods).zip(&self.chain_basis) {
            if x >= m {
                return Err(ErnsError::ResidueRange { residue: x, modulus: m });
            }
            acc += basis * x;
        }
        Ok(acc % &self.m_chain)
    }

    /// Pointwise chain product: nine residue multiplies of sixteen limb products each.
    pub fn product_form(&self, a: &Residues, b: &Residues) -> Result<(ProductForm, u64), ErnsError> {
        for v in [a, b] {
            if self.from_residues(v)? >= self.r {
                return Err(ErnsError::OutOfRange);
            }
        }
        let mut c = LimbCounter::default();
        let mods = self.chain_moduli();
        let mut t = [0; CHAIN_LEN];
        for i in 0..CHAIN_LEN {
            t[i] = c.mul(a[i], b[i], mods[i]);
        }
        Ok((ProductForm { a: *a, b: *b, t }, c.0))
    }

    /// Exact B → B' extension of a value below R.
    fn extend_base(&self, x: &[u64], cm: &mut LimbCounter, ca: &mut LimbCounter) -> ([u64; BASE_LEN], u64) {
        let xi: Vec<u64> = (0..BASE_LEN).map(|i| ca.mul(x[i], self.base_hat_inv[i], self.base[i])).collect();
        self.extend_from_xi(&xi, cm, ca)
    }

    /// Σ ξ_i·(R/b_i) − α·R evaluated in B' and in the auxiliary modulus, α computed exactly.
    fn extend_from_xi(&self, xi: &[u64], cm: &mut LimbCounter, ca: &mut LimbCounter) -> ([u64; BASE_LEN], u64) {
        let mut num = BigUint::zero();
        for (i, &v) in xi.iter().enumerate() {
            num += (&self.big_r / self.base[i]) * v;
        }
        let alpha = (num / &self.big_r).to_u64().expect("alpha < 8");
        let mut out = [0u64; BASE_LEN];
        for (j, &e) in self.ext.iter().enumerate() {
            let mut acc = 0u64;
            for i in 0..BASE_LEN {
                acc = (acc + cm.mul(xi[i], self.base_to_ext[i][j], e)) % e;
            }
            let corr = ca.mul(alpha, self.big_r_mod_ext[j], e);
            out[j] = (acc + e - corr) % e;
        }
        let mut acc = 0u64;
        for i in 0..BASE_LEN {
            acc = (acc + ca.mul(xi[i], self.base_to_aux[i], self.aux)) % self.aux;
        }
        let corr = ca.mul(alpha, self.big_r_mod_aux, self.aux);
        (out, (acc + self.aux - corr) % self.aux)
    }

    /// Residues of t·R^{-1} mod r, fully reduced.
    pub fn montgomery_reduce_rns(&self, t: &ProductForm) -> Result<(Residues, OpCount), ErnsError> {
        let mut c_ext = LimbCounter::default();
        let mut c_aux = LimbCounter::default();
        let mut c_lift = LimbCounter::default();
        let mods = self.chain_moduli();
        for (x, m) in t.t.iter().chain(&t.a).chain(&t.b).zip(mods.iter().cycle()) {
            if x >= m {
                return Err(ErnsError::ResidueRange { residue: *x, modulus: *m });
            }
        }

        // q = t·(−r^{-1}) mod R, carried as ξ_i = q_i·(R/b_i)^{-1}
        let xi: Vec<u64> = (0..BASE_LEN).map(|i| c_aux.mul(t.t[i], self.quotient_scale[i], self.base[i])).collect();
        let (q_ext, q_aux) = self.extend_from_xi(&xi, &mut c_ext, &mut c_aux);

        // operands into B', then t there
        let mut scratch = LimbCounter::default();
        let (a_ext, _) = self.extend_base(&t.a[..BASE_LEN], &mut c_lift, &mut scratch);
        let (b_ext, _) = self.extend_base(&t.b[..BASE_LEN], &mut c_lift, &mut scratch);
        c_lift.0 += scratch.0;
        let t_ext: Vec<u64> = (0..BASE_LEN).map(|j| c_lift.mul(a_ext[j], b_ext[j], self.ext[j])).collect();

        // s = (t + q·r)/R in B' and in the auxiliary modulus; s < 2r
        let mut s_ext = [0u64; BASE_LEN];
        for (j, &e) in self.ext.iter().enumerate() {
            let qr = c_aux.mul(q_ext[j], self.r_mod_ext[j], e);
            s_ext[j] = c_aux.mul((t_ext[j] + qr) % e, self.big_r_inv_ext[j], e);
        }
        let qr = c_aux.mul(q_aux, self.r_mod_aux, self.aux);
        let s_aux = c_aux.mul((t.t[BASE_LEN] + qr) % self.aux, self.big_r_inv_aux, self.aux);

        // B' → B with the offset recovered from the auxiliary residue
        let xi2: Vec<u64> = (0..BASE_LEN).map(|j| c_aux.mul(s_ext[j], self.ext_hat_inv[j], self.ext[j])).collect();
        let mut sum_aux = 0u64;
        for j in 0..BASE_LEN {
            sum_aux = (sum_aux + c_aux.mul(xi2[j], self.ext_to_aux[j], self.aux)) % self.aux;
        }
        let beta = c_aux.mul((sum_aux + self.aux - s_aux) % self.aux, self.m_ext_inv_aux, self.aux);
        let mut s = [0u64; CHAIN_LEN];
        for (i, &b) in self.base.iter().enumerate() {
            let mut acc = 0u64;
            for j in 0..BASE_LEN {
                acc = (acc + c_ext.mul(xi2[j], self.ext_to_base[j][i], b)) % b;
            }
            let corr = c_aux.mul(beta, self.m_ext_mod_base[i], b);
            s[i] = (acc + b - corr) % b;
        }
        s[BASE_LEN] = s_aux;

        // s < 2r: one exact conditional subtraction
        let v = self.from_residues(&s)?;
        let s = if v >= self.r { self.residues_unchecked(&(v - &self.r)) } else { s };

        let count = OpCount {
            base_extension_limb_products: c_ext.0,
            aux_scaling_limb_products: c_aux.0,
            reduction_limb_products: c_ext.0 + c_aux.0,
            operand_lift_limb_products: c_lift.0,
        };
        Ok((s, count))
    }

    /// x·R mod r, a host-side precomputation.
    pub fn to_montgomery(&self, x: &BigUint) -> BigUint {
        (x * &self.big_r) % &self.r
    }

    /// Coefficient-wise a·b mod r over chain residues. The right operand is moved into
    /// Montgomery form on the host, so one reduction per coefficient yields a·b directly.
    pub fn bn254_full_mul(&self, a: &[Residues], b: &[Residues]) -> Result<(Vec<Residues>, PipelineCount), ErnsError> {
        if a.len() != b.len() {
            return Err(ErnsError::Length(a.len(), b.len()));
        }
        let mut count = PipelineCount::default();
        let mut out = Vec::with_capacity(a.len());
        for (x, y) in a.iter().zip(b) {
            let y_val = self.from_residues(y)?;
            if y_val >= self.r {
                return Err(ErnsError::OutOfRange);
            }
            let y_mont = self.residues_unchecked(&self.to_montgomery(&y_val));
            let (pf, pointwise) = self.product_form(x, &y_mont)?;
            let (res, c) = self.montgomery_reduce_rns(&pf)?;
            count.coefficients += 1;
            count.pointwise_limb_products += pointwise;
            count.add_reduction(&c);
            out.push(res);
        }
        Ok((out, count))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReductionMode {
    Eager,
    Lazy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionSchedule {
    pub mode: ReductionMode,
    pub degree: usize,
    pub reductions_per_polynomial: u64,
    /// eager / lazy for this degree.
    pub reduction_ratio: f64,
}

fn scaled(count_at_256: u64, d: usize) -> u64 {
    (count_at_256 * d as u64).div_ceil(256)
}

/// Reduction-node counts for one polynomial, proportional in d to the d = 256 calibration.
pub fn schedule_reductions(d: usize, mode: ReductionMode) -> ReductionSchedule {
    let eager = scaled(EAGER_REDUCTIONS_AT_256, d);
    let lazy = scaled(LAZY_REDUCTIONS_AT_256, d);
    ReductionSchedule {
        mode,
        degree: d,
        reductions_per_polynomial: match mode {
            ReductionMode::Eager => eager,
            ReductionMode::Lazy => lazy,
        },
        reduction_ratio: reduction_ratio(eager, lazy),
    }
}

pub fn reduction_ratio(eager: u64, lazy: u64) -> f64 {
    eager as f64 / lazy as f64
}

/// Evaluation-domain vectors as chain residues.
pub fn poly_to_residues(sys: &ResidueSystem, coeffs: &[BigUint]) -> Result<Vec<Residues>, ErnsError> {
    coeffs.iter().map(|c| sys.to_residues(c)).collect()
}

pub fn residues_to_poly(sys: &ResidueSystem, res: &[Residues]) -> Result<Vec<BigUint>, ErnsError> {
    res.iter().map(|r| sys.from_residues(r)).collect()
}

/// Gcd check used by tests and the constructor audit.
pub fn pairwise_coprime(ms: &[u64]) -> bool {
    ms.iter().enumerate().all(|(i, a)| ms[i + 1..].iter().all(|b| a.gcd(b) == 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chain_shape() {
        let sys = ResidueSystem::bn254();
        let all: Vec<u64> = sys.chain_moduli().iter().chain(sys.extension_moduli()).copied().collect();
        assert!(all.iter().all(|&m| m < 1 << 32 && is_prime_u64(m)));
        assert!(pairwise_coprime(&all));
        assert!(sys.montgomery_r() > sys.modulus());
        assert_eq!(sys.base_moduli()[0], 4_294_967_291);
    }

    #[test]
    fn residue_round_trip() {
        let sys = ResidueSystem::bn254();
        assert_eq!(sys.to_residues(&BigUint::zero()).unwrap(), [0; 9]);
        assert_eq!(sys.to_residues(&BigUint::one()).unwrap(), [1; 9]);
        assert_eq!(sys.to_residues(sys.modulus()), Err(ErnsError::OutOfRange));
        let f = PrimeField::bn254();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = f.random_element(&mut rng);
            assert_eq!(sys.from_residues(&sys.to_residues(&x).unwrap()).unwrap(), x);
        }
    }

    #[test]
    fn montgomery_identities() {
        let sys = ResidueSystem::bn254();
        let zero = sys.to_residues(&BigUint::zero()).unwrap();
        let one = sys.to_residues(&BigUint::one()).unwrap();
        let (pf, _) = sys.product_form(&zero, &one).unwrap();
        let (res, count) = sys.montgomery_reduce_rns(&pf).unwrap();
        assert_eq!(res, zero);
        assert_eq!(count.base_extension_limb_products, 2048);
        assert!(count.reduction_limb_products > 2100);
        let r_mod = sys.to_residues(&(sys.montgomery_r() % sys.modulus())).unwrap();
        let (pf, _) = sys.product_form(&r_mod, &one).unwrap();
        assert_eq!(sys.montgomery_reduce_rns(&pf).unwrap().0, one);
    }

    #[test]
    fn full_mul_identity_and_counts() {
        let sys = ResidueSystem::bn254();
        let one = sys.to_residues(&BigUint::one()).unwrap();
        let (out, count) = sys.bn254_full_mul(&[one; 3], &[one; 3]).unwrap();
        assert_eq!(out, vec![one; 3]);
        assert_eq!(count.pointwise_limb_products, 3 * 144);
        assert!(count.reduction_limb_products > 3 * 2100);
        assert_eq!(count.vpu_reduction_nodes, 3);
    }

    #[test]
    fn schedule_counts() {
        assert_eq!(schedule_reductions(256, ReductionMode::Eager).reductions_per_polynomial, 1764);
        assert_eq!(schedule_reductions(256, ReductionMode::Lazy).reductions_per_polynomial, 392);
        assert_eq!(reduction_ratio(1764, 392), 4.5);
        assert_eq!(schedule_reductions(128, ReductionMode::Eager).reductions_per_polynomial, 882);
        assert_eq!(schedule_reductions(256, ReductionMode::Lazy).reduction_ratio, 4.5);
    }

    #[test]
    fn primality_helper() {
        assert!(is_prime_u64(2_013_265_921));
        assert!(!is_prime_u64(4_294_967_295));
        assert!(is_prime_u64(8_380_417));
    }
}
