//! Paillier public-key cryptosystem.
//!
//! Plaintexts live in `Z_n`, ciphertexts in `Z*_{n^2}`. Multiplying two
//! ciphertexts adds their plaintexts, and raising a ciphertext to `k`
//! multiplies its plaintext by `k`. The generator defaults to `g = n + 1`,
//! which makes `g^m mod n^2 = 1 + m*n` and always satisfies the key
//! condition; a random-generator path is kept for conformance testing.

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};

use crate::arith::{self, put_biguint, Reader, Truncated};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PaillierError {
    #[error("plaintext outside [0, n)")]
    PlaintextOutOfRange,
    #[error("ciphertext is not a unit modulo n^2")]
    MalformedCiphertext,
    #[error("invalid key material: {0}")]
    InvalidKey(String),
    #[error("malformed encoding: {0}")]
    Encoding(#[from] Truncated),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPublicKey {
    n: BigUint,
    g: BigUint,
    n_squared: BigUint,
}

#[derive(Debug, Clone)]
pub struct PaillierPrivateKey {
    p: BigUint,
    q: BigUint,
    lambda: BigUint,
    /// `L(g^lambda mod n^2)^-1 mod n`
    mu: BigUint,
    public: PaillierPublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PaillierCiphertext(BigUint);

/// Generates a keypair whose modulus has exactly `bits` bits, with `g = n + 1`.
pub fn keygen<R: RngCore + CryptoRng + ?Sized>(
    bits: u64,
    rng: &mut R,
) -> (PaillierPublicKey, PaillierPrivateKey) {
    loop {
        let (p, q) = prime_pair(bits, rng);
        let g = &p * &q + 1u32;
        if let Ok(sk) = assemble(&p, &q, g) {
            return (sk.public.clone(), sk);
        }
    }
}

/// Like [`keygen`] but with `g` drawn uniformly from `Z*_{n^2}` until
/// `gcd(L(g^lambda mod n^2), n) = 1`.
pub fn keygen_random_generator<R: RngCore + CryptoRng + ?Sized>(
    bits: u64,
    rng: &mut R,
) -> (PaillierPublicKey, PaillierPrivateKey) {
    loop {
        let (p, q) = prime_pair(bits, rng);
        let n = &p * &q;
        let n_squared = &n * &n;
        for _ in 0..64 {
            let g = arith::random_unit(&n_squared, rng);
            if let Ok(sk) = assemble(&p, &q, g) {
                return (sk.public.clone(), sk);
            }
        }
    }
}

fn prime_pair<R: RngCore + CryptoRng + ?Sized>(bits: u64, rng: &mut R) -> (BigUint, BigUint) {
    assert!(bits >= 16, "paillier modulus too small: {bits} bits");
    let p_bits = bits.div_ceil(2);
    let q_bits = bits / 2;
    loop {
        let p = arith::random_prime(p_bits, rng);
        let q = arith::random_prime(q_bits, rng);
        if p != q {
            return (p, q);
        }
    }
}

/// Builds a keypair from caller-chosen primes with `g = n + 1`. Intended for
/// fixtures with hand-checkable moduli such as `p = 11, q = 13`.
pub fn keypair_from_primes(p: &BigUint, q: &BigUint) -> Result<PaillierPrivateKey, PaillierError> {
    let n = p * q;
    keypair_from_parts(p, q, n + 1u32)
}

/// Builds a keypair from caller-chosen primes and generator.
pub fn keypair_from_parts(
    p: &BigUint,
    q: &BigUint,
    g: BigUint,
) -> Result<PaillierPrivateKey, PaillierError> {
    if p == q {
        return Err(PaillierError::InvalidKey("p and q must differ".into()));
    }
    let mut rng = rand::thread_rng();
    for prime in [p, q] {
        if !arith::is_probable_prime(prime, arith::PRIMALITY_ROUNDS, &mut rng) {
            return Err(PaillierError::InvalidKey(format!("{prime} is not prime")));
        }
    }
    assemble(p, q, g)
}

fn assemble(p: &BigUint, q: &BigUint, g: BigUint) -> Result<PaillierPrivateKey, PaillierError> {
    let n = p * q;
    let n_squared = &n * &n;
    let p1 = p - 1u32;
    let q1 = q - 1u32;
    if !n.gcd(&(&p1 * &q1)).is_one() {
        return Err(PaillierError::InvalidKey("gcd(n, phi(n)) != 1".into()));
    }
    if g.is_zero() || g >= n_squared || !g.gcd(&n).is_one() {
        return Err(PaillierError::InvalidKey("generator is not a unit mod n^2".into()));
    }
    let lambda = p1.lcm(&q1);
    let denominator = l_function(&g.modpow(&lambda, &n_squared), &n);
    let mu = arith::mod_inverse(&denominator, &n).ok_or_else(|| {
        PaillierError::InvalidKey("gcd(L(g^lambda mod n^2), n) != 1".into())
    })?;
    Ok(PaillierPrivateKey {
        p: p.clone(),
        q: q.clone(),
        lambda,
        mu,
        public: PaillierPublicKey { n, g, n_squared },
    })
}

/// `L(x) = (x - 1) / n`
fn l_function(x: &BigUint, n: &BigUint) -> BigUint {
    (x - 1u32) / n
}

impl PaillierPublicKey {
    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    fn uses_standard_generator(&self) -> bool {
        self.g == &self.n + 1u32
    }

    fn check_plaintext(&self, m: &BigUint) -> Result<(), PaillierError> {
        if m >= &self.n {
            Err(PaillierError::PlaintextOutOfRange)
        } else {
            Ok(())
        }
    }

    /// `g^m mod n^2` without validating `m`.
    fn generator_pow(&self, m: &BigUint) -> BigUint {
        if self.uses_standard_generator() {
            (BigUint::one() + m * &self.n) % &self.n_squared
        } else {
            self.g.modpow(m, &self.n_squared)
        }
    }

    /// Randomized encryption `g^m * r^n mod n^2` with fresh `r`.
    pub fn encrypt<R: RngCore + ?Sized>(
        &self,
        m: &BigUint,
        rng: &mut R,
    ) -> Result<PaillierCiphertext, PaillierError> {
        let r = arith::random_unit(&self.n, rng);
        self.encrypt_with_nonce(m, &r)
    }

    /// Encryption with a caller-supplied nonce `r`, which must be a unit mod `n`.
    pub fn encrypt_with_nonce(
        &self,
        m: &BigUint,
        r: &BigUint,
    ) -> Result<PaillierCiphertext, PaillierError> {
        self.check_plaintext(m)?;
        if r.is_zero() || r >= &self.n || !r.gcd(&self.n).is_one() {
            return Err(PaillierError::InvalidKey("nonce is not a unit mod n".into()));
        }
        let mask = r.modpow(&self.n, &self.n_squared);
        Ok(PaillierCiphertext((self.generator_pow(m) * mask) % &self.n_squared))
    }

    /// Zero-randomness encoding `g^m mod n^2`.
    pub fn encrypt_deterministic(&self, m: &BigUint) -> Result<PaillierCiphertext, PaillierError> {
        self.check_plaintext(m)?;
        Ok(PaillierCiphertext(self.generator_pow(m)))
    }

    /// Ciphertext of `m1 + m2 mod n`.
    pub fn add(&self, c1: &PaillierCiphertext, c2: &PaillierCiphertext) -> PaillierCiphertext {
        PaillierCiphertext((&c1.0 * &c2.0) % &self.n_squared)
    }

    /// Ciphertext of `m * k mod n`.
    pub fn scale(&self, c: &PaillierCiphertext, k: &BigUint) -> PaillierCiphertext {
        PaillierCiphertext(c.0.modpow(k, &self.n_squared))
    }

    /// Multiplies in a fresh encryption of zero.
    pub fn rerandomize<R: RngCore + ?Sized>(
        &self,
        c: &PaillierCiphertext,
        rng: &mut R,
    ) -> PaillierCiphertext {
        let r = arith::random_unit(&self.n, rng);
        let mask = r.modpow(&self.n, &self.n_squared);
        PaillierCiphertext((&c.0 * mask) % &self.n_squared)
    }

    /// Maps `v` in `(-n/2, n/2)` onto `Z_n`: non-negative values map to
    /// themselves and negative values to `n + v`.
    pub fn encode_signed(&self, v: &BigInt) -> Result<BigUint, PaillierError> {
        let half = BigInt::from_biguint(Sign::Plus, &self.n >> 1u32);
        let n = BigInt::from_biguint(Sign::Plus, self.n.clone());
        let bound_ok = if v.sign() == Sign::Minus {
            -v < half || (-v == half && self.n.is_odd())
        } else {
            v < &half || (v == &half && self.n.is_odd())
        };
        if !bound_ok {
            return Err(PaillierError::PlaintextOutOfRange);
        }
        let encoded = if v.sign() == Sign::Minus { n + v } else { v.clone() };
        Ok(encoded.to_biguint().expect("non-negative after encoding"))
    }

    /// Inverse of [`encode_signed`](Self::encode_signed).
    pub fn decode_signed(&self, m: &BigUint) -> BigInt {
        let half = &self.n >> 1u32;
        if m > &half {
            BigInt::from_biguint(Sign::Minus, &self.n - m)
        } else {
            BigInt::from_biguint(Sign::Plus, m.clone())
        }
    }

    /// `n`, then `g`, each as a length-prefixed big-endian magnitude.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        put_biguint(out, &self.n);
        put_biguint(out, &self.g);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn decode_from(reader: &mut Reader<'_>) -> Result<Self, PaillierError> {
        let n = reader.biguint()?;
        let g = reader.biguint()?;
        Self::from_parts(n, g)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PaillierError> {
        let mut reader = Reader::new(bytes);
        let key = Self::decode_from(&mut reader)?;
        if !reader.is_empty() {
            return Err(PaillierError::InvalidKey("trailing bytes".into()));
        }
        Ok(key)
    }

    /// Public key from its components; checks only what the public side can.
    pub fn from_parts(n: BigUint, g: BigUint) -> Result<Self, PaillierError> {
        if n < BigUint::from(6u32) || n.is_even() {
            return Err(PaillierError::InvalidKey("modulus must be an odd composite".into()));
        }
        let n_squared = &n * &n;
        if g.is_zero() || g >= n_squared || !g.gcd(&n).is_one() {
            return Err(PaillierError::InvalidKey("generator is not a unit mod n^2".into()));
        }
        Ok(Self { n, g, n_squared })
    }
}

impl PaillierPrivateKey {
    pub fn public_key(&self) -> &PaillierPublicKey {
        &self.public
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }

    /// `m = L(c^lambda mod n^2) * mu mod n`
    pub fn decrypt(&self, c: &PaillierCiphertext) -> Result<BigUint, PaillierError> {
        let pk = &self.public;
        if c.0.is_zero() || c.0 >= pk.n_squared || !c.0.gcd(&pk.n).is_one() {
            return Err(PaillierError::MalformedCiphertext);
        }
        let u = c.0.modpow(&self.lambda, &pk.n_squared);
        Ok((l_function(&u, &pk.n) * &self.mu) % &pk.n)
    }

    /// `p`, then `q`, then `g`, each length-prefixed.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_biguint(&mut out, &self.p);
        put_biguint(&mut out, &self.q);
        put_biguint(&mut out, &self.public.g);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PaillierError> {
        let mut reader = Reader::new(bytes);
        let p = reader.biguint()?;
        let q = reader.biguint()?;
        let g = reader.biguint()?;
        if !reader.is_empty() {
            return Err(PaillierError::InvalidKey("trailing bytes".into()));
        }
        keypair_from_parts(&p, &q, g)
    }
}

impl PaillierCiphertext {
    /// Wraps a raw value without validation; [`PaillierPrivateKey::decrypt`]
    /// rejects values that are not units mod `n^2`.
    pub fn from_value(value: BigUint) -> Self {
        Self(value)
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        put_biguint(out, &self.0);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn decode_from(reader: &mut Reader<'_>) -> Result<Self, Truncated> {
        Ok(Self(reader.biguint()?))
    }
}

/// Fast source of encryptions of zero for a fixed public key.
///
/// Uses `h_s = h^n mod n^2` for a random `h = -x^2 mod n` and returns
/// `h_s^a` for a fresh exponent `a` of `ceil(|n| / 2)` bits, which is a
/// Paillier encryption of zero with nonce `h^a`. Powers of `h_s` are
/// precomputed in an 8-bit comb so each sample costs about `|n| / 16`
/// modular multiplications instead of a full exponentiation.
pub struct ZeroEncryptor {
    n_squared: BigUint,
    exponent_bits: u64,
    // table[j][v] = h_s^(v * 256^j); index 0 is never read.
    table: Vec<Vec<BigUint>>,
}

const COMB_WINDOW: u64 = 8;

impl ZeroEncryptor {
    pub fn new<R: RngCore + ?Sized>(pk: &PaillierPublicKey, rng: &mut R) -> Self {
        let n = &pk.n;
        let x = arith::random_unit(n, rng);
        let h = n - (&x * &x) % n;
        let h_s = h.modpow(n, &pk.n_squared);
        let exponent_bits = n.bits().div_ceil(2).max(COMB_WINDOW);
        let positions = exponent_bits.div_ceil(COMB_WINDOW) as usize;
        let width = 1usize << COMB_WINDOW;

        let mut table = Vec::with_capacity(positions);
        let mut base = h_s;
        for _ in 0..positions {
            let mut row = Vec::with_capacity(width);
            row.push(BigUint::one());
            for v in 1..width {
                let next = (&row[v - 1] * &base) % &pk.n_squared;
                row.push(next);
            }
            base = (&row[width - 1] * &base) % &pk.n_squared;
            table.push(row);
        }
        Self {
            n_squared: pk.n_squared.clone(),
            exponent_bits,
            table,
        }
    }

    /// A fresh `n`-th residue, i.e. an encryption of zero.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> BigUint {
        let exponent = rng.gen_biguint(self.exponent_bits);
        let digits = exponent.to_bytes_le();
        let mut acc: Option<BigUint> = None;
        for (row, &digit) in self.table.iter().zip(digits.iter()) {
            if digit == 0 {
                continue;
            }
            let factor = &row[digit as usize];
            acc = Some(match acc {
                None => factor.clone(),
                Some(a) => (a * factor) % &self.n_squared,
            });
        }
        acc.unwrap_or_else(BigUint::one)
    }

    /// Multiplies `c` by a fresh encryption of zero.
    pub fn rerandomize<R: RngCore + ?Sized>(
        &self,
        c: &PaillierCiphertext,
        rng: &mut R,
    ) -> PaillierCiphertext {
        PaillierCiphertext((&c.0 * self.sample(rng)) % &self.n_squared)
    }
}

impl std::fmt::Debug for ZeroEncryptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ZeroEncryptor")
            .field("exponent_bits", &self.exponent_bits)
            .field("rows", &self.table.len())
            .finish()
    }
}

/// Uniform plaintext in `[0, n)`.
pub fn random_plaintext<R: RngCore + ?Sized>(pk: &PaillierPublicKey, rng: &mut R) -> BigUint {
    rng.gen_biguint_below(&pk.n)
}
