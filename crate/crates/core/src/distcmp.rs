//! Blinded threshold comparison over Paillier.
//!
//! The threshold holder encrypts `d_threshold * g` under a fresh Paillier key
//! and sends it to the distance holder. For each index `i` in `1..=i_max`
//! the distance holder returns
//!
//! ```text
//! c'_i = (c * E(-(d_actual + i) * g; 0))^s * E(0; r'_i)
//! ```
//!
//! which decrypts to `s * (d_threshold - d_actual - i) * g mod n`. Exactly
//! one item decrypts to zero iff `1 <= d_threshold - d_actual <= i_max`, so
//! the threshold holder learns `d_threshold > d_actual` and nothing else
//! about `d_actual` when the answer is false.
//!
//! The responder computes `c^s` once and walks the index by multiplying in
//! `E(-g * s; 0)`, which yields the same ciphertexts as exponentiating every
//! item by `s`. Each item gets its own fresh encryption of zero.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};

use crate::arith::{self, Reader, Truncated};
use crate::paillier::{
    PaillierCiphertext, PaillierError, PaillierPrivateKey, PaillierPublicKey, ZeroEncryptor,
};

/// Default traversal bound: the largest configurable threshold, in meters.
pub const DEFAULT_I_MAX: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DistCmpError {
    #[error("threshold {0} outside [1, i_max]")]
    ThresholdOutOfRange(u32),
    #[error("invalid comparison parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonParams {
    g: BigUint,
    i_max: u32,
}

impl Default for ComparisonParams {
    fn default() -> Self {
        Self {
            g: BigUint::one(),
            i_max: DEFAULT_I_MAX,
        }
    }
}

impl ComparisonParams {
    pub fn new(g: BigUint, i_max: u32) -> Result<Self, DistCmpError> {
        if g.is_zero() {
            return Err(DistCmpError::InvalidParams("g must be non-zero".into()));
        }
        if i_max == 0 {
            return Err(DistCmpError::InvalidParams("i_max must be positive".into()));
        }
        Ok(Self { g, i_max })
    }

    pub fn with_i_max(i_max: u32) -> Result<Self, DistCmpError> {
        Self::new(BigUint::one(), i_max)
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn i_max(&self) -> u32 {
        self.i_max
    }

    /// Checks `1 <= g < n` and `gcd(g, n) = 1` for the given key.
    pub fn validate_for(&self, pk: &PaillierPublicKey) -> Result<(), DistCmpError> {
        if &self.g >= pk.n() || !self.g.gcd(pk.n()).is_one() {
            return Err(DistCmpError::InvalidParams("g must be a unit below n".into()));
        }
        Ok(())
    }
}

/// Encryption of `d_threshold * g mod n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdCiphertext(pub PaillierCiphertext);

/// The responder's `i_max` blinded ciphertexts; position `i - 1` holds index `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonBatch {
    pub items: Vec<PaillierCiphertext>,
}

pub fn make_threshold_ct<R: RngCore + ?Sized>(
    pk: &PaillierPublicKey,
    d_threshold: u32,
    params: &ComparisonParams,
    rng: &mut R,
) -> Result<ThresholdCiphertext, DistCmpError> {
    params.validate_for(pk)?;
    if d_threshold == 0 || d_threshold > params.i_max {
        return Err(DistCmpError::ThresholdOutOfRange(d_threshold));
    }
    let m = (BigUint::from(d_threshold) * &params.g) % pk.n();
    Ok(ThresholdCiphertext(pk.encrypt(&m, rng)?))
}

/// Distance-holder side, reusable across every pair compared under one key.
#[derive(Debug)]
pub struct Responder<'a> {
    pk: &'a PaillierPublicKey,
    params: &'a ComparisonParams,
    zeros: ZeroEncryptor,
}

impl<'a> Responder<'a> {
    pub fn new<R: RngCore + ?Sized>(
        pk: &'a PaillierPublicKey,
        params: &'a ComparisonParams,
        rng: &mut R,
    ) -> Result<Self, DistCmpError> {
        params.validate_for(pk)?;
        Ok(Self {
            pk,
            params,
            zeros: ZeroEncryptor::new(pk, rng),
        })
    }

    pub fn respond<R: RngCore + ?Sized>(
        &self,
        c: &ThresholdCiphertext,
        d_actual: u32,
        rng: &mut R,
    ) -> Result<ComparisonBatch, DistCmpError> {
        let pk = self.pk;
        let n = pk.n();
        let i_max = self.params.i_max;
        // Differences d_t - d_a - i must stay strictly inside (-n, n) so that
        // only a true zero difference decrypts to zero.
        if BigUint::from(u64::from(d_actual) + u64::from(i_max)) >= *n {
            return Err(DistCmpError::InvalidParams(
                "d_actual + i_max must be below the Paillier modulus".into(),
            ));
        }

        let s = arith::random_unit(n, rng);
        let gs = (&self.params.g * &s) % n;
        let first = negate_mod(&((BigUint::from(d_actual) + 1u32) * &gs % n), n);
        let step = pk.encrypt_deterministic(&negate_mod(&gs, n))?;

        let mut current = pk.add(&pk.scale(&c.0, &s), &pk.encrypt_deterministic(&first)?);
        let mut items = Vec::with_capacity(i_max as usize);
        for i in 1..=i_max {
            items.push(self.zeros.rerandomize(&current, rng));
            if i < i_max {
                current = pk.add(&current, &step);
            }
        }
        Ok(ComparisonBatch { items })
    }
}

fn negate_mod(v: &BigUint, n: &BigUint) -> BigUint {
    let v = v % n;
    if v.is_zero() {
        v
    } else {
        n - v
    }
}

/// One-shot responder: builds the zero-encryption table and answers a
/// single threshold ciphertext.
pub fn respond<R: RngCore + ?Sized>(
    pk: &PaillierPublicKey,
    c: &ThresholdCiphertext,
    d_actual: u32,
    params: &ComparisonParams,
    rng: &mut R,
) -> Result<ComparisonBatch, DistCmpError> {
    Responder::new(pk, params, rng)?.respond(c, d_actual, rng)
}

/// True iff some item decrypts to zero, i.e. `d_threshold > d_actual`.
pub fn judge(sk: &PaillierPrivateKey, batch: &ComparisonBatch) -> Result<bool, DistCmpError> {
    Ok(zero_index(sk, batch)?.is_some())
}

/// The index `i` (1-based) whose item decrypts to zero, if any. When present
/// it equals `d_threshold - d_actual`.
pub fn zero_index(
    sk: &PaillierPrivateKey,
    batch: &ComparisonBatch,
) -> Result<Option<u32>, DistCmpError> {
    for (pos, item) in batch.items.iter().enumerate() {
        if sk.decrypt(item)?.is_zero() {
            return Ok(Some(pos as u32 + 1));
        }
    }
    Ok(None)
}

/// Plaintext reference for property tests.
pub fn oracle_compare(d_threshold: u32, d_actual: u32) -> bool {
    d_threshold > d_actual
}

/// Generates a comparison key for one query.
pub fn comparison_keygen<R: RngCore + CryptoRng + ?Sized>(
    bits: u64,
    rng: &mut R,
) -> (PaillierPublicKey, PaillierPrivateKey) {
    crate::paillier::keygen(bits, rng)
}

impl ComparisonBatch {
    /// 32-bit big-endian count, then each ciphertext length-prefixed.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let count = u32::try_from(self.items.len()).expect("batch length fits u32");
        out.extend_from_slice(&count.to_be_bytes());
        for item in &self.items {
            item.encode_into(out);
        }
    }

    pub fn decode_from(reader: &mut Reader<'_>) -> Result<Self, Truncated> {
        let count = reader.u32()? as usize;
        // Every item needs at least its 4-byte length prefix.
        if count > reader.remaining() / 4 {
            return Err(Truncated {
                offset: reader.position(),
            });
        }
        let mut items = Vec::with_capacity(count);
        for _ in 0..count {
            items.push(PaillierCiphertext::decode_from(reader)?);
        }
        Ok(Self { items })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paillier::{keygen, keypair_from_primes};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    fn key(bits: u64, seed: u64) -> (PaillierPublicKey, PaillierPrivateKey) {
        keygen(bits, &mut ChaCha20Rng::seed_from_u64(seed))
    }

    // d_t - d_a - i over every index; the expected zero positions.
    fn plaintext_zero_positions(d_t: u32, d_a: u32, i_max: u32) -> Vec<u32> {
        (1..=i_max)
            .filter(|&i| i64::from(d_t) - i64::from(d_a) - i64::from(i) == 0)
            .collect()
    }

    #[test]
    fn threshold_ciphertexts() {
        let (pk, sk) = key(128, 1);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let ct = make_threshold_ct(&pk, 20, &ComparisonParams::default(), &mut rng).unwrap();
        assert_eq!(sk.decrypt(&ct.0).unwrap(), BigUint::from(20u32));

        let tiny = keypair_from_primes(&BigUint::from(11u32), &BigUint::from(13u32)).unwrap();
        let params = ComparisonParams::new(BigUint::from(7u32), 40).unwrap();
        let ct = make_threshold_ct(tiny.public_key(), 20, &params, &mut rng).unwrap();
        assert_eq!(tiny.decrypt(&ct.0).unwrap(), BigUint::from(140u32));
        assert_eq!(
            make_threshold_ct(&pk, 0, &ComparisonParams::default(), &mut rng),
            Err(DistCmpError::ThresholdOutOfRange(0))
        );
        assert_eq!(
            make_threshold_ct(&pk, 1001, &ComparisonParams::default(), &mut rng),
            Err(DistCmpError::ThresholdOutOfRange(1001))
        );
    }

    #[test]
    fn items_decrypt_to_blinded_differences() {
        let (pk, sk) = key(128, 3);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let params = ComparisonParams::with_i_max(60).unwrap();
        for (d_t, d_a) in [(20u32, 10u32), (10, 10), (10, 20)] {
            let ct = make_threshold_ct(&pk, d_t, &params, &mut rng).unwrap();
            let batch = respond(&pk, &ct, d_a, &params, &mut rng).unwrap();
            assert_eq!(batch.items.len(), 60);
            let zeros: Vec<u32> = batch
                .items
                .iter()
                .enumerate()
                .filter(|(_, c)| sk.decrypt(c).unwrap().is_zero())
                .map(|(pos, _)| pos as u32 + 1)
                .collect();
            assert_eq!(zeros, plaintext_zero_positions(d_t, d_a, 60), "({d_t}, {d_a})");
        }
    }

    #[test]
    fn blinded_values_follow_one_hidden_factor() {
        // item_i * s^-1 must equal d_t - d_a - i for a single s.
        let tiny = keypair_from_primes(&BigUint::from(11u32), &BigUint::from(13u32)).unwrap();
        let pk = tiny.public_key();
        let params = ComparisonParams::new(BigUint::from(3u32), 30).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let ct = make_threshold_ct(pk, 25, &params, &mut rng).unwrap();
        let batch = respond(pk, &ct, 4, &params, &mut rng).unwrap();
        let plain: Vec<i64> = batch
            .items
            .iter()
            .map(|c| tiny.decrypt(c).unwrap().try_into().unwrap())
            .collect();
        let candidates: Vec<i64> = (1..143)
            .filter(|s: &i64| (1..=30i64).all(|i| {
                let expected = (s * 3 * (25 - 4 - i)).rem_euclid(143);
                plain[(i - 1) as usize] == expected
            }))
            .collect();
        assert_eq!(candidates.len(), 1);
    }

    #[test]
    fn judge_matches_oracle_on_named_cases() {
        let (pk, sk) = key(128, 6);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let params = ComparisonParams::default();
        for (d_t, d_a) in [(20u32, 10u32), (10, 10), (1000, 999)] {
            let ct = make_threshold_ct(&pk, d_t, &params, &mut rng).unwrap();
            let batch = respond(&pk, &ct, d_a, &params, &mut rng).unwrap();
            assert_eq!(judge(&sk, &batch).unwrap(), oracle_compare(d_t, d_a));
        }
    }

    #[test]
    fn judge_recovers_the_difference() {
        let (pk, sk) = key(128, 8);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let params = ComparisonParams::with_i_max(100).unwrap();
        let ct = make_threshold_ct(&pk, 73, &params, &mut rng).unwrap();
        let batch = respond(&pk, &ct, 41, &params, &mut rng).unwrap();
        assert_eq!(zero_index(&sk, &batch).unwrap(), Some(32));
    }

    #[test]
    fn batches_for_identical_inputs_share_nothing() {
        let (pk, _) = key(128, 10);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let params = ComparisonParams::with_i_max(50).unwrap();
        let ct = make_threshold_ct(&pk, 30, &params, &mut rng).unwrap();
        let a = respond(&pk, &ct, 12, &params, &mut rng).unwrap();
        let b = respond(&pk, &ct, 12, &params, &mut rng).unwrap();
        let seen: HashSet<_> = a.items.iter().collect();
        assert!(b.items.iter().all(|c| !seen.contains(c)));
        assert_eq!(seen.len(), 50);
    }

    #[test]
    fn oracle() {
        assert!(oracle_compare(20, 10));
        assert!(!oracle_compare(10, 10));
        assert!(!oracle_compare(0, 5));
    }

    #[test]
    fn parameter_validation() {
        let tiny = keypair_from_primes(&BigUint::from(11u32), &BigUint::from(13u32)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let bad_g = ComparisonParams::new(BigUint::from(13u32), 10).unwrap();
        assert!(matches!(
            make_threshold_ct(tiny.public_key(), 5, &bad_g, &mut rng),
            Err(DistCmpError::InvalidParams(_))
        ));
        assert!(ComparisonParams::new(BigUint::zero(), 10).is_err());
        assert!(ComparisonParams::with_i_max(0).is_err());

        let params = ComparisonParams::with_i_max(100).unwrap();
        let ct = make_threshold_ct(tiny.public_key(), 5, &params, &mut rng).unwrap();
        assert!(matches!(
            respond(tiny.public_key(), &ct, 43, &params, &mut rng),
            Err(DistCmpError::InvalidParams(_))
        ));
    }

    #[test]
    fn malformed_batch_item_is_reported() {
        let (_, sk) = key(64, 13);
        let batch = ComparisonBatch {
            items: vec![PaillierCiphertext::from_value(BigUint::zero())],
        };
        assert_eq!(
            judge(&sk, &batch),
            Err(DistCmpError::Paillier(PaillierError::MalformedCiphertext))
        );
    }

    #[test]
    fn batch_wire_form() {
        let (pk, _) = key(64, 14);
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let params = ComparisonParams::with_i_max(5).unwrap();
        let ct = make_threshold_ct(&pk, 3, &params, &mut rng).unwrap();
        let batch = respond(&pk, &ct, 1, &params, &mut rng).unwrap();
        let mut out = Vec::new();
        batch.encode_into(&mut out);
        assert_eq!(&out[..4], &[0, 0, 0, 5]);
        let decoded = ComparisonBatch::decode_from(&mut Reader::new(&out)).unwrap();
        assert_eq!(decoded, batch);
        assert!(ComparisonBatch::decode_from(&mut Reader::new(&out[..out.len() - 1])).is_err());
    }
}
