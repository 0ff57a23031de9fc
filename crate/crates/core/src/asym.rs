//! RSA keys, PKCS#1 v1.5 signatures and a hybrid envelope for payloads of
//! arbitrary length.
//!
//! The private exponent is the inverse of `e` modulo `(p-1)(q-1)`. The
//! envelope wraps a fresh AES-256-GCM key with RSA (PKCS#1 v1.5 type 2
//! padding) and encrypts the payload under that key.

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce};
use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use crate::arith::{self, put_biguint, put_bytes, Reader, Truncated};

pub const DEFAULT_PUBLIC_EXPONENT: u32 = 65_537;
pub const SYMMETRIC_KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;

// DER prefix of DigestInfo for SHA-256 (RFC 8017, section 9.2 notes).
const SHA256_DIGEST_INFO: [u8; 19] = [
    0x30, 0x31, 0x30, 0x0d, 0x06, 0x09, 0x60, 0x86, 0x48, 0x01, 0x65, 0x03, 0x04, 0x02, 0x01, 0x05,
    0x00, 0x04, 0x20,
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsymError {
    #[error("decryption failed")]
    DecryptionFailure,
    #[error("message representative out of range")]
    MessageOutOfRange,
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("modulus too small for this operation")]
    ModulusTooSmall,
    #[error("malformed encoding: {0}")]
    Encoding(#[from] Truncated),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AsymPublicKey {
    n: BigUint,
    e: BigUint,
}

#[derive(Debug, Clone)]
pub struct AsymKeypair {
    public: AsymPublicKey,
    d: BigUint,
    p: BigUint,
    q: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HybridCiphertext {
    pub wrapped_key: Vec<u8>,
    pub nonce: [u8; NONCE_LEN],
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature(BigUint);

/// Generates a keypair with a modulus of exactly `bits` bits and `e = 65537`.
pub fn asym_keygen<R: RngCore + CryptoRng + ?Sized>(bits: u64, rng: &mut R) -> AsymKeypair {
    assert!(bits >= 64, "RSA modulus too small: {bits} bits");
    let e = BigUint::from(DEFAULT_PUBLIC_EXPONENT);
    loop {
        let p = arith::random_prime(bits.div_ceil(2), rng);
        let q = arith::random_prime(bits / 2, rng);
        if p == q {
            continue;
        }
        if let Ok(kp) = assemble(p, q, e.clone()) {
            return kp;
        }
    }
}

/// Keypair from caller-chosen primes and exponent, e.g. the textbook
/// `p = 61, q = 53, e = 17`.
pub fn keypair_from_primes(p: &BigUint, q: &BigUint, e: &BigUint) -> Result<AsymKeypair, AsymError> {
    if p == q {
        return Err(AsymError::InvalidKey("p and q must differ".into()));
    }
    let mut rng = rand::thread_rng();
    for prime in [p, q] {
        if !arith::is_probable_prime(prime, arith::PRIMALITY_ROUNDS, &mut rng) {
            return Err(AsymError::InvalidKey(format!("{prime} is not prime")));
        }
    }
    assemble(p.clone(), q.clone(), e.clone())
}

fn assemble(p: BigUint, q: BigUint, e: BigUint) -> Result<AsymKeypair, AsymError> {
    let phi = (&p - 1u32) * (&q - 1u32);
    if e <= BigUint::one() || e >= phi {
        return Err(AsymError::InvalidKey("e must satisfy 1 < e < phi".into()));
    }
    if !e.gcd(&phi).is_one() {
        return Err(AsymError::InvalidKey("gcd(e, phi) != 1".into()));
    }
    let d = arith::mod_inverse(&e, &phi).expect("inverse exists when gcd is 1");
    Ok(AsymKeypair {
        public: AsymPublicKey { n: &p * &q, e },
        d,
        p,
        q,
    })
}

impl AsymPublicKey {
    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn e(&self) -> &BigUint {
        &self.e
    }

    /// Modulus length in bytes.
    pub fn size(&self) -> usize {
        self.n.bits().div_ceil(8) as usize
    }

    /// Textbook `m^e mod n`.
    pub fn raw_encrypt(&self, m: &BigUint) -> Result<BigUint, AsymError> {
        if m >= &self.n {
            return Err(AsymError::MessageOutOfRange);
        }
        Ok(m.modpow(&self.e, &self.n))
    }

    /// Hybrid encryption of an arbitrary payload.
    pub fn encrypt<R: RngCore + CryptoRng + ?Sized>(
        &self,
        payload: &[u8],
        rng: &mut R,
    ) -> Result<HybridCiphertext, AsymError> {
        let mut key = [0u8; SYMMETRIC_KEY_LEN];
        rng.fill_bytes(&mut key);
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);

        let k = self.size();
        // 00 02 PS 00 key, with at least 8 bytes of non-zero padding.
        if k < SYMMETRIC_KEY_LEN + 11 {
            return Err(AsymError::ModulusTooSmall);
        }
        let mut em = vec![0u8; k];
        em[1] = 0x02;
        let ps_end = k - SYMMETRIC_KEY_LEN - 1;
        for byte in em[2..ps_end].iter_mut() {
            *byte = loop {
                let mut b = [0u8; 1];
                rng.fill_bytes(&mut b);
                if b[0] != 0 {
                    break b[0];
                }
            };
        }
        em[k - SYMMETRIC_KEY_LEN..].copy_from_slice(&key);
        let wrapped = self.raw_encrypt(&BigUint::from_bytes_be(&em))?;

        let cipher = Aes256Gcm::new_from_slice(&key).expect("key length is fixed");
        let body = cipher
            .encrypt(Nonce::from_slice(&nonce), payload)
            .expect("AES-GCM encryption does not fail for in-memory buffers");
        Ok(HybridCiphertext {
            wrapped_key: left_pad(&wrapped, k),
            nonce,
            body,
        })
    }

    /// PKCS#1 v1.5 verification over SHA-256. Malformed input yields `false`.
    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        if signature.0 >= self.n {
            return false;
        }
        let Ok(expected) = emsa_pkcs1_v15(message, self.size()) else {
            return false;
        };
        let recovered = signature.0.modpow(&self.e, &self.n);
        left_pad(&recovered, self.size()) == expected
    }

    /// `n`, then `e`, each length-prefixed.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        put_biguint(out, &self.n);
        put_biguint(out, &self.e);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn decode_from(reader: &mut Reader<'_>) -> Result<Self, AsymError> {
        let n = reader.biguint()?;
        let e = reader.biguint()?;
        if n < BigUint::from(3u32) || e.is_zero() {
            return Err(AsymError::InvalidKey("degenerate public key".into()));
        }
        Ok(Self { n, e })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AsymError> {
        let mut reader = Reader::new(bytes);
        let key = Self::decode_from(&mut reader)?;
        if !reader.is_empty() {
            return Err(AsymError::InvalidKey("trailing bytes".into()));
        }
        Ok(key)
    }
}

impl AsymKeypair {
    pub fn public_key(&self) -> &AsymPublicKey {
        &self.public
    }

    pub fn d(&self) -> &BigUint {
        &self.d
    }

    pub fn primes(&self) -> (&BigUint, &BigUint) {
        (&self.p, &self.q)
    }

    /// Textbook `c^d mod n`.
    pub fn raw_decrypt(&self, c: &BigUint) -> Result<BigUint, AsymError> {
        if c >= &self.public.n {
            return Err(AsymError::MessageOutOfRange);
        }
        Ok(c.modpow(&self.d, &self.public.n))
    }

    pub fn decrypt(&self, ct: &HybridCiphertext) -> Result<Vec<u8>, AsymError> {
        let k = self.public.size();
        if ct.wrapped_key.len() != k {
            return Err(AsymError::DecryptionFailure);
        }
        let c = BigUint::from_bytes_be(&ct.wrapped_key);
        let m = self.raw_decrypt(&c).map_err(|_| AsymError::DecryptionFailure)?;
        let em = left_pad(&m, k);
        if em[0] != 0 || em[1] != 0x02 {
            return Err(AsymError::DecryptionFailure);
        }
        let sep = em[2..]
            .iter()
            .position(|&b| b == 0)
            .map(|i| i + 2)
            .ok_or(AsymError::DecryptionFailure)?;
        let key = &em[sep + 1..];
        if sep < 10 || key.len() != SYMMETRIC_KEY_LEN {
            return Err(AsymError::DecryptionFailure);
        }
        let cipher = Aes256Gcm::new_from_slice(key).map_err(|_| AsymError::DecryptionFailure)?;
        cipher
            .decrypt(Nonce::from_slice(&ct.nonce), ct.body.as_slice())
            .map_err(|_| AsymError::DecryptionFailure)
    }

    pub fn sign(&self, message: &[u8]) -> Result<Signature, AsymError> {
        let em = emsa_pkcs1_v15(message, self.public.size())?;
        let s = BigUint::from_bytes_be(&em).modpow(&self.d, &self.public.n);
        Ok(Signature(s))
    }

    /// `p`, `q`, `e`; the rest is recomputed on load.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_biguint(&mut out, &self.p);
        put_biguint(&mut out, &self.q);
        put_biguint(&mut out, &self.public.e);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AsymError> {
        let mut reader = Reader::new(bytes);
        let p = reader.biguint()?;
        let q = reader.biguint()?;
        let e = reader.biguint()?;
        keypair_from_primes(&p, &q, &e)
    }
}

fn emsa_pkcs1_v15(message: &[u8], k: usize) -> Result<Vec<u8>, AsymError> {
    let hash = Sha256::digest(message);
    let t_len = SHA256_DIGEST_INFO.len() + hash.len();
    if k < t_len + 11 {
        return Err(AsymError::ModulusTooSmall);
    }
    let mut em = vec![0xffu8; k];
    em[0] = 0x00;
    em[1] = 0x01;
    em[k - t_len - 1] = 0x00;
    em[k - t_len..k - hash.len()].copy_from_slice(&SHA256_DIGEST_INFO);
    em[k - hash.len()..].copy_from_slice(&hash);
    Ok(em)
}

fn left_pad(value: &BigUint, len: usize) -> Vec<u8> {
    let bytes = value.to_bytes_be();
    if bytes.len() >= len {
        return bytes;
    }
    let mut out = vec![0u8; len - bytes.len()];
    out.extend_from_slice(&bytes);
    out
}

impl HybridCiphertext {
    /// Length-prefixed wrapped key, raw 12-byte nonce, length-prefixed body.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        put_bytes(out, &self.wrapped_key);
        out.extend_from_slice(&self.nonce);
        put_bytes(out, &self.body);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn decode_from(reader: &mut Reader<'_>) -> Result<Self, Truncated> {
        let wrapped_key = reader.bytes()?.to_vec();
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(reader.take(NONCE_LEN)?);
        let body = reader.bytes()?.to_vec();
        Ok(Self {
            wrapped_key,
            nonce,
            body,
        })
    }
}

impl Signature {
    pub fn from_value(value: BigUint) -> Self {
        Self(value)
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        put_biguint(out, &self.0);
    }

    pub fn decode_from(reader: &mut Reader<'_>) -> Result<Self, Truncated> {
        Ok(Self(reader.biguint()?))
    }
}
