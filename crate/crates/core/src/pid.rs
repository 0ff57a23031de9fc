//! Pseudo-identities: AES-128-CMAC of the identity string under a per-epoch key.

use std::fmt;
use std::str::FromStr;

use aes::Aes128;
use cmac::{Cmac, Mac};
use rand::RngCore;

pub const MAX_IDENTITY_LEN: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PidError {
    #[error("identity string is empty")]
    EmptyIdentity,
    #[error("identity string longer than {MAX_IDENTITY_LEN} bytes")]
    IdentityTooLong,
    #[error("pseudo-identity must be 32 hex characters")]
    BadHex,
}

/// 128-bit key from which one epoch's pseudo-identities are derived.
#[derive(Clone, PartialEq, Eq)]
pub struct EpochKey([u8; 16]);

impl EpochKey {
    pub fn new(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

impl fmt::Debug for EpochKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("EpochKey(..)")
    }
}

/// Opaque 128-bit token standing in for a vehicle identity at the location
/// servers. Hex-encoded on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PseudoIdentity([u8; 16]);

impl PseudoIdentity {
    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    /// Fresh random token, used for dummy entries.
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for PseudoIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for PseudoIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pid({})", self.to_hex())
    }
}

impl FromStr for PseudoIdentity {
    type Err = PidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 32 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(PidError::BadHex);
        }
        let mut bytes = [0u8; 16];
        hex::decode_to_slice(s, &mut bytes).map_err(|_| PidError::BadHex)?;
        Ok(Self(bytes))
    }
}

pub fn pid_derive(id: &str, key: &EpochKey) -> Result<PseudoIdentity, PidError> {
    if id.is_empty() {
        return Err(PidError::EmptyIdentity);
    }
    if id.len() > MAX_IDENTITY_LEN {
        return Err(PidError::IdentityTooLong);
    }
    let mut mac = <Cmac<Aes128> as Mac>::new_from_slice(&key.0).expect("16-byte key");
    mac.update(id.as_bytes());
    let tag = mac.finalize().into_bytes();
    let mut out = [0u8; 16];
    out.copy_from_slice(&tag);
    Ok(PseudoIdentity(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    #[test]
    fn cmac_matches_rfc4493_vector() {
        // RFC 4493, example 2 (one-block message).
        let key: [u8; 16] = hex::decode("2b7e151628aed2a6abf7158809cf4f3c").unwrap().try_into().unwrap();
        let mut mac = <Cmac<Aes128> as Mac>::new_from_slice(&key).unwrap();
        mac.update(&hex::decode("6bc1bee22e409f96e93d7e117393172a").unwrap());
        assert_eq!(hex::encode(mac.finalize().into_bytes()), "070a16b46b4d4144f79bdd9dd04a287c");
    }

    #[test]
    fn deterministic_and_key_separated() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let key = EpochKey::random(&mut rng);
        assert_eq!(pid_derive("alice", &key).unwrap(), pid_derive("alice", &key).unwrap());
        let mut seen = HashSet::new();
        for _ in 0..100 {
            let k = EpochKey::random(&mut rng);
            assert!(seen.insert(pid_derive("alice", &k).unwrap()));
        }
    }

    #[test]
    fn thousand_identities_do_not_collide() {
        let key = EpochKey::random(&mut ChaCha20Rng::seed_from_u64(2));
        let pids: HashSet<_> = (0..1000)
            .map(|i| pid_derive(&format!("vehicle-{i:04}"), &key).unwrap())
            .collect();
        assert_eq!(pids.len(), 1000);
    }

    #[test]
    fn identity_bounds() {
        let key = EpochKey::new([7; 16]);
        assert_eq!(pid_derive("", &key), Err(PidError::EmptyIdentity));
        assert!(pid_derive(&"x".repeat(1024), &key).is_ok());
        assert_eq!(pid_derive(&"x".repeat(1025), &key), Err(PidError::IdentityTooLong));
    }

    #[test]
    fn hex_round_trip() {
        let pid = pid_derive("bob", &EpochKey::new([1; 16])).unwrap();
        let hex = pid.to_hex();
        assert_eq!(hex.len(), 32);
        assert_eq!(hex.parse::<PseudoIdentity>().unwrap(), pid);
        assert!("zz".parse::<PseudoIdentity>().is_err());
        assert!(hex.to_uppercase().parse::<PseudoIdentity>().is_err());
    }
}
