//! Vehicle role: key lifecycle, registration and update messages, the three
//! query types and reply decryption.

use crate::asym::{asym_keygen, AsymError, AsymKeypair, AsymPublicKey, HybridCiphertext};
use crate::geo::Location;
use crate::wire::{
    signed_payload, Message, ParticularFriendsQuery, RadiusQuery, ReplyToVehicle, VehicleReport,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, thiserror::Error)]
pub enum VehicleError {
    #[error("radius must be at least 1")]
    RadiusOutOfRange,
    #[error("threshold {0} outside [1, i_max]")]
    ThresholdOutOfRange(u32),
    #[error("vehicle has not registered yet")]
    NotRegistered,
    #[error("vehicle is already registered")]
    AlreadyRegistered,
    #[error(transparent)]
    Crypto(#[from] AsymError),
}

#[derive(Debug, Clone)]
pub struct VehicleState {
    pub id: String,
    pub location: Location,
    pub friends: BTreeSet<String>,
    /// This vehicle's threshold for each friend, in meters.
    pub friend_thresholds: BTreeMap<String, u32>,
    pub stranger_threshold: u32,
}

impl VehicleState {
    pub fn validate(&self, i_max: u32) -> Result<(), VehicleError> {
        let in_range = |t: u32| (1..=i_max).contains(&t);
        if let Some(&t) = self.friend_thresholds.values().find(|&&t| !in_range(t)) {
            return Err(VehicleError::ThresholdOutOfRange(t));
        }
        if !in_range(self.stranger_threshold) {
            return Err(VehicleError::ThresholdOutOfRange(self.stranger_threshold));
        }
        Ok(())
    }
}

pub struct VehicleClient {
    pub state: VehicleState,
    keypair: AsymKeypair,
    ls_key: AsymPublicKey,
    key_bits: u64,
    registered: bool,
    next_request: u64,
    rng: ChaCha20Rng,
}

/// A decrypted reply item.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Sighting {
    pub label: String,
    pub location: Location,
}

impl VehicleClient {
    /// `ls_key` is the location servers' shared public key.
    pub fn new(state: VehicleState, ls_key: AsymPublicKey, key_bits: u64, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let keypair = asym_keygen(key_bits, &mut rng);
        Self { state, keypair, ls_key, key_bits, registered: false, next_request: 1, rng }
    }

    /// As [`VehicleClient::new`] with a supplied initial keypair.
    pub fn with_keypair(state: VehicleState, keypair: AsymKeypair, ls_key: AsymPublicKey, seed: u64) -> Self {
        let key_bits = keypair.public_key().n().bits();
        let rng = ChaCha20Rng::seed_from_u64(seed);
        Self { state, keypair, ls_key, key_bits, registered: false, next_request: 1, rng }
    }

    pub fn id(&self) -> &str {
        &self.state.id
    }

    pub fn public_key(&self) -> &AsymPublicKey {
        self.keypair.public_key()
    }

    pub fn keypair(&self) -> &AsymKeypair {
        &self.keypair
    }

    pub fn is_registered(&self) -> bool {
        self.registered
    }

    fn encrypted_location(&mut self) -> Result<HybridCiphertext, VehicleError> {
        Ok(self.ls_key.encrypt(&self.state.location.to_bytes(), &mut self.rng)?)
    }

    fn report(&mut self, signer: &AsymKeypair, now: u64) -> Result<VehicleReport, VehicleError> {
        let enc_location = self.encrypted_location()?;
        let enc_public_key = self.ls_key.encrypt(&self.keypair.public_key().to_bytes(), &mut self.rng)?;
        Ok(VehicleReport {
            id: self.state.id.clone(),
            enc_location,
            enc_public_key,
            public_key: self.keypair.public_key().clone(),
            friends: self.state.friends.iter().cloned().collect(),
            friend_thresholds: self.state.friend_thresholds.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            stranger_threshold: self.state.stranger_threshold,
            timestamp: now,
            signature: signer.sign(&signed_payload(&self.state.id, now))?,
        })
    }

    pub fn build_registration(&mut self, now: u64) -> Result<Message, VehicleError> {
        if self.registered {
            return Err(VehicleError::AlreadyRegistered);
        }
        let signer = self.keypair.clone();
        let msg = Message::Registration(self.report(&signer, now)?);
        self.registered = true;
        Ok(msg)
    }

    /// Rotates the keypair, then reports current state. The report is
    /// signed with the previous key, which the server has on file.
    pub fn build_update(&mut self, now: u64) -> Result<Message, VehicleError> {
        if !self.registered {
            return Err(VehicleError::NotRegistered);
        }
        let previous = std::mem::replace(&mut self.keypair, asym_keygen(self.key_bits, &mut self.rng));
        Ok(Message::Update(self.report(&previous, now)?))
    }

    fn request_id(&mut self) -> Result<u64, VehicleError> {
        if !self.registered {
            return Err(VehicleError::NotRegistered);
        }
        let id = self.next_request;
        self.next_request += 1;
        Ok(id)
    }

    pub fn query_particular_friends(&mut self, targets: &[String]) -> Result<Message, VehicleError> {
        let request_id = self.request_id()?;
        Ok(Message::QueryParticularFriends(ParticularFriendsQuery {
            request_id,
            id: self.state.id.clone(),
            enc_location: self.encrypted_location()?,
            targets: targets.to_vec(),
        }))
    }

    fn radius_query(&mut self, radius: u32) -> Result<RadiusQuery, VehicleError> {
        if radius == 0 {
            return Err(VehicleError::RadiusOutOfRange);
        }
        let request_id = self.request_id()?;
        Ok(RadiusQuery { request_id, id: self.state.id.clone(), enc_location: self.encrypted_location()?, radius })
    }

    pub fn query_friends_within(&mut self, radius: u32) -> Result<Message, VehicleError> {
        Ok(Message::QueryFriendsWithin(self.radius_query(radius)?))
    }

    pub fn query_strangers_within(&mut self, radius: u32) -> Result<Message, VehicleError> {
        Ok(Message::QueryStrangersWithin(self.radius_query(radius)?))
    }

    /// Decrypts every reply item under the current key. Items that fail to
    /// decrypt or do not hold a valid location are dropped.
    pub fn decrypt_response(&self, reply: &ReplyToVehicle) -> Vec<Sighting> {
        decrypt_items(&self.keypair, reply)
    }
}

pub fn decrypt_items(keypair: &AsymKeypair, reply: &ReplyToVehicle) -> Vec<Sighting> {
    reply
        .items
        .iter()
        .filter_map(|item| {
            let bytes = keypair.decrypt(&item.location).ok()?;
            Some(Sighting { label: item.label.clone(), location: Location::from_bytes(&bytes)? })
        })
        .collect()
}
