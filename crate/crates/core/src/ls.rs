//! Location server: holds `(PID, location, public key)` records, answers
//! range pre-queries and runs the responder side of the blinded comparison.
//!
//! The server never sees a real identity. It sees pseudo-identities,
//! plaintext locations (it owns the decryption key) and comparison
//! ciphertexts whose thresholds it cannot read.

use crate::asym::{AsymError, AsymKeypair, AsymPublicKey, HybridCiphertext};
use crate::distcmp::{ComparisonParams, DistCmpError, Responder};
use crate::geo::{distance, Location};
use crate::pid::PseudoIdentity;
use crate::wire::{
    BatchEntry, ComparisonBatchMsg, ErrorCode, ErrorMsg, LocationResultMsg, Message, RangePreQuery,
    RangePreResult, StoreRecord, SubsetDispatch, VerdictMsg,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;
use std::time::{Duration, Instant};

#[derive(Debug, thiserror::Error)]
pub enum LsError {
    #[error("decryption failed")]
    DecryptionFailure,
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("unknown or expired requester")]
    UnknownRequester,
    #[error("unknown or expired target")]
    UnknownTarget,
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error(transparent)]
    Comparison(#[from] DistCmpError),
    #[error(transparent)]
    Asym(#[from] AsymError),
}

impl LsError {
    fn code(&self) -> ErrorCode {
        match self {
            LsError::DecryptionFailure | LsError::Asym(_) => ErrorCode::DecryptionFailure,
            LsError::UnknownRequester => ErrorCode::UnknownRequester,
            LsError::UnknownTarget => ErrorCode::UnknownVehicle,
            LsError::MalformedRecord(_) | LsError::MalformedMessage(_) => ErrorCode::MalformedMessage,
            LsError::UnknownSession(_) => ErrorCode::UnexpectedMessage,
            LsError::Comparison(_) => ErrorCode::Internal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LsRecord {
    pub pid: PseudoIdentity,
    pub location: Location,
    pub public_key: AsymPublicKey,
    pub stored_at: u64,
    pub expires_at: u64,
}

impl LsRecord {
    pub fn visible_at(&self, now: u64) -> bool {
        now < self.expires_at
    }
}

/// State kept between a comparison batch and its verdicts. Locations are
/// captured when the dispatch arrives, so every pair in one session is
/// evaluated against the same store contents.
#[derive(Debug)]
struct Session {
    requester_key: AsymPublicKey,
    /// Target location per subset position; `None` for skipped entries.
    targets: Vec<Option<Location>>,
}

pub struct LocationServer {
    index: u32,
    keypair: AsymKeypair,
    params: ComparisonParams,
    store: BTreeMap<PseudoIdentity, LsRecord>,
    sessions: BTreeMap<u64, Session>,
    rng: ChaCha20Rng,
    protocol_time: Duration,
}

pub fn decrypt_location(keypair: &AsymKeypair, ct: &HybridCiphertext) -> Result<Location, LsError> {
    let bytes = keypair.decrypt(ct).map_err(|_| LsError::DecryptionFailure)?;
    Location::from_bytes(&bytes)
        .ok_or_else(|| LsError::MalformedRecord(format!("bad location encoding ({} bytes)", bytes.len())))
}

pub fn decrypt_public_key(keypair: &AsymKeypair, ct: &HybridCiphertext) -> Result<AsymPublicKey, LsError> {
    let bytes = keypair.decrypt(ct).map_err(|_| LsError::DecryptionFailure)?;
    AsymPublicKey::from_bytes(&bytes).map_err(|e| LsError::MalformedRecord(e.to_string()))
}

impl LocationServer {
    /// `keypair` is the key shared by every location server.
    pub fn new(index: u32, keypair: AsymKeypair, params: ComparisonParams, seed: u64) -> Self {
        Self {
            index,
            keypair,
            params,
            store: BTreeMap::new(),
            sessions: BTreeMap::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            protocol_time: Duration::ZERO,
        }
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn public_key(&self) -> &AsymPublicKey {
        self.keypair.public_key()
    }

    /// Dispatches one inbound message from the social network server and
    /// returns the replies to send back to it.
    pub fn handle(&mut self, msg: Message, now: u64) -> Vec<Message> {
        let (reference, result) = match msg {
            Message::StoreRecord(rec) => (0, self.store_record(&rec, now).map(|_| Message::Ack { reference: 0 })),
            Message::RangePreQuery(q) => (q.session, self.range_query(&q, now).map(Message::RangePreResult)),
            Message::SubsetDispatch(d) => (d.session, self.process_subset(&d, now).map(Message::ComparisonBatch)),
            Message::Verdict(v) => (v.session, self.apply_verdicts(&v).map(Message::LocationResult)),
            other => {
                return vec![Message::Error(ErrorMsg {
                    reference: 0,
                    code: ErrorCode::UnexpectedMessage,
                    detail: format!("location server does not accept {}", other.name()),
                })]
            }
        };
        match result {
            Ok(reply) => vec![reply],
            Err(e) => vec![Message::Error(ErrorMsg { reference, code: e.code(), detail: e.to_string() })],
        }
    }

    /// Decrypts and stores a record, replacing any record under the same
    /// PID. Visible while `now < stored_at + ttl`.
    pub fn store_record(&mut self, rec: &StoreRecord, now: u64) -> Result<(), LsError> {
        let location = decrypt_location(&self.keypair, &rec.enc_location)?;
        let public_key = decrypt_public_key(&self.keypair, &rec.enc_public_key)?;
        self.store.insert(
            rec.pid,
            LsRecord {
                pid: rec.pid,
                location,
                public_key,
                stored_at: now,
                expires_at: now.saturating_add(rec.ttl_secs),
            },
        );
        Ok(())
    }

    pub fn lookup(&self, pid: &PseudoIdentity, now: u64) -> Option<&LsRecord> {
        self.store.get(pid).filter(|r| r.visible_at(now))
    }

    pub fn purge_expired(&mut self, now: u64) -> usize {
        let before = self.store.len();
        self.store.retain(|_, r| r.visible_at(now));
        before - self.store.len()
    }

    pub fn record_count(&self) -> usize {
        self.store.len()
    }

    /// Every other visible PID strictly closer than the radius, in random
    /// order.
    pub fn range_query(&mut self, q: &RangePreQuery, now: u64) -> Result<RangePreResult, LsError> {
        let origin = self.lookup(&q.requester, now).ok_or(LsError::UnknownRequester)?.location;
        let mut pids: Vec<PseudoIdentity> = self
            .store
            .values()
            .filter(|r| r.visible_at(now) && r.pid != q.requester)
            .filter(|r| distance(origin, r.location) < q.radius)
            .map(|r| r.pid)
            .collect();
        pids.shuffle(&mut self.rng);
        Ok(RangePreResult { session: q.session, pids })
    }

    /// Runs the responder for each subset position whose PID resolves to a
    /// visible record (and, for radius queries, lies strictly inside the
    /// radius). Other positions yield a skip marker.
    pub fn process_subset(&mut self, d: &SubsetDispatch, now: u64) -> Result<ComparisonBatchMsg, LsError> {
        if d.thresholds.len() != d.subset.len() {
            return Err(LsError::MalformedMessage(format!(
                "{} thresholds for {} targets",
                d.thresholds.len(),
                d.subset.len()
            )));
        }
        let requester_key = self.lookup(&d.requester, now).ok_or(LsError::UnknownRequester)?.public_key.clone();
        let origin = decrypt_location(&self.keypair, &d.enc_location)?;

        let started = Instant::now();
        let responder = Responder::new(&d.comparison_key, &self.params, &mut self.rng)?;
        let mut entries = Vec::with_capacity(d.subset.len());
        let mut targets = Vec::with_capacity(d.subset.len());
        for (pid, threshold) in d.subset.iter().zip(&d.thresholds) {
            let target = self
                .store
                .get(pid)
                .filter(|r| r.visible_at(now))
                .map(|r| r.location)
                .filter(|loc| d.radius.is_none_or(|l| distance(origin, *loc) < l));
            match target {
                Some(loc) => {
                    let batch = responder.respond(threshold, distance(origin, loc), &mut self.rng)?;
                    entries.push(BatchEntry::Batch(batch));
                }
                None => entries.push(BatchEntry::Skip),
            }
            targets.push(target);
        }
        self.protocol_time += started.elapsed();

        self.sessions.insert(d.session, Session { requester_key, targets });
        Ok(ComparisonBatchMsg { session: d.session, ls_index: self.index, entries })
    }

    /// Encrypts the location of every position with a true verdict under
    /// the requester's key and closes the session.
    pub fn apply_verdicts(&mut self, v: &VerdictMsg) -> Result<LocationResultMsg, LsError> {
        let session = self.sessions.remove(&v.session).ok_or(LsError::UnknownSession(v.session))?;
        if v.verdicts.len() != session.targets.len() {
            return Err(LsError::MalformedMessage(format!(
                "{} verdicts for {} entries",
                v.verdicts.len(),
                session.targets.len()
            )));
        }
        let mut results = Vec::new();
        for (pos, (&verdict, target)) in v.verdicts.iter().zip(&session.targets).enumerate() {
            if let (true, Some(loc)) = (verdict, target) {
                let ct = session.requester_key.encrypt(&loc.to_bytes(), &mut self.rng)?;
                results.push((pos as u32, ct));
            }
        }
        Ok(LocationResultMsg { session: v.session, results })
    }

    /// Location of a stored vehicle encrypted under the given key.
    pub fn encrypt_result(
        &mut self,
        target: &PseudoIdentity,
        requester_key: &AsymPublicKey,
        now: u64,
    ) -> Result<HybridCiphertext, LsError> {
        let loc = self.lookup(target, now).ok_or(LsError::UnknownTarget)?.location;
        Ok(requester_key.encrypt(&loc.to_bytes(), &mut self.rng)?)
    }

    /// Cumulative time spent building responder tables and batches.
    pub fn protocol_time(&self) -> Duration {
        self.protocol_time
    }

    pub fn reset_protocol_time(&mut self) {
        self.protocol_time = Duration::ZERO;
    }

    /// Full store contents as JSON, for audits.
    pub fn state_dump(&self) -> serde_json::Value {
        serde_json::json!({
            "index": self.index,
            "records": self.store.values().map(|r| serde_json::json!({
                "pid": r.pid.to_hex(),
                "x": r.location.x,
                "y": r.location.y,
                "public_key_n": r.public_key.n().to_str_radix(16),
                "stored_at": r.stored_at,
                "expires_at": r.expires_at,
            })).collect::<Vec<_>>(),
            "open_sessions": self.sessions.keys().collect::<Vec<_>>(),
        })
    }
}
