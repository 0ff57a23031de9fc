//! Social network server: identity and friendship database, pseudo-identity
//! rotation, query orchestration and the judging side of the blinded
//! comparison.
//!
//! The server holds no coordinate type. Locations pass through it only as
//! ciphertexts under the location servers' key or a vehicle's key.

use crate::asym::AsymPublicKey;
use crate::distcmp::{self, ComparisonParams, DistCmpError, ThresholdCiphertext};
use crate::paillier::PaillierPrivateKey;
use crate::pid::{pid_derive, EpochKey, PidError, PseudoIdentity};
use crate::transport::Endpoint;
use crate::wire::{
    signed_payload, BatchEntry, ComparisonBatchMsg, ErrorCode, ErrorMsg, LocationResultMsg, Message,
    ParticularFriendsQuery, QueryKind, RadiusQuery, RangePreQuery, RangePreResult, ReplyItem,
    ReplyToVehicle, StoreRecord, SubsetDispatch, VehicleReport, VerdictMsg,
};
use crate::asym::HybridCiphertext;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

pub const DEFAULT_CLOCK_SKEW_SECS: u64 = 60;

#[derive(Debug, thiserror::Error)]
pub enum SnsError {
    #[error("signature does not verify")]
    BadSignature,
    #[error("timestamp outside the freshness window")]
    StaleTimestamp,
    #[error("threshold {0} outside [1, i_max]")]
    ThresholdOutOfRange(u32),
    #[error("unknown vehicle {0:?}")]
    UnknownVehicle(String),
    #[error("vehicle {0:?} is already registered")]
    AlreadyRegistered(String),
    #[error("radius must be at least 1")]
    RadiusOutOfRange,
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Pid(#[from] PidError),
    #[error(transparent)]
    Comparison(#[from] DistCmpError),
}

impl SnsError {
    pub fn code(&self) -> ErrorCode {
        match self {
            SnsError::BadSignature => ErrorCode::BadSignature,
            SnsError::StaleTimestamp => ErrorCode::StaleTimestamp,
            SnsError::ThresholdOutOfRange(_) => ErrorCode::ThresholdOutOfRange,
            SnsError::UnknownVehicle(_) => ErrorCode::UnknownVehicle,
            SnsError::AlreadyRegistered(_) => ErrorCode::AlreadyRegistered,
            SnsError::RadiusOutOfRange => ErrorCode::RadiusOutOfRange,
            SnsError::MalformedMessage(_) | SnsError::Pid(_) => ErrorCode::MalformedMessage,
            SnsError::InvalidConfig(_) | SnsError::Comparison(_) => ErrorCode::Internal,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SnsConfig {
    /// Number of location servers, `Q`.
    pub ls_count: u32,
    pub params: ComparisonParams,
    /// Size of the per-query comparison key.
    pub comparison_key_bits: u64,
    /// Update cycle `t`, in seconds.
    pub update_cycle_secs: u64,
    /// Record lifetime `tl` at the location servers, in seconds.
    pub record_ttl_secs: u64,
    /// Dummy PIDs added to every subset.
    pub dummy_count: usize,
    pub clock_skew_secs: u64,
}

impl SnsConfig {
    pub fn validate(&self) -> Result<(), SnsError> {
        if self.ls_count == 0 {
            return Err(SnsError::InvalidConfig("at least one location server is required".into()));
        }
        let (t, tl) = (self.update_cycle_secs, self.record_ttl_secs);
        if t == 0 || tl <= t || tl > 2 * t {
            return Err(SnsError::InvalidConfig(format!(
                "record ttl {tl} must lie in (t, 2t] for update cycle t = {t}"
            )));
        }
        if self.comparison_key_bits < 64 {
            return Err(SnsError::InvalidConfig("comparison key below 64 bits".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SnsVehicleRecord {
    pub id: String,
    pub public_key: AsymPublicKey,
    pub friends: BTreeSet<String>,
    /// This vehicle's threshold for each friend.
    pub friend_thresholds: BTreeMap<String, u32>,
    pub stranger_threshold: u32,
    pub current_pid: PseudoIdentity,
    pub epoch: u64,
    pub enc_location: HybridCiphertext,
    pub enc_public_key: HybridCiphertext,
}

#[derive(Debug, Clone)]
pub struct EpochState {
    pub index: u64,
    key: EpochKey,
    pub started_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanEntry {
    pub pid: PseudoIdentity,
    /// Position in the input list, or `None` for a dummy.
    pub source: Option<usize>,
}

/// Work split across the location servers; `subsets[j]` goes to server `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub subsets: Vec<Vec<PlanEntry>>,
    pub dummy_count: usize,
}

/// Assigns every PID to a uniformly random server, adds `dummy_count` fresh
/// random PIDs to each subset and shuffles each subset.
pub fn partition_pids<R: Rng + ?Sized>(
    pids: &[PseudoIdentity],
    q: u32,
    dummy_count: usize,
    rng: &mut R,
) -> PartitionPlan {
    assert!(q >= 1, "partition needs at least one subset");
    let real: BTreeSet<&PseudoIdentity> = pids.iter().collect();
    let mut subsets: Vec<Vec<PlanEntry>> = vec![Vec::new(); q as usize];
    for (i, pid) in pids.iter().enumerate() {
        let j = rng.gen_range(0..q as usize);
        subsets[j].push(PlanEntry { pid: *pid, source: Some(i) });
    }
    for subset in subsets.iter_mut() {
        for _ in 0..dummy_count {
            let pid = loop {
                let p = PseudoIdentity::random(rng);
                if !real.contains(&p) {
                    break p;
                }
            };
            subset.push(PlanEntry { pid, source: None });
        }
        subset.shuffle(rng);
    }
    PartitionPlan { subsets, dummy_count }
}

/// One judged pair, kept for oracle checks in tests and the harness.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct VerdictRecord {
    pub session: u64,
    pub kind: QueryKind,
    pub requester: String,
    pub target: String,
    pub threshold: u32,
    pub verdict: bool,
}

#[derive(Debug, Clone)]
struct Target {
    id: String,
    label: String,
    pid: PseudoIdentity,
    threshold: u32,
}

#[derive(Debug)]
struct QuerySession {
    request_id: u64,
    requester: String,
    requester_pid: PseudoIdentity,
    kind: QueryKind,
    radius: Option<u32>,
    enc_location: HybridCiphertext,
    comparison_key: Option<PaillierPrivateKey>,
    /// Per server, one slot per dispatched position; `None` marks a dummy.
    slots: BTreeMap<u32, Vec<Option<Target>>>,
    awaiting: BTreeSet<u32>,
    items: Vec<ReplyItem>,
}

pub struct SocialNetworkServer {
    config: SnsConfig,
    records: BTreeMap<String, SnsVehicleRecord>,
    epoch: EpochState,
    /// Current PID of every registered vehicle.
    pid_index: BTreeMap<PseudoIdentity, String>,
    /// Every PID handed out, grouped by epoch.
    epoch_pids: BTreeMap<u64, BTreeSet<PseudoIdentity>>,
    sessions: BTreeMap<u64, QuerySession>,
    next_session: u64,
    verdict_log: Vec<VerdictRecord>,
    rng: ChaCha20Rng,
    protocol_time: Duration,
}

type Outbox = Vec<(Endpoint, Message)>;

impl SocialNetworkServer {
    pub fn new(config: SnsConfig, seed: u64, now: u64) -> Result<Self, SnsError> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let key = EpochKey::random(&mut rng);
        Ok(Self {
            config,
            records: BTreeMap::new(),
            epoch: EpochState { index: 0, key, started_at: now },
            pid_index: BTreeMap::new(),
            epoch_pids: BTreeMap::new(),
            sessions: BTreeMap::new(),
            next_session: 1,
            verdict_log: Vec::new(),
            rng,
            protocol_time: Duration::ZERO,
        })
    }

    pub fn config(&self) -> &SnsConfig {
        &self.config
    }

    pub fn epoch(&self) -> &EpochState {
        &self.epoch
    }

    pub fn record(&self, id: &str) -> Option<&SnsVehicleRecord> {
        self.records.get(id)
    }

    pub fn records(&self) -> impl Iterator<Item = &SnsVehicleRecord> {
        self.records.values()
    }

    pub fn epoch_pids(&self) -> &BTreeMap<u64, BTreeSet<PseudoIdentity>> {
        &self.epoch_pids
    }

    pub fn verdict_log(&self) -> &[VerdictRecord] {
        &self.verdict_log
    }

    pub fn open_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Cumulative time spent on comparison key generation, threshold
    /// encryption and judging.
    pub fn protocol_time(&self) -> Duration {
        self.protocol_time
    }

    pub fn reset_protocol_time(&mut self) {
        self.protocol_time = Duration::ZERO;
    }

    /// Resamples the PID key. Existing records keep their PID until their
    /// next update.
    pub fn epoch_advance(&mut self, now: u64) -> u64 {
        self.epoch = EpochState {
            index: self.epoch.index + 1,
            key: EpochKey::random(&mut self.rng),
            started_at: now,
        };
        self.epoch.index
    }

    pub fn handle(&mut self, from: &Endpoint, msg: Message, now: u64) -> Outbox {
        match from {
            Endpoint::Vehicle(id) => self.handle_vehicle(id, msg, now),
            Endpoint::Ls(j) => self.handle_ls(*j, msg),
            Endpoint::Sns => Vec::new(),
        }
    }

    fn handle_vehicle(&mut self, sender: &str, msg: Message, now: u64) -> Outbox {
        let to = Endpoint::Vehicle(sender.to_string());
        let (reference, result) = match msg {
            Message::Registration(r) => (r.timestamp, self.check_sender(sender, &r.id).and_then(|_| self.register(&r, now))),
            Message::Update(r) => (r.timestamp, self.check_sender(sender, &r.id).and_then(|_| self.update(&r, now))),
            Message::QueryParticularFriends(q) => {
                (q.request_id, self.check_sender(sender, &q.id).and_then(|_| self.start_particular_friends(&q)))
            }
            Message::QueryFriendsWithin(q) => {
                (q.request_id, self.check_sender(sender, &q.id).and_then(|_| self.start_friends_within(&q)))
            }
            Message::QueryStrangersWithin(q) => {
                (q.request_id, self.check_sender(sender, &q.id).and_then(|_| self.start_strangers_within(&q)))
            }
            other => (0, Err(SnsError::MalformedMessage(format!("vehicles cannot send {}", other.name())))),
        };
        match result {
            Ok(out) => out,
            Err(e) => vec![(to, Message::Error(ErrorMsg { reference, code: e.code(), detail: e.to_string() }))],
        }
    }

    fn check_sender(&self, sender: &str, claimed: &str) -> Result<(), SnsError> {
        if sender == claimed {
            Ok(())
        } else {
            Err(SnsError::MalformedMessage("identity does not match the sending link".into()))
        }
    }

    fn validate_report(&self, r: &VehicleReport, key: &AsymPublicKey, now: u64) -> Result<(), SnsError> {
        if r.timestamp.abs_diff(now) > self.config.clock_skew_secs {
            return Err(SnsError::StaleTimestamp);
        }
        if !key.verify(&signed_payload(&r.id, r.timestamp), &r.signature) {
            return Err(SnsError::BadSignature);
        }
        let i_max = self.config.params.i_max();
        let friends: BTreeSet<&String> = r.friends.iter().collect();
        for (f, t) in &r.friend_thresholds {
            if !friends.contains(f) {
                return Err(SnsError::MalformedMessage(format!("threshold for non-friend {f:?}")));
            }
            if *t == 0 || *t > i_max {
                return Err(SnsError::ThresholdOutOfRange(*t));
            }
        }
        if r.stranger_threshold == 0 || r.stranger_threshold > i_max {
            return Err(SnsError::ThresholdOutOfRange(r.stranger_threshold));
        }
        if friends.contains(&r.id) {
            return Err(SnsError::MalformedMessage("a vehicle cannot befriend itself".into()));
        }
        Ok(())
    }

    /// Checks and stores a first registration, then fans the record out to
    /// every location server.
    pub fn register(&mut self, r: &VehicleReport, now: u64) -> Result<Outbox, SnsError> {
        if self.records.contains_key(&r.id) {
            return Err(SnsError::AlreadyRegistered(r.id.clone()));
        }
        self.validate_report(r, &r.public_key, now)?;
        self.accept_report(r)
    }

    /// Replaces an existing record. The signature is checked against the
    /// key on file; the report's key becomes the new key on file.
    pub fn update(&mut self, r: &VehicleReport, now: u64) -> Result<Outbox, SnsError> {
        let on_file = self
            .records
            .get(&r.id)
            .ok_or_else(|| SnsError::UnknownVehicle(r.id.clone()))?
            .public_key
            .clone();
        self.validate_report(r, &on_file, now)?;
        self.accept_report(r)
    }

    fn accept_report(&mut self, r: &VehicleReport) -> Result<Outbox, SnsError> {
        let pid = pid_derive(&r.id, &self.epoch.key)?;
        if let Some(old) = self.records.get(&r.id) {
            self.pid_index.remove(&old.current_pid);
        }
        self.pid_index.insert(pid, r.id.clone());
        self.epoch_pids.entry(self.epoch.index).or_default().insert(pid);
        self.records.insert(
            r.id.clone(),
            SnsVehicleRecord {
                id: r.id.clone(),
                public_key: r.public_key.clone(),
                friends: r.friends.iter().cloned().collect(),
                friend_thresholds: r.friend_thresholds.iter().cloned().collect(),
                stranger_threshold: r.stranger_threshold,
                current_pid: pid,
                epoch: self.epoch.index,
                enc_location: r.enc_location.clone(),
                enc_public_key: r.enc_public_key.clone(),
            },
        );
        let mut out: Outbox = (0..self.config.ls_count)
            .map(|j| {
                (
                    Endpoint::Ls(j),
                    Message::StoreRecord(StoreRecord {
                        pid,
                        enc_location: r.enc_location.clone(),
                        enc_public_key: r.enc_public_key.clone(),
                        ttl_secs: self.config.record_ttl_secs,
                    }),
                )
            })
            .collect();
        out.push((Endpoint::Vehicle(r.id.clone()), Message::Ack { reference: r.timestamp }));
        Ok(out)
    }

    fn requester(&self, id: &str) -> Result<&SnsVehicleRecord, SnsError> {
        self.records.get(id).ok_or_else(|| SnsError::UnknownVehicle(id.to_string()))
    }

    /// `target` may see nothing unless both list each other and `target`
    /// has a threshold for `requester`. Returns that threshold.
    fn friend_threshold(&self, requester: &SnsVehicleRecord, target: &str) -> Option<(u32, PseudoIdentity)> {
        if !requester.friends.contains(target) {
            return None;
        }
        let t = self.records.get(target)?;
        let threshold = *t.friend_thresholds.get(&requester.id)?;
        Some((threshold, t.current_pid))
    }

    fn new_session(&mut self, request_id: u64, requester: &SnsVehicleRecord, kind: QueryKind, radius: Option<u32>, enc_location: &HybridCiphertext) -> u64 {
        let id = self.next_session;
        self.next_session += 1;
        self.sessions.insert(
            id,
            QuerySession {
                request_id,
                requester: requester.id.clone(),
                requester_pid: requester.current_pid,
                kind,
                radius,
                enc_location: enc_location.clone(),
                comparison_key: None,
                slots: BTreeMap::new(),
                awaiting: BTreeSet::new(),
                items: Vec::new(),
            },
        );
        id
    }

    pub fn start_particular_friends(&mut self, q: &ParticularFriendsQuery) -> Result<Outbox, SnsError> {
        let requester = self.requester(&q.id)?.clone();
        let wanted: BTreeSet<&String> = q.targets.iter().collect();
        let targets = wanted
            .into_iter()
            .filter_map(|f| {
                let (threshold, pid) = self.friend_threshold(&requester, f)?;
                Some(Target { id: f.clone(), label: f.clone(), pid, threshold })
            })
            .collect();
        let session = self.new_session(q.request_id, &requester, QueryKind::ParticularFriends, None, &q.enc_location);
        self.dispatch(session, targets)
    }

    pub fn start_friends_within(&mut self, q: &RadiusQuery) -> Result<Outbox, SnsError> {
        if q.radius == 0 {
            return Err(SnsError::RadiusOutOfRange);
        }
        let requester = self.requester(&q.id)?.clone();
        let targets = requester
            .friends
            .iter()
            .filter_map(|f| {
                let (threshold, pid) = self.friend_threshold(&requester, f)?;
                Some(Target { id: f.clone(), label: f.clone(), pid, threshold })
            })
            .collect();
        let session = self.new_session(q.request_id, &requester, QueryKind::FriendsWithin, Some(q.radius), &q.enc_location);
        self.dispatch(session, targets)
    }

    /// First stage of a strangers query: the range pre-query to one random
    /// location server.
    pub fn start_strangers_within(&mut self, q: &RadiusQuery) -> Result<Outbox, SnsError> {
        if q.radius == 0 {
            return Err(SnsError::RadiusOutOfRange);
        }
        let requester = self.requester(&q.id)?.clone();
        let session = self.new_session(q.request_id, &requester, QueryKind::StrangersWithin, Some(q.radius), &q.enc_location);
        let j = self.rng.gen_range(0..self.config.ls_count);
        self.sessions.get_mut(&session).expect("just created").awaiting.insert(j);
        Ok(vec![(
            Endpoint::Ls(j),
            Message::RangePreQuery(RangePreQuery { session, requester: requester.current_pid, radius: q.radius }),
        )])
    }

    fn continue_strangers(&mut self, r: RangePreResult) -> Result<Outbox, SnsError> {
        let s = self
            .sessions
            .get_mut(&r.session)
            .ok_or_else(|| SnsError::MalformedMessage(format!("unknown session {}", r.session)))?;
        s.awaiting.clear();
        let requester_id = s.requester.clone();
        let requester = self.requester(&requester_id)?.clone();
        let mut targets = Vec::new();
        for pid in r.pids {
            // Stale PIDs from earlier epochs no longer map to a vehicle.
            let Some(id) = self.pid_index.get(&pid) else { continue };
            if *id == requester.id || requester.friends.contains(id) {
                continue;
            }
            let rec = &self.records[id];
            let mut token = [0u8; 8];
            self.rng.fill(&mut token);
            targets.push(Target {
                id: id.clone(),
                label: format!("s-{}", hex::encode(token)),
                pid,
                threshold: rec.stranger_threshold,
            });
        }
        self.dispatch(r.session, targets)
    }

    fn dispatch(&mut self, session: u64, targets: Vec<Target>) -> Result<Outbox, SnsError> {
        let params = self.config.params.clone();
        let started = Instant::now();
        let (pk_m, sk_m) = distcmp::comparison_keygen(self.config.comparison_key_bits, &mut self.rng);
        self.protocol_time += started.elapsed();

        let pids: Vec<PseudoIdentity> = targets.iter().map(|t| t.pid).collect();
        let plan = partition_pids(&pids, self.config.ls_count, self.config.dummy_count, &mut self.rng);
        let s = self.sessions.get_mut(&session).expect("session exists");
        let mut out = Vec::new();
        for (j, subset) in plan.subsets.iter().enumerate() {
            if subset.is_empty() {
                continue;
            }
            let started = Instant::now();
            let mut thresholds: Vec<ThresholdCiphertext> = Vec::with_capacity(subset.len());
            let mut slots = Vec::with_capacity(subset.len());
            for entry in subset {
                let (threshold, slot) = match entry.source {
                    Some(i) => (targets[i].threshold, Some(targets[i].clone())),
                    None => (self.rng.gen_range(1..=params.i_max()), None),
                };
                thresholds.push(distcmp::make_threshold_ct(&pk_m, threshold, &params, &mut self.rng)?);
                slots.push(slot);
            }
            self.protocol_time += started.elapsed();
            let j = j as u32;
            s.slots.insert(j, slots);
            s.awaiting.insert(j);
            out.push((
                Endpoint::Ls(j),
                Message::SubsetDispatch(SubsetDispatch {
                    session,
                    ls_index: j,
                    requester: s.requester_pid,
                    enc_location: s.enc_location.clone(),
                    kind: s.kind,
                    subset: subset.iter().map(|e| e.pid).collect(),
                    thresholds,
                    comparison_key: pk_m.clone(),
                    radius: match s.kind {
                        QueryKind::FriendsWithin => s.radius,
                        _ => None,
                    },
                }),
            ));
        }
        s.comparison_key = Some(sk_m);
        if out.is_empty() {
            return Ok(self.finish(session).into_iter().collect());
        }
        Ok(out)
    }

    fn handle_ls(&mut self, j: u32, msg: Message) -> Outbox {
        let result = match msg {
            Message::Ack { .. } => Ok(Vec::new()),
            Message::RangePreResult(r) => self.continue_strangers(r),
            Message::ComparisonBatch(b) => self.judge_batch(j, b),
            Message::LocationResult(r) => Ok(self.collect_results(j, r)),
            Message::Error(e) => Ok(self.ls_failed(j, e.reference)),
            other => Err(SnsError::MalformedMessage(format!("unexpected {} from ls:{j}", other.name()))),
        };
        // Protocol errors from a server cannot be answered usefully; drop
        // the message.
        result.unwrap_or_default()
    }

    fn judge_batch(&mut self, j: u32, b: ComparisonBatchMsg) -> Result<Outbox, SnsError> {
        let s = self
            .sessions
            .get_mut(&b.session)
            .ok_or_else(|| SnsError::MalformedMessage(format!("unknown session {}", b.session)))?;
        let slots = s.slots.get(&j).ok_or_else(|| SnsError::MalformedMessage(format!("no subset for ls:{j}")))?;
        if slots.len() != b.entries.len() {
            return Err(SnsError::MalformedMessage("batch count does not match subset".into()));
        }
        let sk = s.comparison_key.as_ref().expect("set at dispatch");
        let mut verdicts = Vec::with_capacity(slots.len());
        for (slot, entry) in slots.iter().zip(&b.entries) {
            let verdict = match (slot, entry) {
                (Some(target), BatchEntry::Batch(batch)) => {
                    let started = Instant::now();
                    let v = distcmp::judge(sk, batch)?;
                    self.protocol_time += started.elapsed();
                    self.verdict_log.push(VerdictRecord {
                        session: b.session,
                        kind: s.kind,
                        requester: s.requester.clone(),
                        target: target.id.clone(),
                        threshold: target.threshold,
                        verdict: v,
                    });
                    v
                }
                _ => false,
            };
            verdicts.push(verdict);
        }
        Ok(vec![(Endpoint::Ls(j), Message::Verdict(VerdictMsg { session: b.session, verdicts }))])
    }

    fn collect_results(&mut self, j: u32, r: LocationResultMsg) -> Outbox {
        let Some(s) = self.sessions.get_mut(&r.session) else { return Vec::new() };
        if let Some(slots) = s.slots.get(&j) {
            for (pos, ct) in r.results {
                if let Some(Some(target)) = slots.get(pos as usize) {
                    s.items.push(ReplyItem { label: target.label.clone(), location: ct });
                }
            }
        }
        s.awaiting.remove(&j);
        if s.awaiting.is_empty() {
            self.finish(r.session).into_iter().collect()
        } else {
            Vec::new()
        }
    }

    /// A server rejected part of a session (for example an expired
    /// requester record); its share contributes nothing.
    fn ls_failed(&mut self, j: u32, session: u64) -> Outbox {
        let Some(s) = self.sessions.get_mut(&session) else { return Vec::new() };
        s.awaiting.remove(&j);
        if s.awaiting.is_empty() {
            self.finish(session).into_iter().collect()
        } else {
            Vec::new()
        }
    }

    fn finish(&mut self, session: u64) -> Option<(Endpoint, Message)> {
        let mut s = self.sessions.remove(&session)?;
        s.items.sort_by(|a, b| a.label.cmp(&b.label));
        Some((
            Endpoint::Vehicle(s.requester),
            Message::Reply(ReplyToVehicle { request_id: s.request_id, items: s.items }),
        ))
    }

    /// Records as JSON, for audits. Contains identities and ciphertexts
    /// only.
    pub fn state_dump(&self) -> serde_json::Value {
        serde_json::json!({
            "epoch": self.epoch.index,
            "records": self.records.values().map(|r| serde_json::json!({
                "id": r.id,
                "friends": r.friends,
                "friend_thresholds": r.friend_thresholds,
                "stranger_threshold": r.stranger_threshold,
                "pid": r.current_pid.to_hex(),
                "epoch": r.epoch,
                "enc_location": hex::encode(r.enc_location.to_bytes()),
            })).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asym::{asym_keygen, AsymKeypair};
    use crate::asym::Signature;

    fn config() -> SnsConfig {
        SnsConfig {
            ls_count: 3,
            params: ComparisonParams::with_i_max(100).unwrap(),
            comparison_key_bits: 128,
            update_cycle_secs: 600,
            record_ttl_secs: 660,
            dummy_count: 1,
            clock_skew_secs: DEFAULT_CLOCK_SKEW_SECS,
        }
    }

    fn report(id: &str, kp: &AsymKeypair, signer: &AsymKeypair, ts: u64, friends: &[(&str, u32)], rng: &mut ChaCha20Rng) -> VehicleReport {
        let dummy_ct = kp.public_key().encrypt(b"x", rng).unwrap();
        VehicleReport {
            id: id.into(),
            enc_location: dummy_ct.clone(),
            enc_public_key: dummy_ct,
            public_key: kp.public_key().clone(),
            friends: friends.iter().map(|(f, _)| f.to_string()).collect(),
            friend_thresholds: friends.iter().map(|(f, t)| (f.to_string(), *t)).collect(),
            stranger_threshold: 80,
            timestamp: ts,
            signature: signer.sign(&signed_payload(id, ts)).unwrap(),
        }
    }

    #[test]
    fn registration_fans_out_to_every_server() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let kp = asym_keygen(512, &mut rng);
        let mut sns = SocialNetworkServer::new(config(), 1, 1000).unwrap();
        let out = sns.register(&report("alice", &kp, &kp, 1000, &[("bob", 50)], &mut rng), 1000).unwrap();
        let stores = out.iter().filter(|(_, m)| matches!(m, Message::StoreRecord(_))).count();
        assert_eq!(stores, 3);
        let rec = sns.record("alice").unwrap();
        assert_eq!(rec.friend_thresholds["bob"], 50);
        assert_eq!(rec.current_pid, pid_derive("alice", &sns.epoch.key).unwrap());
    }

    #[test]
    fn stale_and_forged_registrations_are_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let kp = asym_keygen(512, &mut rng);
        let other = asym_keygen(512, &mut rng);
        let mut sns = SocialNetworkServer::new(config(), 1, 1000).unwrap();
        let old = report("alice", &kp, &kp, 1000 - 600, &[], &mut rng);
        assert!(matches!(sns.register(&old, 1000), Err(SnsError::StaleTimestamp)));
        let forged = report("alice", &kp, &other, 1000, &[], &mut rng);
        assert!(matches!(sns.register(&forged, 1000), Err(SnsError::BadSignature)));
        let mut tampered = report("alice", &kp, &kp, 1000, &[], &mut rng);
        tampered.signature = Signature::from_value(tampered.signature.value() + 1u32);
        assert!(matches!(sns.register(&tampered, 1000), Err(SnsError::BadSignature)));
        let bad_threshold = report("alice", &kp, &kp, 1000, &[("bob", 101)], &mut rng);
        assert!(matches!(sns.register(&bad_threshold, 1000), Err(SnsError::ThresholdOutOfRange(101))));
        assert!(sns.record("alice").is_none());
    }

    #[test]
    fn update_requires_registration_and_old_key() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let k1 = asym_keygen(512, &mut rng);
        let k2 = asym_keygen(512, &mut rng);
        let mut sns = SocialNetworkServer::new(config(), 1, 1000).unwrap();
        let upd = report("alice", &k2, &k1, 1000, &[], &mut rng);
        assert!(matches!(sns.update(&upd, 1000), Err(SnsError::UnknownVehicle(_))));
        sns.register(&report("alice", &k1, &k1, 1000, &[("bob", 50)], &mut rng), 1000).unwrap();
        let pid0 = sns.record("alice").unwrap().current_pid;

        // Signed by the new key only: rejected.
        let self_signed = report("alice", &k2, &k2, 1010, &[], &mut rng);
        assert!(matches!(sns.update(&self_signed, 1010), Err(SnsError::BadSignature)));

        sns.update(&report("alice", &k2, &k1, 1010, &[("bob", 70)], &mut rng), 1010).unwrap();
        let rec = sns.record("alice").unwrap();
        assert_eq!(rec.current_pid, pid0, "same epoch keeps the PID");
        assert_eq!(rec.friend_thresholds["bob"], 70);
        assert_eq!(&rec.public_key, k2.public_key());

        sns.epoch_advance(1020);
        let k3 = asym_keygen(512, &mut rng);
        sns.update(&report("alice", &k3, &k2, 1020, &[], &mut rng), 1020).unwrap();
        assert_ne!(sns.record("alice").unwrap().current_pid, pid0);
    }

    #[test]
    fn double_registration_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let kp = asym_keygen(512, &mut rng);
        let mut sns = SocialNetworkServer::new(config(), 1, 1000).unwrap();
        sns.register(&report("alice", &kp, &kp, 1000, &[], &mut rng), 1000).unwrap();
        let again = report("alice", &kp, &kp, 1001, &[], &mut rng);
        assert!(matches!(sns.register(&again, 1001), Err(SnsError::AlreadyRegistered(_))));
    }

    #[test]
    fn epoch_pids_are_distinct() {
        let mut sns = SocialNetworkServer::new(config(), 9, 0).unwrap();
        let mut seen = BTreeSet::new();
        for e in 0..3 {
            if e > 0 {
                sns.epoch_advance(e);
            }
            assert!(seen.insert(pid_derive("alice", &sns.epoch.key).unwrap()));
        }
        let mut fleet_seen = BTreeSet::new();
        for e in 0..3 {
            if e > 0 {
                sns.epoch_advance(e);
            }
            for i in 0..100 {
                assert!(fleet_seen.insert(pid_derive(&format!("v{i}"), &sns.epoch.key).unwrap()));
            }
        }
    }

    #[test]
    fn partition_covers_input_exactly_once() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let pids: Vec<PseudoIdentity> = (0..10).map(|_| PseudoIdentity::random(&mut rng)).collect();
        for (q, dummies) in [(3u32, 0usize), (3, 2), (1, 0), (5, 1)] {
            let plan = partition_pids(&pids, q, dummies, &mut rng);
            assert_eq!(plan.subsets.len(), q as usize);
            let mut sources: Vec<usize> = plan.subsets.iter().flatten().filter_map(|e| e.source).collect();
            sources.sort();
            assert_eq!(sources, (0..10).collect::<Vec<_>>());
            for subset in &plan.subsets {
                assert_eq!(subset.iter().filter(|e| e.source.is_none()).count(), dummies);
                for e in subset {
                    if let Some(i) = e.source {
                        assert_eq!(e.pid, pids[i]);
                    } else {
                        assert!(!pids.contains(&e.pid));
                    }
                }
            }
        }
        let single = partition_pids(&pids, 1, 0, &mut rng);
        let mut got: Vec<_> = single.subsets[0].iter().map(|e| e.pid).collect();
        let mut want = pids.clone();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn empty_input_yields_only_dummies() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let plan = partition_pids(&[], 3, 2, &mut rng);
        assert!(plan.subsets.iter().all(|s| s.len() == 2 && s.iter().all(|e| e.source.is_none())));
    }

    #[test]
    fn ttl_must_be_slightly_above_cycle() {
        let mut c = config();
        c.record_ttl_secs = 600;
        assert!(c.validate().is_err());
        c.record_ttl_secs = 1201;
        assert!(c.validate().is_err());
        c.record_ttl_secs = 1200;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn zero_radius_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let kp = asym_keygen(512, &mut rng);
        let mut sns = SocialNetworkServer::new(config(), 1, 1000).unwrap();
        sns.register(&report("alice", &kp, &kp, 1000, &[], &mut rng), 1000).unwrap();
        let q = RadiusQuery { request_id: 1, id: "alice".into(), enc_location: kp.public_key().encrypt(b"x", &mut rng).unwrap(), radius: 0 };
        assert!(matches!(sns.start_friends_within(&q), Err(SnsError::RadiusOutOfRange)));
        assert!(matches!(sns.start_strangers_within(&q), Err(SnsError::RadiusOutOfRange)));
    }
}
