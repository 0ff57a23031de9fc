//! Message schemas for every protocol flow and their framed binary encoding.
//!
//! A frame is `"PPLS" | 0x01 | tag | u32 body length | body`. Body fields
//! are written in declaration order: fixed-width integers big-endian,
//! variable-length fields behind a 32-bit big-endian length, lists behind a
//! 32-bit count, big integers as big-endian magnitudes, and coordinate pairs
//! as two 32-bit unsigned values.

mod codec;

pub use codec::{decode, encode, WireError, FRAME_HEADER_LEN, MAGIC, VERSION};

use crate::asym::{AsymPublicKey, HybridCiphertext, Signature};
use crate::distcmp::{ComparisonBatch, ThresholdCiphertext};
use crate::paillier::PaillierPublicKey;
use crate::pid::PseudoIdentity;

/// Request type carried by vehicle queries and subset dispatches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum QueryKind {
    /// `pf`: particular friends.
    ParticularFriends,
    /// `f`: friends within a radius.
    FriendsWithin,
    /// `s`: strangers within a radius.
    StrangersWithin,
}

impl QueryKind {
    pub fn tag(self) -> u8 {
        match self {
            QueryKind::ParticularFriends => 0x01,
            QueryKind::FriendsWithin => 0x02,
            QueryKind::StrangersWithin => 0x03,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0x01 => Some(QueryKind::ParticularFriends),
            0x02 => Some(QueryKind::FriendsWithin),
            0x03 => Some(QueryKind::StrangersWithin),
            _ => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            QueryKind::ParticularFriends => "pf",
            QueryKind::FriendsWithin => "f",
            QueryKind::StrangersWithin => "s",
        }
    }
}

/// Registration and update body: identity, encrypted location and key,
/// social graph, thresholds, timestamp and signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VehicleReport {
    pub id: String,
    /// Location under the location servers' key.
    pub enc_location: HybridCiphertext,
    /// The vehicle's public key under the location servers' key.
    pub enc_public_key: HybridCiphertext,
    /// The vehicle's public key in the clear, for signature checks at the
    /// social network server.
    pub public_key: AsymPublicKey,
    pub friends: Vec<String>,
    /// The vehicle's threshold for each friend, in meters.
    pub friend_thresholds: Vec<(String, u32)>,
    pub stranger_threshold: u32,
    pub timestamp: u64,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreRecord {
    pub pid: PseudoIdentity,
    pub enc_location: HybridCiphertext,
    pub enc_public_key: HybridCiphertext,
    pub ttl_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticularFriendsQuery {
    pub request_id: u64,
    pub id: String,
    pub enc_location: HybridCiphertext,
    pub targets: Vec<String>,
}

/// Body shared by the friends-within and strangers-within queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RadiusQuery {
    pub request_id: u64,
    pub id: String,
    pub enc_location: HybridCiphertext,
    pub radius: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetDispatch {
    pub session: u64,
    pub ls_index: u32,
    pub requester: PseudoIdentity,
    pub enc_location: HybridCiphertext,
    pub kind: QueryKind,
    pub subset: Vec<PseudoIdentity>,
    pub thresholds: Vec<ThresholdCiphertext>,
    pub comparison_key: PaillierPublicKey,
    pub radius: Option<u32>,
}

/// `(PID, all, l)`: every stored vehicle within `radius` of the requester.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangePreQuery {
    pub session: u64,
    pub requester: PseudoIdentity,
    pub radius: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangePreResult {
    pub session: u64,
    pub pids: Vec<PseudoIdentity>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BatchEntry {
    /// Unresolvable PID (unknown, expired or dummy) or filtered by radius.
    Skip,
    Batch(ComparisonBatch),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonBatchMsg {
    pub session: u64,
    pub ls_index: u32,
    pub entries: Vec<BatchEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictMsg {
    pub session: u64,
    pub verdicts: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationResultMsg {
    pub session: u64,
    /// `(subset position, location under the requester's key)`.
    pub results: Vec<(u32, HybridCiphertext)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplyItem {
    pub label: String,
    pub location: HybridCiphertext,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplyToVehicle {
    pub request_id: u64,
    pub items: Vec<ReplyItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum ErrorCode {
    BadSignature,
    StaleTimestamp,
    ThresholdOutOfRange,
    UnknownVehicle,
    RadiusOutOfRange,
    UnknownRequester,
    DecryptionFailure,
    MalformedMessage,
    AlreadyRegistered,
    UnexpectedMessage,
    Internal,
}

impl ErrorCode {
    const ALL: [ErrorCode; 11] = [
        ErrorCode::BadSignature,
        ErrorCode::StaleTimestamp,
        ErrorCode::ThresholdOutOfRange,
        ErrorCode::UnknownVehicle,
        ErrorCode::RadiusOutOfRange,
        ErrorCode::UnknownRequester,
        ErrorCode::DecryptionFailure,
        ErrorCode::MalformedMessage,
        ErrorCode::AlreadyRegistered,
        ErrorCode::UnexpectedMessage,
        ErrorCode::Internal,
    ];

    pub fn to_byte(self) -> u8 {
        Self::ALL.iter().position(|&c| c == self).expect("listed") as u8 + 1
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(usize::from(b).checked_sub(1)?).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorMsg {
    /// Session, request id or timestamp of the message being rejected.
    pub reference: u64,
    pub code: ErrorCode,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Registration(VehicleReport),
    Update(VehicleReport),
    StoreRecord(StoreRecord),
    QueryParticularFriends(ParticularFriendsQuery),
    QueryFriendsWithin(RadiusQuery),
    QueryStrangersWithin(RadiusQuery),
    SubsetDispatch(SubsetDispatch),
    RangePreQuery(RangePreQuery),
    RangePreResult(RangePreResult),
    ComparisonBatch(ComparisonBatchMsg),
    Verdict(VerdictMsg),
    LocationResult(LocationResultMsg),
    Reply(ReplyToVehicle),
    Ack { reference: u64 },
    Error(ErrorMsg),
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Registration(_) => 0x01,
            Message::Update(_) => 0x02,
            Message::StoreRecord(_) => 0x03,
            Message::QueryParticularFriends(_) => 0x04,
            Message::QueryFriendsWithin(_) => 0x05,
            Message::QueryStrangersWithin(_) => 0x06,
            Message::SubsetDispatch(_) => 0x07,
            Message::RangePreQuery(_) => 0x08,
            Message::RangePreResult(_) => 0x09,
            Message::ComparisonBatch(_) => 0x0a,
            Message::Verdict(_) => 0x0b,
            Message::LocationResult(_) => 0x0c,
            Message::Reply(_) => 0x0d,
            Message::Ack { .. } => 0x0e,
            Message::Error(_) => 0x0f,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Registration(_) => "Registration",
            Message::Update(_) => "Update",
            Message::StoreRecord(_) => "StoreRecord",
            Message::QueryParticularFriends(_) => "QueryParticularFriends",
            Message::QueryFriendsWithin(_) => "QueryFriendsWithin",
            Message::QueryStrangersWithin(_) => "QueryStrangersWithin",
            Message::SubsetDispatch(_) => "SubsetDispatch",
            Message::RangePreQuery(_) => "RangePreQuery",
            Message::RangePreResult(_) => "RangePreResult",
            Message::ComparisonBatch(_) => "ComparisonBatch",
            Message::Verdict(_) => "Verdict",
            Message::LocationResult(_) => "LocationResult",
            Message::Reply(_) => "ReplyToVehicle",
            Message::Ack { .. } => "Ack",
            Message::Error(_) => "Error",
        }
    }
}

/// Bytes covered by a vehicle's signature: length-prefixed identity followed
/// by the 64-bit big-endian timestamp.
pub fn signed_payload(id: &str, timestamp: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(id.len() + 12);
    crate::arith::put_bytes(&mut out, id.as_bytes());
    out.extend_from_slice(&timestamp.to_be_bytes());
    out
}
