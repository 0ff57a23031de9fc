use super::*;
use crate::arith::{put_bytes, Reader, Truncated};
use crate::paillier::PaillierCiphertext;

pub const MAGIC: [u8; 4] = *b"PPLS";
pub const VERSION: u8 = 0x01;
/// Magic, version, tag and the 32-bit body length.
pub const FRAME_HEADER_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
}

impl From<Truncated> for WireError {
    fn from(t: Truncated) -> Self {
        WireError::MalformedFrame(t.to_string())
    }
}

fn malformed(what: impl Into<String>) -> WireError {
    WireError::MalformedFrame(what.into())
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut body = Vec::new();
    encode_body(msg, &mut body);
    let len = u32::try_from(body.len()).expect("frame body longer than u32::MAX");
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + body.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.tag());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Decodes exactly one frame. Trailing bytes after the declared body, a
/// short body, or an unrecognised version are all rejected.
pub fn decode(frame: &[u8]) -> Result<Message, WireError> {
    if frame.len() < FRAME_HEADER_LEN {
        return Err(malformed(format!("{} bytes is shorter than a header", frame.len())));
    }
    if frame[..4] != MAGIC {
        return Err(malformed("bad magic"));
    }
    if frame[4] != VERSION {
        return Err(malformed(format!("unsupported version 0x{:02x}", frame[4])));
    }
    let tag = frame[5];
    let len = u32::from_be_bytes([frame[6], frame[7], frame[8], frame[9]]) as usize;
    let body = &frame[FRAME_HEADER_LEN..];
    if body.len() != len {
        return Err(malformed(format!(
            "declared body length {len} but {} bytes present",
            body.len()
        )));
    }
    let mut r = Reader::new(body);
    let msg = decode_body(tag, &mut r)?;
    if !r.is_empty() {
        return Err(malformed(format!("{} trailing bytes in body", r.remaining())));
    }
    Ok(msg)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_bytes(out, s.as_bytes());
}

fn put_count(out: &mut Vec<u8>, n: usize) {
    put_u32(out, u32::try_from(n).expect("list longer than u32::MAX"));
}

fn put_pid(out: &mut Vec<u8>, pid: &PseudoIdentity) {
    put_str(out, &pid.to_hex());
}

fn put_pids(out: &mut Vec<u8>, pids: &[PseudoIdentity]) {
    put_count(out, pids.len());
    for p in pids {
        put_pid(out, p);
    }
}

fn put_report(out: &mut Vec<u8>, r: &VehicleReport) {
    put_str(out, &r.id);
    r.enc_location.encode_into(out);
    r.enc_public_key.encode_into(out);
    r.public_key.encode_into(out);
    put_count(out, r.friends.len());
    for f in &r.friends {
        put_str(out, f);
    }
    put_count(out, r.friend_thresholds.len());
    for (f, t) in &r.friend_thresholds {
        put_str(out, f);
        put_u32(out, *t);
    }
    put_u32(out, r.stranger_threshold);
    put_u64(out, r.timestamp);
    r.signature.encode_into(out);
}

fn encode_body(msg: &Message, out: &mut Vec<u8>) {
    match msg {
        Message::Registration(r) | Message::Update(r) => put_report(out, r),
        Message::StoreRecord(s) => {
            put_pid(out, &s.pid);
            s.enc_location.encode_into(out);
            s.enc_public_key.encode_into(out);
            put_u64(out, s.ttl_secs);
        }
        Message::QueryParticularFriends(q) => {
            put_u64(out, q.request_id);
            out.push(QueryKind::ParticularFriends.tag());
            put_str(out, &q.id);
            q.enc_location.encode_into(out);
            put_count(out, q.targets.len());
            for t in &q.targets {
                put_str(out, t);
            }
        }
        Message::QueryFriendsWithin(q) => put_radius_query(out, QueryKind::FriendsWithin, q),
        Message::QueryStrangersWithin(q) => put_radius_query(out, QueryKind::StrangersWithin, q),
        Message::SubsetDispatch(d) => {
            put_u64(out, d.session);
            put_u32(out, d.ls_index);
            put_pid(out, &d.requester);
            d.enc_location.encode_into(out);
            out.push(d.kind.tag());
            put_pids(out, &d.subset);
            put_count(out, d.thresholds.len());
            for t in &d.thresholds {
                t.0.encode_into(out);
            }
            d.comparison_key.encode_into(out);
            match d.radius {
                None => out.push(0),
                Some(l) => {
                    out.push(1);
                    put_u32(out, l);
                }
            }
        }
        Message::RangePreQuery(q) => {
            put_u64(out, q.session);
            put_pid(out, &q.requester);
            // Target selector: always "all stored vehicles".
            out.push(1);
            put_u32(out, q.radius);
        }
        Message::RangePreResult(r) => {
            put_u64(out, r.session);
            put_pids(out, &r.pids);
        }
        Message::ComparisonBatch(b) => {
            put_u64(out, b.session);
            put_u32(out, b.ls_index);
            put_count(out, b.entries.len());
            for e in &b.entries {
                match e {
                    BatchEntry::Skip => out.push(0),
                    BatchEntry::Batch(batch) => {
                        out.push(1);
                        batch.encode_into(out);
                    }
                }
            }
        }
        Message::Verdict(v) => {
            put_u64(out, v.session);
            put_count(out, v.verdicts.len());
            out.extend(v.verdicts.iter().map(|&b| u8::from(b)));
        }
        Message::LocationResult(l) => {
            put_u64(out, l.session);
            put_count(out, l.results.len());
            for (pos, ct) in &l.results {
                put_u32(out, *pos);
                ct.encode_into(out);
            }
        }
        Message::Reply(r) => {
            put_u64(out, r.request_id);
            put_count(out, r.items.len());
            for item in &r.items {
                put_str(out, &item.label);
                item.location.encode_into(out);
            }
        }
        Message::Ack { reference } => put_u64(out, *reference),
        Message::Error(e) => {
            put_u64(out, e.reference);
            out.push(e.code.to_byte());
            put_str(out, &e.detail);
        }
    }
}

fn put_radius_query(out: &mut Vec<u8>, kind: QueryKind, q: &RadiusQuery) {
    put_u64(out, q.request_id);
    out.push(kind.tag());
    put_str(out, &q.id);
    q.enc_location.encode_into(out);
    put_u32(out, q.radius);
}

fn get_str(r: &mut Reader<'_>) -> Result<String, WireError> {
    let raw = r.bytes()?;
    String::from_utf8(raw.to_vec()).map_err(|_| malformed("string field is not UTF-8"))
}

/// Counts are checked against the remaining input so a hostile prefix
/// cannot trigger a large allocation.
fn get_count(r: &mut Reader<'_>, min_item_len: usize) -> Result<usize, WireError> {
    let n = r.u32()? as usize;
    if n.saturating_mul(min_item_len) > r.remaining() {
        return Err(malformed(format!("list count {n} exceeds remaining input")));
    }
    Ok(n)
}

fn get_pid(r: &mut Reader<'_>) -> Result<PseudoIdentity, WireError> {
    get_str(r)?.parse().map_err(|_| malformed("bad pseudo-identity"))
}

fn get_pids(r: &mut Reader<'_>) -> Result<Vec<PseudoIdentity>, WireError> {
    let n = get_count(r, 4)?;
    (0..n).map(|_| get_pid(r)).collect()
}

fn get_strings(r: &mut Reader<'_>) -> Result<Vec<String>, WireError> {
    let n = get_count(r, 4)?;
    (0..n).map(|_| get_str(r)).collect()
}

fn get_hybrid(r: &mut Reader<'_>) -> Result<HybridCiphertext, WireError> {
    Ok(HybridCiphertext::decode_from(r)?)
}

fn get_kind(r: &mut Reader<'_>, expected: Option<QueryKind>) -> Result<QueryKind, WireError> {
    let b = r.u8()?;
    let kind = QueryKind::from_tag(b).ok_or_else(|| malformed(format!("bad query kind 0x{b:02x}")))?;
    match expected {
        Some(e) if e != kind => Err(malformed(format!(
            "query kind {} does not match message type",
            kind.short_name()
        ))),
        _ => Ok(kind),
    }
}

fn get_flag(r: &mut Reader<'_>) -> Result<bool, WireError> {
    match r.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(malformed(format!("bad flag byte 0x{b:02x}"))),
    }
}

fn get_report(r: &mut Reader<'_>) -> Result<VehicleReport, WireError> {
    let id = get_str(r)?;
    let enc_location = get_hybrid(r)?;
    let enc_public_key = get_hybrid(r)?;
    let public_key =
        AsymPublicKey::decode_from(r).map_err(|e| malformed(format!("public key: {e}")))?;
    let friends = get_strings(r)?;
    let n = get_count(r, 8)?;
    let friend_thresholds = (0..n)
        .map(|_| Ok((get_str(r)?, r.u32()?)))
        .collect::<Result<Vec<_>, WireError>>()?;
    Ok(VehicleReport {
        id,
        enc_location,
        enc_public_key,
        public_key,
        friends,
        friend_thresholds,
        stranger_threshold: r.u32()?,
        timestamp: r.u64()?,
        signature: Signature::decode_from(r)?,
    })
}

fn get_radius_query(r: &mut Reader<'_>, kind: QueryKind) -> Result<RadiusQuery, WireError> {
    let request_id = r.u64()?;
    get_kind(r, Some(kind))?;
    Ok(RadiusQuery {
        request_id,
        id: get_str(r)?,
        enc_location: get_hybrid(r)?,
        radius: r.u32()?,
    })
}

fn decode_body(tag: u8, r: &mut Reader<'_>) -> Result<Message, WireError> {
    Ok(match tag {
        0x01 => Message::Registration(get_report(r)?),
        0x02 => Message::Update(get_report(r)?),
        0x03 => Message::StoreRecord(StoreRecord {
            pid: get_pid(r)?,
            enc_location: get_hybrid(r)?,
            enc_public_key: get_hybrid(r)?,
            ttl_secs: r.u64()?,
        }),
        0x04 => {
            let request_id = r.u64()?;
            get_kind(r, Some(QueryKind::ParticularFriends))?;
            Message::QueryParticularFriends(ParticularFriendsQuery {
                request_id,
                id: get_str(r)?,
                enc_location: get_hybrid(r)?,
                targets: get_strings(r)?,
            })
        }
        0x05 => Message::QueryFriendsWithin(get_radius_query(r, QueryKind::FriendsWithin)?),
        0x06 => Message::QueryStrangersWithin(get_radius_query(r, QueryKind::StrangersWithin)?),
        0x07 => {
            let session = r.u64()?;
            let ls_index = r.u32()?;
            let requester = get_pid(r)?;
            let enc_location = get_hybrid(r)?;
            let kind = get_kind(r, None)?;
            let subset = get_pids(r)?;
            let n = get_count(r, 4)?;
            let thresholds = (0..n)
                .map(|_| Ok(ThresholdCiphertext(PaillierCiphertext::decode_from(r)?)))
                .collect::<Result<Vec<_>, WireError>>()?;
            let comparison_key = PaillierPublicKey::decode_from(r)
                .map_err(|e| malformed(format!("comparison key: {e}")))?;
            let radius = if get_flag(r)? { Some(r.u32()?) } else { None };
            Message::SubsetDispatch(SubsetDispatch {
                session,
                ls_index,
                requester,
                enc_location,
                kind,
                subset,
                thresholds,
                comparison_key,
                radius,
            })
        }
        0x08 => {
            let session = r.u64()?;
            let requester = get_pid(r)?;
            if r.u8()? != 1 {
                return Err(malformed("range pre-query must select all vehicles"));
            }
            Message::RangePreQuery(RangePreQuery { session, requester, radius: r.u32()? })
        }
        0x09 => Message::RangePreResult(RangePreResult { session: r.u64()?, pids: get_pids(r)? }),
        0x0a => {
            let session = r.u64()?;
            let ls_index = r.u32()?;
            let n = get_count(r, 1)?;
            let entries = (0..n)
                .map(|_| {
                    Ok(if get_flag(r)? {
                        BatchEntry::Batch(ComparisonBatch::decode_from(r)?)
                    } else {
                        BatchEntry::Skip
                    })
                })
                .collect::<Result<Vec<_>, WireError>>()?;
            Message::ComparisonBatch(ComparisonBatchMsg { session, ls_index, entries })
        }
        0x0b => {
            let session = r.u64()?;
            let n = get_count(r, 1)?;
            let verdicts = (0..n).map(|_| get_flag(r)).collect::<Result<Vec<_>, _>>()?;
            Message::Verdict(VerdictMsg { session, verdicts })
        }
        0x0c => {
            let session = r.u64()?;
            let n = get_count(r, 8)?;
            let results = (0..n)
                .map(|_| Ok((r.u32()?, get_hybrid(r)?)))
                .collect::<Result<Vec<_>, WireError>>()?;
            Message::LocationResult(LocationResultMsg { session, results })
        }
        0x0d => {
            let request_id = r.u64()?;
            let n = get_count(r, 8)?;
            let items = (0..n)
                .map(|_| Ok(ReplyItem { label: get_str(r)?, location: get_hybrid(r)? }))
                .collect::<Result<Vec<_>, WireError>>()?;
            Message::Reply(ReplyToVehicle { request_id, items })
        }
        0x0e => Message::Ack { reference: r.u64()? },
        0x0f => {
            let reference = r.u64()?;
            let b = r.u8()?;
            let code =
                ErrorCode::from_byte(b).ok_or_else(|| malformed(format!("bad error code {b}")))?;
            Message::Error(ErrorMsg { reference, code, detail: get_str(r)? })
        }
        other => return Err(WireError::UnknownTag(other)),
    })
}
