//! Blindness audits over a transport log.

use ppls_core::geo::Location;
use ppls_core::pid::PseudoIdentity;
use ppls_core::transport::{Direction, LogEntry};
use ppls_core::wire::Message;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Serialize)]
pub struct AuditResult {
    pub name: &'static str,
    pub passed: bool,
    pub findings: Vec<String>,
}

impl AuditResult {
    fn new(name: &'static str, findings: Vec<String>) -> Self {
        Self { name, passed: findings.is_empty(), findings }
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Every frame in the log touches the social network server, so every frame
/// is scanned for the canonical 8-byte form of every location any vehicle
/// ever occupied.
pub fn coordinates_absent(log: &[LogEntry], history: &BTreeSet<Location>) -> AuditResult {
    let patterns: Vec<(Location, [u8; 8])> = history.iter().map(|l| (*l, l.to_bytes())).collect();
    let mut findings = Vec::new();
    for e in log {
        for (l, p) in &patterns {
            if contains(&e.raw, p) {
                findings.push(format!(
                    "frame {} ({} {} -> {}) carries {:?}",
                    e.seq,
                    e.message.name(),
                    e.sender,
                    e.receiver,
                    l
                ));
            }
        }
    }
    AuditResult::new("coordinates-absent", findings)
}

fn id_patterns(id: &str) -> Vec<Vec<u8>> {
    let mut prefixed = (id.len() as u32).to_be_bytes().to_vec();
    prefixed.extend_from_slice(id.as_bytes());
    let mut out = vec![prefixed];
    // Short IDs are only matched in their length-prefixed wire form; as bare
    // bytes they would collide with ciphertext by chance.
    if id.len() >= 8 {
        out.push(id.as_bytes().to_vec());
    }
    out
}

fn json_strings<'a>(v: &'a serde_json::Value, out: &mut Vec<&'a str>) {
    match v {
        serde_json::Value::String(s) => out.push(s),
        serde_json::Value::Array(a) => a.iter().for_each(|x| json_strings(x, out)),
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                out.push(k);
                json_strings(x, out);
            }
        }
        _ => {}
    }
}

/// No vehicle ID in any frame to or from a location server, nor anywhere in
/// a location server's state.
pub fn identities_absent(log: &[LogEntry], ids: &[String], ls_dumps: &[serde_json::Value]) -> AuditResult {
    let mut findings = Vec::new();
    for e in log {
        if !matches!(e.direction, Direction::SnsToLs | Direction::LsToSns) {
            continue;
        }
        for id in ids {
            if id_patterns(id).iter().any(|p| contains(&e.raw, p)) {
                findings.push(format!("frame {} ({} {} -> {}) carries {id}", e.seq, e.message.name(), e.sender, e.receiver));
            }
        }
    }
    for (j, dump) in ls_dumps.iter().enumerate() {
        let mut strings = Vec::new();
        json_strings(dump, &mut strings);
        for id in ids {
            if strings.iter().any(|s| *s == id || (id.len() >= 8 && s.contains(id.as_str()))) {
                findings.push(format!("ls:{j} state holds {id}"));
            }
        }
    }
    AuditResult::new("identities-absent", findings)
}

/// Groups the PIDs the server stores by the epoch in force when each store
/// was sent and requires the groups to be pairwise disjoint over at least
/// `min_epochs` epochs. `epoch_marks` holds `(log length, epoch)` at each
/// change.
pub fn pid_rotation(log: &[LogEntry], epoch_marks: &[(usize, u64)], min_epochs: usize) -> AuditResult {
    let mut by_epoch: BTreeMap<u64, BTreeSet<PseudoIdentity>> = BTreeMap::new();
    for e in log {
        let Message::StoreRecord(r) = &e.message else { continue };
        let epoch = epoch_marks
            .iter()
            .take_while(|(at, _)| *at <= e.seq as usize)
            .last()
            .map_or(0, |(_, ep)| *ep);
        by_epoch.entry(epoch).or_default().insert(r.pid);
    }
    let mut findings = Vec::new();
    if by_epoch.len() < min_epochs {
        findings.push(format!("only {} epochs carried records", by_epoch.len()));
    }
    let epochs: Vec<_> = by_epoch.iter().collect();
    for (i, (ea, a)) in epochs.iter().enumerate() {
        for (eb, b) in &epochs[i + 1..] {
            for pid in a.intersection(b) {
                findings.push(format!("pid {} used in epochs {ea} and {eb}", pid.to_hex()));
            }
        }
    }
    AuditResult::new("pid-rotation", findings)
}
