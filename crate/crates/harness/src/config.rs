//! Scenario description: fleet, deployment parameters and a timed event
//! script. Loaded from a single JSON document; see `examples/` for an
//! annotated sample.

use ppls_core::geo::Location;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub id: String,
    /// `[x, y]` in meters.
    pub location: [u32; 2],
    /// Friend ID to this vehicle's threshold for that friend, in meters.
    #[serde(default)]
    pub friends: BTreeMap<String, u32>,
    pub stranger_threshold: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryType {
    #[serde(rename = "pf")]
    ParticularFriends,
    #[serde(rename = "f")]
    FriendsWithin,
    #[serde(rename = "s")]
    StrangersWithin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Query {
        requester: String,
        #[serde(rename = "type")]
        kind: QueryType,
        #[serde(default)]
        targets: Vec<String>,
        #[serde(default)]
        radius: Option<u32>,
    },
    /// Moves a vehicle. The servers learn the new position only at its
    /// next update.
    Move { id: String, location: [u32; 2] },
    /// Sends an update with current state; optional fields replace the
    /// vehicle's thresholds first.
    Update {
        id: String,
        #[serde(default)]
        friends: Option<BTreeMap<String, u32>>,
        #[serde(default)]
        stranger_threshold: Option<u32>,
    },
    /// Updates every vehicle in fleet order.
    UpdateAll,
    AdvanceEpoch,
    Purge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Seconds after the scenario start.
    pub at: u64,
    #[serde(flatten)]
    pub action: Action,
}

fn default_ls_count() -> u32 {
    3
}
fn default_i_max() -> u32 {
    1000
}
fn default_paillier_bits() -> u64 {
    128
}
fn default_rsa_bits() -> u64 {
    512
}
fn default_cycle() -> u64 {
    600
}
fn default_ttl() -> u64 {
    660
}
fn default_dummies() -> usize {
    1
}
fn default_start() -> u64 {
    1_700_000_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ls_count")]
    pub ls_count: u32,
    #[serde(default = "default_i_max")]
    pub i_max: u32,
    #[serde(default = "default_paillier_bits")]
    pub paillier_bits: u64,
    #[serde(default = "default_rsa_bits")]
    pub rsa_bits: u64,
    #[serde(default = "default_cycle")]
    pub update_cycle_secs: u64,
    #[serde(default = "default_ttl")]
    pub record_ttl_secs: u64,
    #[serde(default = "default_dummies")]
    pub dummy_count: usize,
    /// Unix time of the scenario start; every vehicle registers then.
    #[serde(default = "default_start")]
    pub start_time: u64,
    pub fleet: Vec<VehicleSpec>,
    #[serde(default)]
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError {
            message: e.to_string(),
            line: Some(e.line()),
            column: Some(e.column()),
        })?;
        cfg.validate().map_err(|(message, needle)| ConfigError {
            line: needle.and_then(|n| line_of(text, &n)),
            column: None,
            message,
        })?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Semantic checks. On failure returns the message and a quoted token
    /// to locate in the source text.
    pub fn validate(&self) -> Result<(), (String, Option<String>)> {
        let quoted = |s: &str| Some(format!("\"{s}\""));
        if self.fleet.is_empty() {
            return Err(("fleet is empty".into(), quoted("fleet")));
        }
        if self.ls_count == 0 {
            return Err(("ls_count must be at least 1".into(), quoted("ls_count")));
        }
        if self.i_max == 0 {
            return Err(("i_max must be at least 1".into(), quoted("i_max")));
        }
        let (t, tl) = (self.update_cycle_secs, self.record_ttl_secs);
        if t == 0 || tl <= t || tl > 2 * t {
            return Err((format!("record_ttl_secs {tl} must lie in (t, 2t] for t = {t}"), quoted("record_ttl_secs")));
        }
        if self.paillier_bits < 64 || self.rsa_bits < 512 {
            return Err(("paillier_bits must be >= 64 and rsa_bits >= 512".into(), quoted("paillier_bits")));
        }
        let mut ids = BTreeSet::new();
        for v in &self.fleet {
            if v.id.is_empty() || !ids.insert(v.id.as_str()) {
                return Err((format!("duplicate or empty vehicle id {:?}", v.id), quoted(&v.id)));
            }
            if Location::new(v.location[0], v.location[1]).is_err() {
                return Err((format!("{}: location out of bounds", v.id), quoted(&v.id)));
            }
        }
        let by_id: BTreeMap<&str, &VehicleSpec> = self.fleet.iter().map(|v| (v.id.as_str(), v)).collect();
        for v in &self.fleet {
            self.check_thresholds(&v.id, &v.friends, v.stranger_threshold)?;
            for f in v.friends.keys() {
                let Some(other) = by_id.get(f.as_str()) else {
                    return Err((format!("{}: unknown friend {f:?}", v.id), quoted(f)));
                };
                if !other.friends.contains_key(&v.id) {
                    return Err((
                        format!("friendship must be symmetric: {} lists {f} but {f} does not list {}", v.id, v.id),
                        quoted(&v.id),
                    ));
                }
            }
        }
        let mut last = 0;
        for e in &self.events {
            if e.at < last {
                return Err((format!("events out of order at {}", e.at), None));
            }
            last = e.at;
            let known = |id: &str| -> Result<(), (String, Option<String>)> {
                if by_id.contains_key(id) {
                    Ok(())
                } else {
                    Err((format!("event at {} names unknown vehicle {id:?}", e.at), quoted(id)))
                }
            };
            match &e.action {
                Action::Query { requester, kind, radius, .. } => {
                    known(requester)?;
                    if *kind != QueryType::ParticularFriends && radius.is_none() {
                        return Err((format!("query at {} needs a radius", e.at), None));
                    }
                }
                Action::Move { id, location } => {
                    known(id)?;
                    if Location::new(location[0], location[1]).is_err() {
                        return Err((format!("move at {}: location out of bounds", e.at), quoted(id)));
                    }
                }
                Action::Update { id, friends, stranger_threshold } => {
                    known(id)?;
                    let spec = by_id[id.as_str()];
                    if let Some(f) = friends {
                        if f.keys().collect::<BTreeSet<_>>() != spec.friends.keys().collect::<BTreeSet<_>>() {
                            return Err((format!("update at {} may change thresholds but not the friend set", e.at), quoted(id)));
                        }
                    }
                    self.check_thresholds(
                        id,
                        friends.as_ref().unwrap_or(&spec.friends),
                        stranger_threshold.unwrap_or(spec.stranger_threshold),
                    )?;
                }
                Action::UpdateAll | Action::AdvanceEpoch | Action::Purge => {}
            }
        }
        Ok(())
    }

    fn check_thresholds(
        &self,
        id: &str,
        friends: &BTreeMap<String, u32>,
        ds: u32,
    ) -> Result<(), (String, Option<String>)> {
        let ok = |t: u32| (1..=self.i_max).contains(&t);
        if let Some((f, t)) = friends.iter().find(|(_, &t)| !ok(t)) {
            return Err((format!("{id}: threshold {t} for {f} outside [1, {}]", self.i_max), Some(format!("\"{id}\""))));
        }
        if !ok(ds) {
            return Err((format!("{id}: stranger threshold {ds} outside [1, {}]", self.i_max), Some(format!("\"{id}\""))));
        }
        Ok(())
    }
}

fn line_of(text: &str, needle: &str) -> Option<usize> {
    text.lines().position(|l| l.contains(needle)).map(|i| i + 1)
}

/// Parameters for [`random_scenario`].
#[derive(Debug, Clone)]
pub struct RandomScenarioParams {
    pub vehicles: usize,
    /// Side of the square the fleet is placed in, in meters.
    pub area: u32,
    /// Lower-left corner of that square on both axes. Keeping coordinates
    /// away from the axes stops small protocol integers (counts, lengths)
    /// from matching a location's byte pattern in the audits.
    pub offset: u32,
    pub friend_probability: f64,
    pub epochs: u32,
    pub queries_per_phase: usize,
}

impl Default for RandomScenarioParams {
    fn default() -> Self {
        Self { vehicles: 20, area: 600, offset: 1000, friend_probability: 0.3, epochs: 3, queries_per_phase: 6 }
    }
}

/// Seeded random scenario spanning several epochs. Each epoch after the
/// first starts with an epoch advance, some vehicles move, most (not all)
/// vehicles update, and queries of every type run both before and after
/// the stragglers' records expire.
pub fn random_scenario(seed: u64, p: &RandomScenarioParams) -> ScenarioConfig {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ids: Vec<String> = (0..p.vehicles).map(|i| format!("vehicle-{i:03}")).collect();
    let friend_steps: Vec<u32> = (1..=10).map(|k| k * 10).collect();
    let stranger_steps: Vec<u32> = (1..=10).map(|k| k * 100).collect();
    let mut friends: Vec<BTreeMap<String, u32>> = vec![BTreeMap::new(); p.vehicles];
    for a in 0..p.vehicles {
        for b in a + 1..p.vehicles {
            if rng.gen_bool(p.friend_probability) {
                friends[a].insert(ids[b].clone(), *friend_steps.choose(&mut rng).unwrap());
                friends[b].insert(ids[a].clone(), *friend_steps.choose(&mut rng).unwrap());
            }
        }
    }
    let point = |rng: &mut ChaCha20Rng| [p.offset + rng.gen_range(0..p.area), p.offset + rng.gen_range(0..p.area)];
    let fleet: Vec<VehicleSpec> = (0..p.vehicles)
        .map(|i| VehicleSpec {
            id: ids[i].clone(),
            location: point(&mut rng),
            friends: friends[i].clone(),
            stranger_threshold: *stranger_steps.choose(&mut rng).unwrap(),
        })
        .collect();

    let cycle = 600u64;
    let ttl = 660u64;
    let mut events = Vec::new();
    let queries = |rng: &mut ChaCha20Rng, at: u64, events: &mut Vec<Event>| {
        for k in 0..p.queries_per_phase {
            let requester = ids.choose(rng).unwrap().clone();
            let idx = ids.iter().position(|i| *i == requester).unwrap();
            let action = match k % 3 {
                0 => {
                    let mut targets: Vec<String> = friends[idx].keys().cloned().collect();
                    targets.shuffle(rng);
                    targets.truncate(3);
                    // A non-friend target must be silently excluded.
                    targets.push(ids.choose(rng).unwrap().clone());
                    Action::Query { requester, kind: QueryType::ParticularFriends, targets, radius: None }
                }
                1 => Action::Query {
                    requester,
                    kind: QueryType::FriendsWithin,
                    targets: vec![],
                    radius: Some(rng.gen_range(20..=150)),
                },
                _ => Action::Query {
                    requester,
                    kind: QueryType::StrangersWithin,
                    targets: vec![],
                    radius: Some(rng.gen_range(50..=600)),
                },
            };
            events.push(Event { at: at + k as u64, action });
        }
    };

    queries(&mut rng, 10, &mut events);
    for e in 1..p.epochs as u64 {
        let base = e * cycle;
        events.push(Event { at: base, action: Action::AdvanceEpoch });
        for id in &ids {
            if rng.gen_bool(0.3) {
                events.push(Event { at: base + 1, action: Action::Move { id: id.clone(), location: point(&mut rng) } });
            }
        }
        // Roughly one in ten vehicles misses this update and expires.
        let mut at = base + 2;
        for id in &ids {
            if rng.gen_bool(0.9) {
                events.push(Event { at, action: Action::Update { id: id.clone(), friends: None, stranger_threshold: None } });
                at += 1;
            }
        }
        let after_updates = base + 2 + p.vehicles as u64;
        queries(&mut rng, after_updates, &mut events);
        // Past the previous epoch's records' lifetime.
        let after_expiry = (e - 1) * cycle + ttl + 40 + p.vehicles as u64;
        events.push(Event { at: after_expiry - 1, action: Action::Purge });
        queries(&mut rng, after_expiry, &mut events);
    }

    ScenarioConfig {
        seed,
        ls_count: 3,
        i_max: 1000,
        paillier_bits: 128,
        rsa_bits: 512,
        update_cycle_secs: cycle,
        record_ttl_secs: ttl,
        dummy_count: 1,
        start_time: 1_700_000_000,
        fleet,
        events,
    }
}
