//! Plaintext mirror of the whole deployment, used only as a test oracle.

use crate::config::{QueryType, ScenarioConfig};
use ppls_core::distcmp::oracle_compare;
use ppls_core::geo::{distance, Location};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone)]
pub struct Reported {
    pub location: Location,
    pub at: u64,
}

#[derive(Debug, Clone)]
pub struct GodVehicle {
    pub id: String,
    /// Where the vehicle actually is; sent with every query.
    pub location: Location,
    /// This vehicle's threshold for each friend.
    pub friends: BTreeMap<String, u32>,
    pub stranger_threshold: u32,
    /// Last registration or update the servers accepted.
    pub reported: Option<Reported>,
}

#[derive(Debug, Clone)]
pub struct GodView {
    pub vehicles: BTreeMap<String, GodVehicle>,
    pub record_ttl: u64,
    /// Every location any vehicle has occupied.
    pub location_history: BTreeSet<Location>,
}

/// A target the requester is entitled to see, with its location as stored
/// at the location servers.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Eligible {
    pub id: String,
    pub location: Location,
}

fn loc(p: [u32; 2]) -> Location {
    Location::new(p[0], p[1]).expect("validated config")
}

impl GodView {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let vehicles: BTreeMap<String, GodVehicle> = cfg
            .fleet
            .iter()
            .map(|v| {
                (
                    v.id.clone(),
                    GodVehicle {
                        id: v.id.clone(),
                        location: loc(v.location),
                        friends: v.friends.clone(),
                        stranger_threshold: v.stranger_threshold,
                        reported: None,
                    },
                )
            })
            .collect();
        let location_history = vehicles.values().map(|v| v.location).collect();
        Self { vehicles, record_ttl: cfg.record_ttl_secs, location_history }
    }

    pub fn move_to(&mut self, id: &str, location: Location) {
        self.vehicles.get_mut(id).expect("known vehicle").location = location;
        self.location_history.insert(location);
    }

    pub fn mark_reported(&mut self, id: &str, now: u64) {
        let v = self.vehicles.get_mut(id).expect("known vehicle");
        v.reported = Some(Reported { location: v.location, at: now });
    }

    /// Location stored at the servers, if the record is still live.
    pub fn live_location(&self, id: &str, now: u64) -> Option<Location> {
        let r = self.vehicles.get(id)?.reported.as_ref()?;
        (now < r.at + self.record_ttl).then_some(r.location)
    }

    fn are_friends(&self, a: &str, b: &str) -> bool {
        self.vehicles[a].friends.contains_key(b)
    }

    /// Threshold that governs whether `requester` may see `target` in a
    /// query of the given type.
    pub fn governing_threshold(&self, requester: &str, target: &str, kind: QueryType) -> Option<u32> {
        let t = self.vehicles.get(target)?;
        match kind {
            QueryType::ParticularFriends | QueryType::FriendsWithin => t.friends.get(requester).copied(),
            QueryType::StrangersWithin => Some(t.stranger_threshold),
        }
    }

    /// Every target the policy entitles the requester to, given the current
    /// clock.
    pub fn eligible(
        &self,
        requester: &str,
        kind: QueryType,
        targets: &[String],
        radius: Option<u32>,
        now: u64,
    ) -> Vec<Eligible> {
        let req = &self.vehicles[requester];
        // Without a live record of its own the requester has no key on file
        // at the location servers, so nothing can be returned.
        let Some(req_stored) = self.live_location(requester, now) else {
            return Vec::new();
        };
        let origin = req.location;
        let requested: BTreeSet<&String> = targets.iter().collect();
        let mut out = Vec::new();
        for (id, t) in &self.vehicles {
            if id == requester {
                continue;
            }
            let Some(at) = self.live_location(id, now) else { continue };
            let d = distance(origin, at);
            let ok = match kind {
                QueryType::ParticularFriends => {
                    requested.contains(id)
                        && self.are_friends(requester, id)
                        && t.friends.get(requester).is_some_and(|&th| oracle_compare(th, d))
                }
                QueryType::FriendsWithin => {
                    self.are_friends(requester, id)
                        && t.friends.get(requester).is_some_and(|&th| oracle_compare(th, d))
                        && d < radius.expect("radius query")
                }
                QueryType::StrangersWithin => {
                    !self.are_friends(requester, id)
                        && distance(req_stored, at) < radius.expect("radius query")
                        && oracle_compare(t.stranger_threshold, d)
                }
            };
            if ok {
                out.push(Eligible { id: id.clone(), location: at });
            }
        }
        out
    }
}
