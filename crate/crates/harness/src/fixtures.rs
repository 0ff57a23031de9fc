//! Small hand-built scenarios with known answers.

use crate::config::{Action, Event, QueryType, ScenarioConfig, VehicleSpec};
use std::collections::BTreeMap;

const BASE: u32 = 5000;

fn base_config(seed: u64, fleet: Vec<VehicleSpec>, events: Vec<Event>) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        ls_count: 3,
        i_max: 1000,
        paillier_bits: 128,
        rsa_bits: 512,
        update_cycle_secs: 600,
        record_ttl_secs: 660,
        dummy_count: 1,
        start_time: 1_700_000_000,
        fleet,
        events,
    }
}

fn vehicle(id: &str, location: [u32; 2], friends: &[(&str, u32)], stranger_threshold: u32) -> VehicleSpec {
    VehicleSpec {
        id: id.into(),
        location,
        friends: friends.iter().map(|(f, t)| (f.to_string(), *t)).collect::<BTreeMap<_, _>>(),
        stranger_threshold,
    }
}

fn query(at: u64, requester: &str, kind: QueryType, targets: &[&str], radius: Option<u32>) -> Event {
    Event {
        at,
        action: Action::Query {
            requester: requester.into(),
            kind,
            targets: targets.iter().map(|t| t.to_string()).collect(),
            radius,
        },
    }
}

/// alice and bob are friends 30 m apart; carol is a stranger 80 m from
/// alice. bob's threshold for alice is `bob_threshold_for_alice`. alice
/// asks for bob, then for strangers within 100 m.
pub fn three_vehicle(bob_threshold_for_alice: u32) -> ScenarioConfig {
    base_config(
        7,
        vec![
            vehicle("alice", [BASE, BASE], &[("bob", 50)], 200),
            vehicle("bob", [BASE + 30, BASE], &[("alice", bob_threshold_for_alice)], 200),
            vehicle("carol", [BASE, BASE + 80], &[], 200),
        ],
        vec![
            query(10, "alice", QueryType::ParticularFriends, &["bob"], None),
            query(20, "alice", QueryType::StrangersWithin, &[], Some(100)),
        ],
    )
}

/// Same fleet with an epoch advance and fresh updates between two rounds of
/// the same queries, plus a third epoch so rotation can be audited.
pub fn three_vehicle_epochs() -> ScenarioConfig {
    let mut cfg = three_vehicle(50);
    let rounds = cfg.events.clone();
    for e in 1..=2u64 {
        let base = e * 600;
        cfg.events.push(Event { at: base, action: Action::AdvanceEpoch });
        cfg.events.push(Event { at: base + 1, action: Action::UpdateAll });
        cfg.events.extend(rounds.iter().map(|ev| Event { at: ev.at + base, action: ev.action.clone() }));
    }
    cfg
}

/// One strictness fixture: `alice` queries `bob`, who sits exactly
/// `distance` meters east of her.
#[derive(Debug, Clone)]
pub struct BoundaryCase {
    pub name: &'static str,
    pub kind: QueryType,
    /// bob's friend threshold for alice, or bob's stranger threshold.
    pub threshold: u32,
    pub radius: Option<u32>,
    pub distance: u32,
}

impl BoundaryCase {
    pub fn config(&self) -> ScenarioConfig {
        let friends = self.kind != QueryType::StrangersWithin;
        let (alice_friends, bob_friends, ds): (Vec<_>, Vec<_>, u32) = if friends {
            (vec![("bob", 100)], vec![("alice", self.threshold)], 1000)
        } else {
            (vec![], vec![], self.threshold)
        };
        let targets: &[&str] = if self.kind == QueryType::ParticularFriends { &["bob"] } else { &[] };
        base_config(
            11,
            vec![
                vehicle("alice", [BASE, BASE], &alice_friends, 1000),
                vehicle("bob", [BASE + self.distance, BASE], &bob_friends, ds),
            ],
            vec![query(10, "alice", self.kind, targets, self.radius)],
        )
    }

    /// The same case with bob one meter closer, which must be returned.
    pub fn control(&self) -> BoundaryCase {
        BoundaryCase { distance: self.distance - 1, ..self.clone() }
    }
}

/// Distance equal to a threshold or to the query radius; none may return
/// bob.
pub fn boundary_cases() -> Vec<BoundaryCase> {
    use QueryType::*;
    vec![
        BoundaryCase { name: "pf distance = threshold", kind: ParticularFriends, threshold: 50, radius: None, distance: 50 },
        BoundaryCase { name: "f distance = threshold", kind: FriendsWithin, threshold: 50, radius: Some(500), distance: 50 },
        BoundaryCase { name: "s distance = threshold", kind: StrangersWithin, threshold: 300, radius: Some(900), distance: 300 },
        BoundaryCase { name: "f distance = radius", kind: FriendsWithin, threshold: 100, radius: Some(60), distance: 60 },
        BoundaryCase { name: "s distance = radius", kind: StrangersWithin, threshold: 900, radius: Some(250), distance: 250 },
        BoundaryCase {
            name: "f distance = threshold = radius",
            kind: FriendsWithin,
            threshold: 70,
            radius: Some(70),
            distance: 70,
        },
    ]
}

/// bob registers at the start and never updates; alice keeps her own record
/// fresh. alice asks for bob one second before bob's record expires, then
/// again one second after expiry following a purge.
pub fn ttl_case() -> ScenarioConfig {
    let mut cfg = base_config(
        13,
        vec![vehicle("alice", [BASE, BASE], &[("bob", 100)], 200), vehicle("bob", [BASE + 20, BASE], &[("alice", 100)], 200)],
        Vec::new(),
    );
    let ttl = cfg.record_ttl_secs;
    cfg.events = vec![
        Event { at: 600, action: Action::Update { id: "alice".into(), friends: None, stranger_threshold: None } },
        query(ttl - 1, "alice", QueryType::ParticularFriends, &["bob"], None),
        Event { at: ttl + 1, action: Action::Purge },
        query(ttl + 1, "alice", QueryType::ParticularFriends, &["bob"], None),
    ];
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_validate() {
        assert!(three_vehicle(50).validate().is_ok());
        assert!(three_vehicle_epochs().validate().is_ok());
        assert!(ttl_case().validate().is_ok());
        for c in boundary_cases() {
            assert!(c.config().validate().is_ok(), "{}", c.name);
            assert!(c.control().config().validate().is_ok(), "{}", c.name);
        }
    }
}
