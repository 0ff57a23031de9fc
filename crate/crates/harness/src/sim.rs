//! Drives the three roles over a transport: a deployment (one social
//! network server, `Q` location servers, any number of vehicles) and a
//! scenario runner that replays a [`ScenarioConfig`] against it while
//! checking every reply with the [`GodView`] oracle.

use crate::audit::{self, AuditResult};
use crate::config::{Action, QueryType, ScenarioConfig, VehicleSpec};
use crate::godview::{Eligible, GodView};
use anyhow::{anyhow, bail, Context};
use ppls_core::asym::{asym_keygen, AsymKeypair};
use ppls_core::distcmp::{oracle_compare, ComparisonParams};
use ppls_core::geo::{distance, Location};
use ppls_core::ls::LocationServer;
use ppls_core::sns::{SnsConfig, SocialNetworkServer, DEFAULT_CLOCK_SKEW_SECS};
use ppls_core::transport::{
    Endpoint, InProcessTransport, LogEntry, TcpConfig, TcpTransport, Transport, TransportLog,
};
use ppls_core::vehicle::{Sighting, VehicleClient, VehicleState};
use ppls_core::wire::{ErrorMsg, Message};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Backend {
    #[default]
    InProcess,
    Tcp,
}

#[derive(Debug, Clone)]
pub struct DeploymentParams {
    pub ls_count: u32,
    pub i_max: u32,
    pub paillier_bits: u64,
    pub rsa_bits: u64,
    pub update_cycle_secs: u64,
    pub record_ttl_secs: u64,
    pub dummy_count: usize,
    pub start_time: u64,
    pub seed: u64,
}

impl DeploymentParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            ls_count: cfg.ls_count,
            i_max: cfg.i_max,
            paillier_bits: cfg.paillier_bits,
            rsa_bits: cfg.rsa_bits,
            update_cycle_secs: cfg.update_cycle_secs,
            record_ttl_secs: cfg.record_ttl_secs,
            dummy_count: cfg.dummy_count,
            start_time: cfg.start_time,
            seed: cfg.seed,
        }
    }
}

/// Servers plus the message pump. Vehicles live outside; messages they
/// receive are parked in per-vehicle inboxes.
pub struct Deployment {
    pub sns: SocialNetworkServer,
    pub lss: Vec<LocationServer>,
    pub ls_keypair: AsymKeypair,
    transport: Box<dyn Transport>,
    pending: VecDeque<(Endpoint, Endpoint)>,
    inboxes: BTreeMap<String, Vec<Message>>,
    pub clock: u64,
    /// `(log length, epoch)` at every epoch change.
    pub epoch_marks: Vec<(usize, u64)>,
    seeds: ChaCha20Rng,
}

impl Deployment {
    pub fn new(p: &DeploymentParams, backend: Backend) -> anyhow::Result<Self> {
        Self::build(p, backend, None)
    }

    /// As [`Deployment::new`] but with a pre-generated location server
    /// keypair.
    pub fn with_ls_keypair(p: &DeploymentParams, backend: Backend, ls_keypair: AsymKeypair) -> anyhow::Result<Self> {
        Self::build(p, backend, Some(ls_keypair))
    }

    fn build(p: &DeploymentParams, backend: Backend, ls_keypair: Option<AsymKeypair>) -> anyhow::Result<Self> {
        let mut seeds = ChaCha20Rng::seed_from_u64(p.seed);
        let key_seed = seeds.next_u64();
        let ls_keypair =
            ls_keypair.unwrap_or_else(|| asym_keygen(p.rsa_bits, &mut ChaCha20Rng::seed_from_u64(key_seed)));
        let params = ComparisonParams::with_i_max(p.i_max)?;
        let sns = SocialNetworkServer::new(
            SnsConfig {
                ls_count: p.ls_count,
                params: params.clone(),
                comparison_key_bits: p.paillier_bits,
                update_cycle_secs: p.update_cycle_secs,
                record_ttl_secs: p.record_ttl_secs,
                dummy_count: p.dummy_count,
                clock_skew_secs: DEFAULT_CLOCK_SKEW_SECS,
            },
            seeds.next_u64(),
            p.start_time,
        )?;
        let lss = (0..p.ls_count)
            .map(|j| LocationServer::new(j, ls_keypair.clone(), params.clone(), seeds.next_u64()))
            .collect();
        let log = TransportLog::new();
        let transport: Box<dyn Transport> = match backend {
            Backend::InProcess => Box::new(InProcessTransport::new(log)),
            Backend::Tcp => Box::new(TcpTransport::new(TcpConfig::default(), log).with_timeout(TCP_TIMEOUT)),
        };
        Ok(Self {
            sns,
            lss,
            ls_keypair,
            transport,
            pending: VecDeque::new(),
            inboxes: BTreeMap::new(),
            clock: p.start_time,
            epoch_marks: vec![(0, 0)],
            seeds,
        })
    }

    pub fn log(&self) -> &TransportLog {
        self.transport.log()
    }

    /// Fresh seed for a vehicle or other component, drawn deterministically.
    pub fn next_seed(&mut self) -> u64 {
        self.seeds.next_u64()
    }

    pub fn send(&mut self, from: &Endpoint, to: &Endpoint, msg: &Message) -> anyhow::Result<()> {
        self.transport.send(from, to, msg)?;
        self.pending.push_back((from.clone(), to.clone()));
        Ok(())
    }

    /// Delivers queued messages until the system is quiet.
    pub fn pump(&mut self) -> anyhow::Result<()> {
        while let Some((from, to)) = self.pending.pop_front() {
            let msg = self.transport.recv(&to, &from)?;
            let now = self.clock;
            match &to {
                Endpoint::Sns => {
                    for (dest, reply) in self.sns.handle(&from, msg, now) {
                        self.send(&Endpoint::Sns, &dest, &reply)?;
                    }
                }
                Endpoint::Ls(j) => {
                    let ls = self.lss.get_mut(*j as usize).ok_or_else(|| anyhow!("no ls:{j}"))?;
                    for reply in ls.handle(msg, now) {
                        self.send(&to, &Endpoint::Sns, &reply)?;
                    }
                }
                Endpoint::Vehicle(id) => self.inboxes.entry(id.clone()).or_default().push(msg),
            }
        }
        Ok(())
    }

    pub fn take_inbox(&mut self, id: &str) -> Vec<Message> {
        self.inboxes.remove(id).unwrap_or_default()
    }

    /// Sends one vehicle message, runs the system to quiescence and returns
    /// whatever came back to that vehicle.
    pub fn exchange(&mut self, id: &str, msg: &Message) -> anyhow::Result<Vec<Message>> {
        self.send(&Endpoint::Vehicle(id.to_string()), &Endpoint::Sns, msg)?;
        self.pump()?;
        Ok(self.take_inbox(id))
    }

    pub fn advance_epoch(&mut self) -> u64 {
        let e = self.sns.epoch_advance(self.clock);
        self.epoch_marks.push((self.log().len(), e));
        e
    }

    pub fn purge(&mut self) -> usize {
        let now = self.clock;
        self.lss.iter_mut().map(|ls| ls.purge_expired(now)).sum()
    }

    pub fn ls_dumps(&self) -> Vec<serde_json::Value> {
        self.lss.iter().map(|ls| ls.state_dump()).collect()
    }
}

pub fn vehicle_state(spec: &VehicleSpec) -> VehicleState {
    VehicleState {
        id: spec.id.clone(),
        location: Location::new(spec.location[0], spec.location[1]).expect("validated config"),
        friends: spec.friends.keys().cloned().collect(),
        friend_thresholds: spec.friends.clone(),
        stranger_threshold: spec.stranger_threshold,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryOutcome {
    pub at: u64,
    pub requester: String,
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub targets: Vec<String>,
    pub radius: Option<u32>,
    pub returned: Vec<Sighting>,
    pub expected: Vec<Eligible>,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerdictCheck {
    pub checked: usize,
    pub mismatches: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MessageSummary {
    pub seq: u64,
    pub sender: String,
    pub receiver: String,
    pub message: &'static str,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub seed: u64,
    pub queries: Vec<QueryOutcome>,
    pub verdicts: VerdictCheck,
    pub audits: Vec<AuditResult>,
    pub errors: Vec<String>,
    pub epochs: u64,
    pub messages: Vec<MessageSummary>,
    pub passed: bool,
}

impl ScenarioReport {
    pub fn violation_count(&self) -> usize {
        self.queries.iter().map(|q| q.violations.len()).sum::<usize>()
            + self.verdicts.mismatches.len()
            + self.errors.len()
    }
}

/// Everything a scenario run leaves behind.
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub log: Vec<LogEntry>,
    pub deployment: Deployment,
    pub god: GodView,
}

pub fn query_type_name(kind: QueryType) -> &'static str {
    match kind {
        QueryType::ParticularFriends => "pf",
        QueryType::FriendsWithin => "f",
        QueryType::StrangersWithin => "s",
    }
}

struct Runner {
    dep: Deployment,
    vehicles: BTreeMap<String, VehicleClient>,
    god: GodView,
    queries: Vec<QueryOutcome>,
    verdicts: VerdictCheck,
    errors: Vec<String>,
}

impl Runner {
    fn report_state(&mut self, id: &str) -> anyhow::Result<()> {
        let now = self.dep.clock;
        let v = self.vehicles.get_mut(id).ok_or_else(|| anyhow!("unknown vehicle {id}"))?;
        let msg = if v.is_registered() { v.build_update(now)? } else { v.build_registration(now)? };
        let replies = self.dep.exchange(id, &msg)?;
        match replies.as_slice() {
            [Message::Ack { .. }] => self.god.mark_reported(id, now),
            other => self.errors.push(format!("{id}: {} at {now} answered with {other:?}", msg.name())),
        }
        Ok(())
    }

    fn query(&mut self, requester: &str, kind: QueryType, targets: &[String], radius: Option<u32>) -> anyhow::Result<()> {
        let now = self.dep.clock;
        let expected = self.god.eligible(requester, kind, targets, radius, now);
        let v = self.vehicles.get_mut(requester).ok_or_else(|| anyhow!("unknown vehicle {requester}"))?;
        let msg = match kind {
            QueryType::ParticularFriends => v.query_particular_friends(targets)?,
            QueryType::FriendsWithin => v.query_friends_within(radius.unwrap_or(0))?,
            QueryType::StrangersWithin => v.query_strangers_within(radius.unwrap_or(0))?,
        };
        let verdicts_before = self.dep.sns.verdict_log().len();
        let replies = self.dep.exchange(requester, &msg)?;
        let mut violations = Vec::new();
        let returned = match replies.as_slice() {
            [Message::Reply(r)] => {
                let v = &self.vehicles[requester];
                let got = v.decrypt_response(r);
                if got.len() != r.items.len() {
                    violations.push(format!("{} of {} reply items failed to decrypt", r.items.len() - got.len(), r.items.len()));
                }
                got
            }
            [Message::Error(ErrorMsg { code, detail, .. })] => {
                violations.push(format!("error reply {code:?}: {detail}"));
                Vec::new()
            }
            other => {
                violations.push(format!("expected one reply, got {other:?}"));
                Vec::new()
            }
        };
        check_against_oracle(kind, &returned, &expected, &mut violations);

        let origin = self.god.vehicles[requester].location;
        for rec in &self.dep.sns.verdict_log()[verdicts_before..] {
            self.verdicts.checked += 1;
            let want_threshold = self.god.governing_threshold(requester, &rec.target, kind);
            let Some(at) = self.god.live_location(&rec.target, now) else {
                self.verdicts.mismatches.push(format!("{}: judged expired target {}", rec.session, rec.target));
                continue;
            };
            let expect = want_threshold.map(|th| oracle_compare(th, distance(origin, at)));
            if rec.requester != requester || want_threshold != Some(rec.threshold) || expect != Some(rec.verdict) {
                self.verdicts.mismatches.push(format!(
                    "session {}: {} -> {} threshold {} verdict {} (oracle threshold {:?}, verdict {:?})",
                    rec.session, rec.requester, rec.target, rec.threshold, rec.verdict, want_threshold, expect
                ));
            }
        }

        self.queries.push(QueryOutcome {
            at: now,
            requester: requester.to_string(),
            kind: query_type_name(kind),
            targets: targets.to_vec(),
            radius,
            returned,
            expected,
            violations,
        });
        Ok(())
    }
}

/// Compares a decrypted reply with the oracle in both directions: nothing
/// returned that the policy forbids, nothing eligible left out.
pub fn check_against_oracle(kind: QueryType, returned: &[Sighting], expected: &[Eligible], violations: &mut Vec<String>) {
    match kind {
        QueryType::ParticularFriends | QueryType::FriendsWithin => {
            let want: BTreeMap<&str, Location> = expected.iter().map(|e| (e.id.as_str(), e.location)).collect();
            let mut seen = BTreeSet::new();
            for s in returned {
                if !seen.insert(s.label.as_str()) {
                    violations.push(format!("{} returned twice", s.label));
                }
                match want.get(s.label.as_str()) {
                    None => violations.push(format!("{} returned but not eligible", s.label)),
                    Some(l) if *l != s.location => {
                        violations.push(format!("{} returned at {:?}, stored at {:?}", s.label, s.location, l))
                    }
                    _ => {}
                }
            }
            for e in expected {
                if !seen.contains(e.id.as_str()) {
                    violations.push(format!("eligible {} missing", e.id));
                }
            }
        }
        QueryType::StrangersWithin => {
            let mut want: Vec<Location> = expected.iter().map(|e| e.location).collect();
            let mut got: Vec<Location> = returned.iter().map(|s| s.location).collect();
            want.sort();
            got.sort();
            if want != got {
                violations.push(format!("stranger locations {got:?} differ from eligible {want:?}"));
            }
            let labels: BTreeSet<&str> = returned.iter().map(|s| s.label.as_str()).collect();
            if labels.len() != returned.len() {
                violations.push("stranger labels repeat".into());
            }
        }
    }
}

pub fn run_scenario(cfg: &ScenarioConfig, backend: Backend) -> anyhow::Result<ScenarioRun> {
    cfg.validate().map_err(|(m, _)| anyhow!("invalid scenario: {m}"))?;
    let params = DeploymentParams::from_config(cfg);
    let mut dep = Deployment::new(&params, backend)?;
    let ls_key = dep.ls_keypair.public_key().clone();
    let mut vehicles = BTreeMap::new();
    for spec in &cfg.fleet {
        let seed = dep.next_seed();
        vehicles.insert(spec.id.clone(), VehicleClient::new(vehicle_state(spec), ls_key.clone(), cfg.rsa_bits, seed));
    }
    let mut r = Runner {
        dep,
        vehicles,
        god: GodView::new(cfg),
        queries: Vec::new(),
        verdicts: VerdictCheck::default(),
        errors: Vec::new(),
    };

    for spec in &cfg.fleet {
        r.report_state(&spec.id).with_context(|| format!("registering {}", spec.id))?;
    }
    for event in &cfg.events {
        r.dep.clock = cfg.start_time + event.at;
        match &event.action {
            Action::Query { requester, kind, targets, radius } => r.query(requester, *kind, targets, *radius)?,
            Action::Move { id, location } => {
                let l = Location::new(location[0], location[1])?;
                r.vehicles.get_mut(id).expect("validated").state.location = l;
                r.god.move_to(id, l);
            }
            Action::Update { id, friends, stranger_threshold } => {
                let v = r.vehicles.get_mut(id).expect("validated");
                let g = r.god.vehicles.get_mut(id).expect("validated");
                if let Some(f) = friends {
                    v.state.friend_thresholds = f.clone();
                    g.friends = f.clone();
                }
                if let Some(ds) = stranger_threshold {
                    v.state.stranger_threshold = *ds;
                    g.stranger_threshold = *ds;
                }
                r.report_state(id)?;
            }
            Action::UpdateAll => {
                for spec in &cfg.fleet {
                    r.report_state(&spec.id)?;
                }
            }
            Action::AdvanceEpoch => {
                r.dep.advance_epoch();
            }
            Action::Purge => {
                r.dep.purge();
            }
        }
    }
    if r.dep.sns.open_sessions() != 0 {
        r.errors.push(format!("{} query sessions left open", r.dep.sns.open_sessions()));
    }

    let log = r.dep.log().entries();
    let ids: Vec<String> = cfg.fleet.iter().map(|v| v.id.clone()).collect();
    let audits = vec![
        audit::coordinates_absent(&log, &r.god.location_history),
        audit::identities_absent(&log, &ids, &r.dep.ls_dumps()),
        audit::pid_rotation(&log, &r.dep.epoch_marks, 1),
    ];
    let messages = log
        .iter()
        .map(|e| MessageSummary {
            seq: e.seq,
            sender: e.sender.to_string(),
            receiver: e.receiver.to_string(),
            message: e.message.name(),
            bytes: e.raw.len(),
        })
        .collect();
    let mut report = ScenarioReport {
        seed: cfg.seed,
        queries: r.queries,
        verdicts: r.verdicts,
        audits,
        errors: r.errors,
        epochs: r.dep.sns.epoch().index + 1,
        messages,
        passed: false,
    };
    report.passed = report.violation_count() == 0 && report.audits.iter().all(|a| a.passed);
    Ok(ScenarioRun { report, log, deployment: r.dep, god: r.god })
}

/// Convenience for tests: bail with the report's findings if anything
/// failed.
pub fn ensure_passed(report: &ScenarioReport) -> anyhow::Result<()> {
    if report.passed {
        return Ok(());
    }
    let mut lines = Vec::new();
    for q in &report.queries {
        for v in &q.violations {
            lines.push(format!("query at {} by {} ({}): {v}", q.at, q.requester, q.kind));
        }
    }
    lines.extend(report.verdicts.mismatches.iter().cloned());
    lines.extend(report.errors.iter().cloned());
    for a in &report.audits {
        lines.extend(a.findings.iter().map(|f| format!("audit {}: {f}", a.name)));
    }
    bail!("scenario seed {} failed:\n{}", report.seed, lines.join("\n"))
}

/// How long a TCP-backed scenario waits for any single frame.
pub const TCP_TIMEOUT: Duration = Duration::from_secs(30);
