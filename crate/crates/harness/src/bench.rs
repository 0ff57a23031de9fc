//! Scaling benchmark: a friends-within query against `n` eligible friends,
//! timed end to end with the comparison protocol's share timed separately.

use crate::sim::{Backend, Deployment, DeploymentParams};
use anyhow::{bail, ensure};
use ppls_core::asym::{asym_keygen, AsymKeypair};
use ppls_core::geo::{distance, Location};
use ppls_core::vehicle::{VehicleClient, VehicleState};
use ppls_core::wire::Message;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

/// Side of the square requesters are placed in, in meters.
pub const FIELD: u32 = 10_000;
/// Far larger than any friend threshold, so the radius never filters.
pub const BENCH_RADIUS: u32 = 2 * FIELD;
pub const CSV_HEADER: &str = "n,total_ms_mean,total_ms_std,cmp_ms_mean,cmp_ms_std,cmp_share";

#[derive(Debug, Clone)]
pub struct BenchParams {
    pub n_values: Vec<usize>,
    pub reps: usize,
    pub paillier_bits: u64,
    pub rsa_bits: u64,
    pub i_max: u32,
    pub ls_count: u32,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            n_values: (1..=10).map(|k| k * 10).collect(),
            reps: 10,
            paillier_bits: 1024,
            rsa_bits: 1024,
            i_max: 1000,
            ls_count: 3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub total_ms_mean: f64,
    pub total_ms_std: f64,
    pub cmp_ms_mean: f64,
    pub cmp_ms_std: f64,
    pub cmp_share: f64,
}

/// One timed query.
#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub total: Duration,
    pub cmp: Duration,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Mean and sample standard deviation; zero spread for fewer than two values.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Coefficient of determination of the least-squares line through the
/// points. `None` with fewer than two points or no spread in `xs`.
pub fn r_squared(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    if syy == 0.0 {
        return Some(1.0);
    }
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - (icept + slope * x)).powi(2)).sum();
    Some(1.0 - ss_res / syy)
}

pub fn row(n: usize, samples: &[Sample]) -> BenchRow {
    let totals: Vec<f64> = samples.iter().map(|s| ms(s.total)).collect();
    let cmps: Vec<f64> = samples.iter().map(|s| ms(s.cmp)).collect();
    let (total_ms_mean, total_ms_std) = mean_std(&totals);
    let (cmp_ms_mean, cmp_ms_std) = mean_std(&cmps);
    let cmp_share = if total_ms_mean > 0.0 { cmp_ms_mean / total_ms_mean } else { 0.0 };
    BenchRow { n, total_ms_mean, total_ms_std, cmp_ms_mean, cmp_ms_std, cmp_share }
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.3},{:.3},{:.3},{:.3},{:.4}\n",
            r.n, r.total_ms_mean, r.total_ms_std, r.cmp_ms_mean, r.cmp_ms_std, r.cmp_share
        ));
    }
    out
}

/// Keys generated once and reused across deployments; key generation is
/// not part of what is measured.
pub struct KeyPool {
    pub ls: AsymKeypair,
    pub vehicles: Vec<AsymKeypair>,
}

impl KeyPool {
    pub fn generate(rsa_bits: u64, vehicles: usize, rng: &mut ChaCha20Rng) -> Self {
        let ls = asym_keygen(rsa_bits, rng);
        let vehicles = (0..vehicles).map(|_| asym_keygen(rsa_bits, rng)).collect();
        Self { ls, vehicles }
    }
}

/// A requester with `n` friends, each placed inside its own threshold for
/// the requester.
pub struct BenchFleet {
    pub requester: VehicleState,
    pub friends: Vec<VehicleState>,
}

pub fn bench_fleet(n: usize, rng: &mut ChaCha20Rng) -> BenchFleet {
    let steps: Vec<u32> = (1..=10).map(|k| k * 10).collect();
    let origin = Location::new(rng.gen_range(0..FIELD), rng.gen_range(0..FIELD)).expect("in bounds");
    let ids: Vec<String> = (0..n).map(|i| format!("friend-{i:03}")).collect();
    let mut friends = Vec::with_capacity(n);
    let mut requester_thresholds = BTreeMap::new();
    for id in &ids {
        let theirs = *steps.choose(rng).expect("non-empty");
        let location = loop {
            let r = theirs as i64 - 1;
            let (dx, dy) = (rng.gen_range(-r..=r), rng.gen_range(-r..=r));
            let (x, y) = (origin.x as i64 + dx, origin.y as i64 + dy);
            if !(0..FIELD as i64).contains(&x) || !(0..FIELD as i64).contains(&y) {
                continue;
            }
            let l = Location::new(x as u32, y as u32).expect("in bounds");
            if distance(origin, l) < theirs {
                break l;
            }
        };
        requester_thresholds.insert(id.clone(), *steps.choose(rng).expect("non-empty"));
        friends.push(VehicleState {
            id: id.clone(),
            location,
            friends: BTreeSet::from(["requester".to_string()]),
            friend_thresholds: BTreeMap::from([("requester".to_string(), theirs)]),
            stranger_threshold: 100,
        });
    }
    let requester = VehicleState {
        id: "requester".into(),
        location: origin,
        friends: ids.iter().cloned().collect(),
        friend_thresholds: requester_thresholds,
        stranger_threshold: 100,
    };
    BenchFleet { requester, friends }
}

/// A registered deployment ready to time queries from its requester.
pub struct BenchRig {
    pub deployment: Deployment,
    pub requester: VehicleClient,
    pub expected: usize,
}

impl BenchRig {
    pub fn new(p: &BenchParams, n: usize, pool: &KeyPool, rng: &mut ChaCha20Rng) -> anyhow::Result<Self> {
        ensure!(pool.vehicles.len() > n, "key pool holds {} keys, {} needed", pool.vehicles.len(), n + 1);
        let params = DeploymentParams {
            ls_count: p.ls_count,
            i_max: p.i_max,
            paillier_bits: p.paillier_bits,
            rsa_bits: p.rsa_bits,
            update_cycle_secs: 600,
            record_ttl_secs: 660,
            dummy_count: 1,
            start_time: 1_700_000_000,
            seed: rng.next_u64(),
        };
        let mut deployment = Deployment::with_ls_keypair(&params, Backend::InProcess, pool.ls.clone())?;
        let ls_key = pool.ls.public_key().clone();
        let fleet = bench_fleet(n, rng);
        let now = deployment.clock;
        let mut clients: Vec<VehicleClient> = std::iter::once(fleet.requester)
            .chain(fleet.friends)
            .zip(&pool.vehicles)
            .map(|(state, key)| VehicleClient::with_keypair(state, key.clone(), ls_key.clone(), rng.next_u64()))
            .collect();
        for c in &mut clients {
            let msg = c.build_registration(now)?;
            let replies = deployment.exchange(&c.state.id.clone(), &msg)?;
            ensure!(matches!(replies.as_slice(), [Message::Ack { .. }]), "registration of {} failed", c.state.id);
        }
        let requester = clients.swap_remove(0);
        Ok(Self { deployment, requester, expected: n })
    }

    fn cmp_time(&self) -> Duration {
        self.deployment.sns.protocol_time() + self.deployment.lss.iter().map(|l| l.protocol_time()).sum::<Duration>()
    }

    /// One friends-within query, from building the request to decrypting
    /// the reply.
    pub fn time_query(&mut self) -> anyhow::Result<Sample> {
        let cmp_before = self.cmp_time();
        let id = self.requester.state.id.clone();
        let started = Instant::now();
        let msg = self.requester.query_friends_within(BENCH_RADIUS)?;
        let replies = self.deployment.exchange(&id, &msg)?;
        let Some(Message::Reply(reply)) = replies.first() else {
            bail!("query answered with {replies:?}");
        };
        let seen = self.requester.decrypt_response(reply);
        let total = started.elapsed();
        ensure!(seen.len() == self.expected, "{} of {} friends returned", seen.len(), self.expected);
        Ok(Sample { total, cmp: self.cmp_time() - cmp_before })
    }
}

/// Runs every `n` with `reps` timed queries each. `progress` sees each row
/// as it completes.
pub fn run_bench(p: &BenchParams, mut progress: impl FnMut(&BenchRow)) -> anyhow::Result<Vec<BenchRow>> {
    ensure!(p.reps >= 1, "reps must be at least 1");
    let mut rng = ChaCha20Rng::seed_from_u64(p.seed);
    let max_n = p.n_values.iter().copied().max().unwrap_or(0);
    let pool = KeyPool::generate(p.rsa_bits, max_n + 1, &mut rng);
    let mut rows = Vec::with_capacity(p.n_values.len());
    for &n in &p.n_values {
        let mut rig = BenchRig::new(p, n, &pool, &mut rng)?;
        let samples = (0..p.reps).map(|_| rig.time_query()).collect::<anyhow::Result<Vec<_>>>()?;
        let r = row(n, &samples);
        progress(&r);
        rows.push(r);
    }
    Ok(rows)
}

/// R² of the linear fit of mean total time against `n`.
pub fn total_fit(rows: &[BenchRow]) -> Option<f64> {
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.total_ms_mean).collect();
    r_squared(&xs, &ys)
}
