//! Acceptance gate. Runs every criterion in sequence on one thread so the
//! timing-sensitive ones are not disturbed, prints one PASS/FAIL line per
//! criterion, then exits nonzero if any criterion failed. Built without the
//! libtest harness so the lines are shown even when everything passes.

use num_bigint::{BigUint, RandBigInt};
use ppls_core::distcmp::{self, comparison_keygen, judge, make_threshold_ct, oracle_compare, ComparisonParams, DistCmpError};
use ppls_core::paillier::{self, PaillierCiphertext};
use ppls_harness::audit;
use ppls_harness::bench::{self, BenchParams, BenchRig, KeyPool};
use ppls_harness::config::{random_scenario, RandomScenarioParams};
use ppls_harness::fixtures;
use ppls_harness::sim::{run_scenario, Backend, ScenarioRun};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeSet;
use std::time::{Duration, Instant};

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(results: &mut Vec<(u32, &'static str, bool)>, id: u32, name: &'static str, o: Outcome) {
    println!("criterion {id} {}: {} ({})", if o.passed { "PASS" } else { "FAIL" }, name, o.detail);
    results.push((id, name, o.passed));
}

fn big(v: u64) -> BigUint {
    BigUint::from(v)
}

// Independent small-number Paillier for p = 11, q = 13.
const N: u128 = 143;
const N2: u128 = N * N;

fn pow_mod(mut b: u128, mut e: u128, m: u128) -> u128 {
    let mut r = 1;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = r * b % m;
        }
        b = b * b % m;
        e >>= 1;
    }
    r
}

fn oracle_encrypt(m: u128, r: u128) -> u128 {
    pow_mod(N + 1, m, N2) * pow_mod(r, N, N2) % N2
}

fn oracle_decrypt(c: u128) -> u128 {
    let lambda = 60; // lcm(10, 12)
    let l = |u: u128| (u - 1) / N;
    let mu = (1..N).find(|x| l(pow_mod(N + 1, lambda, N2)) * x % N == 1).unwrap();
    l(pow_mod(c, lambda, N2)) * mu % N
}

fn paillier_conformance() -> Outcome {
    let started = Instant::now();
    let mut failures = Vec::new();

    let sk = paillier::keypair_from_primes(&big(11), &big(13)).unwrap();
    let pk = sk.public_key();
    let hand = [(0u64, 2u64), (1, 3), (5, 3), (42, 7), (100, 34), (142, 142)];
    let mut hand_ok = 0;
    for (m, r) in hand {
        let c = pk.encrypt_with_nonce(&big(m), &big(r)).unwrap();
        let want = oracle_encrypt(m as u128, r as u128);
        let decrypted = sk.decrypt(&PaillierCiphertext::from_value(BigUint::from(want))).unwrap();
        if c.value() == &BigUint::from(want) && oracle_decrypt(want) == m as u128 && decrypted == big(m) {
            hand_ok += 1;
        } else {
            failures.push(format!("hand case m={m} r={r}"));
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(0xacce_0001);
    let (pk, sk) = paillier::keygen(512, &mut rng);
    let n = pk.n().clone();
    let (mut round, mut add, mut scale) = (0, 0, 0);
    for _ in 0..100 {
        let m = rng.gen_biguint_below(&n);
        round += (sk.decrypt(&pk.encrypt(&m, &mut rng).unwrap()).unwrap() == m) as usize;

        let (a, b) = (rng.gen_biguint_below(&n), rng.gen_biguint_below(&n));
        let sum = pk.add(&pk.encrypt(&a, &mut rng).unwrap(), &pk.encrypt(&b, &mut rng).unwrap());
        add += (sk.decrypt(&sum).unwrap() == (&a + &b) % &n) as usize;

        let (m, k) = (rng.gen_biguint_below(&n), rng.gen_biguint_below(&n));
        let scaled = pk.scale(&pk.encrypt(&m, &mut rng).unwrap(), &k);
        scale += (sk.decrypt(&scaled).unwrap() == (&m * &k) % &n) as usize;
    }
    let elapsed = started.elapsed();
    if (round, add, scale) != (100, 100, 100) {
        failures.push(format!("round-trip {round}/100, additive {add}/100, scalar {scale}/100"));
    }
    if elapsed >= Duration::from_secs(30) {
        failures.push(format!("took {elapsed:.1?}"));
    }
    Outcome {
        passed: failures.is_empty(),
        detail: format!(
            "{hand_ok}/{} hand cases, round-trip {round}/100, additive {add}/100, scalar {scale}/100 at 512 bits, {:.1?}{}",
            hand.len(),
            elapsed,
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    }
}

/// The composed protocol. A zero threshold is outside the comparison's
/// domain and is refused before any ciphertext exists; nobody is within
/// zero meters, so that refusal is a negative verdict.
fn compose(
    pk: &paillier::PaillierPublicKey,
    sk: &paillier::PaillierPrivateKey,
    params: &ComparisonParams,
    d_t: u32,
    d_a: u32,
    rng: &mut ChaCha20Rng,
) -> bool {
    match make_threshold_ct(pk, d_t, params, rng) {
        Ok(c) => judge(sk, &distcmp::respond(pk, &c, d_a, params, rng).unwrap()).unwrap(),
        Err(DistCmpError::ThresholdOutOfRange(0)) => false,
        Err(e) => panic!("{e}"),
    }
}

fn protocol_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0xacce_0002);
    let mut mismatches = Vec::new();

    let (pk, sk) = comparison_keygen(64, &mut rng);
    let params = ComparisonParams::with_i_max(40).unwrap();
    let mut exhaustive = 0;
    for d_t in 0..=40 {
        for d_a in 0..=40 {
            exhaustive += 1;
            if compose(&pk, &sk, &params, d_t, d_a, &mut rng) != oracle_compare(d_t, d_a) {
                mismatches.push(format!("({d_t}, {d_a}) at 64 bits"));
            }
        }
    }

    let (pk, sk) = comparison_keygen(512, &mut rng);
    let params = ComparisonParams::with_i_max(1000).unwrap();
    let mut positives = 0;
    for _ in 0..200 {
        let d_t = rng.gen_range(1..=1000u32);
        // Half the pairs straddle the threshold closely, half anywhere.
        let d_a = if rng.gen_bool(0.5) {
            d_t.saturating_sub(3) + rng.gen_range(0..6)
        } else {
            rng.gen_range(0..=2000)
        };
        let got = compose(&pk, &sk, &params, d_t, d_a, &mut rng);
        positives += got as usize;
        if got != oracle_compare(d_t, d_a) {
            mismatches.push(format!("({d_t}, {d_a}) at 512 bits"));
        }
    }
    let elapsed = started.elapsed();
    let in_time = elapsed < Duration::from_secs(300);
    Outcome {
        passed: mismatches.is_empty() && in_time,
        detail: format!(
            "{exhaustive} exhaustive pairs at 64 bits, 200 random pairs at 512 bits ({positives} true), {} mismatches, {elapsed:.1?}{}",
            mismatches.len(),
            if mismatches.is_empty() { String::new() } else { format!(": {}", mismatches.join(", ")) }
        ),
    }
}

fn end_to_end(runs: &[ScenarioRun]) -> Outcome {
    let mut violations = 0;
    let mut returned = [0usize; 3];
    let mut queries = [0usize; 3];
    let mut crossed_epochs = 0;
    let mut first = None;
    for run in runs {
        let r = &run.report;
        violations += r.violation_count();
        if r.violation_count() > 0 && first.is_none() {
            first = Some(format!("seed {}", r.seed));
        }
        for q in &r.queries {
            let k = ["pf", "f", "s"].iter().position(|k| *k == q.kind).expect("known kind");
            queries[k] += 1;
            returned[k] += q.returned.len();
        }
        crossed_epochs += (r.epochs >= 2) as usize;
    }
    let all_types = returned.iter().all(|&n| n > 0);
    Outcome {
        passed: violations == 0 && all_types && crossed_epochs == runs.len(),
        detail: format!(
            "{} scenarios, queries pf/f/s {:?}, locations returned {:?}, {crossed_epochs} crossing an epoch boundary, {violations} violations{}",
            runs.len(),
            queries,
            returned,
            first.map(|f| format!(" (first in {f})")).unwrap_or_default()
        ),
    }
}

fn blindness(runs: &[ScenarioRun]) -> Outcome {
    let mut findings: [usize; 3] = [0; 3];
    let mut examples = Vec::new();
    let mut epochs = BTreeSet::new();
    let mut frames = 0;
    for run in runs {
        frames += run.log.len();
        let ids: Vec<String> = run.god.vehicles.keys().cloned().collect();
        let results = [
            audit::coordinates_absent(&run.log, &run.god.location_history),
            audit::identities_absent(&run.log, &ids, &run.deployment.ls_dumps()),
            audit::pid_rotation(&run.log, &run.deployment.epoch_marks, 3),
        ];
        for (k, a) in results.iter().enumerate() {
            findings[k] += a.findings.len();
            examples.extend(a.findings.iter().take(2).cloned());
        }
        epochs.insert(run.report.epochs);
    }
    Outcome {
        passed: findings.iter().all(|&f| f == 0),
        detail: format!(
            "{} logs, {frames} frames, findings coordinates/identities/rotation {:?}, epochs per scenario {:?}{}",
            runs.len(),
            findings,
            epochs,
            if examples.is_empty() { String::new() } else { format!(": {}", examples[..examples.len().min(3)].join("; ")) }
        ),
    }
}

const BENCH_BUDGET: Duration = Duration::from_secs(30 * 60);

/// Projects the full run at the given key size from one warm query at
/// n = 10, assuming cost proportional to n.
fn project_bench(bits: u64, p: &BenchParams) -> anyhow::Result<Duration> {
    let mut rng = ChaCha20Rng::seed_from_u64(p.seed ^ 0xface);
    let started = Instant::now();
    let max_n = p.n_values.iter().copied().max().unwrap_or(0);
    // Key pool generation is part of the real run, so time a slice of it.
    let probe_keys = 11;
    let pool = KeyPool::generate(bits, probe_keys, &mut rng);
    let keygen = started.elapsed().mul_f64((max_n + 1) as f64 / (probe_keys + 1) as f64);
    let probe = BenchParams { paillier_bits: bits, rsa_bits: bits, ..p.clone() };
    let setup_started = Instant::now();
    let mut rig = BenchRig::new(&probe, 10, &pool, &mut rng)?;
    let setup = setup_started.elapsed();
    rig.time_query()?;
    let per_query = rig.time_query()?.total;
    let queries: f64 = p.n_values.iter().map(|&n| n as f64 / 10.0).sum::<f64>() * p.reps as f64;
    let setups: f64 = p.n_values.iter().map(|&n| (n as f64 + 1.0) / 11.0).sum();
    Ok(keygen + per_query.mul_f64(queries) + setup.mul_f64(setups))
}

fn scaling_shape() -> Outcome {
    let base = BenchParams::default();
    let (bits, note) = match project_bench(1024, &base) {
        Ok(t) if t <= BENCH_BUDGET => (1024, format!("projected {:.0} s at 1024 bits", t.as_secs_f64())),
        Ok(t) => (768, format!("projected {:.0} s at 1024 bits exceeds the budget, evaluated at 768 bits", t.as_secs_f64())),
        Err(e) => return Outcome { passed: false, detail: format!("probe failed: {e:#}") },
    };
    let p = BenchParams { paillier_bits: bits, rsa_bits: bits, ..base };
    let started = Instant::now();
    let rows = match bench::run_bench(&p, |r| {
        eprintln!("  bench n={:<3} total {:>9.1} ms cmp {:>9.1} ms share {:.3}", r.n, r.total_ms_mean, r.cmp_ms_mean, r.cmp_share)
    }) {
        Ok(rows) => rows,
        Err(e) => return Outcome { passed: false, detail: format!("bench failed: {e:#}") },
    };
    let elapsed = started.elapsed();
    let csv = bench::to_csv(&rows);
    let out = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_bench.csv");
    let _ = std::fs::write(&out, &csv);
    eprint!("{csv}");
    let r2 = bench::total_fit(&rows).unwrap_or(f64::NAN);
    let min_share = rows.iter().map(|r| r.cmp_share).fold(f64::INFINITY, f64::min);
    let per_10 = rows.last().map(|r| r.total_ms_mean / r.n as f64 * 10.0).unwrap_or(0.0);
    Outcome {
        passed: r2 >= 0.98 && min_share >= 0.5 && elapsed <= BENCH_BUDGET,
        detail: format!(
            "{note}; R^2 {r2:.4}, min comparison share {min_share:.3}, about {per_10:.0} ms per 10 vehicles, bench {:.0} s, csv {}",
            elapsed.as_secs_f64(),
            out.display()
        ),
    }
}

fn strictness() -> Outcome {
    let mut failures = Vec::new();
    let cases = fixtures::boundary_cases();
    for c in &cases {
        for (cfg, want, what) in [(c.config(), 0, "boundary"), (c.control().config(), 1, "one meter inside")] {
            match run_scenario(&cfg, Backend::InProcess) {
                Ok(run) => {
                    let got = run.report.queries[0].returned.len();
                    if got != want || !run.report.passed {
                        failures.push(format!("{} ({what}): {got} returned, {} violations", c.name, run.report.violation_count()));
                    }
                }
                Err(e) => failures.push(format!("{}: {e:#}", c.name)),
            }
        }
    }
    Outcome {
        passed: failures.is_empty(),
        detail: format!("{} boundary cases with controls, {} violations{}", cases.len(), failures.len(), if failures.is_empty() { String::new() } else { format!(": {}", failures.join("; ")) }),
    }
}

fn ttl() -> Outcome {
    let cfg = fixtures::ttl_case();
    let run = match run_scenario(&cfg, Backend::InProcess) {
        Ok(run) => run,
        Err(e) => return Outcome { passed: false, detail: format!("{e:#}") },
    };
    let q = &run.report.queries;
    let before = q[0].returned.len();
    let after = q[1].returned.len();
    Outcome {
        passed: before == 1 && after == 0 && run.report.passed,
        detail: format!(
            "tl = {} s: {before} returned at tl - 1, {after} returned at tl + 1 after purge, {} violations",
            cfg.record_ttl_secs,
            run.report.violation_count()
        ),
    }
}

fn main() -> std::process::ExitCode {
    let mut results = Vec::new();
    report(&mut results, 1, "paillier conformance", paillier_conformance());
    report(&mut results, 2, "comparison protocol equivalence", protocol_equivalence());

    let params = RandomScenarioParams::default();
    let mut runs = Vec::new();
    let mut setup_errors = Vec::new();
    for seed in 0..50 {
        match run_scenario(&random_scenario(1000 + seed, &params), Backend::InProcess) {
            Ok(run) => runs.push(run),
            Err(e) => setup_errors.push(format!("seed {}: {e:#}", 1000 + seed)),
        }
    }
    let mut e2e = end_to_end(&runs);
    if !setup_errors.is_empty() || runs.len() != 50 {
        e2e.passed = false;
        e2e.detail.push_str(&format!("; {} scenarios failed to run: {}", setup_errors.len(), setup_errors.join("; ")));
    }
    report(&mut results, 3, "end-to-end policy oracle", e2e);
    report(&mut results, 4, "blindness audits", blindness(&runs));
    drop(runs);

    report(&mut results, 5, "scaling shape", scaling_shape());
    report(&mut results, 6, "strictness boundaries", strictness());
    report(&mut results, 7, "record lifetime", ttl());

    let failed: Vec<_> = results.iter().filter(|r| !r.2).map(|r| format!("{} {}", r.0, r.1)).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        std::process::ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria: {}", failed.join(", "));
        std::process::ExitCode::FAILURE
    }
}
