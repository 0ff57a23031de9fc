use ppls_core::geo::Location;
use ppls_harness::config::{random_scenario, RandomScenarioParams};
use ppls_harness::audit;
use ppls_harness::fixtures;
use ppls_harness::sim::{ensure_passed, run_scenario, Backend};

fn labels(run: &ppls_harness::sim::ScenarioRun, q: usize) -> Vec<(String, Location)> {
    run.report.queries[q].returned.iter().map(|s| (s.label.clone(), s.location)).collect()
}

#[test]
fn three_vehicle_fixture_returns_bob_and_carol() {
    let run = run_scenario(&fixtures::three_vehicle(50), Backend::InProcess).unwrap();
    ensure_passed(&run.report).unwrap();
    assert_eq!(labels(&run, 0), vec![("bob".to_string(), Location::new(5030, 5000).unwrap())]);
    let strangers = &run.report.queries[1].returned;
    assert_eq!(strangers.len(), 1);
    assert_eq!(strangers[0].location, Location::new(5000, 5080).unwrap());
    assert!(strangers[0].label.starts_with("s-"));
}

#[test]
fn tight_threshold_hides_bob() {
    let run = run_scenario(&fixtures::three_vehicle(20), Backend::InProcess).unwrap();
    ensure_passed(&run.report).unwrap();
    assert!(run.report.queries[0].returned.is_empty());
    assert_eq!(run.report.queries[1].returned.len(), 1);
}

#[test]
fn epoch_advance_keeps_answers_and_rotates_pids() {
    let run = run_scenario(&fixtures::three_vehicle_epochs(), Backend::InProcess).unwrap();
    ensure_passed(&run.report).unwrap();
    assert_eq!(run.report.epochs, 3);
    assert_eq!(run.report.queries.len(), 6);
    for pair in run.report.queries.chunks(2) {
        assert_eq!(pair[0].returned.len(), 1);
        assert_eq!(pair[1].returned.len(), 1);
    }
    assert!(audit::pid_rotation(&run.log, &run.deployment.epoch_marks, 3).passed);
}

#[test]
fn same_seed_same_report() {
    let cfg = random_scenario(21, &RandomScenarioParams::default());
    let a = run_scenario(&cfg, Backend::InProcess).unwrap();
    let b = run_scenario(&cfg, Backend::InProcess).unwrap();
    ensure_passed(&a.report).unwrap();
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    let raw_a: Vec<_> = a.log.iter().map(|e| e.raw.clone()).collect();
    let raw_b: Vec<_> = b.log.iter().map(|e| e.raw.clone()).collect();
    assert_eq!(raw_a, raw_b);
}

#[test]
fn tcp_backend_carries_identical_frames() {
    let cfg = fixtures::three_vehicle_epochs();
    let mem = run_scenario(&cfg, Backend::InProcess).unwrap();
    let tcp = run_scenario(&cfg, Backend::Tcp).unwrap();
    ensure_passed(&tcp.report).unwrap();
    assert_eq!(mem.log.len(), tcp.log.len());
    for (a, b) in mem.log.iter().zip(&tcp.log) {
        assert_eq!((&a.sender, &a.receiver, &a.raw), (&b.sender, &b.receiver, &b.raw), "frame {}", a.seq);
    }
}

#[test]
fn random_scenarios_exercise_every_outcome() {
    let p = RandomScenarioParams::default();
    let mut returned = [0usize; 3];
    let mut expired_targets = 0;
    for seed in 0..4 {
        let run = run_scenario(&random_scenario(seed, &p), Backend::InProcess).unwrap();
        ensure_passed(&run.report).unwrap();
        for q in &run.report.queries {
            let k = ["pf", "f", "s"].iter().position(|k| *k == q.kind).unwrap();
            returned[k] += q.returned.len();
        }
        expired_targets += run.report.errors.len();
    }
    assert!(returned.iter().all(|&n| n > 0), "{returned:?}");
    assert_eq!(expired_targets, 0);
}
