use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use ppls_core::asym::asym_keygen;
use ppls_core::paillier;
use ppls_core::pid::EpochKey;
use ppls_harness::bench::{self, BenchParams};
use ppls_harness::config::ScenarioConfig;
use ppls_harness::fixtures;
use ppls_harness::sim::{run_scenario, Backend, ScenarioReport};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ppls", version, about = "Privacy-preserving location sharing: scenarios, audits and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the built-in three-vehicle fixture and print a transcript.
    Demo {
        #[arg(long)]
        json: bool,
        #[arg(long, value_enum, default_value_t = Backend::InProcess)]
        backend: Backend,
    },
    /// Run a scenario file and check every reply against the oracle.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        json: bool,
        /// Overrides the seed in the file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Backend::InProcess)]
        backend: Backend,
    },
    /// Time friends-within queries against growing numbers of friends.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60,70,80,90,100")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long, default_value_t = 1024)]
        paillier_bits: u64,
        #[arg(long, default_value_t = 1024)]
        rsa_bits: u64,
        #[arg(long, default_value_t = 1000)]
        imax: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate key material for one role and print it as JSON.
    Keygen {
        #[arg(long, value_enum)]
        role: Role,
        #[arg(long)]
        bits: Option<u64>,
        /// Deterministic output for a given seed; OS randomness otherwise.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Sns,
    Ls,
    Vehicle,
}

fn print_transcript(report: &ScenarioReport) {
    println!("messages:");
    for m in &report.messages {
        println!("  #{:<4} {:>10} -> {:<10} {:<24} {:>6} B", m.seq, m.sender, m.receiver, m.message, m.bytes);
    }
    println!("queries:");
    for q in &report.queries {
        let mut params = Vec::new();
        if !q.targets.is_empty() {
            params.push(format!("targets={}", q.targets.join(",")));
        }
        if let Some(l) = q.radius {
            params.push(format!("l={l}"));
        }
        println!("  t+{} {} {} {}", q.at, q.requester, q.kind, params.join(" "));
        for s in &q.returned {
            println!("    {} at ({}, {})", s.label, s.location.x, s.location.y);
        }
        if q.returned.is_empty() {
            println!("    (nothing)");
        }
        for v in &q.violations {
            println!("    VIOLATION {v}");
        }
    }
    println!("verdicts checked: {}, mismatches: {}", report.verdicts.checked, report.verdicts.mismatches.len());
    for m in &report.verdicts.mismatches {
        println!("  MISMATCH {m}");
    }
    for e in &report.errors {
        println!("error: {e}");
    }
    for a in &report.audits {
        println!("audit {:<20} {}", a.name, if a.passed { "pass" } else { "FAIL" });
        for f in &a.findings {
            println!("  {f}");
        }
    }
    println!("{}", if report.passed { "ok" } else { "FAILED" });
}

fn emit(report: &ScenarioReport, json: bool) -> anyhow::Result<ExitCode> {
    if json {
        println!("{}", serde_json::to_string_pretty(report)?);
    } else {
        print_transcript(report);
    }
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn keygen(role: Role, bits: Option<u64>, seed: Option<u64>) -> serde_json::Value {
    let mut rng = match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    };
    match role {
        Role::Sns => {
            let bits = bits.unwrap_or(1024);
            let epoch = EpochKey::random(&mut rng);
            let (pk, sk) = paillier::keygen(bits, &mut rng);
            serde_json::json!({
                "role": "sns",
                "epoch_key": hex::encode(epoch.as_bytes()),
                "comparison_key": {
                    "bits": bits,
                    "public": hex::encode(pk.to_bytes()),
                    "private": hex::encode(sk.to_bytes()),
                },
            })
        }
        Role::Ls | Role::Vehicle => {
            let bits = bits.unwrap_or(1024);
            let kp = asym_keygen(bits, &mut rng);
            serde_json::json!({
                "role": if matches!(role, Role::Ls) { "ls" } else { "vehicle" },
                "bits": bits,
                "public": hex::encode(kp.public_key().to_bytes()),
                "private": hex::encode(kp.to_bytes()),
            })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Demo { json, backend } => {
            let run = run_scenario(&fixtures::three_vehicle(50), backend)?;
            emit(&run.report, json)
        }
        Command::Run { config, json, seed, backend } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = ScenarioConfig::from_json(&text).map_err(|e| anyhow::anyhow!("{}: {e}", config.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let run = run_scenario(&cfg, backend)?;
            emit(&run.report, json)
        }
        Command::Bench { n, reps, paillier_bits, rsa_bits, imax, seed, out } => {
            let p = BenchParams { n_values: n, reps, paillier_bits, rsa_bits, i_max: imax, seed, ..Default::default() };
            let rows = bench::run_bench(&p, |r| {
                eprintln!("n={:<4} total {:>10.1} ms  cmp {:>10.1} ms  share {:.3}", r.n, r.total_ms_mean, r.cmp_ms_mean, r.cmp_share)
            })?;
            if let Some(r2) = bench::total_fit(&rows) {
                eprintln!("linear fit of total time: R^2 = {r2:.4}");
            }
            let csv = bench::to_csv(&rows);
            match out {
                Some(path) => std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Keygen { role, bits, seed } => {
            println!("{}", serde_json::to_string_pretty(&keygen(role, bits, seed))?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
