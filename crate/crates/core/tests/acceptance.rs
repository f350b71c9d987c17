//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use blockaudit::audit::{
    build_delete_audit, build_insert_audit, build_update_audit, canonical_encode, encode_transaction, parse_packet,
    AuditContext, AuditEntry, EntityKey, ObjectSnapshot, SeededIds, TransactionScheme,
};
use blockaudit::ledger::{check_sizing, restore_state, Chain, ChainKind, CommittedTx, DeploymentSizing, RestoredState};
use blockaudit::netsim::{
    count_messages, expected_messages, run_scenario, FaultKind, FaultProfile, LinkModel, ScenarioConfig, SimMetrics,
};
use blockaudit::ops::{populate_data_dir, run_bench, tamper_drill, ExperimentMatrix};
use blockaudit::pbft::{admit_request, Admission, ApprovalRounds, ReplicaId};
use blockaudit::CanonicalTimestamp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances and budgets.
const C1_MAX_VIRTUAL_MS: f64 = 10_000.0;
const C2_MIN_R2: f64 = 0.999;
const C2_BUDGET: Duration = Duration::from_secs(30);
const C3_MAX_INVERSIONS_PER_CURVE: usize = 1;
const C3_MIN_SEEDS: usize = 5;
const C3_BUDGET: Duration = Duration::from_secs(600);
const C4_LATENCY_MS: (f64, f64) = (200.0, 260.0);
const C5_BUDGET: Duration = Duration::from_secs(60);
const C5_BLOCKS: usize = 3;
const C5_MAX_BYTES: u64 = 64 * 1024;
const C6_SAMPLES: usize = 300;
const C7_PAIRS: usize = 100_000;
const C10_SCRIPTS: usize = 100;

type Outcome = Result<String, String>;

type Props = BTreeMap<String, Option<String>>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scenario(n: usize, max_tx: usize) -> ScenarioConfig {
    ScenarioConfig {
        name: format!("n{n}"),
        n,
        lambda: 20.0,
        duration_virtual_seconds: 1.0,
        max_transactions: Some(max_tx),
        link: LinkModel::constant(50.0),
        ..ScenarioConfig::default()
    }
}

fn honest_outcome(m: &SimMetrics, faulty: &BTreeSet<ReplicaId>) -> (usize, usize) {
    let honest: Vec<_> = m.txs.iter().filter(|t| !faulty.contains(&t.client)).collect();
    (honest.iter().filter(|t| t.t_c_ms.is_some()).count(), honest.len())
}

fn c1_quorum_boundary() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (label, fault) in [
        ("1 silent", FaultProfile::new(FaultKind::Silent, [2])),
        ("1 equivocator", FaultProfile::new(FaultKind::Equivocator, [2])),
    ] {
        let mut cfg = scenario(4, 20);
        cfg.faults = vec![fault];
        let faulty = cfg.faulty();
        let m = run_scenario(cfg).map_err(|e| e.to_string())?;
        let (done, total) = honest_outcome(&m, &faulty);
        ok &= done == total && total > 0 && m.end_ms < C1_MAX_VIRTUAL_MS;
        notes.push(format!("{label}: {done}/{total} honest committed in {:.0} ms", m.end_ms));
    }
    let mut cfg = scenario(4, 20);
    cfg.faults = vec![FaultProfile::new(FaultKind::Silent, [2, 3])];
    let m = run_scenario(cfg).map_err(|e| e.to_string())?;
    ok &= m.committed == 0 && !m.notifications.is_empty() && m.end_ms < C1_MAX_VIRTUAL_MS;
    notes.push(format!(
        "2 silent: {} committed, {} window aborts in {:.0} ms",
        m.committed,
        m.notifications.len(),
        m.end_ms
    ));
    check(ok, notes.join("; "))
}

/// Least-squares fit of y = a·n² + b·n, returning (a, b, R²).
fn fit_quadratic(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let (mut s4, mut s3, mut s2, mut sy2, mut sy1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(n, y) in points {
        s4 += n.powi(4);
        s3 += n.powi(3);
        s2 += n * n;
        sy2 += y * n * n;
        sy1 += y * n;
    }
    let det = s4 * s2 - s3 * s3;
    let a = (sy2 * s2 - s3 * sy1) / det;
    let b = (s4 * sy1 - s3 * sy2) / det;
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|&(n, y)| (y - (a * n * n + b * n)).powi(2)).sum();
    (a, b, 1.0 - ss_res / ss_tot)
}

fn c2_message_complexity() -> Outcome {
    let start = Instant::now();
    let mut points = Vec::new();
    let mut exact = true;
    for n in [4usize, 7, 10, 13] {
        let m = run_scenario(scenario(n, 1)).map_err(|e| e.to_string())?;
        let seq = m.txs[0].seq.ok_or("single transaction never ordered")?;
        let count = count_messages(&m, seq).map_err(|e| e.to_string())?;
        // Transaction 0 is issued by replica 1, a backup.
        exact &= count == expected_messages(n, false) && count == (2 * n * n - n) as u64;
        points.push((n as f64, count as f64));
    }
    let (a, b, r2) = fit_quadratic(&points);
    let took = start.elapsed();
    let counts: Vec<String> = points.iter().map(|(n, y)| format!("n={n}:{y}")).collect();
    check(
        exact && a > 0.0 && r2 > C2_MIN_R2 && took < C2_BUDGET,
        format!("{} ; fit a={a:.4} b={b:.4} R²={r2:.6}; closed form 2n²−n exact={exact}; {took:.1?}", counts.join(" ")),
    )
}

fn c3_latency_shape() -> Outcome {
    let start = Instant::now();
    let matrix = ExperimentMatrix::default();
    let report = run_bench(&matrix, None).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let worst = report.curves.iter().map(|c| c.inversions).max().unwrap_or(0);
    let truncated = report.sweep.runs.iter().filter(|r| r.truncated).count();
    let non_positive = report.non_positive_latencies();
    let ok = matrix.seeds.len() >= C3_MIN_SEEDS
        && !report.curves.is_empty()
        && worst <= C3_MAX_INVERSIONS_PER_CURVE
        && non_positive == 0
        && took < C3_BUDGET;
    check(
        ok,
        format!(
            "{} runs, {} seeds, {} curves, worst curve {worst} inversions (total {}), {non_positive} non-positive l_t, {truncated} truncated, {took:.1?}",
            report.sweep.runs.len(),
            matrix.seeds.len(),
            report.curves.len(),
            report.inversions(),
        ),
    )
}

fn c4_latency_bound() -> Outcome {
    let m = run_scenario(scenario(4, 1)).map_err(|e| e.to_string())?;
    let l = m.txs[0].l_t_ms().ok_or("transaction never committed")?;
    check(
        (C4_LATENCY_MS.0..=C4_LATENCY_MS.1).contains(&l),
        format!("l_t = {l:.3} ms, expected within [{}, {}]", C4_LATENCY_MS.0, C4_LATENCY_MS.1),
    )
}

fn c5_tamper_totality() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ScenarioConfig {
        name: "drill".into(),
        lambda: 2.0,
        duration_virtual_seconds: 100.0,
        max_transactions: Some(C5_BLOCKS),
        ..ScenarioConfig::default()
    };
    let blocks = populate_data_dir(dir.path(), cfg, 0).map_err(|e| e.to_string())?;
    let bytes: u64 = std::fs::read_dir(dir.path())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok()?.metadata().ok())
        .map(|m| m.len())
        .sum();
    let start = Instant::now();
    let report = tamper_drill(dir.path(), 7).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    check(
        blocks == C5_BLOCKS && bytes <= C5_MAX_BYTES && report.missed == 0 && report.detected == report.mutations_tried && took < C5_BUDGET,
        format!(
            "{blocks} blocks, {bytes} bytes on disk, {}/{} mutations detected, {} missed, {took:.1?}",
            report.detected, report.mutations_tried, report.missed
        ),
    )
}

fn ctx(rng: &mut ChaCha8Rng, ids: &mut SeededIds, t: i64) -> AuditContext {
    AuditContext {
        app_id: "APP-1".into(),
        session_id: blockaudit::audit::IdSource::next_id(ids),
        user_id: rng.gen_range(1..1000),
        url: "/orders".into(),
        now: CanonicalTimestamp::utc(t),
    }
}

fn c6_fixed_length() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ids = SeededIds::new(6);
    let mut sizes = BTreeSet::new();
    let mut samples = 0;
    for i in 0..C6_SAMPLES {
        let c = ctx(&mut rng, &mut ids, 1_600_000_000_000 + i as i64);
        let entries: Vec<AuditEntry> = (0..rng.gen_range(1..6))
            .map(|k| {
                let mut s = ObjectSnapshot::new("Order", (i * 10 + k) as i64);
                for p in 0..rng.gen_range(1..20) {
                    let len = rng.gen_range(0..400);
                    s = s.with(format!("P{p}"), "x".repeat(len));
                }
                build_insert_audit(&s, &c, &mut ids).unwrap()
            })
            .collect();
        for p in encode_transaction(&entries, TransactionScheme::FixedLength).map_err(|e| e.to_string())? {
            sizes.insert(p.bytes.len());
            samples += 1;
        }
    }
    let mut cfg = scenario(4, 10);
    cfg.scheme = TransactionScheme::FixedLength;
    let m = run_scenario(cfg.clone()).map_err(|e| e.to_string())?;
    let mut sim = blockaudit::netsim::Simulation::new(cfg).map_err(|e| e.to_string())?;
    sim.run();
    for (_, tx) in sim.replicas()[0].recovery().txs() {
        sizes.insert(tx.payload.as_ref().map_or(0, Vec::len));
        samples += 1;
    }
    check(
        sizes.len() == 1 && sizes.contains(&32) && m.committed > 0,
        format!("{samples} payloads (encoder and committed), sizes seen {sizes:?}"),
    )
}

fn c7_temporal_ordering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut wrong = 0;
    for i in 0..C7_PAIRS {
        let t_g: i64 = rng.gen_range(-1_000_000..1_000_000);
        let t_recv = match i % 3 {
            0 => t_g,
            1 => t_g + rng.gen_range(-3..=3),
            _ => rng.gen_range(-1_000_000..1_000_000),
        };
        let accepted = admit_request(t_g, t_recv) == Admission::Accept;
        if accepted != (t_recv > t_g) {
            wrong += 1;
        }
    }
    let mut cfg = scenario(4, 40);
    cfg.faults = vec![FaultProfile::new(FaultKind::TimestampForger { ahead_ms: 3_600_000 }, [2])];
    let m = run_scenario(cfg).map_err(|e| e.to_string())?;
    let forged = m.txs.iter().filter(|t| t.forged).count();
    let forged_committed = m.txs.iter().filter(|t| t.forged && t.t_c_ms.is_some()).count();
    let honest_committed = m.txs.iter().filter(|t| !t.forged && t.t_c_ms.is_some()).count();
    let honest = m.txs.iter().filter(|t| !t.forged).count();
    check(
        wrong == 0 && forged > 0 && forged_committed == 0 && honest_committed == honest,
        format!(
            "{C7_PAIRS} pairs, {wrong} disagreements; forger: {forged_committed}/{forged} forged committed, {honest_committed}/{honest} honest committed"
        ),
    )
}

fn c8_split_adversary() -> Outcome {
    let mut cfg = scenario(7, 10);
    cfg.faults = vec![FaultProfile::split([5], [6])];
    cfg.window.rounds = ApprovalRounds::Fixed { rounds: 3 };
    let m = run_scenario(cfg).map_err(|e| e.to_string())?;
    let suspects: BTreeSet<ReplicaId> = m.notifications.iter().flat_map(|n| n.notification.suspects.iter().copied()).collect();
    let expected: BTreeSet<ReplicaId> = [ReplicaId(5), ReplicaId(6)].into();
    check(
        !m.notifications.is_empty() && suspects == expected,
        format!("{} notifications, suspects {:?}, expected {:?}", m.notifications.len(), suspects, expected),
    )
}

fn c9_wire_golden() -> Outcome {
    let listing = include_str!("data/listing1.json");
    let golden = include_str!("data/listing1.canonical.json").trim_end();
    let entry = parse_packet(listing.as_bytes()).map_err(|e| e.to_string())?;
    let encoded = canonical_encode(&entry);
    let again = canonical_encode(&parse_packet(&encoded).map_err(|e| e.to_string())?);
    let text = String::from_utf8_lossy(&encoded);
    let ok = encoded == golden.as_bytes()
        && again == encoded
        && entry.user_id == 666
        && entry.entity_id == EntityKey::Int(161031)
        && text.contains(r#""CreatedDate":"\/Date(1532366360155-0400)\/""#);
    check(ok, format!("{} canonical bytes, golden match {}", encoded.len(), encoded == golden.as_bytes()))
}

/// Applies a random script directly to a property map and compares restore
/// output with it at sampled times.
fn c10_restore_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut samples = 0;
    for script in 0..C10_SCRIPTS {
        let mut ids = SeededIds::new(script as u64);
        let mut chain = Chain::new(ChainKind::Recovery);
        let key = EntityKey::Int(script as i64);
        // (commit time, state after it) in commit order.
        let mut oracle: Vec<(i64, Option<Props>)> = Vec::new();
        let mut current: Option<ObjectSnapshot> = None;
        let mut t = 1_000_000;
        for _ in 0..rng.gen_range(1..25) {
            t += rng.gen_range(1..50);
            let c = ctx(&mut rng, &mut ids, t);
            let entry = match current.take() {
                None => {
                    let mut s = ObjectSnapshot::new("Permit", script as i64);
                    for p in 0..rng.gen_range(1..4) {
                        s = s.with(format!("p{p}"), rng.gen_range(0..9).to_string());
                    }
                    let e = build_insert_audit(&s, &c, &mut ids).unwrap();
                    current = Some(s);
                    Some(e)
                }
                Some(s) if rng.gen_bool(0.15) => Some(build_delete_audit(&s, &c, &mut ids).unwrap()),
                Some(s) => {
                    let mut next = s.clone();
                    let existing: Vec<String> = s.properties.keys().cloned().collect();
                    if rng.gen_bool(0.2) {
                        let p = existing[rng.gen_range(0..existing.len())].clone();
                        next = next.with_null(p);
                    } else {
                        next = next.with(format!("p{}", rng.gen_range(0..5)), rng.gen_range(0..9).to_string());
                    }
                    let e = build_update_audit(&s, &next, &c, &mut ids).unwrap();
                    current = Some(next);
                    e
                }
            };
            let Some(entry) = entry else { continue };
            let t_c = t + rng.gen_range(1..5);
            t = t_c;
            let tx = CommittedTx::with_payload(
                entry.id,
                canonical_encode(&entry),
                entry.created_date,
                CanonicalTimestamp::utc(t_c),
            );
            chain.append_block(vec![tx], CanonicalTimestamp::utc(t_c)).unwrap();
            oracle.push((t_c, current.as_ref().map(|s| s.properties.clone())));
        }
        let (first, last) = (oracle[0].0, oracle.last().unwrap().0);
        for _ in 0..20 {
            let as_of = rng.gen_range(first - 5..=last + 5);
            samples += 1;
            let expected = oracle.iter().take_while(|(tc, _)| *tc <= as_of).last();
            let got = restore_state(&chain, "Permit", &key, CanonicalTimestamp::utc(as_of));
            let agree = match (expected, got.as_ref()) {
                (None, Err(_)) => true,
                (Some((_, None)), Ok(RestoredState::Deleted)) => true,
                (Some((_, Some(props))), Ok(RestoredState::Live(m))) => props == m,
                _ => false,
            };
            if !agree {
                return Err(format!(
                    "script {script} diverged at as_of {as_of}: expected {expected:?}, got {:?}",
                    restore_state(&chain, "Permit", &key, CanonicalTimestamp::utc(as_of))
                ));
            }
        }
    }
    Ok(format!("{C10_SCRIPTS} scripts, {samples} sampled points, all equal to the direct application"))
}

fn c11_sizing() -> Outcome {
    let cases = [((4, 8), false), ((4, 9), true), ((3, 9), false), ((3, 7), false), ((5, 10), false), ((5, 11), true), ((10, 21), true)];
    let mut wrong = Vec::new();
    for ((k_recovery, k_detection), accept) in cases {
        let got = check_sizing(&DeploymentSizing { k_recovery, k_detection }).is_ok();
        if got != accept {
            wrong.push(format!("({k_recovery},{k_detection})"));
        }
    }
    check(wrong.is_empty(), format!("{} boundary cases, wrong: {wrong:?}", cases.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("quorum/tolerance boundary at n=4", c1_quorum_boundary),
        ("message complexity", c2_message_complexity),
        ("latency shape over default matrix", c3_latency_shape),
        ("fault-free latency bound", c4_latency_bound),
        ("tamper detection totality", c5_tamper_totality),
        ("fixed-length payloads", c6_fixed_length),
        ("temporal ordering", c7_temporal_ordering),
        ("split-adversary exposure", c8_split_adversary),
        ("wire-format golden", c9_wire_golden),
        ("restore oracle", c10_restore_oracle),
        ("deployment sizing", c11_sizing),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let label = format!("{:02} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| label.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(d) => println!("PASS {label} [{:.1?}]: {d}", start.elapsed()),
            Err(d) => {
                failed += 1;
                println!("FAIL {label} [{:.1?}]: {d}", start.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
