//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if a criterion fails that is not listed in `KNOWN_FAILURES`.

use std::collections::BTreeSet;
use std::fs;
use std::panic;
use std::path::PathBuf;
use std::time::Instant;

use gra_cli::{fig3_table, fig4_table, run_manifest, Preset, RunManifest, Table};
use gra_core::channel::LinkBudget;
use gra_core::clustering::{global_group_update, CapacityKMeans, GcHistory, GcPolicy, Partition};
use gra_core::engine::{initial_grouping, sweep, SweepVariable};
use gra_core::protocol::frame::{parse_frame, AggregatedFrame, DataRecord, Direction, FrameHeader, SignalingKind, SignalingMessage};
use gra_core::rach::{resolve_slot, RaAttempt, RachConfig, Requester, SlotOutcome};
use gra_core::rng::stream;
use gra_core::scenario::{build_scenario, ScenarioConfig};
use gra_core::{run, AccessMode, Config, MonteCarloReport, SimTime};
use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;

/// Criteria the model does not meet; see the project notes.
const KNOWN_FAILURES: &[&str] = &["4a", "4c"];

const Z99: f64 = 2.575_829_303_548_901;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: &'static str, title: &str, start: Instant, pass: bool, detail: String) -> Outcome {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("[{verdict}] {id} {title} ({:.1}s): {detail}", start.elapsed().as_secs_f64());
    Outcome { id, pass, detail }
}

fn rach_analytic() -> Outcome {
    let t = Instant::now();
    let cfg = RachConfig::default();
    let slots = 100_000u64;
    let mut rng = stream(101, "acceptance-rach");
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for k in [1usize, 2, 5, 10, 50] {
        let mut wins = 0u64;
        for _ in 0..slots {
            let mut attempts: Vec<RaAttempt> =
                (0..k).map(|i| RaAttempt::new(Requester::Device(i as u32), SimTime::ZERO, SimTime::ZERO)).collect();
            wins += resolve_slot(&mut attempts, &cfg, &mut rng).iter().filter(|o| **o == SlotOutcome::Success).count() as u64;
        }
        let n = (slots * k as u64) as f64;
        let p = (1.0 - 1.0 / cfg.preambles as f64).powi(k as i32 - 1);
        let phat = wins as f64 / n;
        let half = Z99 * (p * (1.0 - p) / n).sqrt();
        pass &= (phat - p).abs() <= half;
        if half > 0.0 {
            worst = worst.max((phat - p).abs() / half);
        }
    }
    report("1", "RACH analytic match", t, pass, format!("max |p̂-p| / CI half-width = {worst:.2}"))
}

fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    xs.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

fn second_difference(xs: &[f64]) -> Vec<f64> {
    xs.windows(3).map(|s| s[2] - 2.0 * s[1] + s[0]).collect()
}

/// Sign changes of the mean smoothed second difference, counting only
/// entries more than 3 standard errors from zero.
fn significant_sign_changes(curves: &[Vec<f64>]) -> usize {
    let d2: Vec<Vec<f64>> = curves.iter().map(|c| second_difference(&moving_average(c, 9))).collect();
    let n = d2.len() as f64;
    let signs: Vec<f64> = (0..d2[0].len())
        .filter_map(|i| {
            let mean = d2.iter().map(|c| c[i]).sum::<f64>() / n;
            let var = d2.iter().map(|c| (c[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean.abs() > 3.0 * (var / n).sqrt()).then(|| mean.signum())
        })
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

fn column(t: &Table, name: &str) -> Vec<f64> {
    t.column(name).unwrap().iter().map(|v| v.parse().unwrap()).collect()
}

fn fig3_shape() -> Outcome {
    let t = Instant::now();
    let base = Config::default();
    let trials = 100;
    let (mut per, mut rel) = (Vec::new(), Vec::new());
    for seed in 1..=trials {
        let m = RunManifest { runs: 1, seed, ..RunManifest::new("unused") };
        let table = fig3_table(&base, &m).unwrap();
        per.push(column(&table, "mean_per"));
        rel.push(column(&table, "mean_reliability"));
    }
    let mean = |curves: &[Vec<f64>]| -> Vec<f64> {
        (0..curves[0].len()).map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64).collect()
    };
    let (mp, mr) = (mean(&per), mean(&rel));
    let per_up = mp.windows(2).all(|w| w[1] >= w[0]);
    let rel_down = mr.windows(2).all(|w| w[1] <= w[0]);
    let (cp, cr) = (significant_sign_changes(&per), significant_sign_changes(&rel));
    let pass = per_up && rel_down && cp == 1 && cr == 1;
    report(
        "2",
        "fig3 shape",
        t,
        pass,
        format!(
            "PER {:.3}->{:.3} non-decreasing={per_up}, reliability {:.3}->{:.3} non-increasing={rel_down}, sign changes {cp}/{cr} ({trials} trials per size)",
            mp[0],
            mp[mp.len() - 1],
            mr[0],
            mr[mr.len() - 1]
        ),
    )
}

fn fig4_anchors() -> Outcome {
    let t = Instant::now();
    let m = RunManifest { runs: 5, seed: 1, ..RunManifest::new("unused") };
    let table = fig4_table(&Config::default(), &m).unwrap();
    let (mae, mean, worst) = (column(&table, "mae"), column(&table, "mean_per"), column(&table, "worst_per"));
    let m1 = (0..mae.len()).find(|&i| worst[i] > 0.2 && mean[i] < 0.05);
    let m2 = m1.and_then(|i1| (i1 + 1..mae.len()).find(|&i| (0.002..=0.05).contains(&mean[i]) && worst[i] > 0.9));
    let at = |i: usize| format!("mae {} dB: mean {:.4}, worst {:.3}", mae[i], mean[i], worst[i]);
    let detail = match (m1, m2) {
        (Some(a), Some(b)) => format!("m1 = {}; m2 = {}", at(a), at(b)),
        _ => "no MAE pair satisfies the anchors".to_string(),
    };
    report("3", "fig4 anchors", t, m1.is_some() && m2.is_some(), detail)
}

fn censored_mean(r: &MonteCarloReport) -> f64 {
    let (s, n) = r.runs.iter().fold((0.0, 0u64), |(s, n), x| {
        (s + x.delays.iter().sum::<f64>() + x.censored.sum, n + x.delays.len() as u64 + x.censored.count)
    });
    s / n as f64
}

fn fig6_ordering() -> Vec<Outcome> {
    let t = Instant::now();
    let config = Config::default();
    let budget = config.engine.ull_delay_budget;
    let runs = 10;
    let points = [1e3, 1e4, 3e4];
    let eab = sweep(&config, SweepVariable::DeviceCount, &points, AccessMode::Eab, runs, 1).unwrap();
    let grouped = sweep(&config, SweepVariable::DeviceCount, &points, AccessMode::GroupedRa, runs, 1).unwrap();
    for ((n, e), (_, g)) in eab.iter().zip(&grouped) {
        println!(
            "    N={n}: EAB served {:.4} censored {:.4} ULL {:.4} | grouped served {:.4} censored {:.4} ULL {:.4}",
            e.mean_delay(),
            censored_mean(e),
            e.ull_mean_delay(),
            g.mean_delay(),
            censored_mean(g),
            g.ull_mean_delay()
        );
    }
    let em: Vec<f64> = eab.iter().map(|(_, r)| r.mean_delay()).collect();
    let gm: Vec<f64> = grouped.iter().map(|(_, r)| r.mean_delay()).collect();
    let increasing = em.windows(2).all(|w| w[1] > w[0]);
    let censored_increasing = eab.windows(2).all(|w| censored_mean(&w[1].1) > censored_mean(&w[0].1));
    let a = report(
        "4a",
        "EAB mean delay strictly increasing in N",
        t,
        increasing,
        format!("served-only {em:.4?}; pending-censored increasing={censored_increasing}"),
    );
    let b_pass = gm[1] < em[1] && gm[2] < em[2];
    let b = report("4b", "grouped RA below EAB at 1e4 and 3e4", t, b_pass, format!("grouped {gm:.4?} vs EAB {em:.4?}"));

    let mut lines = Vec::new();
    let mut found = None;
    for n_star in [1e3, 1e4, 1.5e4] {
        let eab_ull = match eab.iter().find(|(n, _)| *n == n_star) {
            Some((_, r)) => r.ull_mean_delay(),
            None => sweep(&config, SweepVariable::DeviceCount, &[n_star], AccessMode::Eab, runs, 1).unwrap()[0].1.ull_mean_delay(),
        };
        let grouped_ull = match grouped.iter().find(|(n, _)| *n == 3.0 * n_star) {
            Some((_, r)) => r.ull_mean_delay(),
            None => sweep(&config, SweepVariable::DeviceCount, &[3.0 * n_star], AccessMode::GroupedRa, runs, 1).unwrap()[0]
                .1
                .ull_mean_delay(),
        };
        lines.push(format!("N*={n_star}: EAB ULL {eab_ull:.4} vs grouped ULL at 3N* {grouped_ull:.4}"));
        if eab_ull > budget && grouped_ull < budget && found.is_none() {
            found = Some(n_star);
        }
    }
    let c = report(
        "4c",
        "ULL budget threshold N*",
        t,
        found.is_some(),
        format!("budget {budget} s; {}", lines.join("; ")),
    );
    vec![a, b, c]
}

fn no_extra_ra() -> Outcome {
    let t = Instant::now();
    let mut c = Config::default();
    c.engine.ideal_d2d = true;
    let r = run(&c, AccessMode::GroupedRa, 1).unwrap();
    let pass = r.ra_requests == r.completed_cycles + r.unfinished_cycles && r.direct_attempts == 0 && r.completed_cycles > 0;
    report(
        "5",
        "no extra RA with an error-free D2D channel",
        t,
        pass,
        format!(
            "{} RA requests = {} completed + {} cut short; {} direct attempts",
            r.ra_requests, r.completed_cycles, r.unfinished_cycles, r.direct_attempts
        ),
    )
}

fn random_frame(rng: &mut impl Rng) -> AggregatedFrame {
    let direction = if rng.gen() { Direction::Uplink } else { Direction::Downlink };
    let kinds: Vec<SignalingKind> = (0..=255u8).filter_map(SignalingKind::from_byte).filter(|k| k.direction() == direction).collect();
    let signaling = (0..rng.gen_range(0..8))
        .map(|_| SignalingMessage::new(*kinds.choose(rng).unwrap(), rng.gen(), (0..rng.gen_range(0..12)).map(|_| rng.gen()).collect()))
        .collect();
    let data = (0..rng.gen_range(0..20))
        .map(|_| DataRecord { device: rng.gen(), payload: (0..rng.gen_range(0..130)).map(|_| rng.gen()).collect() })
        .collect();
    AggregatedFrame { header: FrameHeader { group_id: rng.gen(), cycle_seq: rng.gen(), direction }, signaling, data }
}

fn frame_codec() -> Outcome {
    let t = Instant::now();
    let mut rng = stream(106, "acceptance-codec");
    let (mut round_trips, mut panics, mut reencoded, mut positioned, mut bad) = (0, 0, 0, 0, 0);
    for _ in 0..10_000 {
        let f = random_frame(&mut rng);
        match panic::catch_unwind(|| parse_frame(&f.encode().unwrap()).map(|g| g == f)) {
            Ok(Ok(true)) => round_trips += 1,
            Ok(_) => bad += 1,
            Err(_) => panics += 1,
        }
    }
    for _ in 0..1_000 {
        let mut bytes = random_frame(&mut rng).encode().unwrap();
        for _ in 0..rng.gen_range(1..4) {
            let i = rng.gen_range(0..bytes.len().max(1));
            match rng.gen_range(0..4) {
                0 if i < bytes.len() => bytes[i] ^= 1 << rng.gen_range(0..8),
                1 => bytes.truncate(i),
                2 => bytes.insert(i.min(bytes.len()), rng.gen()),
                _ if i < bytes.len() => {
                    bytes.remove(i);
                }
                _ => bytes.push(rng.gen()),
            }
        }
        let b = bytes.clone();
        match panic::catch_unwind(move || parse_frame(&b)) {
            Ok(Ok(f)) if f.encode().ok().as_ref() == Some(&bytes) => reencoded += 1,
            Ok(Err(e)) if e.offset <= bytes.len() => positioned += 1,
            Ok(_) => bad += 1,
            Err(_) => panics += 1,
        }
    }
    let pass = round_trips == 10_000 && panics == 0 && bad == 0;
    report(
        "6",
        "frame codec fuzz",
        t,
        pass,
        format!("{round_trips}/10000 round trips; mutations: {reencoded} re-encoded, {positioned} positioned errors, {bad} bad, {panics} panics"),
    )
}

fn partition_fuzz() -> Outcome {
    let t = Instant::now();
    let devices = build_scenario(&ScenarioConfig { device_count: 400, ..Default::default() }, &mut stream(107, "acceptance-pop")).unwrap();
    let csi = |a: u32, b: u32| {
        let d = devices.get(a as usize)?.position.distance(&devices.get(b as usize)?.position);
        Some(40.0 + 30.0 * d.max(1.0).log10())
    };
    let policy = GcPolicy::new(LinkBudget::default(), 10.0);
    let history = GcHistory::default();
    let universe: BTreeSet<u32> = devices.iter().map(|d| d.id).collect();
    let mut rng = stream(107, "acceptance-ops");
    let mut p = Partition::new(50);
    for &d in &universe {
        p.add_unclustered(d);
    }
    let mut violation = None;
    let mut counts = [0usize; 3];
    for step in 0..10_000 {
        let roll = rng.gen_range(0..100);
        if roll < 3 {
            counts[2] += 1;
            p = global_group_update(&devices, &csi, 50, &history, &policy, &CapacityKMeans::default(), &mut rng);
        } else if roll < 55 {
            counts[0] += 1;
            if let Some(&d) = p.unclustered().iter().choose(&mut rng) {
                p.join(d, &csi, &history, &policy).unwrap();
            }
        } else {
            counts[1] += 1;
            let d = rng.gen_range(0..400);
            if p.group_of(d).is_some() {
                p.leave(d, &csi, &history, &policy);
            }
        }
        let check = p.check_invariants(&universe).and_then(|_| match p.groups().find(|g| g.len() > 50) {
            Some(g) => Err(format!("group {} has {} members", g.group_id, g.len())),
            None => Ok(()),
        });
        if let Err(e) = check {
            violation = Some(format!("step {step}: {e}"));
            break;
        }
    }
    report(
        "7",
        "partition fuzz",
        t,
        violation.is_none(),
        violation.unwrap_or_else(|| format!("10000 ops ({} joins, {} leaves, {} global updates), no violation", counts[0], counts[1], counts[2])),
    )
}

fn fig6_determinism() -> Outcome {
    let t = Instant::now();
    let root = std::env::temp_dir().join(format!("gra-acceptance-{}", std::process::id()));
    let dirs: Vec<PathBuf> = ["a", "b"].iter().map(|d| root.join(d)).collect();
    let mut files = Vec::new();
    for dir in &dirs {
        let m = RunManifest { preset: Some(Preset::Fig6), runs: 1, seed: 7, ..RunManifest::new(dir) };
        let written = run_manifest(&m).unwrap();
        files.push(fs::read(&written[0]).unwrap());
    }
    fs::remove_dir_all(&root).ok();
    let pass = files[0] == files[1] && !files[0].is_empty();
    report("8", "fig6 preset determinism", t, pass, format!("{} bytes each, identical={}", files[0].len(), files[0] == files[1]))
}

fn gdb_dominance() -> Outcome {
    let t = Instant::now();
    let mut with_gdb = Config::default();
    with_gdb.gdb.enabled = true;
    with_gdb.gdb.residual_mae = 1.0;
    let mut device_side = Config::default();
    device_side.gdb.enabled = false;
    device_side.channel.csi_mae = 10.0;
    let seeds = 12u64;
    let (mut wins, mut losses, mut ties) = (0u32, 0u32, 0u32);
    let (mut sum_gdb, mut sum_dev) = (0.0, 0.0);
    for seed in 1..=seeds {
        let g = initial_grouping(&with_gdb, seed).unwrap().1.mean_link_per;
        let d = initial_grouping(&device_side, seed).unwrap().1.mean_link_per;
        sum_gdb += g;
        sum_dev += d;
        match g.total_cmp(&d) {
            std::cmp::Ordering::Less => wins += 1,
            std::cmp::Ordering::Greater => losses += 1,
            std::cmp::Ordering::Equal => ties += 1,
        }
    }
    // One-sided sign test on the untied seeds.
    let n = wins + losses;
    let p = (wins..=n).map(|k| binomial(n, k)).sum::<f64>() / 2f64.powi(n as i32);
    let mean_ok = sum_gdb <= sum_dev;
    report(
        "9",
        "GDB advice dominates device-side CSI",
        t,
        p < 0.05 && mean_ok,
        format!(
            "mean PER {:.5} (GDB) vs {:.5} (10 dB MAE); {wins} wins, {losses} losses, {ties} ties over {seeds} seeds; p = {p:.5}",
            sum_gdb / seeds as f64,
            sum_dev / seeds as f64
        ),
    )
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn main() {
    let mut outcomes = vec![rach_analytic(), fig3_shape(), fig4_anchors()];
    outcomes.extend(fig6_ordering());
    outcomes.extend([no_extra_ra(), frame_codec(), partition_fuzz(), fig6_determinism(), gdb_dominance()]);
    let unexpected: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass && !KNOWN_FAILURES.contains(&o.id)).collect();
    let known: Vec<&str> = outcomes.iter().filter(|o| !o.pass && KNOWN_FAILURES.contains(&o.id)).map(|o| o.id).collect();
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass; known failures: {known:?}", outcomes.len());
    if !unexpected.is_empty() {
        for o in &unexpected {
            eprintln!("unexpected failure {}: {}", o.id, o.detail);
        }
        std::process::exit(1);
    }
}
