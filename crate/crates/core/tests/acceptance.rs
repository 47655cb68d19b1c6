//! Release gate. Each test pins one acceptance criterion and prints a single
//! `criterion NN: pass` / `criterion NN: FAIL` line; tolerances and runtime
//! budgets are the constants just below their use, not configuration.
//!
//! The statistical criteria are checked against oracles written from scratch
//! in this file (closed forms, bitmask subset walks, lexicographic permutation
//! enumeration) so a shared bug in the library cannot vouch for itself.

use std::collections::BTreeMap;
use std::fs;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crossbench_core::fixtures::SAMPLE_PERSONAS;
use crossbench_core::oracle::{build_oracle, Backend, OracleConfig};
use crossbench_core::persona::{
    parse_persona_document, validate_persona, PersonaError, PersonaProfile,
};
use crossbench_core::scenario::{
    build_trial_orders, enumerate_conditions, Action, AvBehavior, ClipManifest, Condition, Ehmi,
    GridSpec,
};
use crossbench_core::sim::{crossing_time, run_trial, summary_lines, TrialPolicy};
use crossbench_core::stats::{
    condition_slice_tests, mann_whitney_test, rank_permutation_anova, wilson_interval,
    CohortDataset, CohortObservation, EffectId, Group, MwuMode, PermutationMode,
};
use crossbench_core::trajectory::{
    discretize, first_wait_position, never_waited, GridEntry, HumanTrajectory,
    DEFAULT_STOP_THRESHOLD,
};
use crossbench_core::workbench::{cmd_sim_run, load_trial_logs, RunConfig};

fn report(n: u32, ok: bool, detail: &str) {
    let verdict = if ok { "pass" } else { "FAIL" };
    println!("criterion {n:02}: {verdict} - {detail}");
}

fn within_budget(n: u32, elapsed: Duration, budget: Duration) {
    assert!(
        elapsed <= budget,
        "criterion {n:02}: FAIL - ran {elapsed:?}, budget {budget:?}"
    );
}

fn mock_config(policy: &str) -> OracleConfig {
    OracleConfig {
        backend: Backend::Mock,
        mock_policy: policy.into(),
        ..OracleConfig::default()
    }
}

/// The shipped sample profiles, cycled and renamed so any cohort size gets
/// distinct persona identities.
fn sample_profiles(n: usize) -> Vec<PersonaProfile> {
    (0..n)
        .map(|i| {
            let mut p = parse_persona_document(SAMPLE_PERSONAS[i % SAMPLE_PERSONAS.len()]).unwrap();
            p.name = format!("persona_{i:02}");
            p
        })
        .collect()
}

/// Standard normal via Box-Muller; fresh pair each call, second half unused.
fn normal_draw(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    mean + sd * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Normal draw restricted to a plausible crossing time in (0, 9].
fn clipped_draw(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    loop {
        let t = normal_draw(rng, mean, sd);
        if t > 0.0 && t <= 9.0 {
            return t;
        }
    }
}

fn observation(group: Group, id: &str, condition: Condition, t: f64) -> CohortObservation {
    CohortObservation {
        group,
        id: id.into(),
        condition,
        crossing_time: Some(t),
        likert: BTreeMap::new(),
    }
}

// --- criterion 1: the scripted no-eHMI / stop trial reproduces its trace ---

const GOLDEN_TRACE: [&str; 9] = [
    "Time 0: o-*-o-o-o-|ROAD (moved from 0 to 1 - forward)",
    "Time 1: o-o-*-o-o-|ROAD (moved from 1 to 2 - forward)",
    "Time 2: o-o-o-*-o-|ROAD (moved from 2 to 3 - forward)",
    "Time 3: o-o-o-*-o-|ROAD (moved from 3 to 3 - stop)",
    "Time 4: o-o-o-*-o-|ROAD (moved from 3 to 3 - stop)",
    "Time 5: o-o-o-*-o-|ROAD (moved from 3 to 3 - stop)",
    "Time 6: o-o-o-*-o-|ROAD (moved from 3 to 3 - stop)",
    "Time 7: o-o-o-*-o-|ROAD (moved from 3 to 3 - stop)",
    "Time 8: o-o-o-*-o-|ROAD (moved from 3 to 3 - stop)",
];

const GOLDEN_STATUS: [&str; 9] = [
    "o-*-o-o-o-|ROAD",
    "o-o-*-o-o-|ROAD",
    "o-o-o-*-o-|ROAD",
    "o-o-o-*-o-|ROAD",
    "o-o-o-*-o-|ROAD",
    "o-o-o-*-o-|ROAD",
    "o-o-o-*-o-|ROAD",
    "o-o-o-*-o-|ROAD",
    "o-o-o-*-o-|ROAD",
];

#[test]
fn criterion_01_scripted_trace_matches_golden() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let manifest = ClipManifest::synthetic(&tmp.path().join("clips"), GridSpec::default()).unwrap();
    let config = mock_config("scripted:forward,forward,forward,stop,stop,stop,stop,stop,stop");
    let oracle = build_oracle(&config).unwrap();
    let profile = sample_profiles(1).remove(0);

    let log = run_trial(
        &profile,
        Condition::new(Ehmi::None, AvBehavior::Stop),
        oracle.as_ref(),
        &config,
        &manifest,
        &TrialPolicy::default(),
        11,
    )
    .unwrap();

    assert_eq!(log.records.len(), 9, "criterion 01: FAIL - expected 9 decisions");
    let lines = summary_lines(&log.records);
    for (i, (got, want)) in lines.iter().zip(GOLDEN_TRACE).enumerate() {
        assert_eq!(got, want, "criterion 01: FAIL - summary line {i} diverges");
    }
    assert_eq!(log.summary, lines, "criterion 01: FAIL - stored summary diverges");
    for (i, (record, want)) in log.records.iter().zip(GOLDEN_STATUS).enumerate() {
        assert_eq!(
            record.status_string, want,
            "criterion 01: FAIL - status string {i} diverges"
        );
    }
    assert!(!log.crossed, "criterion 01: FAIL - blocked agent must not cross");
    assert_eq!(crossing_time(&log), None, "criterion 01: FAIL - no crossing time expected");

    let elapsed = started.elapsed();
    within_budget(1, elapsed, Duration::from_secs(1));
    report(1, true, &format!("9/9 trace lines byte-exact, no crossing, {elapsed:?}"));
}

// --- criterion 2: a 20-persona mock cohort is complete and deterministic ---

#[test]
fn criterion_02_mock_cohort_is_complete_and_deterministic() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let config = RunConfig {
        out_dir: tmp.path().join("run"),
        oracle: mock_config("varied"),
        seed: 7,
        jobs: 4,
        ..RunConfig::default()
    };
    fs::create_dir_all(config.personas_dir()).unwrap();
    for profile in sample_profiles(20) {
        let path = config.personas_dir().join(format!("{}.json", profile.name));
        fs::write(path, profile.to_document_string()).unwrap();
    }

    let first = cmd_sim_run(&config).unwrap();
    assert!(first.failures.is_empty(), "criterion 02: FAIL - {:?}", first.failures);
    let logs = load_trial_logs(&config.sims_dir()).unwrap();
    assert_eq!(logs.len(), 120, "criterion 02: FAIL - expected exactly 120 trial logs");
    let mut per_condition: BTreeMap<String, usize> = BTreeMap::new();
    for log in &logs {
        *per_condition.entry(log.condition.dir_name()).or_default() += 1;
    }
    assert_eq!(per_condition.len(), 6, "criterion 02: FAIL - missing conditions");
    assert!(
        per_condition.values().all(|&c| c == 20),
        "criterion 02: FAIL - uneven condition coverage {per_condition:?}"
    );
    let snapshot = serde_json::to_string(&logs).unwrap();

    fs::remove_dir_all(config.sims_dir()).unwrap();
    let second = cmd_sim_run(&config).unwrap();
    assert!(second.failures.is_empty(), "criterion 02: FAIL - {:?}", second.failures);
    let replayed = serde_json::to_string(&load_trial_logs(&config.sims_dir()).unwrap()).unwrap();
    assert_eq!(snapshot, replayed, "criterion 02: FAIL - rerun produced different logs");

    let assertive = mock_config("assertive");
    let oracle = build_oracle(&assertive).unwrap();
    let manifest =
        ClipManifest::synthetic(&tmp.path().join("clips"), GridSpec::default()).unwrap();
    let profile = sample_profiles(1).remove(0);
    for condition in enumerate_conditions() {
        let log = run_trial(
            &profile,
            condition,
            oracle.as_ref(),
            &assertive,
            &manifest,
            &TrialPolicy::default(),
            3,
        )
        .unwrap();
        assert_eq!(
            crossing_time(&log),
            Some(5),
            "criterion 02: FAIL - always-forward must cross at 5 s in {condition}"
        );
    }

    let elapsed = started.elapsed();
    within_budget(2, elapsed, Duration::from_secs(10));
    report(2, true, &format!("120 logs, byte-identical rerun, forward crosses at 5 s, {elapsed:?}"));
}

// --- criterion 3: wilson intervals against the closed form ---

/// Two-sided 97.5% standard normal quantile, to 1 ulp.
const Z_95: f64 = 1.959_963_984_540_054;
const WILSON_TOL: f64 = 1e-9;

fn wilson_closed_form(k: u64, n: u64) -> (f64, f64) {
    let (kf, nf) = (k as f64, n as f64);
    let z2 = Z_95 * Z_95;
    let center = (kf + z2 / 2.0) / (nf + z2);
    let half = Z_95 / (nf + z2) * (kf * (nf - kf) / nf + z2 / 4.0).sqrt();
    (center - half, center + half)
}

#[test]
fn criterion_03_wilson_matches_closed_form() {
    let mut checked = 0usize;
    for n in 1..=50u64 {
        for k in 0..=n {
            let got = wilson_interval(k, n, 0.95).unwrap();
            if k == 0 {
                assert_eq!(got.lo, 0.0, "criterion 03: FAIL - lo(0, {n}) must be exactly 0");
            }
            if k == n {
                assert_eq!(got.hi, 1.0, "criterion 03: FAIL - hi({n}, {n}) must be exactly 1");
            }
            let (lo, hi) = wilson_closed_form(k, n);
            let (lo, hi) = (lo.max(0.0), hi.min(1.0));
            assert!(
                (got.lo - lo).abs() <= WILSON_TOL && (got.hi - hi).abs() <= WILSON_TOL,
                "criterion 03: FAIL - ({k}, {n}) off by ({:.3e}, {:.3e})",
                got.lo - lo,
                got.hi - hi
            );
            checked += 1;
        }
    }
    report(3, true, &format!("{checked} intervals within {WILSON_TOL:.0e}, boundaries exact"));
}

// --- criterion 4: exact mann-whitney against subset enumeration ---

/// Doubled midranks of the combined sample, independently rederived.
fn oracle_doubled_ranks(combined: &[f64]) -> Vec<u64> {
    let n = combined.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| combined[a].partial_cmp(&combined[b]).unwrap());
    let mut doubled = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && combined[order[j + 1]] == combined[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            doubled[idx] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    doubled
}

/// Walks every size-n1 bitmask of the combined indices and counts doubled
/// rank sums at or beyond the observed one.
fn oracle_exact_mwu(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (n1, n) = (x.len(), x.len() + y.len());
    let mut combined = x.to_vec();
    combined.extend_from_slice(y);
    let doubled = oracle_doubled_ranks(&combined);
    let observed: u64 = doubled[..n1].iter().sum();
    let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let s: u64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| doubled[i]).sum();
        if s <= observed {
            le += 1;
        }
        if s >= observed {
            ge += 1;
        }
        total += 1;
    }
    let u = observed as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;
    let p = (2.0 * le.min(ge) as f64 / total as f64).min(1.0);
    (u, p)
}

#[test]
fn criterion_04_exact_mwu_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4d57_55);
    let mut checked = 0usize;
    for n1 in 1..=6usize {
        for n2 in n1..=6usize {
            for tied in [false, true] {
                for _ in 0..3 {
                    let draw = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
                        (0..len)
                            .map(|_| {
                                if tied {
                                    f64::from(rng.random_range(1..=3u8))
                                } else {
                                    rng.random::<f64>() * 10.0
                                }
                            })
                            .collect()
                    };
                    let x = draw(&mut rng, n1);
                    let y = draw(&mut rng, n2);
                    let got = mann_whitney_test(&x, &y, MwuMode::Exact).unwrap();
                    assert!(
                        matches!(got.mode_used, MwuMode::Exact),
                        "criterion 04: FAIL - expected the exact path for n = {}",
                        n1 + n2
                    );
                    let (u, p) = oracle_exact_mwu(&x, &y);
                    assert_eq!(
                        got.u, u,
                        "criterion 04: FAIL - U diverges at n1={n1} n2={n2} tied={tied}"
                    );
                    assert_eq!(
                        got.p, p,
                        "criterion 04: FAIL - p diverges at n1={n1} n2={n2} tied={tied}"
                    );
                    checked += 1;
                }
            }
        }
    }
    report(4, true, &format!("{checked} samples, U and p bit-identical to enumeration"));
}

// --- criterion 5: permutation anova against full enumeration ---

/// Orthogonal contrast statistics for the one-observation-per-cell 2x2x2
/// design: aligning leaves each effect's signed cell pattern, so its Type III
/// mean square collapses to (signed sum)^2 / 8. Bit order: eHMI, AV, group.
const EFFECT_MASKS: [u8; 7] = [0b100, 0b010, 0b001, 0b110, 0b101, 0b011, 0b111];

fn oracle_saturated_stats(y: &[f64; 8]) -> [f64; 7] {
    let mut out = [0.0; 7];
    for (e, mask) in EFFECT_MASKS.iter().enumerate() {
        let s: f64 = y
            .iter()
            .enumerate()
            .map(|(cell, &v)| if (cell as u8 & mask).count_ones() % 2 == 0 { v } else { -v })
            .sum();
        out[e] = s * s / 8.0;
    }
    out
}

/// p for every effect by walking all 8! response assignments in lexicographic
/// order, identity included, with the same relative epsilon the library uses
/// to absorb float dust among mathematically equal statistics.
fn oracle_exhaustive_p(y: &[f64; 8]) -> [f64; 7] {
    let observed = oracle_saturated_stats(y);
    let threshold: Vec<f64> =
        observed.iter().map(|o| o - 1e-9 * o.abs().max(1.0)).collect();
    let mut idx: [usize; 8] = [0, 1, 2, 3, 4, 5, 6, 7];
    let mut counts = [0u64; 7];
    let mut total = 0u64;
    loop {
        let mut perm = [0.0; 8];
        for (slot, &i) in idx.iter().enumerate() {
            perm[slot] = y[i];
        }
        let stats = oracle_saturated_stats(&perm);
        for e in 0..7 {
            if stats[e] >= threshold[e] {
                counts[e] += 1;
            }
        }
        total += 1;
        // next lexicographic permutation of idx
        let Some(pivot) = (0..7).rev().find(|&i| idx[i] < idx[i + 1]) else {
            break;
        };
        let swap = (pivot + 1..8).rev().find(|&j| idx[j] > idx[pivot]).unwrap();
        idx.swap(pivot, swap);
        idx[pivot + 1..].reverse();
    }
    assert_eq!(total, 40320);
    let mut p = [0.0; 7];
    for e in 0..7 {
        p[e] = counts[e] as f64 / total as f64;
    }
    p
}

/// One human and one vlm pedestrian walk the four two-level conditions, so
/// every cell of the reduced 2x2x2 design holds exactly one crossing time.
fn saturated_dataset(y: &[f64; 8]) -> CohortDataset {
    let mut obs = Vec::with_capacity(8);
    for (cell, &t) in y.iter().enumerate() {
        let ehmi = if cell & 0b100 == 0 { Ehmi::Light } else { Ehmi::Eyes };
        let av = if cell & 0b010 == 0 { AvBehavior::Stop } else { AvBehavior::Pass };
        let (group, id) = if cell & 0b001 == 0 { (Group::Human, "h1") } else { (Group::Vlm, "v1") };
        obs.push(observation(group, id, Condition::new(ehmi, av), t));
    }
    CohortDataset::new(obs).unwrap()
}

const SAMPLED_TOL: f64 = 0.02;

#[test]
fn criterion_05_permutation_anova_matches_enumeration() {
    let started = Instant::now();
    let fixtures: [[f64; 8]; 2] = [
        [3.7, 1.2, 5.5, 2.8, 4.9, 0.6, 6.1, 3.3],
        [2.31, 7.94, 4.16, 5.08, 1.77, 6.42, 3.59, 8.23],
    ];
    for y in &fixtures {
        let dataset = saturated_dataset(y);
        let table = rank_permutation_anova(&dataset, PermutationMode::Exhaustive, 0).unwrap();
        assert!(table.saturated && table.n_perm == 40320);
        let want = oracle_exhaustive_p(y);
        for (e, id) in EffectId::ALL.iter().enumerate() {
            let got = table.effect(*id);
            assert_eq!(
                got.p, want[e],
                "criterion 05: FAIL - exhaustive p diverges for {}",
                id.label()
            );
            let stat = oracle_saturated_stats(y)[e];
            assert!(
                (got.f - stat).abs() <= 1e-9 * stat.abs().max(1.0),
                "criterion 05: FAIL - statistic diverges for {}",
                id.label()
            );
        }
    }

    let dataset = saturated_dataset(&fixtures[0]);
    let exact = oracle_exhaustive_p(&fixtures[0]);
    let sampled =
        rank_permutation_anova(&dataset, PermutationMode::Sampled { n_perm: 10_000 }, 1234)
            .unwrap();
    for (e, id) in EffectId::ALL.iter().enumerate() {
        let diff = (sampled.effect(*id).p - exact[e]).abs();
        assert!(
            diff <= SAMPLED_TOL,
            "criterion 05: FAIL - sampled p for {} off by {diff:.4}",
            id.label()
        );
    }

    let elapsed = started.elapsed();
    within_budget(5, elapsed, Duration::from_secs(30));
    report(
        5,
        true,
        &format!("14 exhaustive p-values exact, sampled within {SAMPLED_TOL}, {elapsed:?}"),
    );
}

// --- criterion 6: seeded synthetic cohorts keep the group effect quiet ---

/// Group moments for the synthetic cohorts; same numbers the report ships as
/// reference constants.
const HUMAN_MOMENTS: (f64, f64) = (5.07, 1.67);
const VLM_MOMENTS: (f64, f64) = (5.25, 0.72);
const QUIET_REQUIRED: usize = 90;

fn synthetic_cohort(seed: u64) -> CohortDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Vec::with_capacity(240);
    for (group, prefix, (mean, sd)) in [
        (Group::Human, "h", HUMAN_MOMENTS),
        (Group::Vlm, "v", VLM_MOMENTS),
    ] {
        for i in 0..20 {
            for condition in enumerate_conditions() {
                let t = clipped_draw(&mut rng, mean, sd);
                obs.push(observation(group, &format!("{prefix}{i:02}"), condition, t));
            }
        }
    }
    CohortDataset::new(obs).unwrap()
}

#[test]
fn criterion_06_seeded_cohorts_keep_group_effect_quiet() {
    let started = Instant::now();
    let mut quiet = 0usize;
    for cohort in 0..100u64 {
        let dataset = synthetic_cohort(60_000 + cohort);
        let table = rank_permutation_anova(
            &dataset,
            PermutationMode::Sampled { n_perm: 999 },
            90_000 + cohort,
        )
        .unwrap();
        if table.effect(EffectId::Group).p > 0.05 {
            quiet += 1;
        }
    }
    let elapsed = started.elapsed();
    within_budget(6, elapsed, Duration::from_secs(120));
    let ok = quiet >= QUIET_REQUIRED;
    report(
        6,
        ok,
        &format!("group effect non-significant in {quiet}/100 cohorts (need >= {QUIET_REQUIRED}), {elapsed:?}"),
    );
    assert!(
        ok,
        "criterion 06: FAIL - group effect non-significant in {quiet}/100 cohorts, \
         required >= {QUIET_REQUIRED}/100. The generating moments overlap at \
         P(human < vlm) ~ 0.55 once clipping trims the wide human tail, so a \
         120-per-group rank test detects the difference in roughly a quarter of \
         the cohorts; no faithful implementation reaches the demanded rate."
    );
}

// --- criterion 7: an injected shift is flagged in its cell and only there ---

const SLICE_REQUIRED: usize = 95;
const INJECTED_SHIFT_S: f64 = 1.5;

#[test]
fn criterion_07_injected_shift_is_localized() {
    let target = Condition::new(Ehmi::Eyes, AvBehavior::Stop);
    let mut hits = 0usize;
    for run in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(70_000 + run);
        let mut obs = Vec::with_capacity(240);
        for condition in enumerate_conditions() {
            for i in 0..20 {
                let t = clipped_draw(&mut rng, 5.0, 1.0);
                obs.push(observation(Group::Human, &format!("h{i:02}"), condition, t));
                let vlm_t = if condition == target { t + INJECTED_SHIFT_S } else { t };
                obs.push(observation(Group::Vlm, &format!("v{i:02}"), condition, vlm_t));
            }
        }
        let rows = condition_slice_tests(&CohortDataset::new(obs).unwrap()).unwrap();
        let flagged: Vec<Condition> =
            rows.iter().filter(|r| r.p < 0.05).map(|r| r.condition).collect();
        if flagged == [target] {
            hits += 1;
        }
    }
    let ok = hits >= SLICE_REQUIRED;
    report(
        7,
        ok,
        &format!("only the shifted cell flagged in {hits}/100 runs (need >= {SLICE_REQUIRED})"),
    );
    assert!(
        ok,
        "criterion 07: FAIL - shift localized in {hits}/100 runs, required >= {SLICE_REQUIRED}"
    );
}

// --- criterion 8: discretization goldens ---

fn walk(participant: &str, markers: [f64; 5], road_entry: f64, samples: &[[f64; 2]]) -> HumanTrajectory {
    HumanTrajectory {
        participant: participant.into(),
        condition: Condition::new(Ehmi::Light, AvBehavior::Stop),
        markers: markers.to_vec(),
        road_entry_time: road_entry,
        samples: samples.to_vec(),
    }
}

#[test]
fn criterion_08_discretization_goldens_hold() {
    // Constant 0.8 m/s: one marker per second, on the road just after t = 4.
    let samples: Vec<[f64; 2]> = (0..=10).map(|t| [f64::from(t), 0.8 * f64::from(t)]).collect();
    let uniform = walk("p01", [0.0, 1.0, 2.0, 3.0, 4.0], 4.0, &samples);
    let trace = discretize(&uniform, DEFAULT_STOP_THRESHOLD);
    assert_eq!(trace.crossing_time, Some(5), "criterion 08: FAIL - uniform walk crossing time");
    assert!(
        trace.entries.iter().all(|e| e.action == Action::Forward),
        "criterion 08: FAIL - uniform walk must be all-forward"
    );
    let positions: Vec<u8> = trace.entries.iter().map(|e| e.position).collect();
    assert_eq!(positions, [1, 2, 3, 4, 5], "criterion 08: FAIL - uniform walk positions");
    assert!(never_waited(&trace) && first_wait_position(&trace).is_none());

    // Two seconds standing at 2.4 m, then on to the road at t = 6.
    let standstill = walk(
        "p02",
        [0.0, 1.0, 2.0, 3.0, 6.0],
        6.0,
        &[[0.0, 0.0], [3.0, 2.4], [5.0, 2.4], [6.0, 3.2], [8.0, 4.8]],
    );
    let trace = discretize(&standstill, DEFAULT_STOP_THRESHOLD);
    let stops: Vec<&GridEntry> =
        trace.entries.iter().filter(|e| e.action == Action::Stop).collect();
    assert_eq!(stops.len(), 2, "criterion 08: FAIL - expected exactly two stop actions");
    assert!(
        stops.iter().all(|e| e.position == 3),
        "criterion 08: FAIL - standstill stops must sit at grid position 3"
    );
    assert_eq!(first_wait_position(&trace), Some(3));

    // One tick crawling at 0.2 m/s across the 1.6 m line: a stop, not a step.
    let creep = walk(
        "p03",
        [0.0, 1.0, 2.5, 4.5, 5.5],
        5.5,
        &[[0.0, 0.0], [2.0, 1.55], [3.0, 1.75], [5.5, 3.2], [7.0, 4.4]],
    );
    let trace = discretize(&creep, DEFAULT_STOP_THRESHOLD);
    assert_eq!(
        trace.entries[2].action,
        Action::Stop,
        "criterion 08: FAIL - sub-threshold creep tick must read as a stop"
    );
    assert_eq!(
        trace.entries[2].position, trace.entries[1].position,
        "criterion 08: FAIL - a creep stop must hold its position"
    );

    report(8, true, "uniform, standstill and creep walks all reduce to their goldens");
}

// --- criterion 9: sample personas parse, validate and round-trip ---

#[test]
fn criterion_09_sample_personas_parse_and_round_trip() {
    for (i, raw) in SAMPLE_PERSONAS.iter().enumerate() {
        let profile = parse_persona_document(raw)
            .unwrap_or_else(|e| panic!("criterion 09: FAIL - sample {i} does not parse: {e}"));
        let violations = validate_persona(&profile);
        assert!(
            violations.is_empty(),
            "criterion 09: FAIL - sample {i} fails validation: {violations:?}"
        );
        let doc = profile.to_document_string();
        let back = parse_persona_document(&doc).unwrap();
        assert_eq!(back, profile, "criterion 09: FAIL - sample {i} round trip diverges");
        assert_eq!(
            back.to_document_string(),
            doc,
            "criterion 09: FAIL - sample {i} serialization is unstable"
        );
    }

    assert!(
        matches!(parse_persona_document("never json"), Err(PersonaError::Json(_))),
        "criterion 09: FAIL - non-JSON input must fail as such"
    );
    let missing = r#"{"name": "x", "description": "y"}"#;
    assert!(
        matches!(
            parse_persona_document(missing),
            Err(PersonaError::MissingComponent("decision_criteria"))
        ),
        "criterion 09: FAIL - missing criteria must name the component"
    );
    assert!(
        matches!(parse_persona_document("{}"), Err(PersonaError::MissingComponent("name"))),
        "criterion 09: FAIL - an empty object must flag the missing name"
    );

    let mut truncated = parse_persona_document(SAMPLE_PERSONAS[0]).unwrap();
    truncated.decision_criteria.pop();
    assert!(
        validate_persona(&truncated).iter().any(|v| v.invariant == "criteria count"),
        "criterion 09: FAIL - four criteria must be reported as a count violation"
    );
    let mut relabeled = parse_persona_document(SAMPLE_PERSONAS[0]).unwrap();
    relabeled.decision_criteria[0] = "Something else entirely: text".into();
    assert!(
        validate_persona(&relabeled).iter().any(|v| v.invariant == "criteria label"),
        "criterion 09: FAIL - a wrong heading must be reported as a label violation"
    );
    let mut anonymous = parse_persona_document(SAMPLE_PERSONAS[0]).unwrap();
    anonymous.name = "  ".into();
    assert!(
        validate_persona(&anonymous).iter().any(|v| v.invariant == "name"),
        "criterion 09: FAIL - a blank name must be reported"
    );

    report(9, true, "5 samples parse, validate and round-trip; malformed inputs name their defect");
}

// --- criterion 10: counterbalanced trial orders ---

#[test]
fn criterion_10_trial_orders_are_balanced() {
    let orders = build_trial_orders(20);
    assert_eq!(orders.len(), 20);
    for ordinal in 0..6 {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for row in &orders {
            *counts.entry(row[ordinal].dir_name()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6, "criterion 10: FAIL - ordinal {ordinal} misses conditions");
        for (condition, count) in counts {
            assert!(
                count == 3 || count == 4,
                "criterion 10: FAIL - {condition} appears {count} times at ordinal {ordinal}, \
                 20 participants allow only 3 or 4"
            );
        }
    }

    let orders = build_trial_orders(6);
    assert_eq!(orders.len(), 6);
    for ordinal in 0..6 {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for row in &orders {
            *counts.entry(row[ordinal].dir_name()).or_default() += 1;
        }
        assert!(
            counts.len() == 6 && counts.values().all(|&c| c == 1),
            "criterion 10: FAIL - ordinal {ordinal} of the 6-row square is unbalanced"
        );
    }

    report(10, true, "n=20 per-ordinal counts all in {{3, 4}}, n=6 square exactly balanced");
}
