//! Acceptance criteria, one pass/fail line each on stderr.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::{covariance_alpha, dense_profiled_reml, dense_reml, floyd, poi_at, random_graph, tiny_dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use walkcoach_core::agents::encouragement_lexicon;
use walkcoach_core::geo::{destination, plan_route, segment_route, GeoPoint, RoutePlan};
use walkcoach_core::profile::FrequencyPref;
use walkcoach_core::scheduler::SuppressReason;
use walkcoach_core::session::{trigger_outcomes, Outcome, TriggerOutcome};
use walkcoach_core::simulator::{run_scenario, Jitter, ScenarioRun, ScenarioScript};
use walkcoach_core::stats::{
    cronbach_alpha, fit_lmm_reml, marginal_effect_from, simulate_crossover, standardized_alpha, CrossoverParams,
};
use walkcoach_core::telemetry::{window_pace, PaceWindow, TriggerKind, WalkTick, WalkTracker};
use walkcoach_core::{Condition, UserProfile};

const BETA: [f64; 4] = [5.417, -0.806, 0.889, -0.444];
const VAR_INTERCEPT: f64 = 0.059;
const VAR_RESIDUAL: f64 = 0.134;
const RECOVERY_DATASETS: usize = 200;
const RECOVERY_N: usize = 12;
const RECOVERY_TOL: f64 = 0.15;
const COVERAGE_RANGE: (f64, f64) = (0.90, 0.99);
const RECOVERY_BUDGET: Duration = Duration::from_secs(30);
const REML_DATASETS: usize = 50;
const REML_TOL: f64 = 1e-8;
const ALPHA_TOL: f64 = 1e-10;
const PATH_GRAPHS: usize = 100;
const PATH_MAX_NODES: usize = 200;
const PATH_REL_TOL: f64 = 1e-6;
const PATH_BUDGET: Duration = Duration::from_secs(10);
const DENSITY_TOL: f64 = 0.05;
const SCENARIOS: [&str; 3] = ["constant_pace", "slowdown", "crossing"];

/// Written past the test harness capture so every run shows the verdict.
fn verdict(name: &str, pass: bool, detail: &str) {
    let line = format!("[{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{name}: {detail}");
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn profile() -> UserProfile {
    serde_json::from_str(&std::fs::read_to_string(root().join("data/profile_medium.json")).unwrap()).unwrap()
}

fn run(name: &str, condition: Condition) -> ScenarioRun {
    let s = ScenarioScript::load(root().join("scenarios").join(format!("{name}.json"))).unwrap();
    run_scenario(&s, &profile(), condition).unwrap()
}

#[test]
fn coefficient_recovery() {
    let start = Instant::now();
    let params = CrossoverParams {
        beta: BETA,
        var_intercept: VAR_INTERCEPT,
        var_residual: VAR_RESIDUAL,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sums = [0.0; 4];
    let mut covered = 0usize;
    for _ in 0..RECOVERY_DATASETS {
        let data = simulate_crossover(RECOVERY_N, &params, &mut rng).unwrap();
        let fit = fit_lmm_reml(&data).unwrap();
        for (s, c) in sums.iter_mut().zip(&fit.coefficients) {
            *s += c.estimate;
        }
        let info = &fit.coefficients[1];
        if info.ci_low <= BETA[1] && BETA[1] <= info.ci_high {
            covered += 1;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / RECOVERY_DATASETS as f64).collect();
    let worst = means.iter().zip(BETA).map(|(m, b)| (m - b).abs()).fold(0.0, f64::max);
    let coverage = covered as f64 / RECOVERY_DATASETS as f64;
    let elapsed = start.elapsed();
    let pass = worst <= RECOVERY_TOL
        && (COVERAGE_RANGE.0..=COVERAGE_RANGE.1).contains(&coverage)
        && elapsed < RECOVERY_BUDGET;
    verdict(
        "coefficient recovery",
        pass,
        &format!(
            "mean estimates {means:.3?}, max |bias| {worst:.4} (tol {RECOVERY_TOL}), Info-Only coverage {coverage:.3} (range {COVERAGE_RANGE:?}), {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn reml_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_gap = 0.0f64;
    let mut improved = 0usize;
    let mut boundary = 0usize;
    for _ in 0..REML_DATASETS {
        let data = tiny_dataset(&mut rng);
        let fit = fit_lmm_reml(&data).unwrap();
        worst_gap = worst_gap.max((fit.log_likelihood - dense_reml(&data, fit.var_intercept, fit.var_residual)).abs());
        boundary += usize::from(fit.boundary);
        let probes = [0.95, 0.975, 0.99, 1.01, 1.025, 1.05];
        if probes
            .iter()
            .any(|f| dense_profiled_reml(&data, fit.lambda * f) > fit.log_likelihood + REML_TOL)
        {
            improved += 1;
        }
    }
    verdict(
        "REML oracle equivalence",
        worst_gap <= REML_TOL && improved == 0,
        &format!(
            "{REML_DATASETS} datasets, max |logL - dense| {worst_gap:.2e} (tol {REML_TOL:e}), {improved} improvable within ±5%, {boundary} at λ = 0"
        ),
    );
}

#[test]
fn marginal_effect_identity() {
    let a = marginal_effect_from(-0.806, -0.444);
    let b = marginal_effect_from(-0.583, -0.444);
    // f64 cannot hold 1.028 exactly; the identity is checked to 1e-12
    let pass = (a - 1.028).abs() <= 1e-12 && (b - 0.805).abs() <= 1e-12;
    verdict(
        "marginal-effect identity",
        pass,
        &format!("(-0.806, -0.444) -> {a:.15}, (-0.583, -0.444) -> {b:.15}"),
    );
}

#[test]
fn reliability_cross_check() {
    let std_alpha = standardized_alpha(6, 0.650).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(3..60usize);
        let k = rng.random_range(2..10usize);
        let base: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..7.0)).collect();
        let m: Vec<Vec<f64>> = base
            .iter()
            .map(|b| (0..k).map(|_| b + rng.random_range(-2.0..2.0)).collect())
            .collect();
        let ours = cronbach_alpha(&m).unwrap();
        worst = worst.max((ours - covariance_alpha(&m)).abs());
    }
    let pass = (std_alpha - 0.918).abs() <= 0.001 && (std_alpha - 0.916).abs() <= 0.01 && worst <= ALPHA_TOL;
    verdict(
        "reliability cross-check",
        pass,
        &format!("standardized alpha(k=6, r=0.650) = {std_alpha:.4}, max |alpha - covariance form| {worst:.2e} over 200 matrices"),
    );
}

fn delivered(o: &TriggerOutcome) -> bool {
    matches!(o.outcome, Some(Outcome::Delivered { .. }))
}

#[test]
fn deterministic_walk() {
    let constant = run("constant_pace", Condition::InfoMotive);
    let os = trigger_outcomes(&constant.state.event_log);
    let segments = constant.state.route.as_ref().unwrap().segments.len();
    let geofence: Vec<&TriggerOutcome> = os
        .iter()
        .filter(|o| matches!(o.trigger, TriggerKind::GeofenceEntry { .. }))
        .collect();
    let gated = geofence
        .iter()
        .filter(|o| matches!(o.outcome, Some(Outcome::Suppressed(SuppressReason::TooSoon))))
        .count();
    let geofence_delivered = geofence.iter().filter(|o| delivered(o)).count();
    let milestones: Vec<f64> = os
        .iter()
        .filter_map(|o| match o.trigger {
            TriggerKind::Milestone { fraction } => Some(fraction),
            _ => None,
        })
        .collect();
    let fatigue_constant = os.iter().filter(|o| matches!(o.trigger, TriggerKind::Fatigue { .. })).count();

    let slow = trigger_outcomes(&run("slowdown", Condition::InfoMotive).state.event_log);
    let fatigue_delivered = slow
        .iter()
        .filter(|o| matches!(o.trigger, TriggerKind::Fatigue { .. }) && delivered(o))
        .count();
    let fatigue_slow = slow.iter().filter(|o| matches!(o.trigger, TriggerKind::Fatigue { .. })).count();

    let cross = trigger_outcomes(&run("crossing", Condition::InfoMotive).state.event_log);
    let high_load = cross
        .iter()
        .filter(|o| {
            matches!(o.trigger, TriggerKind::GeofenceEntry { .. })
                && matches!(o.outcome, Some(Outcome::Suppressed(SuppressReason::HighLoadContext)))
        })
        .count();

    let identical = SCENARIOS.iter().all(|n| {
        [Condition::InfoOnly, Condition::InfoMotive]
            .iter()
            .all(|&c| run(n, c).jsonl == run(n, c).jsonl)
    });

    let pass = segments == 6
        && geofence.len() == 5
        && geofence_delivered == 5 - gated
        && milestones == [0.5, 0.75, 1.0]
        && fatigue_constant == 0
        && fatigue_slow == 1
        && fatigue_delivered == 1
        && high_load == 1
        && identical;
    verdict(
        "end-to-end deterministic walk",
        pass,
        &format!(
            "{segments} segments, {geofence_delivered}/{} geofence delivered ({gated} rate-gated), milestones {milestones:?}, \
             fatigue constant={fatigue_constant} slowdown={fatigue_slow} (delivered {fatigue_delivered}), \
             crossing HighLoadContext={high_load}, byte-identical reruns={identical}",
            geofence.len()
        ),
    );
}

#[test]
fn condition_purity() {
    let lexicon = encouragement_lexicon();
    let has = |text: &str| {
        let lower = text.to_lowercase();
        lexicon.iter().any(|w| lower.contains(w.as_str()))
    };
    let mut info_prompts = 0;
    let mut info_hits = 0;
    let mut motive_prompts = 0;
    let mut motive_misses = 0;
    for name in SCENARIOS {
        for o in trigger_outcomes(&run(name, Condition::InfoOnly).state.event_log) {
            if let Some(Outcome::Delivered { text, .. }) = &o.outcome {
                info_prompts += 1;
                info_hits += usize::from(has(text));
            }
        }
        for o in trigger_outcomes(&run(name, Condition::InfoMotive).state.event_log) {
            if let (TriggerKind::Milestone { .. } | TriggerKind::Fatigue { .. }, Some(Outcome::Delivered { text, .. })) =
                (o.trigger, &o.outcome)
            {
                motive_prompts += 1;
                motive_misses += usize::from(!has(text));
            }
        }
    }
    verdict(
        "condition purity",
        info_hits == 0 && motive_misses == 0 && info_prompts > 0 && motive_prompts > 0,
        &format!(
            "InfoOnly: {info_hits}/{info_prompts} prompts with encouragement; InfoMotive: {motive_misses}/{motive_prompts} milestone/fatigue prompts without"
        ),
    );
}

#[test]
fn pathfinder_optimality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA57A);
    let mut worst = 0.0f64;
    let mut routed = 0usize;
    let mut mismatched_reachability = 0usize;
    for _ in 0..PATH_GRAPHS {
        let n = rng.random_range(2..=PATH_MAX_NODES);
        let g = random_graph(&mut rng, n);
        let dist = floyd(&g.weights);
        let origin = rng.random_range(0..n);
        let stops: Vec<usize> = (0..rng.random_range(1..=3usize)).map(|_| rng.random_range(0..n)).collect();
        let pois: Vec<_> = stops.iter().enumerate().map(|(i, &s)| poi_at(i, g.points[s])).collect();
        let mut expected = 0.0;
        let mut cur = origin;
        for &s in &stops {
            expected += dist[cur][s];
            cur = s;
        }
        match plan_route(g.points[origin], &pois, &g.graph) {
            Ok(plan) => {
                routed += 1;
                worst = worst.max((plan.network_length_m - expected).abs() / expected.max(1e-9));
            }
            Err(_) => mismatched_reachability += usize::from(expected.is_finite() && expected > 0.0),
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "pathfinder optimality",
        worst <= PATH_REL_TOL && mismatched_reachability == 0 && elapsed < PATH_BUDGET,
        &format!(
            "{PATH_GRAPHS} graphs (<= {PATH_MAX_NODES} nodes), {routed} routed, max rel error {worst:.2e}, \
             {mismatched_reachability} reachability mismatches, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

fn random_route(rng: &mut impl Rng, monotone: bool) -> RoutePlan {
    let mut p = GeoPoint::new(35.68, 139.76).unwrap();
    let mut pts = vec![p];
    for _ in 0..rng.random_range(1..6) {
        let bearing = if monotone { rng.random_range(10.0..170.0) } else { rng.random_range(0.0..360.0) };
        p = destination(p, bearing, rng.random_range(50.0..1500.0));
        pts.push(p);
    }
    RoutePlan::from_polyline(pts, Vec::new()).unwrap()
}

#[test]
fn progress_and_segmentation_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut partition_failures = 0;
    for _ in 0..300 {
        let route = random_route(&mut rng, false);
        for pref in [FrequencyPref::Low, FrequencyPref::Medium, FrequencyPref::High] {
            let r = segment_route(route.clone(), pref);
            let s = &r.segments;
            let contiguous = s.windows(2).all(|w| w[0].end_offset_m == w[1].start_offset_m);
            let sum: f64 = s.iter().map(|x| x.length_m()).sum();
            let ok = s[0].start_offset_m == 0.0
                && s.last().unwrap().end_offset_m == r.total_length_m
                && contiguous
                && (sum - r.total_length_m).abs() <= 1e-9 * r.total_length_m;
            partition_failures += usize::from(!ok);
        }
    }

    let mut regressions = 0;
    for _ in 0..200 {
        let route = segment_route(random_route(&mut rng, true), FrequencyPref::High);
        let mut tracker = WalkTracker::default();
        let mut offset = 0.0;
        let mut last = 0.0;
        for i in 0..300 {
            offset = (offset + rng.random_range(0.1f64..4.0)).min(route.total_length_m);
            let step = tracker
                .step(&route, &WalkTick::new(2.0 * (i + 1) as f64, route.point_at(offset)))
                .unwrap();
            regressions += usize::from(step.progress.fraction < last);
            last = step.progress.fraction;
            tracker = step.tracker;
        }
    }

    let mut worst_density = 0.0f64;
    let route = segment_route(random_route(&mut rng, true), FrequencyPref::Medium);
    for _ in 0..100 {
        let pace = rng.random_range(0.6..2.0);
        let jitter = Jitter::new(rng.random());
        let lateral = |t: f64| {
            let off = (pace * t).min(route.total_length_m);
            let j = jitter.at(t);
            let b = route.bearing_at(off) + if j >= 0.0 { 90.0 } else { -90.0 };
            destination(route.point_at(off), b, j.abs())
        };
        let pace_at = |dt: f64| {
            let mut w = PaceWindow::default();
            let mut t = 0.0;
            while t <= 120.0 {
                w.push(t, lateral(t));
                t += dt;
            }
            window_pace(&w).unwrap()
        };
        let (dense, sparse) = (pace_at(1.0), pace_at(5.0));
        worst_density = worst_density.max((dense - sparse).abs() / sparse);
    }
    verdict(
        "progress/segmentation properties",
        partition_failures == 0 && regressions == 0 && worst_density <= DENSITY_TOL,
        &format!(
            "{partition_failures} partition failures over 900 segmentations, {regressions} progress regressions over 60000 forward ticks, \
             max window-pace density deviation {:.2}% (tol {:.0}%)",
            worst_density * 100.0,
            DENSITY_TOL * 100.0
        ),
    );
}
