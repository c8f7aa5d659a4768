//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Statistical criteria run at pinned seeds, so every line is reproducible.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rwpot_core::coarse_grain::{chi_upper_probe, occupied_cost_bound_check, supermartingale_step_check};
use rwpot_core::concentration::{
    compare_restricted, entropy_suite, rank_one_verify, truncation_gap, variance_probe, EntropySetup,
};
use rwpot_core::harness::{self, oracle_check, ExperimentConfig, OracleSpec, RunOptions};
use rwpot_core::lattice::{count_fixed_animals_bruteforce, enumerate_animals, AnimalCaps};
use rwpot_core::lyapunov::estimate_alpha;
use rwpot_core::potential::{assumption_report, sample_field};
use rwpot_core::seed;
use rwpot_core::solver::{
    block_cost, default_box, return_probability_extrapolated, return_probability_limit, weighted_functionals,
};
use rwpot_core::{AnimalSpec, Connectivity, DistributionSpec, LatticePoint, Region, Result};

const TP: DistributionSpec = DistributionSpec::TwoPoint { v_lo: 0.2, v_hi: 1.0, p_hi: 0.5 };
const SEED: u64 = 0x00c0_ffee;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { passed, detail: detail.into() })
}

fn p(c: &[i64]) -> LatticePoint {
    LatticePoint::new(c.iter().copied())
}

fn oracle_case(case: &str) -> Result<Outcome> {
    let rep = oracle_check(&OracleSpec { battery: Some(vec![case.to_string()]), fault_injection: false }, SEED)?;
    let bad: Vec<String> =
        rep.rows.iter().filter(|r| !r.passed).map(|r| format!("#{} {}", r.instance, r.detail)).collect();
    let c = &rep.checks[0];
    outcome(c.passed, format!("{} ({} rows); {}", c.detail, rep.rows.len(), bad.join("; ")))
}

fn c1_sandwich() -> Result<Outcome> {
    oracle_case("sandwich")
}

fn c2_monte_carlo() -> Result<Outcome> {
    oracle_case("monte_carlo")
}

fn c3_hand_values() -> Result<Outcome> {
    oracle_case("hand_values")
}

fn c4_monotonicity() -> Result<Outcome> {
    let rep = compare_restricted(&TP, &p(&[5, 2]), &[1.0, 1.5, 2.0], 20, SEED ^ 4)?;
    let v: usize = rep.pairs.iter().map(|q| q.nested_violations).sum();
    let min_gap = rep.pairs.iter().map(|q| q.min_gap).fold(f64::INFINITY, f64::min);
    outcome(v == 0, format!("{v} violations over 20 fields, smallest a_small - a_large {min_gap:e}"))
}

fn c5_block_subadditivity() -> Result<Outcome> {
    let xi = p(&[1, 0]);
    let (nu, big_n) = (3, 5);
    let bbox = Region::block(&xi, 0, 2 * nu, big_n)?.bbox().clone();
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for i in 0..50u64 {
        let field = sample_field(&TP, &bbox, seed::derive(SEED, &[5, i]))?;
        let whole = block_cost(&field, &xi, 0, 2 * nu, big_n)?;
        let parts = block_cost(&field, &xi, 0, nu, big_n)? + block_cost(&field, &xi, nu, 2 * nu, big_n)?;
        worst = worst.min(parts - whole);
        if whole > parts + 1e-9 {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations} violations over 50 fields, smallest slack {worst:e}"))
}

fn c6_alpha_band() -> Result<Outcome> {
    let spec = DistributionSpec::TwoPoint { v_lo: 0.1, v_hi: 1.0, p_hi: 0.5 };
    let est = estimate_alpha(&spec, &p(&[1, 0]), &[2, 4, 8], 200, 2.0, SEED ^ 6)?;
    let rep = assumption_report(&spec);
    let (lo, hi) = (-(0.5 * (-0.1f64).exp() + 0.5 * (-1.0f64).exp()).ln(), 4f64.ln() + 0.55);
    let closed_form =
        (est.band_lo - lo).abs() < 1e-12 && (est.band_hi - hi).abs() < 1e-12 && rep.band_hi(2) == est.band_hi;
    outcome(
        est.band_ok && closed_form,
        format!(
            "alpha_hat {:.4} CI [{:.4}, {:.4}] band [{:.4}, {:.4}]",
            est.alpha_hat, est.ci.0, est.ci.1, est.band_lo, est.band_hi
        ),
    )
}

fn c7_rank_one() -> Result<Outcome> {
    let pinned = return_probability_limit(3)?;
    let extrapolated = return_probability_extrapolated(3, [10, 20, 40])?;
    let pinned_ok = (pinned - extrapolated).abs() < 5e-5;
    let rep = rank_one_verify(&TP, &p(&[2, 1, 0]), 200, 1.5, SEED ^ 7)?;
    let negative = rep.records.iter().filter(|r| r.delta < 0.0).count();
    outcome(
        pinned_ok && rep.violations == 0 && rep.records.len() == 200,
        format!(
            "{} violations over 200 trials ({negative} tiny negative deltas within 1e-8); p_return pinned {pinned}, extrapolated {extrapolated:.8}",
            rep.violations
        ),
    )
}

fn c8_range() -> Result<Outcome> {
    let mut worst = f64::INFINITY;
    let mut bad = 0;
    for i in 0..50u64 {
        let mut rng = seed::rng_for(SEED, &[8, i]);
        let x = loop {
            let x = p(&[rng.random_range(-6..=6), rng.random_range(-6..=6)]);
            if !x.is_origin() {
                break x;
            }
        };
        let bbox = default_box(&x, 1.5);
        let field = sample_field(&TP, &bbox, seed::derive(SEED, &[8, 1, i]))?;
        let wf = weighted_functionals(&field, &Region::from_box(bbox), &x)?;
        let slack = wf.expected_range - x.l1() as f64;
        worst = worst.min(slack);
        if slack < -1e-8 {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad} violations over 50 instances, smallest E_Q[#A] - |x|_1 = {worst:.6}"))
}

fn c9_entropy() -> Result<Outcome> {
    let setup = EntropySetup {
        x: p(&[4, 0]),
        lambda_grid: vec![-0.1, -0.5, -1.0],
        environments: 20,
        box_factor: 1.5,
        mc_samples: 0,
        seed: SEED ^ 9,
    };
    let rep = entropy_suite(&TP, &setup, false)?;
    let worst = rep.records.iter().map(|r| r.entropy_bound - r.ent_value).fold(f64::INFINITY, f64::min);
    outcome(
        rep.violations == 0 && rep.records.len() == 60,
        format!("{} violations over {} records, smallest rhs - ent {worst:e}", rep.violations, rep.records.len()),
    )
}

fn c10_truncation() -> Result<Outcome> {
    let spec = DistributionSpec::Exponential { rate: 1.0 };
    let rep = truncation_gap(&spec, &p(&[8, 0]), 0.5, 5000, 1.5, SEED ^ 10, false)?;
    let fit = rep.fit_rate.map_or_else(|| "none".to_string(), |r| format!("{r:.4}"));
    outcome(
        rep.violations == 0 && rep.gaps.len() == 5000,
        format!(
            "{} violations over 5000 samples; cap {:.3}, cap active in {} samples, fitted tail rate {fit} (reference {})",
            rep.violations, rep.cap, rep.active, rep.reference_rate
        ),
    )
}

fn c11_occupied_bound() -> Result<Outcome> {
    // Zero potential away from the occupied site is the hardest background.
    let spec = DistributionSpec::Constant { value: 0.0 };
    let rep = occupied_cost_bound_check(&spec, 2, 4, 0.5, 100, SEED ^ 11)?;
    let worst = rep.trials.iter().map(|t| t.margin).fold(f64::INFINITY, f64::min);
    outcome(
        rep.violations == 0,
        format!("{} violations over 100 boxes, bound {:.6}, smallest margin {worst:e}", rep.violations, rep.bound),
    )
}

fn c12_chi() -> Result<Outcome> {
    let probe = chi_upper_probe(&TP, 2, 8, 0.5, 100, SEED ^ 12)?;
    let step = supermartingale_step_check(&TP, 2, 8, 0.5, probe.value, 100, SEED ^ 12)?;
    let inside = probe.sampled.iter().all(|e| e.value > 0.0 && e.value < 1.0);
    let ok = inside && probe.sampled.len() == 100 && probe.checks.iter().all(|c| c.passed) && step.violations == 0;
    outcome(
        ok,
        format!(
            "chi {:.6}, sampled max {:.6}; step check {} violations over {} occupied cubes",
            probe.value, probe.sampled_max, step.violations, step.occupied
        ),
    )
}

fn c13_animals() -> Result<Outcome> {
    let caps = AnimalCaps::default();
    let mut counts = Vec::new();
    let mut ok = true;
    for l in 1..=5 {
        let spec = |anchored| AnimalSpec { dimension: 2, size: l, connectivity: Connectivity::L1, anchored };
        let free = enumerate_animals(&spec(false), &caps)?.count();
        let anchored = enumerate_animals(&spec(true), &caps)?.count();
        let flood = count_fixed_animals_bruteforce(2, l, Connectivity::L1);
        ok &= free == flood && anchored == l * free && (free as f64) < 16f64.powi(l as i32);
        counts.push(free);
    }
    outcome(ok && counts == [1, 2, 6, 19, 63], format!("unanchored counts {counts:?}"))
}

fn c14_variance() -> Result<Outcome> {
    let probe = variance_probe(&TP, &p(&[1, 0]), &[8, 16], 2000, 2.0, 2.5, SEED ^ 14)?;
    outcome(
        probe.passed,
        format!(
            "Var(a(0,16e1)) / Var(a(0,8e1)) = {:.4} ({:.4} / {:.4})",
            probe.ratio, probe.rows[1].variance, probe.rows[0].variance
        ),
    )
}

fn c15_event_rarity() -> Result<Outcome> {
    let rep = compare_restricted(&TP, &p(&[8, 0]), &[1.5, 3.0], 10_000, SEED ^ 15)?;
    let pair = &rep.pairs[0];
    outcome(
        pair.events == 0 && pair.nested_violations == 0,
        format!(
            "{} events in 10000 samples (95% CI [{:.2e}, {:.2e}]), mean gap {:.4}",
            pair.events, pair.ci_lo, pair.ci_hi, pair.mean_gap
        ),
    )
}

fn c16_determinism() -> Result<Outcome> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir()?;
    let mut differing = Vec::new();
    let mut compared = 0;
    for e in harness::Experiment::ALL {
        let cfg = ExperimentConfig::load(&dir.join(format!("{}.toml", e.name())))?;
        let mut csvs: Vec<BTreeMap<String, Vec<u8>>> = Vec::new();
        for threads in [1, 8] {
            let out = tmp.path().join(format!("{}-{threads}", e.name()));
            let m = harness::run(
                &cfg,
                &RunOptions { out: Some(out.clone()), threads: Some(threads), ..Default::default() },
            )?;
            let mut files = BTreeMap::new();
            for f in m.files.iter().filter(|f| f.path.ends_with(".csv")) {
                files.insert(f.path.clone(), std::fs::read(out.join(&f.path))?);
            }
            csvs.push(files);
        }
        compared += csvs[0].len();
        if csvs[0].is_empty() || csvs[0] != csvs[1] {
            differing.push(e.name());
        }
    }
    outcome(differing.is_empty(), format!("{compared} CSVs over 11 experiments; differing: {differing:?}"))
}

type Criterion = (&'static str, fn() -> Result<Outcome>, Option<Duration>);

fn main() -> ExitCode {
    let criteria: [Criterion; 16] = [
        ("1 oracle sandwich", c1_sandwich, Some(Duration::from_secs(60))),
        ("2 solver vs Monte Carlo", c2_monte_carlo, Some(Duration::from_secs(120))),
        ("3 hand values", c3_hand_values, None),
        ("4 nested-box monotonicity", c4_monotonicity, None),
        ("5 block subadditivity", c5_block_subadditivity, None),
        ("6 alpha inside the moment band", c6_alpha_band, Some(Duration::from_secs(600))),
        ("7 rank-one sandwich", c7_rank_one, None),
        ("8 range lower bound", c8_range, None),
        ("9 per-site entropy", c9_entropy, None),
        ("10 truncation nonnegativity", c10_truncation, None),
        ("11 occupied-cost bound", c11_occupied_bound, None),
        ("12 chi inside (0, 1)", c12_chi, None),
        ("13 animal enumeration", c13_animals, None),
        ("14 variance scaling", c14_variance, Some(Duration::from_secs(900))),
        ("15 log 2 event rarity", c15_event_rarity, None),
        ("16 determinism across thread counts", c16_determinism, None),
    ];
    let mut failed = 0;
    for (name, f, budget) in criteria {
        let t0 = Instant::now();
        let res = f();
        let took = t0.elapsed();
        let (passed, detail) = match res {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = budget.is_none_or(|b| took <= b);
        let passed = passed && in_time;
        if !passed {
            failed += 1;
        }
        let status = if passed { "PASS" } else { "FAIL" };
        let late = if in_time { String::new() } else { format!(" over budget {budget:?}") };
        println!("[{status}] {name}: {detail} [{:.2}s{late}]", took.as_secs_f64());
    }
    println!("{} of 16 criteria passed", 16 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
