//! Coarse-graining checks: occupied boxes along lattice animals, the cost of
//! leaving an occupied box, the one-crossing functional `chi` and the
//! supermartingale step built on it.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{output, Check};
use crate::lattice::{for_each_animal, AnimalCaps, AnimalSpec, BoxRegion, Connectivity, LatticePoint, Region};
use crate::mc_oracle::{animal_bound_holds, CrossingSample};
use crate::potential::{sample_field, set_site, DistributionSpec, PotentialField};
use crate::seed::{self, tag};
use crate::solver::{exit_functional, Crossing};
use crate::stats::{self, wilson, Z95};

/// Probability that an `M`-box contains a site with potential at least `kappa`.
pub fn box_occupancy_probability(spec: &DistributionSpec, d: usize, m: i64, kappa: f64) -> f64 {
    let q = spec.prob_at_least(kappa).clamp(0.0, 1.0);
    1.0 - (1.0 - q).powf((m as f64).powi(d as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancySetup {
    pub d: usize,
    pub m: i64,
    pub kappa: f64,
    pub l_cap: usize,
    pub samples: usize,
    pub seed: u64,
    /// Use this box occupancy probability instead of deriving it from the law.
    pub p_occupied: Option<f64>,
    pub caps: AnimalCaps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub l: usize,
    /// Anchored ℓ¹-animals of size `l`.
    pub animals: usize,
    /// Samples with at least one animal less than half occupied.
    pub failures: usize,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Animals less than half occupied, summed over samples.
    pub violation_animals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    pub p: f64,
    pub rows: Vec<OccupancyRow>,
    /// Least-squares slope of the log failure rate against `l`.
    pub slope: Option<f64>,
    pub checks: Vec<Check>,
}

impl OccupancyReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let header = ["l", "animals", "failures", "rate", "ci_lo", "ci_hi", "violation_animals"].map(String::from);
        output::csv_bytes(
            &header,
            self.rows.iter().map(|r| {
                vec![
                    r.l.to_string(),
                    r.animals.to_string(),
                    r.failures.to_string(),
                    output::fmt_real(r.rate),
                    output::fmt_real(r.ci_lo),
                    output::fmt_real(r.ci_hi),
                    r.violation_animals.to_string(),
                ]
            }),
        )
    }
}

/// Independent box occupancies around the origin, checked against every
/// anchored ℓ¹-animal of size `1..=l_cap`.
pub fn animal_occupancy_check(spec: &DistributionSpec, setup: &OccupancySetup) -> Result<OccupancyReport> {
    let d = setup.d;
    if setup.l_cap == 0 {
        return Err(Error::param("l_cap", "must be at least 1"));
    }
    let p = match setup.p_occupied {
        Some(p) if (0.0..=1.0).contains(&p) => p,
        Some(p) => return Err(Error::param("p_occupied", format!("must lie in [0, 1], got {p}"))),
        None => {
            if setup.m < 1 {
                return Err(Error::param("M", "must be at least 1"));
            }
            box_occupancy_probability(spec, d, setup.m, setup.kappa)
        }
    };
    let reach = setup.l_cap as i64 - 1;
    let cells = BoxRegion::centered(d, reach);
    let mut animals: Vec<Vec<Vec<u32>>> = Vec::with_capacity(setup.l_cap);
    for l in 1..=setup.l_cap {
        let spec_l = AnimalSpec { dimension: d, size: l, connectivity: Connectivity::L1, anchored: true };
        let mut list = Vec::new();
        for_each_animal(&spec_l, &setup.caps, |a| {
            list.push(a.iter().map(|c| cells.index_of(c).expect("anchored animal fits the cell box") as u32).collect());
        })?;
        animals.push(list);
    }
    let n_cells = cells.site_count();
    // per sample: (failed at l, violating animals at l)
    let per: Vec<Vec<(bool, usize)>> = (0..setup.samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::rng_for(setup.seed, &[tag::COARSE, s]);
            let occ: Vec<bool> = (0..n_cells).map(|_| rng.random::<f64>() < p).collect();
            animals
                .iter()
                .enumerate()
                .map(|(k, list)| {
                    let l = k + 1;
                    let bad = list.iter().filter(|a| 2 * a.iter().filter(|&&c| occ[c as usize]).count() < l).count();
                    (bad > 0, bad)
                })
                .collect()
        })
        .collect();
    let n = setup.samples;
    let rows: Vec<OccupancyRow> = (0..setup.l_cap)
        .map(|k| {
            let failures = per.iter().filter(|v| v[k].0).count();
            let (ci_lo, ci_hi) = wilson(failures, n, Z95);
            OccupancyRow {
                l: k + 1,
                animals: animals[k].len(),
                failures,
                rate: failures as f64 / n.max(1) as f64,
                ci_lo,
                ci_hi,
                violation_animals: per.iter().map(|v| v[k].1).sum(),
            }
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.rate > 0.0).map(|r| (r.l as f64, r.rate.ln())).collect();
    let (ls, lr): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let slope = stats::least_squares(&ls, &lr).map(|f| f.0);
    let bound_ok = rows.iter().all(|r| (r.animals as f64) <= 4f64.powi((d * r.l) as i32));
    let checks = vec![
        Check::exact("animal counts below 4^{dl}", bound_ok, String::new()),
        Check::exact(
            "violations never exceed enumerated animals",
            rows.iter().all(|r| r.violation_animals <= r.animals * n),
            String::new(),
        ),
        Check::statistical("log failure rate slope <= -0.3", slope.is_some_and(|s| s <= -0.3), format!("{slope:?}")),
    ];
    Ok(OccupancyReport { p, rows, slope, checks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupiedTrial {
    pub occupied_site: LatticePoint,
    pub start: LatticePoint,
    pub value: f64,
    /// `bound - value`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupiedBoundReport {
    pub m: i64,
    pub kappa: f64,
    /// `1 - (1 - e^{-kappa}) (1/2d)^M`.
    pub bound: f64,
    pub trials: Vec<OccupiedTrial>,
    pub violations: usize,
    pub checks: Vec<Check>,
}

impl OccupiedBoundReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let d = self.trials.first().map_or(0, |t| t.start.dim());
        let mut header: Vec<String> = (1..=d).map(|i| format!("site{i}")).collect();
        header.extend((1..=d).map(|i| format!("start{i}")));
        header.extend(["value", "margin"].map(String::from));
        output::csv_bytes(
            &header,
            self.trials.iter().map(|t| {
                let mut row: Vec<String> =
                    t.occupied_site.iter().chain(t.start.iter()).map(|c| c.to_string()).collect();
                row.push(output::fmt_real(t.value));
                row.push(output::fmt_real(t.margin));
                row
            }),
        )
    }
}

/// `1 - (1 - e^{-kappa}) (1/2d)^M`.
pub fn occupied_bound(d: usize, m: i64, kappa: f64) -> f64 {
    1.0 + (-kappa).exp_m1() * (2.0 * d as f64).powi(-(m as i32))
}

/// Exit functional of `B(0) = [0, M)^d` from a random start, with the box made
/// occupied by raising one random site to at least `kappa`.
pub fn occupied_cost_bound_check(
    spec: &DistributionSpec,
    d: usize,
    m: i64,
    kappa: f64,
    n_trials: usize,
    seed: u64,
) -> Result<OccupiedBoundReport> {
    if !(1..=6).contains(&m) {
        return Err(Error::param("M", format!("must lie in 1..=6, got {m}")));
    }
    if !(kappa > 0.0) {
        return Err(Error::param("kappa", "must be positive"));
    }
    let bx = BoxRegion::new(LatticePoint::origin(d), LatticePoint::new(std::iter::repeat_n(m, d)))?;
    let region = Region::from_box(bx.clone());
    let bound = occupied_bound(d, m, kappa);
    let trials: Vec<OccupiedTrial> = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let field = sample_field(spec, &bx, seed::derive(seed, &[tag::FIELD, 0, i]))?;
            let mut rng = seed::rng_for(seed, &[tag::TRIAL, i]);
            let z = bx.point_at(rng.random_range(0..bx.site_count()));
            let start = bx.point_at(rng.random_range(0..bx.site_count()));
            let field = set_site(&field, &z, field.get(&z).unwrap().max(kappa))?;
            let value = exit_functional(&field, &region, &start, Crossing::ExitRegion)?;
            Ok(OccupiedTrial { occupied_site: z, start, value, margin: bound - value })
        })
        .collect::<Result<_>>()?;
    let violations = trials.iter().filter(|t| t.value > bound).count();
    let worst = trials.iter().map(|t| t.margin).fold(f64::INFINITY, f64::min);
    let checks = vec![Check::exact(
        "exit functional of an occupied box below 1 - (1 - e^{-kappa})(1/2d)^M",
        violations == 0,
        format!("{violations} violations, smallest margin {worst:e}"),
    )];
    Ok(OccupiedBoundReport { m, kappa, bound, trials, violations, checks })
}

/// Crossing radius `ceil(3l/4)`.
pub fn crossing_radius(l: i64) -> i64 {
    (3 * l + 3) / 4
}

/// Box carrying every site a crossing from `|start|_inf <= l/2` can visit.
pub fn chi_region(d: usize, l: i64) -> BoxRegion {
    BoxRegion::centered(d, l / 2 + crossing_radius(l) - 1)
}

fn check_l(l: i64) -> Result<()> {
    if l < 2 || l % 2 != 0 {
        return Err(Error::param("l", format!("must be even and at least 2, got {l}")));
    }
    Ok(())
}

/// Sites of the open cube `(-l/8, l/8)^d`.
pub fn central_sites(d: usize, l: i64) -> Vec<LatticePoint> {
    let r = (l - 1) / 8;
    BoxRegion::centered(d, r).points().filter(|p| p.iter().all(|&c| 8 * c.abs() < l)).collect()
}

/// Whether `(-l/8, l/8)^d` contains a site with potential at least `kappa`.
pub fn in_omega_prime(field: &PotentialField, l: i64, kappa: f64) -> bool {
    central_sites(field.dim(), l).iter().any(|z| field.get(z).is_some_and(|v| v >= kappa))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiEvaluation {
    pub l: i64,
    /// Start attaining the supremum.
    pub start: LatticePoint,
    pub value: f64,
    /// Straight-path lower bound at `start`.
    pub lower_bound: f64,
    /// Smallest `value(s) - lower_bound(s)` over all starts.
    pub min_margin: f64,
}

// Best straight path from `s` to the crossing shell.
fn straight_path_bound(field: &PotentialField, s: &LatticePoint, r: i64) -> f64 {
    let d = s.dim();
    let step = (2.0 * d as f64).ln();
    let mut best = f64::NEG_INFINITY;
    for axis in 0..d {
        for sign in [1, -1] {
            let e = LatticePoint::unit(d, axis, sign);
            let mut acc = 0.0;
            for k in 0..r {
                acc -= field.get(&(s + &e.scale(k))).unwrap_or(f64::INFINITY) + step;
            }
            best = best.max(acc);
        }
    }
    best.exp()
}

fn sup_crossing(field: &PotentialField, l: i64) -> Result<ChiEvaluation> {
    check_l(l)?;
    let d = field.dim();
    let need = chi_region(d, l);
    if !field.region().contains_box(&need) {
        return Err(Error::Domain(format!("field must cover {need:?} for l = {l}")));
    }
    let r = crossing_radius(l);
    let region = Region::from_box(field.region().clone());
    let mut best: Option<ChiEvaluation> = None;
    let mut min_margin = f64::INFINITY;
    for s in BoxRegion::centered(d, l / 2).points() {
        let v = exit_functional(field, &region, &s, Crossing::LinfCrossing(r))?;
        let lb = straight_path_bound(field, &s, r);
        min_margin = min_margin.min(v - lb);
        if best.as_ref().is_none_or(|b| v > b.value) {
            best = Some(ChiEvaluation { l, start: s, value: v, lower_bound: lb, min_margin: 0.0 });
        }
    }
    let mut out = best.expect("start set is nonempty");
    out.min_margin = min_margin;
    Ok(out)
}

/// `sup_{|s|_inf <= l/2} E^s[exp(-sum_{k < tau_1} omega(S_k))]` for a
/// configuration in which `(-l/8, l/8)^d` is occupied.
pub fn chi_evaluate(field: &PotentialField, l: i64, kappa: f64) -> Result<ChiEvaluation> {
    check_l(l)?;
    if !in_omega_prime(field, l, kappa) {
        return Err(Error::Domain(format!("no site of (-l/8, l/8)^d carries potential >= {kappa}")));
    }
    sup_crossing(field, l)
}

/// `chi` exactly: the functional decreases in the potential, so its supremum
/// over occupied configurations is attained by a single site at `kappa` with
/// zero potential elsewhere. Returns the best such configuration.
pub fn chi_exact(d: usize, l: i64, kappa: f64) -> Result<(ChiEvaluation, PotentialField)> {
    check_l(l)?;
    let bx = chi_region(d, l);
    let zero = PotentialField::constant(bx, 0.0)?;
    let mut best: Option<(ChiEvaluation, PotentialField)> = None;
    for z in central_sites(d, l) {
        let f = set_site(&zero, &z, kappa)?;
        let ev = chi_evaluate(&f, l, kappa)?;
        if best.as_ref().is_none_or(|b| ev.value > b.0.value) {
            best = Some((ev, f));
        }
    }
    best.ok_or_else(|| Error::Domain("empty central cube".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiProbe {
    pub l: i64,
    pub kappa: f64,
    /// Maximum over the canonical and the sampled configurations.
    pub value: f64,
    pub canonical: ChiEvaluation,
    pub sampled: Vec<ChiEvaluation>,
    pub sampled_max: f64,
    /// Canonical maximizer and the best sampled configuration.
    #[serde(skip)]
    pub witnesses: Vec<PotentialField>,
    pub checks: Vec<Check>,
}

impl ChiProbe {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let header = ["config", "value", "lower_bound", "min_margin"].map(String::from);
        let rows = std::iter::once(("canonical".to_string(), &self.canonical))
            .chain(self.sampled.iter().enumerate().map(|(i, e)| (i.to_string(), e)));
        output::csv_bytes(
            &header,
            rows.map(|(name, e)| {
                vec![name, output::fmt_real(e.value), output::fmt_real(e.lower_bound), output::fmt_real(e.min_margin)]
            }),
        )
    }
}

/// Sampled occupied configurations plus the canonical single-site ones. A
/// sampled configuration that misses `Ω′` gets one random central site raised
/// to `kappa`.
pub fn chi_upper_probe(
    spec: &DistributionSpec,
    d: usize,
    l: i64,
    kappa: f64,
    n_configs: usize,
    seed: u64,
) -> Result<ChiProbe> {
    if !(kappa > 0.0) {
        return Err(Error::param("kappa", "must be positive"));
    }
    let (canonical, canon_field) = chi_exact(d, l, kappa)?;
    let bx = chi_region(d, l);
    let centre = central_sites(d, l);
    let sampled: Vec<(ChiEvaluation, PotentialField)> = (0..n_configs as u64)
        .into_par_iter()
        .map(|i| {
            let mut f = sample_field(spec, &bx, seed::derive(seed, &[tag::FIELD, 0, i]))?;
            if !in_omega_prime(&f, l, kappa) {
                let mut rng = seed::rng_for(seed, &[tag::TRIAL, i]);
                let z = &centre[rng.random_range(0..centre.len())];
                f = set_site(&f, z, kappa)?;
            }
            Ok((chi_evaluate(&f, l, kappa)?, f))
        })
        .collect::<Result<_>>()?;
    let best_sampled = sampled.iter().max_by(|a, b| a.0.value.total_cmp(&b.0.value));
    let sampled_max = best_sampled.map_or(0.0, |b| b.0.value);
    let mut witnesses = vec![canon_field];
    if let Some(b) = best_sampled {
        witnesses.push(b.1.clone());
    }
    let evals: Vec<ChiEvaluation> = sampled.into_iter().map(|s| s.0).collect();
    let inside = |e: &ChiEvaluation| e.value > 0.0 && e.value < 1.0 - 1e-12;
    let checks = vec![
        Check::exact(
            "chi strictly inside (0, 1)",
            inside(&canonical) && evals.iter().all(inside),
            format!("canonical {}, sampled max {sampled_max}", canonical.value),
        ),
        Check::exact(
            "straight-path lower bound",
            canonical.min_margin >= -1e-15 && evals.iter().all(|e| e.min_margin >= -1e-15),
            String::new(),
        ),
        Check::exact(
            "sampled configurations below the canonical maximum",
            sampled_max <= canonical.value + 1e-12,
            String::new(),
        ),
    ];
    Ok(ChiProbe {
        l,
        kappa,
        value: canonical.value.max(sampled_max),
        canonical,
        sampled: evals,
        sampled_max,
        witnesses,
        checks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTrial {
    pub occupied: bool,
    pub value: f64,
    /// `chi` for occupied cubes, 1 otherwise.
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermartingaleReport {
    pub chi: f64,
    pub trials: Vec<StepTrial>,
    pub occupied: usize,
    pub violations: usize,
    pub checks: Vec<Check>,
}

impl SupermartingaleReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let header = ["trial", "occupied", "value", "limit"].map(String::from);
        output::csv_bytes(
            &header,
            self.trials.iter().enumerate().map(|(i, t)| {
                vec![i.to_string(), t.occupied.to_string(), output::fmt_real(t.value), output::fmt_real(t.limit)]
            }),
        )
    }
}

/// One crossing from a sampled cube environment: the functional must stay
/// below `chi` when the central sub-cube is occupied and below 1 otherwise.
pub fn supermartingale_step_check(
    spec: &DistributionSpec,
    d: usize,
    l: i64,
    kappa: f64,
    chi_value: f64,
    n_trials: usize,
    seed: u64,
) -> Result<SupermartingaleReport> {
    let bx = chi_region(d, l);
    let trials: Vec<StepTrial> = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let f = sample_field(spec, &bx, seed::derive(seed, &[tag::FIELD, 1, i]))?;
            let occupied = in_omega_prime(&f, l, kappa);
            let value = sup_crossing(&f, l)?.value;
            Ok(StepTrial { occupied, value, limit: if occupied { chi_value } else { 1.0 } })
        })
        .collect::<Result<_>>()?;
    let violations = trials.iter().filter(|t| t.value > t.limit + 1e-12).count();
    let occupied = trials.iter().filter(|t| t.occupied).count();
    let checks = vec![Check::exact(
        "one-step supermartingale inequality",
        violations == 0,
        format!("{violations} violations over {occupied} occupied cubes"),
    )];
    Ok(SupermartingaleReport { chi: chi_value, trials, occupied, violations, checks })
}

/// `#A <= (3l)^d #Ã` on every accepted trace of a crossing sample.
pub fn reassert_animal_bound(sample: &CrossingSample, d: usize) -> Check {
    let bad = sample.traces.iter().filter(|t| !animal_bound_holds(t, sample.l, d)).count();
    Check::exact("range bounded by animal volume", bad == 0, format!("{bad} of {} traces", sample.traces.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i64]) -> LatticePoint {
        LatticePoint::new(c.iter().copied())
    }

    fn setup(p_occ: f64, l_cap: usize, samples: usize) -> OccupancySetup {
        OccupancySetup {
            d: 2,
            m: 4,
            kappa: 0.5,
            l_cap,
            samples,
            seed: 3,
            p_occupied: Some(p_occ),
            caps: AnimalCaps::default(),
        }
    }

    #[test]
    fn full_occupancy_has_no_violations() {
        let spec = DistributionSpec::Constant { value: 1.0 };
        let rep = animal_occupancy_check(&spec, &setup(1.0, 4, 50)).unwrap();
        assert!(rep.rows.iter().all(|r| r.failures == 0 && r.violation_animals == 0));
        let derived = OccupancySetup { p_occupied: None, ..setup(0.0, 2, 5) };
        assert_eq!(animal_occupancy_check(&spec, &derived).unwrap().p, 1.0);
    }

    #[test]
    fn size_one_is_bernoulli() {
        let spec = DistributionSpec::Constant { value: 1.0 };
        let rep = animal_occupancy_check(&spec, &setup(0.9, 1, 4000)).unwrap();
        let r = rep.rows[0];
        assert_eq!(r.animals, 1);
        assert!(r.ci_lo <= 0.1 && 0.1 <= r.ci_hi, "{r:?}");
    }

    #[test]
    fn occupancy_probability_formula() {
        let spec = DistributionSpec::TwoPoint { v_lo: 0.0, v_hi: 1.0, p_hi: 0.1 };
        let p = box_occupancy_probability(&spec, 2, 2, 0.5);
        assert!((p - (1.0 - 0.9f64.powi(4))).abs() < 1e-15);
    }

    #[test]
    fn occupied_site_start_is_immediate() {
        let kappa = 0.7;
        let bx = BoxRegion::new(p(&[0, 0]), p(&[4, 4])).unwrap();
        let field = set_site(&PotentialField::constant(bx.clone(), 0.0).unwrap(), &p(&[1, 2]), kappa).unwrap();
        let v = exit_functional(&field, &Region::from_box(bx), &p(&[1, 2]), Crossing::ExitRegion).unwrap();
        assert!(v <= (-kappa).exp() + 1e-15);
        assert!(v < occupied_bound(2, 4, kappa));
    }

    #[test]
    fn small_kappa_bound_tends_to_one() {
        assert!(occupied_bound(2, 4, 1e-9) > 1.0 - 1e-11);
    }

    #[test]
    fn central_cube_for_l8_is_origin() {
        assert_eq!(central_sites(2, 8), vec![p(&[0, 0])]);
        assert_eq!(central_sites(2, 16).len(), 9);
        assert_eq!(crossing_radius(8), 6);
    }

    #[test]
    fn chi_requires_occupation() {
        let f = PotentialField::constant(chi_region(2, 8), 0.0).unwrap();
        assert!(matches!(chi_evaluate(&f, 8, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn chi_in_unit_interval() {
        let (ev, _) = chi_exact(2, 8, 0.5).unwrap();
        assert!(ev.value > 0.0 && ev.value < 1.0);
        assert!(ev.min_margin >= 0.0);
        let full = PotentialField::constant(chi_region(2, 8), 0.5).unwrap();
        let all = chi_evaluate(&full, 8, 0.5).unwrap();
        assert!(all.value < (-0.5f64).exp());
    }

    #[test]
    fn empty_cube_branch() {
        let spec = DistributionSpec::Constant { value: 0.0 };
        let rep = supermartingale_step_check(&spec, 2, 8, 0.5, 0.9, 3, 0).unwrap();
        assert!(rep.trials.iter().all(|t| !t.occupied && (t.value - 1.0).abs() < 1e-12));
        assert_eq!(rep.violations, 0);
    }
}
