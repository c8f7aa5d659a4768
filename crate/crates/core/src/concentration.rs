//! Tail experiments for travel costs and exact or Monte Carlo checks of the
//! ingredients behind the concentration bounds: restricted and truncated cost
//! comparisons, the rank-one perturbation bound, per-site entropy bounds, the
//! Herbst functional and martingale differences.

use std::f64::consts::LN_2;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{output, Check};
use crate::lattice::{BoxRegion, LatticePoint, Region};
use crate::lyapunov::sample_costs;
use crate::potential::{
    assumption_report, gate_hypotheses, sample_field, set_site, truncate_field, truncation_cap, DistributionSpec,
    Hypothesis, PotentialField,
};
use crate::seed::{self, tag};
use crate::solver::{default_box, return_probability_limit, travel_cost, weighted_functionals};
use crate::stats::{self, wilson, Z95};

/// Which deviation the tail experiment measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSide {
    /// `P(a - mean >= t |x|^{1/2})` against `C e^{-ct}`.
    UpperExp,
    /// `P(a - mean <= -t |x|^{1/2})` against `e^{-ct^2}`.
    LowerGauss,
    /// `P(a - alpha_ref >= t |x|_1)` against `C e^{-ct}`.
    UpperLd,
}

impl TailSide {
    fn hypotheses(self) -> &'static [Hypothesis] {
        match self {
            TailSide::UpperExp => &[Hypothesis::A1(None), Hypothesis::A3IfPlanar],
            TailSide::LowerGauss => &[Hypothesis::A2, Hypothesis::A3IfPlanar],
            TailSide::UpperLd => &[Hypothesis::A1(None)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSetup {
    pub x: LatticePoint,
    pub side: TailSide,
    pub samples: usize,
    pub t_grid: Vec<f64>,
    pub box_factor: f64,
    /// Reference value of `alpha(x)` for the large-deviation side; the sample
    /// mean of `a(0, x)` is used when absent.
    pub alpha_ref: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    /// Deviation threshold actually applied, after the standard-error shift.
    pub threshold: f64,
    pub exceedances: usize,
    pub tail: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub ref_shape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub x: LatticePoint,
    pub side: TailSide,
    pub samples: usize,
    pub rows: Vec<TailRow>,
    /// Sample mean of `a(0, x)`, standing in for its expectation.
    pub centered_by: f64,
    pub mean_se: f64,
    pub alpha_ref: Option<f64>,
    /// Fitted `c` of the reference shape, and its prefactor.
    pub fit_c: Option<f64>,
    pub fit_prefactor: Option<f64>,
    /// Correlation of log-tail with `t^2` over points with at least 10
    /// exceedances (lower side only).
    pub shape_corr: Option<f64>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl TailReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let header = ["t", "tail", "ci_lo", "ci_hi", "ref_shape"].map(String::from);
        output::csv_bytes(
            &header,
            self.rows
                .iter()
                .map(|r| [r.t, r.tail, r.ci_lo, r.ci_hi, r.ref_shape].iter().map(|&v| output::fmt_real(v)).collect()),
        )
    }
}

/// Empirical tails of `a_V(0, x)` on the default box.
pub fn tail_experiment(spec: &DistributionSpec, setup: &TailSetup, override_assumptions: bool) -> Result<TailReport> {
    let d = setup.x.dim();
    let mut warnings = gate_hypotheses(spec, d, setup.side.hypotheses(), "tail experiment", override_assumptions)?;
    if setup.samples < 2 {
        return Err(Error::param("samples", "need at least 2"));
    }
    if setup.t_grid.is_empty() || setup.t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::param("t_grid", "must be a nonempty list of nonnegative reals"));
    }
    let costs = sample_costs(spec, &setup.x, setup.box_factor, setup.samples, setup.seed, 0)?;
    let s = stats::summarize(&costs);
    let l1 = setup.x.l1() as f64;
    let scale = l1.sqrt();
    let n = costs.len();
    let rows_raw: Vec<(f64, f64, usize)> = setup
        .t_grid
        .iter()
        .map(|&t| {
            let (thr, k) = match setup.side {
                TailSide::UpperExp => {
                    let thr = t * scale + s.se;
                    (thr, costs.iter().filter(|&&a| a - s.mean >= thr).count())
                }
                TailSide::LowerGauss => {
                    let thr = t * scale + s.se;
                    (thr, costs.iter().filter(|&&a| a - s.mean <= -thr).count())
                }
                TailSide::UpperLd => {
                    let centre = setup.alpha_ref.unwrap_or(s.mean);
                    let shift = if setup.alpha_ref.is_some() { 0.0 } else { s.se };
                    let thr = t * l1 + shift;
                    (thr, costs.iter().filter(|&&a| a - centre >= thr).count())
                }
            };
            (t, thr, k)
        })
        .collect();
    let var_of = |t: f64| if setup.side == TailSide::LowerGauss { t * t } else { t };
    let pts: Vec<(f64, f64)> =
        rows_raw.iter().filter(|r| r.2 > 0).map(|&(t, _, k)| (var_of(t), (k as f64 / n as f64).ln())).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let fit = stats::least_squares(&xs, &ys);
    let rows: Vec<TailRow> = rows_raw
        .iter()
        .map(|&(t, threshold, k)| {
            let (ci_lo, ci_hi) = wilson(k, n, Z95);
            let ref_shape = fit.map_or(f64::NAN, |(slope, icpt)| (icpt + slope * var_of(t)).exp());
            TailRow { t, threshold, exceedances: k, tail: k as f64 / n as f64, ci_lo, ci_hi, ref_shape }
        })
        .collect();

    let mut checks = Vec::new();
    let sorted_t = setup.t_grid.windows(2).all(|w| w[0] <= w[1]);
    let monotone = !sorted_t || rows.windows(2).all(|w| w[1].tail <= w[0].tail);
    checks.push(Check::exact("tails non-increasing in t", monotone, String::new()));
    checks.push(Check::exact(
        "tail probabilities in [0, 1]",
        rows.iter().all(|r| (0.0..=1.0).contains(&r.tail)),
        String::new(),
    ));
    if setup.side != TailSide::UpperLd {
        if let Some(r0) = rows.iter().find(|r| r.t == 0.0) {
            checks.push(Check::statistical(
                "tail at t = 0 in [0.2, 0.8]",
                (0.2..=0.8).contains(&r0.tail),
                format!("{}", r0.tail),
            ));
        }
    }
    let mut shape_corr = None;
    if setup.side == TailSide::LowerGauss {
        let good: Vec<&TailRow> = rows.iter().filter(|r| r.exceedances >= 10).collect();
        if good.len() >= 3 {
            let t2: Vec<f64> = good.iter().map(|r| r.t * r.t).collect();
            let lt: Vec<f64> = good.iter().map(|r| r.tail.ln()).collect();
            shape_corr = stats::correlation(&t2, &lt);
            let ok = shape_corr.is_some_and(|c| c <= -0.9);
            checks.push(Check::statistical("lower tail log-linear in t^2", ok, format!("correlation {shape_corr:?}")));
        } else {
            warnings.push("fewer than 3 grid points with 10 exceedances; shape test skipped".to_string());
        }
    }
    warnings.push("finite x may be pre-asymptotic; fitted constants are informational".to_string());
    Ok(TailReport {
        x: setup.x.clone(),
        side: setup.side,
        samples: n,
        rows,
        centered_by: s.mean,
        mean_se: s.se,
        alpha_ref: setup.alpha_ref,
        fit_c: fit.map(|(slope, _)| -slope),
        fit_prefactor: fit.map(|(_, icpt)| icpt.exp()),
        shape_corr,
        checks,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub n: i64,
    pub mean: f64,
    pub variance: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProbe {
    pub rows: Vec<VarianceRow>,
    /// Variance at the last `n` over the variance at the first.
    pub ratio: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl VarianceProbe {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let header = ["n", "mean", "variance", "samples"].map(String::from);
        output::csv_bytes(
            &header,
            self.rows.iter().map(|r| {
                vec![r.n.to_string(), output::fmt_real(r.mean), output::fmt_real(r.variance), r.samples.to_string()]
            }),
        )
    }
}

/// Sample variances of `a(0, n dir)` for each `n`; the probe passes when the
/// last over the first stays below `threshold`.
pub fn variance_probe(
    spec: &DistributionSpec,
    dir: &LatticePoint,
    ns: &[i64],
    samples: usize,
    box_factor: f64,
    threshold: f64,
    seed: u64,
) -> Result<VarianceProbe> {
    if ns.len() < 2 || ns.iter().any(|&n| n < 1) {
        return Err(Error::param("n_grid", "need at least two positive n"));
    }
    let rows = ns
        .iter()
        .map(|&n| {
            let costs = sample_costs(spec, &dir.scale(n), box_factor, samples, seed, n as u64)?;
            let s = stats::summarize(&costs);
            Ok(VarianceRow { n, mean: s.mean, variance: s.variance, samples: s.n })
        })
        .collect::<Result<Vec<_>>>()?;
    let ratio = rows.last().unwrap().variance / rows[0].variance;
    Ok(VarianceProbe { rows, ratio, threshold, passed: ratio <= threshold })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparePair {
    pub small: f64,
    pub large: f64,
    /// Samples with `a_large < a_small - log 2`.
    pub events: usize,
    pub frequency: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Mean of `a_small - a_large` and its standard error.
    pub mean_gap: f64,
    pub gap_se: f64,
    pub min_gap: f64,
    /// Samples with `a_large > a_small + 1e-10`.
    pub nested_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub x: LatticePoint,
    pub factors: Vec<f64>,
    /// `costs[i][j]`: sample `i`, factor `j`.
    pub costs: Vec<Vec<f64>>,
    pub pairs: Vec<ComparePair>,
    pub checks: Vec<Check>,
}

impl CompareReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut header = vec!["sample".to_string()];
        header.extend(self.factors.iter().map(|f| format!("a_factor_{f}")));
        output::csv_bytes(
            &header,
            self.costs.iter().enumerate().map(|(i, row)| {
                std::iter::once(i.to_string()).chain(row.iter().map(|&v| output::fmt_real(v))).collect()
            }),
        )
    }
}

/// Restricted costs over nested default boxes, all cut from one field per
/// sample drawn on the largest box.
pub fn compare_restricted(
    spec: &DistributionSpec,
    x: &LatticePoint,
    factors: &[f64],
    samples: usize,
    seed: u64,
) -> Result<CompareReport> {
    spec.validate()?;
    if factors.is_empty() || factors[0] < 1.0 || factors.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("box_factor_grid", "must be non-decreasing with minimum at least 1"));
    }
    if x.is_origin() {
        return Err(Error::param("x", "must be nonzero"));
    }
    let boxes: Vec<Region> = factors.iter().map(|&f| Region::from_box(default_box(x, f))).collect();
    let big = default_box(x, *factors.last().unwrap());
    let origin = LatticePoint::origin(x.dim());
    let costs: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let field = sample_field(spec, &big, seed::derive(seed, &[tag::FIELD, 0, i]))?;
            boxes.iter().map(|r| travel_cost(&field, r, &origin, x)).collect()
        })
        .collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for j in 1..factors.len() {
        let gaps: Vec<f64> = costs.iter().map(|c| c[j - 1] - c[j]).collect();
        let events = gaps.iter().filter(|&&g| g > LN_2).count();
        let (ci_lo, ci_hi) = wilson(events, samples, Z95);
        let s = stats::summarize(&gaps);
        pairs.push(ComparePair {
            small: factors[j - 1],
            large: factors[j],
            events,
            frequency: events as f64 / samples.max(1) as f64,
            ci_lo,
            ci_hi,
            mean_gap: s.mean,
            gap_se: s.se,
            min_gap: gaps.iter().copied().fold(f64::INFINITY, f64::min),
            nested_violations: gaps.iter().filter(|&&g| g < -1e-10).count(),
        });
    }
    let checks = vec![
        Check::exact(
            "nested boxes never raise the cost",
            pairs.iter().all(|p| p.nested_violations == 0),
            format!("{:?}", pairs.iter().map(|p| p.nested_violations).collect::<Vec<_>>()),
        ),
        Check::statistical(
            "log 2 undercut event not observed",
            pairs.iter().all(|p| p.events == 0),
            format!("{:?}", pairs.iter().map(|p| p.events).collect::<Vec<_>>()),
        ),
    ];
    Ok(CompareReport { x: x.clone(), factors: factors.to_vec(), costs, pairs, checks })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapTailRow {
    pub u: f64,
    pub tail: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `e^{-(gamma/2) u}`.
    pub ref_shape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub x: LatticePoint,
    pub gamma: f64,
    pub cap: f64,
    /// `a(omega) - a(omega_hat)` per sample.
    pub gaps: Vec<f64>,
    /// Samples where some site exceeded the cap.
    pub active: usize,
    pub min_gap: f64,
    pub violations: usize,
    pub tail: Vec<GapTailRow>,
    /// Fitted decay rate of the gap tail, when at least two tail points are positive.
    pub fit_rate: Option<f64>,
    pub reference_rate: f64,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl TruncationReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let header = ["u", "tail", "ci_lo", "ci_hi", "ref_shape"].map(String::from);
        output::csv_bytes(
            &header,
            self.tail
                .iter()
                .map(|r| [r.u, r.tail, r.ci_lo, r.ci_hi, r.ref_shape].iter().map(|&v| output::fmt_real(v)).collect()),
        )
    }
}

/// Cost gap between the original and the truncated field.
pub fn truncation_gap(
    spec: &DistributionSpec,
    x: &LatticePoint,
    gamma: f64,
    samples: usize,
    box_factor: f64,
    seed: u64,
    override_assumptions: bool,
) -> Result<TruncationReport> {
    let d = x.dim();
    let warnings = gate_hypotheses(spec, d, &[Hypothesis::A1(Some(gamma))], "truncation gap", override_assumptions)?;
    let cap = truncation_cap(d, x, gamma)?;
    let bbox = default_box(x, box_factor);
    let region = Region::from_box(bbox.clone());
    let origin = LatticePoint::origin(d);
    let per: Vec<(f64, bool)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let field = sample_field(spec, &bbox, seed::derive(seed, &[tag::FIELD, 0, i]))?;
            if field.values().iter().all(|&v| v <= cap) {
                return Ok((0.0, false));
            }
            let hat = truncate_field(&field, x, gamma)?;
            let a = travel_cost(&field, &region, &origin, x)?;
            let a_hat = travel_cost(&hat, &region, &origin, x)?;
            Ok((a - a_hat, true))
        })
        .collect::<Result<_>>()?;
    let gaps: Vec<f64> = per.iter().map(|p| p.0).collect();
    let active = per.iter().filter(|p| p.1).count();
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let violations = gaps.iter().filter(|&&g| g < -1e-8).count();
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let n = gaps.len();
    let reference_rate = gamma / 2.0;
    let tail: Vec<GapTailRow> = (0..=10)
        .map(|k| {
            let u = max_gap * k as f64 / 10.0;
            let c = gaps.iter().filter(|&&g| g >= u && g > 0.0).count();
            let (ci_lo, ci_hi) = wilson(c, n, Z95);
            GapTailRow { u, tail: c as f64 / n.max(1) as f64, ci_lo, ci_hi, ref_shape: (-reference_rate * u).exp() }
        })
        .collect();
    let pts: Vec<(f64, f64)> = tail.iter().filter(|r| r.tail > 0.0).map(|r| (r.u, r.tail.ln())).collect();
    let (us, ls): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let fit_rate = stats::least_squares(&us, &ls).map(|(slope, _)| -slope);
    let checks =
        vec![Check::exact("truncation never raises the cost", violations == 0, format!("min gap {min_gap:e}"))];
    Ok(TruncationReport {
        x: x.clone(),
        gamma,
        cap,
        gaps,
        active,
        min_gap,
        violations,
        tail,
        fit_rate,
        reference_rate,
        checks,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub y: LatticePoint,
    pub omega_y: f64,
    pub sigma_y: f64,
    /// `a_V(0, x, sigma) - a_V(0, x, omega)`.
    pub delta: f64,
    /// `-log Q(H(x) <= H(y))`.
    pub bound_q: f64,
    /// `sigma(y) - omega(y) + 1/(1 - min(e^{-omega(y)}, p_return))`, absent
    /// in the plane without strictly positive support.
    pub bound_site: Option<f64>,
    pub holds: bool,
}

impl PerturbationRecord {
    pub fn bound(&self) -> f64 {
        self.bound_site.map_or(self.bound_q, |b| b.min(self.bound_q))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneReport {
    pub x: LatticePoint,
    pub return_probability: f64,
    pub records: Vec<PerturbationRecord>,
    pub violations: usize,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl RankOneReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let d = self.x.dim();
        let mut header: Vec<String> = (1..=d).map(|i| format!("y{i}")).collect();
        header.extend(["omega_y", "sigma_y", "delta", "bound_q", "bound_site", "holds"].map(String::from));
        output::csv_bytes(
            &header,
            self.records.iter().map(|r| {
                let mut row: Vec<String> = r.y.iter().map(|c| c.to_string()).collect();
                row.extend([r.omega_y, r.sigma_y, r.delta, r.bound_q].iter().map(|&v| output::fmt_real(v)));
                row.push(r.bound_site.map_or_else(String::new, output::fmt_real));
                row.push(r.holds.to_string());
                row
            }),
        )
    }
}

/// Raise the potential at one site and compare the exact cost change with
/// both rank-one bounds.
pub fn rank_one_trial(
    field: &PotentialField,
    region: &Region,
    x: &LatticePoint,
    y: &LatticePoint,
    sigma_y: f64,
    p_return: Option<f64>,
) -> Result<PerturbationRecord> {
    let origin = LatticePoint::origin(x.dim());
    let omega_y = field.get(y).ok_or_else(|| Error::Domain(format!("site {y} outside the field")))?;
    if sigma_y < omega_y {
        return Err(Error::param("sigma_y", "must not lower the potential"));
    }
    let raised = set_site(field, y, sigma_y)?;
    let a = travel_cost(field, region, &origin, x)?;
    let a_sigma = travel_cost(&raised, region, &origin, x)?;
    let delta = a_sigma - a;
    let wf = weighted_functionals(field, region, x)?;
    let q = wf.q_visit(y);
    let bound_q = if q >= 1.0 { f64::INFINITY } else { -(-q).ln_1p() };
    let bound_site = p_return.map(|p| sigma_y - omega_y + 1.0 / (1.0 - (-omega_y).exp().min(p)));
    let mut rec = PerturbationRecord { y: y.clone(), omega_y, sigma_y, delta, bound_q, bound_site, holds: false };
    rec.holds = delta >= -1e-8 && delta <= rec.bound() + 1e-8;
    Ok(rec)
}

/// `n_trials` independent rank-one perturbations on the default box.
pub fn rank_one_verify(
    spec: &DistributionSpec,
    x: &LatticePoint,
    n_trials: usize,
    box_factor: f64,
    seed: u64,
) -> Result<RankOneReport> {
    spec.validate()?;
    let d = x.dim();
    if x.is_origin() {
        return Err(Error::param("x", "must be nonzero"));
    }
    let rep = assumption_report(spec);
    let mut warnings = Vec::new();
    let p_return = if d == 2 && !rep.a3_ok {
        warnings.push("return probability is 1 in the plane; only the weighted-measure bound is checked".into());
        None
    } else {
        Some(return_probability_limit(d)?)
    };
    let bbox = default_box(x, box_factor);
    let region = Region::from_box(bbox.clone());
    let origin = LatticePoint::origin(d);
    let records: Vec<PerturbationRecord> = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let field = sample_field(spec, &bbox, seed::derive(seed, &[tag::FIELD, 0, i]))?;
            let mut rng = seed::rng_for(seed, &[tag::PERTURB, i]);
            let y = loop {
                let y = bbox.point_at(rng.random_range(0..bbox.site_count()));
                if y != origin && y != *x {
                    break y;
                }
            };
            let sigma = field.get(&y).unwrap() + spec.sample(&mut rng).abs();
            rank_one_trial(&field, &region, x, &y, sigma, p_return)
        })
        .collect::<Result<_>>()?;
    let violations = records.iter().filter(|r| !r.holds).count();
    let checks = vec![Check::exact("0 <= delta <= min(bounds)", violations == 0, format!("{violations} violations"))];
    Ok(RankOneReport {
        x: x.clone(),
        return_probability: p_return.unwrap_or(1.0),
        records,
        violations,
        checks,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRecord {
    pub env: usize,
    pub y: LatticePoint,
    pub lambda: f64,
    /// `Ent_y(e^{lambda U})`.
    pub ent_value: f64,
    /// `lambda^2 E_y E'_y[e^{lambda U} (U' - U)_+^2]`.
    pub entropy_bound: f64,
    /// `log E_y[e^{lambda U}] - lambda E_y[U]`.
    pub psi_value: f64,
    pub holds: bool,
}

/// Monte Carlo estimate of the constant in
/// `Ent(e^{lambda a}) <= C lambda^2 E[e^{lambda a} E_Q[#A]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpliedConstant {
    pub lambda: f64,
    pub ent: f64,
    pub denominator: f64,
    pub implied_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub x: LatticePoint,
    pub records: Vec<EntropyRecord>,
    pub implied: Vec<ImpliedConstant>,
    pub violations: usize,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl EntropyReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let d = self.x.dim();
        let mut header = vec!["env".to_string()];
        header.extend((1..=d).map(|i| format!("y{i}")));
        header.extend(["lambda", "ent", "rhs", "psi", "holds"].map(String::from));
        output::csv_bytes(
            &header,
            self.records.iter().map(|r| {
                let mut row = vec![r.env.to_string()];
                row.extend(r.y.iter().map(|c| c.to_string()));
                row.extend([r.lambda, r.ent_value, r.entropy_bound, r.psi_value].iter().map(|&v| output::fmt_real(v)));
                row.push(r.holds.to_string());
                row
            }),
        )
    }
}

/// `Ent(X)` for `X` taking value `xs[k]` with probability `ps[k]`.
pub fn discrete_entropy(xs: &[f64], ps: &[f64]) -> f64 {
    let m: f64 = xs.iter().zip(ps).map(|(x, p)| p * x).sum();
    if m <= 0.0 {
        return 0.0;
    }
    let xlx: f64 = xs.iter().zip(ps).map(|(&x, p)| if x > 0.0 { p * x * x.ln() } else { 0.0 }).sum();
    (xlx - m * m.ln()).max(0.0)
}

/// Per-site entropy, its upper bound and the per-site `psi`, given the costs
/// `us[k]` obtained with `omega(y) = v_k` (probability `ps[k]`).
pub fn site_entropy(us: &[f64], ps: &[f64], lambda: f64) -> (f64, f64, f64) {
    if lambda == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    // Ent and the bound are both linear in a common factor of e^{lambda U};
    // shift by the minimum to keep the exponentials in range.
    let u0 = us.iter().copied().fold(f64::INFINITY, f64::min);
    let xs: Vec<f64> = us.iter().map(|u| (lambda * (u - u0)).exp()).collect();
    let scale = (lambda * u0).exp();
    let ent = discrete_entropy(&xs, ps) * scale;
    let mut rhs = 0.0;
    for (k, (&uk, &pk)) in us.iter().zip(ps).enumerate() {
        for (&uj, &pj) in us.iter().zip(ps) {
            let up = (uj - uk).max(0.0);
            rhs += pk * pj * xs[k] * up * up;
        }
    }
    let rhs = lambda * lambda * rhs * scale;
    let m: f64 = xs.iter().zip(ps).map(|(x, p)| p * x).sum();
    let mean_u: f64 = us.iter().zip(ps).map(|(u, p)| p * u).sum();
    let psi = (m.ln() + lambda * u0 - lambda * mean_u).max(0.0);
    (ent, rhs, psi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySetup {
    pub x: LatticePoint,
    pub lambda_grid: Vec<f64>,
    pub environments: usize,
    pub box_factor: f64,
    /// Fields for the global Monte Carlo constant; zero skips it.
    pub mc_samples: usize,
    pub seed: u64,
}

/// Exact per-site entropy inequality on frozen environments, plus the implied
/// global constant by Monte Carlo.
pub fn entropy_suite(
    marginal: &DistributionSpec,
    setup: &EntropySetup,
    override_assumptions: bool,
) -> Result<EntropyReport> {
    let d = setup.x.dim();
    let support = marginal.finite_support().ok_or_else(|| {
        Error::param("spec", "the per-site entropy check integrates exactly and needs a finite-support marginal")
    })?;
    let warnings =
        gate_hypotheses(marginal, d, &[Hypothesis::A2, Hypothesis::A3IfPlanar], "entropy suite", override_assumptions)?;
    if setup.lambda_grid.iter().any(|l| !(l.is_finite() && *l <= 0.0)) {
        return Err(Error::param("lambda_grid", "values must be nonpositive"));
    }
    let x = &setup.x;
    let bbox = default_box(x, setup.box_factor);
    let region = Region::from_box(bbox.clone());
    let origin = LatticePoint::origin(d);
    let near: Vec<LatticePoint> = bbox.points().filter(|y| y.l1() <= x.l1() && y != x).collect();
    let (vals, ps): (Vec<f64>, Vec<f64>) = support.iter().copied().unzip();
    let records: Vec<EntropyRecord> = (0..setup.environments as u64)
        .into_par_iter()
        .map(|e| {
            let field = sample_field(marginal, &bbox, seed::derive(setup.seed, &[tag::FIELD, 0, e]))?;
            let mut rng = seed::rng_for(setup.seed, &[tag::TRIAL, e]);
            let y = near[rng.random_range(0..near.len())].clone();
            let us: Vec<f64> = vals
                .iter()
                .map(|&v| travel_cost(&set_site(&field, &y, v)?, &region, &origin, x))
                .collect::<Result<_>>()?;
            Ok(setup
                .lambda_grid
                .iter()
                .map(|&lambda| {
                    let (ent, rhs, psi) = site_entropy(&us, &ps, lambda);
                    EntropyRecord {
                        env: e as usize,
                        y: y.clone(),
                        lambda,
                        ent_value: ent,
                        entropy_bound: rhs,
                        psi_value: psi,
                        holds: ent >= 0.0 && ent <= rhs + 1e-9,
                    }
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut implied = Vec::new();
    if setup.mc_samples >= 2 {
        let pairs: Vec<(f64, f64)> = (0..setup.mc_samples as u64)
            .into_par_iter()
            .map(|i| {
                let field = sample_field(marginal, &bbox, seed::derive(setup.seed, &[tag::FIELD, 1, i]))?;
                let wf = weighted_functionals(&field, &region, x)?;
                Ok((-wf.e_source.ln(), wf.expected_range))
            })
            .collect::<Result<_>>()?;
        let a_min = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let n = pairs.len() as f64;
        for &lambda in setup.lambda_grid.iter().filter(|&&l| l != 0.0) {
            let xs: Vec<f64> = pairs.iter().map(|p| (lambda * (p.0 - a_min)).exp()).collect();
            let ones = vec![1.0 / n; xs.len()];
            let ent = discrete_entropy(&xs, &ones);
            let denom = lambda * lambda * xs.iter().zip(&pairs).map(|(x, p)| x * p.1).sum::<f64>() / n;
            implied.push(ImpliedConstant { lambda, ent, denominator: denom, implied_c: ent / denom });
        }
    }
    let violations = records.iter().filter(|r| !r.holds).count();
    let zero_ok = records.iter().filter(|r| r.lambda == 0.0).all(|r| r.ent_value == 0.0 && r.entropy_bound == 0.0);
    let checks = vec![
        Check::exact("per-site entropy bound", violations == 0, format!("{violations} violations")),
        Check::exact("lambda = 0 degenerates", zero_ok, String::new()),
    ];
    Ok(EntropyReport { x: x.clone(), records, implied, violations, checks, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiRow {
    pub x_l1: i64,
    pub lambda: f64,
    pub psi: f64,
    /// `psi / (lambda^2 |x|_1)`; zero at `lambda = 0`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiReport {
    pub rows: Vec<PsiRow>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl PsiReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let header = ["x_l1", "lambda", "psi", "ratio"].map(String::from);
        output::csv_bytes(
            &header,
            self.rows.iter().map(|r| {
                vec![r.x_l1.to_string(), output::fmt_real(r.lambda), output::fmt_real(r.psi), output::fmt_real(r.ratio)]
            }),
        )
    }
}

/// `psi(lambda) = log E[e^{lambda a}] - lambda E[a]` from samples, for each
/// `x` and `lambda`. The ratio probe compares the last `x` against the first.
pub fn psi_herbst(
    spec: &DistributionSpec,
    x_grid: &[LatticePoint],
    lambda_grid: &[f64],
    samples: usize,
    box_factor: f64,
    seed: u64,
    override_assumptions: bool,
) -> Result<PsiReport> {
    let d = x_grid.first().ok_or_else(|| Error::param("x_grid", "must be nonempty"))?.dim();
    let warnings =
        gate_hypotheses(spec, d, &[Hypothesis::A2, Hypothesis::A3IfPlanar], "herbst functional", override_assumptions)?;
    if lambda_grid.iter().any(|l| !(l.is_finite() && *l <= 0.0)) {
        return Err(Error::param("lambda_grid", "values must be nonpositive"));
    }
    let mut rows = Vec::new();
    for (k, x) in x_grid.iter().enumerate() {
        let costs = sample_costs(spec, x, box_factor, samples, seed, k as u64)?;
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        for &lambda in lambda_grid {
            let psi = if lambda == 0.0 {
                0.0
            } else {
                let la: Vec<f64> = costs.iter().map(|a| lambda * (a - mean)).collect();
                stats::log_mean_exp(&la)
            };
            let l1 = x.l1();
            let ratio = if lambda == 0.0 { 0.0 } else { psi / (lambda * lambda * l1 as f64) };
            rows.push(PsiRow { x_l1: l1, lambda, psi, ratio });
        }
    }
    let mut checks = vec![Check::exact(
        "psi nonnegative",
        rows.iter().all(|r| r.psi >= -1e-12),
        format!("min {:e}", rows.iter().map(|r| r.psi).fold(f64::INFINITY, f64::min)),
    )];
    if x_grid.len() >= 2 {
        let (first, last) = (x_grid[0].l1(), x_grid[x_grid.len() - 1].l1());
        let bounded = lambda_grid.iter().filter(|&&l| l != 0.0).all(|&l| {
            let r = |n: i64| rows.iter().find(|r| r.x_l1 == n && r.lambda == l).map_or(f64::NAN, |r| r.ratio);
            let q = r(last) / r(first);
            (0.5..=2.0).contains(&q)
        });
        checks.push(Check::statistical("psi ratio within factor 2 across x", bounded, String::new()));
    }
    Ok(PsiReport { rows, checks, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleDiagnostics {
    pub x: LatticePoint,
    pub cap: f64,
    /// Sites of the box in lexicographic order.
    pub site_order: Vec<LatticePoint>,
    /// `E[a_hat | F_i] - E[a_hat | F_{i-1}]` by nested Monte Carlo.
    pub delta_i_hat: Vec<f64>,
    pub delta_se: Vec<f64>,
    /// `C Q(H(x) > H(x_i))` under the truncated field.
    pub u_i: Vec<f64>,
    pub u_sum: f64,
    pub c_const: f64,
    /// `a_hat(0, x)` on the sampled truncated field.
    pub a_hat: f64,
    pub telescoped_sum: f64,
    /// Independent estimate of `E[a_hat]` and its standard error.
    pub reference_mean: f64,
    pub reference_se: f64,
    pub max_abs_delta: f64,
    /// `max |delta_i| / log |x|_1`.
    pub fitted_const: f64,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl MartingaleDiagnostics {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let d = self.x.dim();
        let mut header: Vec<String> = (1..=d).map(|i| format!("z{i}")).collect();
        header.extend(["delta", "se", "u"].map(String::from));
        output::csv_bytes(
            &header,
            self.site_order.iter().enumerate().map(|(i, z)| {
                let mut row: Vec<String> = z.iter().map(|c| c.to_string()).collect();
                row.extend([self.delta_i_hat[i], self.delta_se[i], self.u_i[i]].iter().map(|&v| output::fmt_real(v)));
                row
            }),
        )
    }
}

/// Largest box the martingale diagnostics accept.
pub const MARTINGALE_MAX_SITES: usize = 49;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSetup {
    pub x: LatticePoint,
    pub box_factor: f64,
    pub gamma: f64,
    pub nested_samples: usize,
    pub c_const: f64,
    pub seed: u64,
}

/// Doob martingale differences of `a_hat(0, x)` along the lexicographic site
/// order, estimated with common random numbers: sample `s` resamples every
/// site from one shared draw, so the differences telescope exactly to
/// `a_hat(omega) - mean_s a_hat(xi^s)`.
pub fn martingale_diagnostics(
    spec: &DistributionSpec,
    setup: &MartingaleSetup,
    override_assumptions: bool,
) -> Result<MartingaleDiagnostics> {
    let x = &setup.x;
    let d = x.dim();
    let warnings =
        gate_hypotheses(spec, d, &[Hypothesis::A1(Some(setup.gamma))], "martingale diagnostics", override_assumptions)?;
    if setup.nested_samples < 2 {
        return Err(Error::param("nested_samples", "need at least 2"));
    }
    let cap = truncation_cap(d, x, setup.gamma)?;
    let bbox = default_box(x, setup.box_factor);
    if bbox.site_count() > MARTINGALE_MAX_SITES {
        return Err(Error::Capacity(format!(
            "box has {} sites, nested Monte Carlo is limited to {MARTINGALE_MAX_SITES}",
            bbox.site_count()
        )));
    }
    let region = Region::from_box(bbox.clone());
    let origin = LatticePoint::origin(d);
    let mut order: Vec<LatticePoint> = bbox.points().collect();
    order.sort();
    let idx: Vec<usize> = order.iter().map(|p| bbox.index_of(p).unwrap()).collect();
    let m = order.len();

    let outer =
        truncate_field(&sample_field(spec, &bbox, seed::derive(setup.seed, &[tag::FIELD, 0, 0]))?, x, setup.gamma)?;
    let cost_of = |vals: Vec<f64>| -> Result<f64> {
        let f = PotentialField::from_values(bbox.clone(), vals, *spec, setup.seed)?;
        travel_cost(&f, &region, &origin, x)
    };
    let draw = |s: u64, stream: u64| -> Vec<f64> {
        (0..m as u64)
            .map(|j| spec.sample(&mut seed::rng_for(setup.seed, &[tag::NESTED, stream, s, j])).min(cap))
            .collect()
    };
    // chains[s][i] = a_hat with the first i sites (in order) from the outer field.
    let chains: Vec<Vec<f64>> = (0..setup.nested_samples as u64)
        .into_par_iter()
        .map(|s| {
            let xi = draw(s, 0);
            let mut vals = vec![0.0; m];
            for (k, &j) in idx.iter().enumerate() {
                vals[j] = xi[k];
            }
            let mut out = Vec::with_capacity(m + 1);
            out.push(cost_of(vals.clone())?);
            for &j in &idx {
                vals[j] = outer.values()[j];
                out.push(cost_of(vals.clone())?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut delta_i_hat = Vec::with_capacity(m);
    let mut delta_se = Vec::with_capacity(m);
    for i in 1..=m {
        let diffs: Vec<f64> = chains.iter().map(|c| c[i] - c[i - 1]).collect();
        let s = stats::summarize(&diffs);
        delta_i_hat.push(s.mean);
        delta_se.push(s.se);
    }
    let a_hat = travel_cost(&outer, &region, &origin, x)?;
    let start = stats::summarize(&chains.iter().map(|c| c[0]).collect::<Vec<_>>());
    let reference: Vec<f64> = (0..setup.nested_samples as u64)
        .into_par_iter()
        .map(|s| {
            let xi = draw(s, 1);
            let mut vals = vec![0.0; m];
            for (k, &j) in idx.iter().enumerate() {
                vals[j] = xi[k];
            }
            cost_of(vals)
        })
        .collect::<Result<_>>()?;
    let r = stats::summarize(&reference);
    let telescoped_sum: f64 = delta_i_hat.iter().sum();
    let wf = weighted_functionals(&outer, &region, x)?;
    let u_i: Vec<f64> = order.iter().map(|z| setup.c_const * wf.q_visit(z)).collect();
    let u_sum: f64 = u_i.iter().sum();
    let max_abs_delta = delta_i_hat.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let log_x = (x.l1() as f64).ln();
    let target = a_hat - r.mean;
    let err = 4.0 * (start.se * start.se + r.se * r.se).sqrt();
    let checks = vec![
        Check::statistical(
            "telescoped differences match a_hat - E[a_hat]",
            (telescoped_sum - target).abs() <= err.max(1e-12),
            format!("sum {telescoped_sum} target {target} tolerance {err}"),
        ),
        Check::exact(
            "weighted range at least |x|_1",
            u_sum / setup.c_const >= x.l1() as f64 - 1e-8,
            format!("{}", u_sum / setup.c_const),
        ),
    ];
    Ok(MartingaleDiagnostics {
        x: x.clone(),
        cap,
        site_order: order,
        delta_i_hat,
        delta_se,
        u_i,
        u_sum,
        c_const: setup.c_const,
        a_hat,
        telescoped_sum,
        reference_mean: r.mean,
        reference_se: r.se,
        max_abs_delta,
        fitted_const: if log_x > 0.0 { max_abs_delta / log_x } else { f64::NAN },
        checks,
        warnings,
    })
}

/// `U(omega) - E_y[U]` with `omega(y)` integrated over a finite support.
pub fn site_conditional_delta(
    field: &PotentialField,
    region: &Region,
    x: &LatticePoint,
    y: &LatticePoint,
    support: &[(f64, f64)],
) -> Result<f64> {
    let origin = LatticePoint::origin(x.dim());
    let u = travel_cost(field, region, &origin, x)?;
    let mut mean = 0.0;
    for &(v, p) in support {
        mean += p * travel_cost(&set_site(field, y, v)?, region, &origin, x)?;
    }
    Ok(u - mean)
}

/// Box used by experiments that need a region for `x`; exposed for tests.
pub fn experiment_box(x: &LatticePoint, box_factor: f64) -> BoxRegion {
    default_box(x, box_factor)
}
