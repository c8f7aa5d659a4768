//! Lyapunov exponent estimates from the subadditive characterization
//! `alpha(x) = inf_n E[a(0, nx)] / n`, and probes of its norm properties.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{output, Check};
use crate::lattice::{LatticePoint, Region};
use crate::potential::{assumption_report, sample_field, DistributionSpec};
use crate::seed::{self, tag};
use crate::solver::{default_box, travel_cost};
use crate::stats::{self, Z95};

/// `a_V(0, x)` on independent fields over `default_box(x, box_factor)`.
///
/// Sample `i` uses the field seed `derive(seed, [FIELD, stream, i])`, so
/// distinct `stream`s give independent batches and the output does not depend
/// on the worker count.
pub fn sample_costs(
    spec: &DistributionSpec,
    x: &LatticePoint,
    box_factor: f64,
    samples: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if x.is_origin() {
        return Err(Error::param("x", "must be nonzero"));
    }
    if !(box_factor >= 1.0) {
        return Err(Error::param("box_factor", format!("must be at least 1, got {box_factor}")));
    }
    let bbox = default_box(x, box_factor);
    let region = Region::from_box(bbox.clone());
    let origin = LatticePoint::origin(x.dim());
    (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let field = sample_field(spec, &bbox, seed::derive(seed, &[tag::FIELD, stream, i]))?;
            travel_cost(&field, &region, &origin, x)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub n: i64,
    /// Sample mean of `a(0, n dir) / n`.
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub direction: LatticePoint,
    pub n_grid: Vec<i64>,
    pub box_factor: f64,
    pub per_n: Vec<AlphaRow>,
    /// Minimum of the per-`n` means: an upward-biased estimate of `alpha(dir)`.
    pub alpha_hat: f64,
    /// 95% interval around `alpha_hat` from the minimizing row.
    pub ci: (f64, f64),
    pub argmin_n: i64,
    /// `-log E[e^{-omega}]`, per unit of `|dir|_1`.
    pub band_lo: f64,
    /// `log(2d) + E[omega]`, per unit of `|dir|_1`.
    pub band_hi: f64,
    /// `alpha_hat / |dir|_1` within the band widened by the CI half-width.
    pub band_ok: bool,
    /// Successive means differ by less than two CI half-widths at the end of
    /// the grid (a heuristic stopping rule).
    pub plateau: bool,
    pub bias: String,
    pub warnings: Vec<String>,
}

impl AlphaEstimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci.1 - self.ci.0)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let header = ["n", "mean", "se", "samples"].map(String::from);
        output::csv_bytes(
            &header,
            self.per_n.iter().map(|r| {
                vec![r.n.to_string(), output::fmt_real(r.mean), output::fmt_real(r.se), r.samples.to_string()]
            }),
        )
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "direction": self.direction.coords(),
            "alpha_hat": self.alpha_hat,
            "ci": [self.ci.0, self.ci.1],
            "argmin_n": self.argmin_n,
            "band_lo": self.band_lo,
            "band_hi": self.band_hi,
            "band_ok": self.band_ok,
            "plateau": self.plateau,
            "bias": self.bias,
            "warnings": self.warnings,
        })
    }

    pub fn export(&self, stem: &Path) -> Result<()> {
        output::write_atomic(&stem.with_extension("csv"), &self.to_csv()?)?;
        output::write_json(&stem.with_extension("json"), &self.summary_json())
    }
}

/// Estimate `alpha(direction)` as the minimum over `n_grid` of the sample
/// mean of `a_V(0, n direction) / n`, with `V = default_box(n direction, box_factor)`.
pub fn estimate_alpha(
    spec: &DistributionSpec,
    direction: &LatticePoint,
    n_grid: &[i64],
    samples_per_n: usize,
    box_factor: f64,
    seed: u64,
) -> Result<AlphaEstimate> {
    estimate_alpha_stream(spec, direction, n_grid, samples_per_n, box_factor, seed, 0)
}

fn estimate_alpha_stream(
    spec: &DistributionSpec,
    direction: &LatticePoint,
    n_grid: &[i64],
    samples_per_n: usize,
    box_factor: f64,
    seed: u64,
    stream: u64,
) -> Result<AlphaEstimate> {
    if direction.is_origin() {
        return Err(Error::param("direction", "must be nonzero"));
    }
    if n_grid.is_empty() || n_grid[0] < 1 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param(
            "n_grid",
            format!("must be a nonempty increasing list of positive integers, got {n_grid:?}"),
        ));
    }
    if samples_per_n < 2 {
        return Err(Error::param("samples", "need at least 2 samples per n"));
    }
    let report = assumption_report(spec);
    let mut warnings = Vec::new();
    if report.almost_surely_zero {
        warnings.push("the law is almost surely zero; alpha vanishes in the recurrent regime".to_string());
    }
    let mut per_n = Vec::with_capacity(n_grid.len());
    for (j, &n) in n_grid.iter().enumerate() {
        let x = direction.scale(n);
        let costs = sample_costs(spec, &x, box_factor, samples_per_n, seed, stream * 1_000_003 + j as u64)?;
        let ratios: Vec<f64> = costs.iter().map(|a| a / n as f64).collect();
        let s = stats::summarize(&ratios);
        per_n.push(AlphaRow { n, mean: s.mean, se: s.se, samples: s.n });
    }
    let best = *per_n.iter().min_by(|a, b| a.mean.total_cmp(&b.mean)).unwrap();
    let alpha_hat = best.mean;
    let half = Z95 * best.se;
    let l1 = direction.l1() as f64;
    let d = direction.dim();
    let (band_lo, band_hi) = (report.neg_log_laplace, report.band_hi(d));
    let per_unit = alpha_hat / l1;
    let band_ok = per_unit + half / l1 >= band_lo && per_unit - half / l1 <= band_hi;
    let plateau = match per_n.as_slice() {
        [.., a, b] => (a.mean - b.mean).abs() < 2.0 * Z95 * (a.se + b.se),
        _ => false,
    };
    if per_n.windows(2).any(|w| w[1].mean > w[0].mean + Z95 * (w[0].se + w[1].se)) {
        warnings.push("per-n means increase beyond noise; the finite-box slack is visible".to_string());
    }
    Ok(AlphaEstimate {
        direction: direction.clone(),
        n_grid: n_grid.to_vec(),
        box_factor,
        per_n,
        alpha_hat,
        ci: (alpha_hat - half, alpha_hat + half),
        argmin_n: best.n,
        band_lo,
        band_hi,
        band_ok,
        plateau,
        bias: "upward: minimum of sample means over a finite grid of restricted costs".to_string(),
        warnings,
    })
}

/// One symmetry or subadditivity comparison between direction estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormComparison {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    /// Two-sided comparisons test `|lhs - rhs| <= slack`, one-sided ones
    /// `lhs <= rhs + slack`.
    pub two_sided: bool,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub estimates: Vec<AlphaEstimate>,
    pub comparisons: Vec<NormComparison>,
}

impl NormReport {
    pub fn checks(&self) -> Vec<Check> {
        self.comparisons
            .iter()
            .map(|c| Check::statistical(&c.name, c.holds, format!("lhs {} rhs {} slack {}", c.lhs, c.rhs, c.slack)))
            .collect()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let header = ["comparison", "lhs", "rhs", "slack", "holds"].map(String::from);
        output::csv_bytes(
            &header,
            self.comparisons.iter().map(|c| {
                vec![
                    c.name.clone(),
                    output::fmt_real(c.lhs),
                    output::fmt_real(c.rhs),
                    output::fmt_real(c.slack),
                    c.holds.to_string(),
                ]
            }),
        )
    }
}

/// Compare estimates along `e1`, `e2`, `-e1`, `2 e1` and `e1 + e2`.
///
/// Slack for every comparison is the sum of the CI half-widths involved plus
/// `2 log 2 / n_min`, the finite-box allowance per unit of `n`.
pub fn check_norm_properties(
    spec: &DistributionSpec,
    d: usize,
    n_grid: &[i64],
    samples_per_n: usize,
    box_factor: f64,
    seed: u64,
) -> Result<NormReport> {
    if d < 2 {
        return Err(Error::param("d", "need d >= 2"));
    }
    let e1 = LatticePoint::unit(d, 0, 1);
    let e2 = LatticePoint::unit(d, 1, 1);
    let dirs = [e1.clone(), e2.clone(), LatticePoint::unit(d, 0, -1), e1.scale(2), &e1 + &e2];
    let estimates: Vec<AlphaEstimate> = dirs
        .iter()
        .enumerate()
        .map(|(k, dir)| estimate_alpha_stream(spec, dir, n_grid, samples_per_n, box_factor, seed, k as u64 + 1))
        .collect::<Result<_>>()?;
    let box_slack = 2.0 * std::f64::consts::LN_2 / n_grid[0] as f64;
    let hw = |i: usize| estimates[i].half_width();
    let a = |i: usize| estimates[i].alpha_hat;
    let mk = |name: &str, lhs: f64, rhs: f64, slack: f64, two_sided: bool| {
        let holds = if two_sided { (lhs - rhs).abs() <= slack } else { lhs <= rhs + slack };
        NormComparison { name: name.to_string(), lhs, rhs, slack, two_sided, holds }
    };
    let comparisons = vec![
        mk("permutation e1 vs e2", a(0), a(1), hw(0) + hw(1) + box_slack, true),
        mk("reflection e1 vs -e1", a(0), a(2), hw(0) + hw(2) + box_slack, true),
        mk("homogeneity 2e1 <= 2 e1", a(3), 2.0 * a(0), hw(3) + 2.0 * hw(0) + box_slack, false),
        mk("triangle e1+e2 <= e1 + e2", a(4), a(0) + a(1), hw(4) + hw(0) + hw(1) + box_slack, false),
    ];
    Ok(NormReport { estimates, comparisons })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_law_sits_in_band() {
        let spec = DistributionSpec::Constant { value: 0.5 };
        let e1 = LatticePoint::unit(2, 0, 1);
        let est = estimate_alpha(&spec, &e1, &[2, 4, 8], 2, 2.0, 1).unwrap();
        for r in &est.per_n {
            assert!(r.se.abs() < 1e-12);
        }
        assert!(est.alpha_hat >= 0.5 && est.alpha_hat <= 0.5 + 4f64.ln());
        assert!(est.band_ok);
    }

    #[test]
    fn zero_law_decreases_with_box() {
        let spec = DistributionSpec::Constant { value: 0.0 };
        let x = LatticePoint::unit(2, 0, 4);
        let small = sample_costs(&spec, &x, 1.0, 1, 0, 0).unwrap()[0];
        let big = sample_costs(&spec, &x, 4.0, 1, 0, 0).unwrap()[0];
        assert!(big < small);
        let est = estimate_alpha(&spec, &LatticePoint::unit(2, 0, 1), &[1, 2], 2, 2.0, 0).unwrap();
        assert!(!est.warnings.is_empty());
    }

    #[test]
    fn bigger_box_never_costs_more() {
        let spec = DistributionSpec::TwoPoint { v_lo: 0.1, v_hi: 1.0, p_hi: 0.5 };
        let x = LatticePoint::new([3, 1]);
        let big_box = default_box(&x, 3.0);
        for s in 0..5 {
            let field = sample_field(&spec, &big_box, s).unwrap();
            let o = LatticePoint::origin(2);
            let mut last = f64::INFINITY;
            for c in [1.0, 2.0, 3.0] {
                let b = default_box(&x, c);
                let a = travel_cost(&field, &Region::from_box(b), &o, &x).unwrap();
                assert!(a <= last + 1e-10);
                last = a;
            }
        }
    }

    #[test]
    fn rejects_bad_grid() {
        let spec = DistributionSpec::Constant { value: 0.5 };
        let e1 = LatticePoint::unit(2, 0, 1);
        assert!(estimate_alpha(&spec, &e1, &[4, 2], 2, 2.0, 1).is_err());
        assert!(estimate_alpha(&spec, &LatticePoint::origin(2), &[1], 2, 2.0, 1).is_err());
    }

    #[test]
    fn csv_has_one_row_per_n() {
        let spec = DistributionSpec::Constant { value: 0.5 };
        let est = estimate_alpha(&spec, &LatticePoint::unit(2, 0, 1), &[1, 2, 3], 2, 1.0, 1).unwrap();
        let csv = String::from_utf8(est.to_csv().unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("n,mean,se,samples\n"));
    }
}
